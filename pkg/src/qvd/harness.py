"""Synthetic diagnostic data and a toy feature block.

Two generators reproduce the activation pathologies this toolkit targets at
desk scale: a trajectory of temporal features whose mass piles up in a narrow
band around zero with rare large outliers, and an activation tensor whose
channels occupy narrow, scattered slices of the global range. A small
standardize/affine/inject/linear block carries the perturbation experiments.

All generators are pure functions of their spec: random streams are
counter-based per (seed, purpose, step), so identical inputs give
bit-identical tensors regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .quantizers import calibrate_mse_uniform, fake_quant_minmax_channel, fake_quant_uniform
from .scri import AffineBlock, standardize_rows
from .temporal import TemporalTrajectory
from .tensor import Tensor

_PURPOSE_SKEW_INIT = 1
_PURPOSE_SKEW_STEP = 2
_PURPOSE_CHANNEL_MID = 3
_PURPOSE_CHANNEL_VALUES = 4
_PURPOSE_FRAMES = 5
_PURPOSE_BLOCK = 6
_PURPOSE_PROJECTION = 7
_PURPOSE_OUTLIER_NOISE = 8

OUTLIER_MAGNITUDE_FLOOR = 10.0  # outlier magnitudes start at floor * dense_halfwidth
STEP_BLEND = 0.1  # weight of the fresh draw mixed into the previous step


def _rng(seed: int, purpose: int, step: int = 0) -> np.random.Generator:
    key = np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64((purpose << 32) | step)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SkewedTemporalSpec:
    """Shape of the skewed temporal-feature trajectory.

    Per step, ``round(dense_fraction * dim)`` entries live in
    ``[-dense_halfwidth, dense_halfwidth]`` and the rest are sign-balanced
    outliers with log-uniform magnitudes in
    ``[10 * dense_halfwidth, outlier_scale]``. Consecutive steps evolve by a
    small blended fresh draw so adjacent steps stay similar.

    The default ``dim`` of 202 makes the outlier tails strictly smaller than
    5% per sign, so the middle 90% of samples sits entirely inside the dense
    band.
    """

    steps: int = 25
    dim: int = 202
    dense_fraction: float = 0.9
    dense_halfwidth: float = 0.002
    outlier_scale: float = 8.0
    seed: int = 42

    def __post_init__(self):
        if int(self.steps) < 2:
            raise ArgumentError("steps must be >= 2")
        if int(self.dim) < 1:
            raise ArgumentError("dim must be >= 1")
        if not 0.0 < self.dense_fraction <= 1.0:
            raise ArgumentError("dense_fraction must be in (0, 1]")
        if not self.dense_halfwidth > 0:
            raise ArgumentError("dense_halfwidth must be positive")
        if self.dense_count < int(self.dim) and \
                self.outlier_scale <= OUTLIER_MAGNITUDE_FLOOR * self.dense_halfwidth:
            raise ArgumentError(
                "outlier_scale must exceed 10 * dense_halfwidth when outliers exist")
        if int(self.seed) < 0:
            raise ArgumentError("seed must be non-negative")

    @property
    def dense_count(self) -> int:
        return int(round(self.dense_fraction * int(self.dim)))

    @property
    def outlier_count(self) -> int:
        return int(self.dim) - self.dense_count


def gen_skewed_trajectory(spec: SkewedTemporalSpec) -> TemporalTrajectory:
    """Deterministic trajectory with the dense-band/outlier structure above.

    Layout per step: dense entries first, then positive outliers, then
    negative outliers (signs fixed across steps). Dense values random-walk
    inside the band; outlier magnitudes random-walk in log space; both clip
    to their bands so the structure survives every step.
    """
    dim = int(spec.dim)
    hw = float(spec.dense_halfwidth)
    n_dense = spec.dense_count
    n_out = spec.outlier_count
    n_pos = n_out - n_out // 2

    init = _rng(spec.seed, _PURPOSE_SKEW_INIT)
    dense = init.uniform(-hw, hw, n_dense)
    if n_out:
        log_lo = np.log2(OUTLIER_MAGNITUDE_FLOOR * hw)
        log_hi = np.log2(float(spec.outlier_scale))
        log_mag = init.uniform(log_lo, log_hi, n_out)
        walk_halfwidth = (log_hi - log_lo) / 2.0

    def assemble() -> Tensor:
        vals = np.empty(dim)
        vals[:n_dense] = dense
        if n_out:
            mags = np.exp2(log_mag)
            vals[n_dense : n_dense + n_pos] = mags[:n_pos]
            vals[n_dense + n_pos :] = -mags[n_pos:]
        return Tensor(vals.astype(np.float32))

    steps = [assemble()]
    for t in range(1, int(spec.steps)):
        fresh = _rng(spec.seed, _PURPOSE_SKEW_STEP, t)
        dense = np.clip(dense + STEP_BLEND * fresh.uniform(-hw, hw, n_dense), -hw, hw)
        if n_out:
            jitter = fresh.uniform(-walk_halfwidth, walk_halfwidth, n_out)
            log_mag = np.clip(log_mag + STEP_BLEND * jitter, log_lo, log_hi)
        steps.append(assemble())
    return TemporalTrajectory(steps)


@dataclass(frozen=True)
class InterChannelSpec:
    """Shape of the scattered-channel activation tensor.

    Channel midpoints are drawn across a positive band so every channel's
    maximum stays positive (the per-channel scale divides by channel maxima);
    each channel's width is ``width_fraction`` of the nominal global span
    ``2 * center_spread``. As ``width_fraction`` approaches 1 the midpoint
    band collapses to a single point and coverage approaches 1 per channel.
    """

    channels: int = 64
    samples_per_channel: int = 128
    center_spread: float = 4.0
    width_fraction: float = 0.05
    seed: int = 42

    def __post_init__(self):
        if int(self.channels) < 2:
            raise ArgumentError("channels must be >= 2")
        if int(self.samples_per_channel) < 1:
            raise ArgumentError("samples_per_channel must be >= 1")
        if not self.center_spread > 0:
            raise ArgumentError("center_spread must be positive")
        if not 0.0 < self.width_fraction < 1.0:
            raise ArgumentError("width_fraction must be in (0, 1)")
        if int(self.seed) < 0:
            raise ArgumentError("seed must be non-negative")


def gen_interchannel(spec: InterChannelSpec) -> Tensor:
    """(samples, channels) tensor with narrow per-channel ranges, channel
    axis 1. Midpoints sit in [3h, 2*center_spread - h] with h the channel
    half-width, keeping all values (and channel maxima) positive."""
    h = float(spec.center_spread) * float(spec.width_fraction)
    lo_m = 3.0 * h
    hi_m = max(lo_m, 2.0 * float(spec.center_spread) - h)
    midpoints = _rng(spec.seed, _PURPOSE_CHANNEL_MID).uniform(lo_m, hi_m, int(spec.channels))
    values = _rng(spec.seed, _PURPOSE_CHANNEL_VALUES).uniform(
        midpoints - h, midpoints + h, size=(int(spec.samples_per_channel), int(spec.channels))
    )
    return Tensor(values.astype(np.float32), channel_axis=1)


@dataclass(frozen=True)
class FramesSpec:
    """Gaussian frame-feature tensor (frames x channels)."""

    frames: int = 16
    channels: int = 64
    scale: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if int(self.frames) < 1 or int(self.channels) < 1:
            raise ArgumentError("frames and channels must be >= 1")
        if not self.scale > 0:
            raise ArgumentError("scale must be positive")


def gen_frames(spec: FramesSpec) -> Tensor:
    vals = _rng(spec.seed, _PURPOSE_FRAMES).normal(
        0.0, float(spec.scale), size=(int(spec.frames), int(spec.channels)))
    return Tensor(vals.astype(np.float32), channel_axis=1)


@dataclass(frozen=True)
class AffineBlockSpec:
    """Random standardize/affine/linear block.

    Gains near one and small positive biases keep the post-normalization
    channel maxima positive, which the per-channel scale construction needs.
    """

    channels: int = 64
    out_channels: int = 64
    seed: int = 42

    def __post_init__(self):
        if int(self.channels) < 1 or int(self.out_channels) < 1:
            raise ArgumentError("channel counts must be >= 1")


def gen_affine_block(spec: AffineBlockSpec) -> AffineBlock:
    rng = _rng(spec.seed, _PURPOSE_BLOCK)
    c, out = int(spec.channels), int(spec.out_channels)
    return AffineBlock(
        norm_gain=rng.uniform(0.8, 1.2, c).astype(np.float32),
        norm_bias=rng.uniform(0.0, 0.2, c).astype(np.float32),
        weight=rng.normal(0.0, 1.0 / np.sqrt(c), size=(out, c)).astype(np.float32),
        bias=rng.normal(0.0, 0.02, out).astype(np.float32),
    )


class ToyBlock:
    """An affine block plus a linear projection injecting a temporal feature
    into every frame row."""

    __slots__ = ("affine", "proj_gain", "proj_bias")

    def __init__(self, affine: AffineBlock, proj_gain, proj_bias):
        pg = np.asarray(proj_gain, dtype=np.float32).copy()
        pb = np.asarray(proj_bias, dtype=np.float32).copy()
        if pg.ndim != 2:
            raise ArgumentError("projection gain must be 2-D (channels x temporal dim)")
        if pg.shape[0] != affine.channels:
            raise ArgumentError(
                f"projection output width {pg.shape[0]} != block channels {affine.channels}")
        if pb.shape != (pg.shape[0],):
            raise ArgumentError("projection bias length must equal channel count")
        if not (np.isfinite(pg).all() and np.isfinite(pb).all()):
            raise ArgumentError("projection parameters must be finite")
        pg.setflags(write=False)
        pb.setflags(write=False)
        self.affine = affine
        self.proj_gain = pg
        self.proj_bias = pb

    @property
    def channels(self) -> int:
        return self.affine.channels

    @property
    def temporal_dim(self) -> int:
        return int(self.proj_gain.shape[1])


@dataclass(frozen=True)
class ToyBlockSpec:
    channels: int = 64
    temporal_dim: int = 32
    out_channels: int = 64
    seed: int = 42

    def __post_init__(self):
        if min(int(self.channels), int(self.temporal_dim), int(self.out_channels)) < 1:
            raise ArgumentError("all dimensions must be >= 1")


def gen_toy_block(spec: ToyBlockSpec) -> ToyBlock:
    affine = gen_affine_block(
        AffineBlockSpec(channels=spec.channels, out_channels=spec.out_channels,
                        seed=spec.seed))
    rng = _rng(spec.seed, _PURPOSE_PROJECTION)
    c, d = int(spec.channels), int(spec.temporal_dim)
    return ToyBlock(
        affine=affine,
        proj_gain=rng.normal(0.0, 1.0 / np.sqrt(d), size=(c, d)).astype(np.float32),
        proj_bias=np.zeros(c, dtype=np.float32),
    )


def _projected(block: ToyBlock, t_emb: Tensor) -> np.ndarray:
    t = t_emb.astype64().ravel()
    if t.size != block.temporal_dim:
        raise ArgumentError(
            f"temporal feature length {t.size} != projection input {block.temporal_dim}")
    return block.proj_gain.astype(np.float64) @ t + block.proj_bias.astype(np.float64)


def temporal_inject(frames: Tensor, t_emb: Tensor, block: ToyBlock) -> Tensor:
    """Add the projected temporal feature to every frame row.

    All frames receive the same injected vector, so any error in the temporal
    feature propagates to every frame identically.
    """
    if frames.rank != 2:
        raise ArgumentError("frames must be 2-D (frames x channels)")
    if frames.shape[1] != block.channels:
        raise ArgumentError(
            f"frames have {frames.shape[1]} channels, block expects {block.channels}")
    out = frames.astype64() + _projected(block, t_emb)[np.newaxis, :]
    return Tensor(out.astype(np.float32), channel_axis=1)


@dataclass(frozen=True)
class BlockQuantConfig:
    """Fake-quantization widths for the toy block's forward pass."""

    w_bits: int = 8
    a_bits: int = 8

    def __post_init__(self):
        if not (2 <= int(self.w_bits) <= 16 and 2 <= int(self.a_bits) <= 16):
            raise ArgumentError("bit-widths must be in [2, 16]")


def run_block(block: ToyBlock, frames: Tensor, t_emb: Tensor,
              quant_config: BlockQuantConfig | None = None) -> Tensor:
    """Standardize frames, apply the affine gain/bias, inject the projected
    temporal feature, and run the linear layer.

    With ``quant_config`` the linear input is fake-quantized per-tensor
    (MSE-calibrated uniform at ``a_bits``) and the weight per-output-channel
    (min/max at ``w_bits``); without it the pass is pure float.
    """
    if frames.rank != 2:
        raise ArgumentError("frames must be 2-D (frames x channels)")
    affine = block.affine
    if frames.shape[1] != affine.channels:
        raise ArgumentError(
            f"frames have {frames.shape[1]} channels, block expects {affine.channels}")
    z = standardize_rows(frames.astype64())
    a = z * affine.norm_gain.astype(np.float64) + affine.norm_bias.astype(np.float64)
    a = a + _projected(block, t_emb)[np.newaxis, :]
    if quant_config is None:
        out = a @ affine.weight.astype(np.float64).T + affine.bias.astype(np.float64)
        return Tensor(out.astype(np.float32), channel_axis=1)
    a_t = Tensor(a.astype(np.float32), channel_axis=1)
    a_hat = fake_quant_uniform(a_t, calibrate_mse_uniform(a_t, quant_config.a_bits))
    w_hat = fake_quant_minmax_channel(Tensor(affine.weight, channel_axis=0),
                                      quant_config.w_bits)
    out = a_hat.astype64() @ w_hat.astype64().T + affine.bias.astype(np.float64)
    return Tensor(out.astype(np.float32), channel_axis=1)


def trajectory_extremes(traj: TemporalTrajectory) -> tuple[float, float]:
    """(min, max) over every element of the trajectory."""
    stack = traj.stacked()
    return float(stack.min()), float(stack.max())


def _zero_interval_step(values: np.ndarray, lower: float, upper: float) -> np.ndarray:
    mask = (values >= lower) & (values <= upper)
    return np.where(mask, np.float32(0.0), values)


def perturb_zero_interval(traj: TemporalTrajectory) -> TemporalTrajectory:
    """Zero every value inside [min/2, max/2] of the whole trajectory.

    The extremes are taken over the pooled trajectory, so applying the
    operator step by step with those bounds equals applying it whole. With
    the usual sign-mixed data this wipes the dense near-zero band and all
    mid-sized values, leaving only the extreme tails.
    """
    gmin, gmax = trajectory_extremes(traj)
    lower, upper = 0.5 * gmin, 0.5 * gmax
    return TemporalTrajectory(
        [Tensor(_zero_interval_step(s.data, lower, upper), channel_axis=s.channel_axis)
         for s in traj.steps])


def _scale_top_band_step(values: np.ndarray, lower: float, upper: float,
                         noise: np.ndarray) -> np.ndarray:
    mask = (values >= lower) & (values <= upper)
    scaled = values.astype(np.float64) * noise
    return np.where(mask, scaled, values.astype(np.float64)).astype(np.float32)


def perturb_outliers(traj: TemporalTrajectory, seed: int) -> TemporalTrajectory:
    """Multiply values inside [0.9 * max, max] of the pooled trajectory by
    independent uniform draws from [-1.5, 1.5].

    One noise value is drawn per element per step (counter-based on
    (seed, step)), so the stream is deterministic regardless of how many
    values the band actually catches.
    """
    _, gmax = trajectory_extremes(traj)
    lower, upper = 0.9 * gmax, gmax
    out = []
    for idx, s in enumerate(traj.steps):
        noise = _rng(seed, _PURPOSE_OUTLIER_NOISE, idx).uniform(-1.5, 1.5, s.shape)
        out.append(Tensor(_scale_top_band_step(s.data, lower, upper, noise),
                          channel_axis=s.channel_axis))
    return TemporalTrajectory(out)
