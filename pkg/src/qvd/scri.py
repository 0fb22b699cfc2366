"""Scattered channel range integration: per-channel scales built from channel
maxima, a grid search for the scalar divisor against a block-output MSE
objective, and the zero-overhead fold of the scales into a normalization
layer's gain/bias and the following linear layer's columns.

The block modeled here is ``standardize -> per-channel affine -> linear``:
the affine gain/bias stand in for a normalization layer's learned parameters,
so dividing them by the scale vector rescales the normalized activations
while multiplying the matching weight columns keeps the float output
unchanged.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, SearchError, TensorFormatError
from .quantizers import (
    calibrate_mse_uniform,
    fake_quant_minmax_channel,
    fake_quant_uniform,
    first_argmin,
)
from .tensor import Tensor, atomic_write_bytes, channel_stats, mse, read_tensor, write_tensor

CHANNEL_MAX_EPS = 1e-6
NORM_EPS = 1e-5
DEFAULT_GRID_SIZE = 100


@dataclass(frozen=True)
class ScriScale:
    """Per-channel divisors ``s[c] = max(channel_max[c], eps) / t``."""

    s: np.ndarray
    t: float
    axis: int

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64).copy()
        if s.ndim != 1 or s.size == 0:
            raise ArgumentError("scale vector must be 1-D and non-empty")
        if not np.isfinite(s).all() or (s <= 0).any():
            raise ArgumentError("scale entries must be positive and finite")
        if not (np.isfinite(self.t) and self.t > 0):
            raise ArgumentError(f"t must be a positive finite float, got {self.t}")
        if int(self.axis) < 0:
            raise ArgumentError("axis must be non-negative")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "axis", int(self.axis))

    @property
    def channels(self) -> int:
        return int(self.s.size)


class AffineBlock:
    """Normalization gain/bias over C channels plus a linear layer C -> C_out."""

    __slots__ = ("norm_gain", "norm_bias", "weight", "bias")

    def __init__(self, norm_gain, norm_bias, weight, bias):
        g = np.asarray(norm_gain, dtype=np.float32).copy()
        nb = np.asarray(norm_bias, dtype=np.float32).copy()
        w = np.asarray(weight, dtype=np.float32).copy()
        b = np.asarray(bias, dtype=np.float32).copy()
        if w.ndim != 2:
            raise ArgumentError("weight must be a 2-D matrix (out x in)")
        c_out, c_in = w.shape
        if g.shape != (c_in,) or nb.shape != (c_in,):
            raise ArgumentError(
                f"norm gain/bias must have length {c_in}, got {g.shape} / {nb.shape}")
        if b.shape != (c_out,):
            raise ArgumentError(f"bias must have length {c_out}, got {b.shape}")
        for name, arr in (("norm_gain", g), ("norm_bias", nb), ("weight", w), ("bias", b)):
            if not np.isfinite(arr).all():
                raise ArgumentError(f"{name} must be finite")
        for arr in (g, nb, w, b):
            arr.setflags(write=False)
        self.norm_gain = g
        self.norm_bias = nb
        self.weight = w
        self.bias = b

    @property
    def channels(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_channels(self) -> int:
        return int(self.weight.shape[0])


def _scale_from_cmax(cmax: np.ndarray, t: float, axis: int) -> ScriScale:
    if not (np.isfinite(t) and t > 0):
        raise ArgumentError(f"t must be positive, got {t}")
    s = np.maximum(cmax.astype(np.float64), CHANNEL_MAX_EPS) / t
    return ScriScale(s=s, t=float(t), axis=axis)


def compute_scri_scale(calib: Tensor, axis: int, t: float) -> ScriScale:
    """Scale vector from the calibration tensor's per-channel maxima.

    Channels whose maximum is not positive are guarded at ``CHANNEL_MAX_EPS``
    so the divisor stays positive; the formula assumes activations with
    positive channel maxima.
    """
    stats = channel_stats(calib, axis)
    return _scale_from_cmax(stats.max, t, int(axis))


def apply_scri(x: Tensor, scale: ScriScale) -> Tensor:
    """Divide each channel along ``scale.axis`` by its scale entry."""
    if scale.axis >= x.rank:
        raise ArgumentError(f"scale axis {scale.axis} out of range for rank {x.rank}")
    if x.shape[scale.axis] != scale.channels:
        raise ArgumentError(
            f"channel count mismatch: tensor has {x.shape[scale.axis]}, "
            f"scale has {scale.channels}")
    shape = [1] * x.rank
    shape[scale.axis] = scale.channels
    out = x.astype64() / scale.s.reshape(shape)
    return Tensor(out.astype(np.float32), channel_axis=x.channel_axis)


def fold_scri(block: AffineBlock, scale: ScriScale) -> AffineBlock:
    """Absorb the scale into the block: gain and bias divided per channel,
    weight columns multiplied back, linear bias untouched.

    The folded block's float output matches the original for every input up
    to rounding, so the rescaled activations come for free at inference.
    """
    if scale.channels != block.channels:
        raise ArgumentError(
            f"scale length {scale.channels} != block channels {block.channels}")
    s = scale.s
    return AffineBlock(
        norm_gain=(block.norm_gain.astype(np.float64) / s).astype(np.float32),
        norm_bias=(block.norm_bias.astype(np.float64) / s).astype(np.float32),
        weight=(block.weight.astype(np.float64) * s[np.newaxis, :]).astype(np.float32),
        bias=block.bias,
    )


def _require_block_input(block: AffineBlock, x: Tensor) -> None:
    if x.rank != 2:
        raise ArgumentError(f"block input must be 2-D (samples x channels), got rank {x.rank}")
    if x.shape[1] != block.channels:
        raise ArgumentError(
            f"block input has {x.shape[1]} channels, block expects {block.channels}")


def standardize_rows(x64: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per row (the normalization in front of the
    affine gain/bias), with a small epsilon inside the square root."""
    mean = x64.mean(axis=1, keepdims=True)
    centered = x64 - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    return centered / np.sqrt(var + NORM_EPS)


def block_activations(block: AffineBlock, x: Tensor) -> Tensor:
    """The linear layer's input: standardized rows through the affine
    gain/bias. This is the tensor whose per-channel maxima drive the scale."""
    _require_block_input(block, x)
    a = standardize_rows(x.astype64()) * block.norm_gain.astype(np.float64) \
        + block.norm_bias.astype(np.float64)
    return Tensor(a.astype(np.float32), channel_axis=1)


def block_forward(block: AffineBlock, x: Tensor) -> Tensor:
    """Full-precision forward pass: standardize, affine, linear."""
    a = block_activations(block, x).astype64()
    out = a @ block.weight.astype(np.float64).T + block.bias.astype(np.float64)
    return Tensor(out.astype(np.float32), channel_axis=1)


def quantized_block_forward(block: AffineBlock, x: Tensor, a_bits: int,
                            w_bits: int | None = None) -> Tensor:
    """Forward pass with fake-quantized activations and weights.

    Activations (the linear input) use a per-tensor uniform quantizer with
    MSE-chosen clipping; weights use per-output-channel min/max. ``w_bits``
    defaults to ``a_bits``.
    """
    if w_bits is None:
        w_bits = a_bits
    a = block_activations(block, x)
    a_hat = fake_quant_uniform(a, calibrate_mse_uniform(a, a_bits))
    w = Tensor(block.weight, channel_axis=0)
    w_hat = fake_quant_minmax_channel(w, w_bits)
    out = a_hat.astype64() @ w_hat.astype64().T + block.bias.astype(np.float64)
    return Tensor(out.astype(np.float32), channel_axis=1)


@dataclass(frozen=True)
class ScriSearchResult:
    """Winning scale plus the per-candidate objective trace."""

    scale: ScriScale
    objective: float
    t_grid: tuple[float, ...]
    objectives: tuple[float, ...]
    chosen_index: int

    def trace_dict(self) -> dict:
        return {
            "schema": "qvd-scri-trace/1",
            "t": list(self.t_grid),
            "objective": list(self.objectives),
            "chosen_index": self.chosen_index,
        }


def search_t(block: AffineBlock, calib: Tensor, b_act: int,
             grid_size: int = DEFAULT_GRID_SIZE) -> ScriSearchResult:
    """Grid search for the scalar divisor t between the smallest and largest
    channel maxima of the block's activations.

    Each candidate folds its scale into the block, fake-quantizes the folded
    block (per-tensor MSE activations at ``b_act`` bits, per-channel min/max
    weights at the same width), and measures output MSE against the
    full-precision block on the calibration tensor. Deterministic: ties break
    to the lowest grid index.
    """
    grid_size = int(grid_size)
    if grid_size < 2:
        raise ArgumentError("grid_size must be >= 2")
    acts = block_activations(block, calib)
    cmax = channel_stats(acts, 1).max.astype(np.float64)
    t_lo = float(cmax.min())
    t_hi = float(cmax.max())
    if t_lo == t_hi:
        raise SearchError("degenerate search: all channel maxima are equal")
    if t_lo <= 0:
        raise SearchError(
            "degenerate search: non-positive channel maxima (activations must "
            "have positive per-channel maxima)")
    t_grid = np.linspace(t_lo, t_hi, grid_size)
    reference = block_forward(block, calib)
    objectives = []
    for t in t_grid:
        scale = _scale_from_cmax(cmax, float(t), 1)
        folded = fold_scri(block, scale)
        objectives.append(mse(reference, quantized_block_forward(folded, calib, b_act)))
    chosen = first_argmin(objectives)
    return ScriSearchResult(
        scale=_scale_from_cmax(cmax, float(t_grid[chosen]), 1),
        objective=float(objectives[chosen]),
        t_grid=tuple(float(v) for v in t_grid),
        objectives=tuple(float(v) for v in objectives),
        chosen_index=chosen,
    )


def scale_to_json(scale: ScriScale) -> dict:
    return {"t": scale.t, "axis": scale.axis, "s": [float(v) for v in scale.s]}


def scale_from_json(doc: dict) -> ScriScale:
    try:
        return ScriScale(s=np.asarray(doc["s"], dtype=np.float64),
                         t=float(doc["t"]), axis=int(doc["axis"]))
    except KeyError as exc:
        raise ArgumentError(f"scale JSON missing field {exc}") from exc


def save_block(block: AffineBlock, path: str | os.PathLike) -> list[str]:
    """Write a block as JSON with the weight matrix in a sidecar tensor file."""
    path = Path(path)
    weight_path = path.with_suffix(".weight.qvdt")
    write_tensor(Tensor(block.weight, channel_axis=0), weight_path)
    doc = {
        "norm_gain": [float(v) for v in block.norm_gain],
        "norm_bias": [float(v) for v in block.norm_bias],
        "bias": [float(v) for v in block.bias],
        "weight": weight_path.name,
    }
    atomic_write_bytes(path, (json.dumps(doc, sort_keys=True) + "\n").encode())
    return [str(path), str(weight_path)]


def load_block(path: str | os.PathLike) -> AffineBlock:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        weight_ref = doc["weight"]
        gain = doc["norm_gain"]
        nbias = doc["norm_bias"]
        bias = doc["bias"]
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise TensorFormatError(f"malformed block file {path}: {exc}") from exc
    weight = read_tensor(path.parent / weight_ref)
    return AffineBlock(norm_gain=gain, norm_bias=nbias, weight=weight.data, bias=bias)
