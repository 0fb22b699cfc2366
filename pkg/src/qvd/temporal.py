"""Temporal-feature discriminability: the signed log-magnitude transform,
the adjacent-step similarity score, the composite objective, and the joint
(s, beta) grid search for the hidi quantizer.

The discriminability score of step t is the mean cosine similarity between
the transformed step and its next ``n`` transformed steps; lower means the
steps stay easier to tell apart. The composite objective adds the summed
squared reconstruction error of the quantized trajectory, so the search
balances keeping small values distinct against not butchering large ones.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, SearchError, TensorFormatError
from .quantizers import (
    MAX_BITS,
    MIN_BITS,
    HiDiParams,
    _hidi_code_arrays,
    _hidi_reconstruct,
    first_argmin,
)
from .tensor import Tensor, cosine_similarity, read_tensor, write_tensor

DEFAULT_WINDOW = 5
DEFAULT_EPS = 1e-12
DEFAULT_S_STEP_EXPONENT = 0.05
DEFAULT_BETA_GRID = 16


class TemporalTrajectory:
    """An ordered sequence of same-shape feature tensors, one per time step."""

    __slots__ = ("steps",)

    def __init__(self, steps):
        steps = list(steps)
        if len(steps) < 2:
            raise ArgumentError("trajectory needs at least 2 steps")
        shape = steps[0].shape
        for i, s in enumerate(steps):
            if not isinstance(s, Tensor):
                raise ArgumentError(f"step {i} is not a Tensor")
            if s.shape != shape:
                raise ArgumentError(f"step {i} shape {s.shape} differs from {shape}")
        self.steps = tuple(steps)

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def step_shape(self) -> tuple[int, ...]:
        return self.steps[0].shape

    def stacked(self) -> np.ndarray:
        """(T, elements) float32 view of the trajectory."""
        return np.stack([s.data.ravel() for s in self.steps])


@dataclass(frozen=True)
class HtdqSearchConfig:
    """Knobs for the joint (s, beta) search.

    ``n`` is the similarity window, ``bits`` the quantizer width,
    ``s_step_exponent`` the exponent step of the geometric s grid
    (``s_i = max|x| * 2^(step * i)``), ``beta_grid_size`` the number of
    evenly spaced shift candidates spanning the interquartile range of the
    pooled values ({0} is always prepended), and ``eps`` guards logs of zero.
    ``n_bits`` overrides the exponent of the s upper bound
    ``(min|x| + eps) * 2^(2^n_bits - 1)``; it defaults to ``bits``.
    """

    n: int = DEFAULT_WINDOW
    bits: int = 8
    s_step_exponent: float = DEFAULT_S_STEP_EXPONENT
    beta_grid_size: int = DEFAULT_BETA_GRID
    eps: float = DEFAULT_EPS
    n_bits: int | None = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise ArgumentError("window n must be >= 1")
        if not MIN_BITS <= int(self.bits) <= MAX_BITS:
            raise ArgumentError(f"bits must be in [{MIN_BITS}, {MAX_BITS}]")
        if not self.s_step_exponent > 0:
            raise ArgumentError("s_step_exponent must be positive")
        if int(self.beta_grid_size) < 1:
            raise ArgumentError("beta_grid_size must be >= 1")
        if not self.eps > 0:
            raise ArgumentError("eps must be positive")
        if self.n_bits is not None and not 1 <= int(self.n_bits) <= MAX_BITS:
            raise ArgumentError("n_bits must be in [1, 16]")

    @property
    def bound_bits(self) -> int:
        return int(self.bits if self.n_bits is None else self.n_bits)


def _signed_log_mag(x64: np.ndarray, eps: float) -> np.ndarray:
    """sign(x) * |log2(max(|x|, eps))| in float64."""
    mag = np.maximum(np.abs(x64), eps)
    return np.sign(x64) * np.abs(np.log2(mag))


def log_transform(x: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    """Signed log2 magnitude transform, emphasizing values near zero.

    Magnitudes m and 1/m map to the same transformed magnitude |log2 m|;
    the sign of the input is preserved and zeros stay zero.
    """
    if not eps > 0:
        raise ArgumentError("eps must be positive")
    out = _signed_log_mag(x.astype64(), eps)
    return Tensor(out.astype(np.float32), channel_axis=x.channel_axis)


def _window_weights(t_count: int, n: int) -> np.ndarray:
    """(T, T) matrix encoding the per-step mean over the clamped window.

    Row t holds weight 1/len on columns t+1 .. min(t+n, T-1); the last step
    has no successors and stays zero. One dot product against a flattened
    cosine matrix yields the summed score over t = 1..T-1.
    """
    w = np.zeros((t_count, t_count))
    for t in range(t_count - 1):
        end = min(t + n, t_count - 1)
        w[t, t + 1 : end + 1] = 1.0 / (end - t)
    return w


def _tds_sum(stack32: np.ndarray, n: int, eps: float) -> float:
    """Summed discriminability score over t = 1..T-1 on a (T, D) stack."""
    y = _signed_log_mag(stack32.astype(np.float64), eps)
    norms = np.sqrt(np.einsum("ij,ij->i", y, y))
    gram = y @ y.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = gram / np.outer(norms, norms)
    weights = _window_weights(stack32.shape[0], n)
    return float(np.dot(cos.ravel(), weights.ravel()))


def tdscore(traj: TemporalTrajectory, t: int, n: int = DEFAULT_WINDOW,
            eps: float = DEFAULT_EPS) -> float:
    """Mean cosine similarity between transformed step t and steps t+1..t+n.

    ``t`` is 1-based; the window clamps at the trajectory end, and the final
    step (which has no successors) is rejected. Values lie in [-1, 1]; lower
    scores mean the step is easier to distinguish from its neighbours.
    """
    t = int(t)
    if not 1 <= t <= traj.length:
        raise ArgumentError(f"step index {t} outside [1, {traj.length}]")
    if t == traj.length:
        raise ArgumentError(f"step {t} is the last step: empty similarity window")
    if int(n) < 1:
        raise ArgumentError("window n must be >= 1")
    base = log_transform(traj.steps[t - 1], eps)
    end = min(t + n, traj.length)
    sims = [cosine_similarity(base, log_transform(traj.steps[i - 1], eps))
            for i in range(t + 1, end + 1)]
    return float(np.mean(sims))


def _stacks_for_pair(traj: TemporalTrajectory, traj_hat: TemporalTrajectory):
    if traj.length != traj_hat.length:
        raise ArgumentError(
            f"trajectory lengths differ: {traj.length} vs {traj_hat.length}")
    if traj.step_shape != traj_hat.step_shape:
        raise ArgumentError(
            f"step shapes differ: {traj.step_shape} vs {traj_hat.step_shape}")
    return traj.stacked(), traj_hat.stacked()


def _composite_k_arrays(orig32: np.ndarray, hat32: np.ndarray, n: int, eps: float) -> float:
    tds = _tds_sum(hat32, n, eps)
    diff = orig32.astype(np.float64).ravel() - hat32.astype(np.float64).ravel()
    return float(tds + np.dot(diff, diff))


def composite_k(traj: TemporalTrajectory, traj_hat: TemporalTrajectory,
                n: int = DEFAULT_WINDOW, eps: float = DEFAULT_EPS) -> float:
    """Summed discriminability of the reconstructed trajectory plus its summed
    squared reconstruction error against the original.

    The similarity term runs over t = 1..T-1 (the last step has no
    successors); the error term is a raw sum over all elements, not a mean.
    """
    if int(n) < 1:
        raise ArgumentError("window n must be >= 1")
    orig32, hat32 = _stacks_for_pair(traj, traj_hat)
    return _composite_k_arrays(orig32, hat32, int(n), float(eps))


def _hidi_roundtrip_stack(stack32: np.ndarray, params: HiDiParams) -> np.ndarray:
    """Quantize + dequantize a (T, D) stack through the same element-wise maps
    as hidi_quant/hidi_dequant, so per-step re-evaluation is bit-identical."""
    codes, signs = _hidi_code_arrays(stack32.astype(np.float64), params)
    return _hidi_reconstruct(codes, signs, params).astype(np.float32)


@dataclass(frozen=True)
class HtdqSearchResult:
    """Winning params plus the full audit trace of the (s, beta) grid."""

    params: HiDiParams
    objective: float
    s_grid: tuple[float, ...]
    beta_grid: tuple[float, ...]
    objectives: tuple[float, ...]  # s-major scan order: index = si * len(beta_grid) + bi
    chosen_index: int

    def trace_dict(self) -> dict:
        n_beta = len(self.beta_grid)
        return {
            "schema": "qvd-htdq-trace/1",
            "s": [self.s_grid[i // n_beta] for i in range(len(self.objectives))],
            "beta": [self.beta_grid[i % n_beta] for i in range(len(self.objectives))],
            "objective": list(self.objectives),
            "chosen_index": self.chosen_index,
        }


def hidi_s_grid(max_abs: float, min_abs: float, cfg: HtdqSearchConfig) -> np.ndarray:
    """Geometric scale candidates ``max_abs * 2^(step * i)`` for i = 0, 1, ...

    Candidates stop at the truncation-safety bound
    ``(min_abs + eps) * 2^(2^bound_bits - 1)``; the comparison runs in log2
    space because the bound overflows float64 for wide code ranges.
    """
    if max_abs <= 0:
        raise SearchError("scale grid needs a positive maximum magnitude")
    log2_bound = float(np.log2(min_abs + cfg.eps)) + (2 ** cfg.bound_bits - 1)
    log2_base = float(np.log2(max_abs))
    if log2_base > log2_bound:
        raise SearchError(
            "empty scale grid: max magnitude already exceeds the search bound")
    count = int(np.floor((log2_bound - log2_base) / cfg.s_step_exponent)) + 1
    i = np.arange(count, dtype=np.float64)
    grid = max_abs * np.exp2(cfg.s_step_exponent * i)
    keep = (log2_base + cfg.s_step_exponent * i) <= log2_bound
    grid = grid[keep]
    if grid.size == 0:
        raise SearchError("empty scale grid: degenerate bounds")
    return grid


def hidi_beta_grid(pooled64: np.ndarray, cfg: HtdqSearchConfig) -> np.ndarray:
    """{0} followed by ``beta_grid_size`` evenly spaced values across the
    interquartile range of the pooled trajectory values.

    The shift's job is to move the concentration center of the magnitudes,
    which lives in the bulk of the data; a quantile-based grid scales with the
    data, keeping the search scale-equivariant.
    """
    q25, q75 = np.quantile(pooled64, [0.25, 0.75])
    return np.concatenate(([0.0], np.linspace(q25, q75, cfg.beta_grid_size)))


def search_hidi_params(traj: TemporalTrajectory,
                       cfg: HtdqSearchConfig = HtdqSearchConfig()) -> HtdqSearchResult:
    """Exhaustive grid search for the (s, beta) pair minimizing the composite
    objective of the round-tripped trajectory.

    Every candidate is evaluated through the same element-wise quantizer maps
    and the same objective code path as the public ops, so re-evaluating the
    returned candidate reproduces the reported objective bit-exactly. Ties
    break toward the lowest s index, then the lowest beta index. Candidates
    whose objective is NaN (a transformed step collapsed to the zero vector)
    are recorded but never selected.
    """
    stack32 = traj.stacked()
    pooled64 = stack32.astype(np.float64).ravel()
    abs_pooled = np.abs(pooled64)
    max_abs = float(abs_pooled.max())
    min_abs = float(abs_pooled.min())
    if max_abs == 0.0:
        raise SearchError("all-zero trajectory has no scale grid")
    s_grid = hidi_s_grid(max_abs, min_abs, cfg)
    beta_grid = hidi_beta_grid(pooled64, cfg)

    n = int(cfg.n)
    eps = float(cfg.eps)
    objectives = np.empty(s_grid.size * beta_grid.size, dtype=np.float64)
    n_beta = beta_grid.size
    # beta-major evaluation caches |x - beta|; candidate values are pure, so
    # the scan order for the argmin below stays s-major regardless.
    for bi, beta in enumerate(beta_grid):
        for si, s in enumerate(s_grid):
            params = HiDiParams(s=float(s), beta=float(beta), bits=cfg.bits)
            hat32 = _hidi_roundtrip_stack(stack32, params)
            objectives[si * n_beta + bi] = _composite_k_arrays(stack32, hat32, n, eps)
    chosen = first_argmin(objectives)
    best_params = HiDiParams(
        s=float(s_grid[chosen // n_beta]),
        beta=float(beta_grid[chosen % n_beta]),
        bits=cfg.bits,
    )
    return HtdqSearchResult(
        params=best_params,
        objective=float(objectives[chosen]),
        s_grid=tuple(float(v) for v in s_grid),
        beta_grid=tuple(float(v) for v in beta_grid),
        objectives=tuple(float(v) for v in objectives),
        chosen_index=chosen,
    )


def hidi_roundtrip(traj: TemporalTrajectory, params: HiDiParams) -> TemporalTrajectory:
    """Quantize and reconstruct every step with fixed hidi params."""
    shape = traj.step_shape
    stack32 = traj.stacked()
    hat = _hidi_roundtrip_stack(stack32, params)
    return TemporalTrajectory(
        [Tensor(hat[i].reshape(shape)) for i in range(hat.shape[0])])


_STEP_RE = re.compile(r"^step_(\d{4})\.qvdt$")


def save_trajectory(traj: TemporalTrajectory, directory: str | os.PathLike) -> list[str]:
    """Write steps as ``step_0001.qvdt`` .. plus a ``manifest.json``.

    Returns the list of file paths written (manifest last).
    """
    if traj.length > 9999:
        raise ArgumentError("trajectory too long for 4-digit step files")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, step in enumerate(traj.steps, start=1):
        path = directory / f"step_{i:04d}.qvdt"
        write_tensor(step, path)
        written.append(str(path))
    manifest = {"steps": traj.length, "shape": list(traj.step_shape)}
    manifest_path = directory / "manifest.json"
    from .tensor import atomic_write_bytes

    atomic_write_bytes(manifest_path, (json.dumps(manifest, sort_keys=True) + "\n").encode())
    written.append(str(manifest_path))
    return written


def load_trajectory(directory: str | os.PathLike) -> TemporalTrajectory:
    """Read a trajectory directory written by :func:`save_trajectory`."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise TensorFormatError(f"missing manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
        steps = int(manifest["steps"])
        shape = tuple(int(d) for d in manifest["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise TensorFormatError(f"malformed manifest.json in {directory}: {exc}") from exc
    tensors = []
    for i in range(1, steps + 1):
        path = directory / f"step_{i:04d}.qvdt"
        if not path.is_file():
            raise TensorFormatError(f"missing trajectory step file {path}")
        t = read_tensor(path)
        if t.shape != shape:
            raise TensorFormatError(
                f"{path}: shape {t.shape} disagrees with manifest {shape}")
        tensors.append(t)
    return TemporalTrajectory(tensors)
