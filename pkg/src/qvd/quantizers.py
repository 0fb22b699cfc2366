"""Quantizer families and calibration.

Three quantizers share one code representation:

* uniform  — ``code = clamp(round(x / s) + z, 0, 2^b - 1)``,
             ``x_hat = s * (code - z)``
* log2     — ``code = clamp(round(-log2(|x| / s)), 0, 2^b - 1)`` with an
             explicit sign plane, ``x_hat = sign * s * 2^{-code}``
* hidi     — log2 applied to the shifted magnitude ``|x - beta|`` while the
             sign plane still records ``sign(x)``;
             ``x_hat = sign * s * 2^{-code} + beta``

Rounding is round-half-away-from-zero everywhere, so scalar oracles can
reproduce codes exactly. Magnitudes below ``ZERO_EPS`` are recorded as sign 0
with the deepest code and dequantize to exactly 0 (or ``beta`` for hidi):
the log of zero is undefined and the deepest level is the closest
representable magnitude.

A caveat on hidi: the sign plane records the sign of the raw value while the
magnitude is measured from ``beta``, so for values strictly between 0 and
``beta`` the reconstruction ``sign * s * 2^{-code} + beta`` is not a true
inverse. This asymmetry is kept deliberately rather than silently repaired;
the (s, beta) search in :mod:`qvd.temporal` optimizes around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateRangeError
from .tensor import Tensor

ZERO_EPS = 1e-12

MIN_BITS = 2
MAX_BITS = 16

MSE_CLIP_FRACTIONS = [k / 100.0 for k in range(50, 101)]


def _check_bits(bits: int) -> int:
    bits = int(bits)
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ArgumentError(f"bit-width must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")
    return bits


def _check_scale(s: float) -> float:
    s = float(s)
    if not np.isfinite(s) or s <= 0.0:
        raise ArgumentError(f"scale must be a positive finite float, got {s}")
    return s


@dataclass(frozen=True)
class UniformParams:
    """Affine uniform quantizer: scale ``s``, integer zero point ``z``, ``bits``."""

    s: float
    z: int
    bits: int

    def __post_init__(self):
        object.__setattr__(self, "s", _check_scale(self.s))
        object.__setattr__(self, "bits", _check_bits(self.bits))
        object.__setattr__(self, "z", int(self.z))
        if not 0 <= self.z <= self.max_code:
            raise ArgumentError(f"zero point {self.z} outside [0, {self.max_code}]")

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class Log2Params:
    """Power-of-two quantizer scale for magnitudes."""

    s: float
    bits: int

    def __post_init__(self):
        object.__setattr__(self, "s", _check_scale(self.s))
        object.__setattr__(self, "bits", _check_bits(self.bits))

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class HiDiParams:
    """Log2 quantizer with a relaxation shift ``beta`` applied before the log."""

    s: float
    beta: float
    bits: int

    def __post_init__(self):
        object.__setattr__(self, "s", _check_scale(self.s))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "bits", _check_bits(self.bits))
        if not np.isfinite(self.beta):
            raise ArgumentError("beta must be finite")

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class UniformChannelParams:
    """Per-channel uniform parameters along one axis."""

    channels: tuple[UniformParams, ...]
    axis: int
    bits: int

    def __post_init__(self):
        if len(self.channels) == 0:
            raise ArgumentError("per-channel params must cover at least one channel")
        if any(p.bits != self.bits for p in self.channels):
            raise ArgumentError("per-channel params must share one bit-width")


class QuantizedTensor:
    """Integer codes plus the parameters that produced them.

    Log-family results additionally carry a sign plane in {-1, 0, +1}; sign 0
    marks values that hit the quantizer's zero rule.
    """

    __slots__ = ("codes", "signs", "params", "channel_axis")

    def __init__(self, codes: np.ndarray, params, signs: np.ndarray | None = None,
                 channel_axis: int | None = None):
        codes = np.asarray(codes, dtype=np.int32)
        max_code = params.max_code
        if codes.size == 0:
            raise ArgumentError("quantized tensor must not be empty")
        if codes.min() < 0 or codes.max() > max_code:
            raise ArgumentError(f"codes outside [0, {max_code}]")
        log_family = isinstance(params, (Log2Params, HiDiParams))
        if log_family and signs is None:
            raise ArgumentError("log-family quantized tensors require a sign plane")
        if not log_family and signs is not None:
            raise ArgumentError("uniform quantized tensors must not carry a sign plane")
        if signs is not None:
            signs = np.asarray(signs, dtype=np.int8)
            if signs.shape != codes.shape:
                raise ArgumentError("sign plane shape must match codes shape")
            if not np.isin(signs, (-1, 0, 1)).all():
                raise ArgumentError("sign plane values must be in {-1, 0, +1}")
            signs = signs.copy()
            signs.setflags(write=False)
        codes = codes.copy()
        codes.setflags(write=False)
        self.codes = codes
        self.signs = signs
        self.params = params
        self.channel_axis = channel_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest with halves away from zero (platform independent)."""
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def _uniform_codes(x64: np.ndarray, s: float, z: int, max_code: int) -> np.ndarray:
    codes = round_half_away(x64 / s) + z
    return np.clip(codes, 0, max_code).astype(np.int32)


def uniform_quant(x: Tensor, p: UniformParams) -> QuantizedTensor:
    """Quantize with an affine uniform grid; saturating at the code range."""
    codes = _uniform_codes(x.astype64(), p.s, p.z, p.max_code)
    return QuantizedTensor(codes, p, channel_axis=x.channel_axis)


def uniform_dequant(q: QuantizedTensor) -> Tensor:
    """``s * (code - z)``; inside the representable range the round-trip error
    is at most s/2."""
    if not isinstance(q.params, UniformParams):
        raise ArgumentError("uniform_dequant requires uniform params")
    vals = q.params.s * (q.codes.astype(np.float64) - q.params.z)
    return Tensor(vals.astype(np.float32), channel_axis=q.channel_axis)


def _log_codes(mag64: np.ndarray, s: float, max_code: int) -> np.ndarray:
    """Codes for guarded magnitudes: round(-log2(mag / s)), clipped."""
    levels = round_half_away(-np.log2(mag64 / s))
    return np.clip(levels, 0, max_code).astype(np.int32)


def _log_sign_plane(x64: np.ndarray, zero_mask: np.ndarray) -> np.ndarray:
    signs = np.sign(x64).astype(np.int8)
    signs[zero_mask] = 0
    return signs


def log2_quant(x: Tensor, p: Log2Params) -> QuantizedTensor:
    """Power-of-two quantization of ``|x|`` with an explicit sign plane.

    Signed inputs are accepted: the magnitude is quantized and the sign is
    stored separately (one extra conceptual bit).
    """
    x64 = x.astype64()
    mag = np.abs(x64)
    zero_mask = mag < ZERO_EPS
    codes = _log_codes(np.maximum(mag, ZERO_EPS), p.s, p.max_code)
    codes[zero_mask] = p.max_code
    signs = _log_sign_plane(x64, zero_mask)
    return QuantizedTensor(codes, p, signs=signs, channel_axis=x.channel_axis)


def log2_dequant(q: QuantizedTensor) -> Tensor:
    """``sign * s * 2^{-code}``; sign 0 reconstructs exactly 0."""
    if not isinstance(q.params, Log2Params):
        raise ArgumentError("log2_dequant requires log2 params")
    if q.signs is None:
        raise ArgumentError("log2_dequant requires a sign plane")
    vals = q.signs.astype(np.float64) * np.ldexp(np.float64(q.params.s), -q.codes)
    return Tensor(vals.astype(np.float32), channel_axis=q.channel_axis)


def _hidi_code_arrays(x64: np.ndarray, p: HiDiParams) -> tuple[np.ndarray, np.ndarray]:
    """Shared forward map for hidi; used verbatim by the (s, beta) search."""
    shifted_mag = np.abs(x64 - p.beta)
    zero_mask = (shifted_mag < ZERO_EPS) | (x64 == 0.0)
    codes = _log_codes(np.maximum(shifted_mag, ZERO_EPS), p.s, p.max_code)
    codes[zero_mask] = p.max_code
    signs = _log_sign_plane(x64, zero_mask)
    return codes, signs


def _hidi_reconstruct(codes: np.ndarray, signs: np.ndarray, p: HiDiParams) -> np.ndarray:
    # sign 0 contributes exactly 0, so the sum lands on beta without a mask.
    return signs.astype(np.float64) * np.ldexp(np.float64(p.s), -codes) + p.beta


def hidi_quant(x: Tensor, p: HiDiParams) -> QuantizedTensor:
    """Log2 quantization of the shifted magnitude ``|x - beta|``.

    The sign plane records ``sign(x)``. Values whose shifted magnitude falls
    below ``ZERO_EPS`` (and exact zeros, whose sign carries no information)
    take the zero rule: sign 0, deepest code, reconstruction ``beta``.
    """
    codes, signs = _hidi_code_arrays(x.astype64(), p)
    return QuantizedTensor(codes, p, signs=signs, channel_axis=x.channel_axis)


def hidi_dequant(q: QuantizedTensor) -> Tensor:
    """``sign * s * 2^{-code} + beta``; sign 0 reconstructs exactly beta."""
    if not isinstance(q.params, HiDiParams):
        raise ArgumentError("hidi_dequant requires hidi params")
    if q.signs is None:
        raise ArgumentError("hidi_dequant requires a sign plane")
    vals = _hidi_reconstruct(q.codes, q.signs, q.params)
    return Tensor(vals.astype(np.float32), channel_axis=q.channel_axis)


def first_argmin(values) -> int:
    """Index of the smallest value, first occurrence winning ties.

    NaN entries mark degenerate candidates and are never selected.
    """
    best = None
    best_idx = -1
    for i, v in enumerate(values):
        v = float(v)
        if np.isnan(v):
            continue
        if best is None or v < best:
            best = v
            best_idx = i
    if best_idx < 0:
        raise DegenerateRangeError("all candidates degenerate (NaN objectives)")
    return best_idx


def _minmax_params(lo: float, hi: float, bits: int, what: str) -> UniformParams:
    if hi <= lo:
        raise DegenerateRangeError(f"{what}: constant group (min == max == {lo})")
    max_code = (1 << bits) - 1
    s = (hi - lo) / max_code
    z = int(np.clip(round_half_away(np.float64(-lo / s)), 0, max_code))
    return UniformParams(s=s, z=z, bits=bits)


def calibrate_minmax(x: Tensor, bits: int, granularity: str = "tensor"):
    """Min/max calibration: ``s = (max - min) / (2^b - 1)``, ``z = round(-min/s)``.

    ``granularity`` is ``"tensor"`` for one parameter set or ``"channel"`` for
    one per channel along ``x.channel_axis``. Constant groups are rejected.
    """
    bits = _check_bits(bits)
    if granularity == "tensor":
        lo = float(x.data.min())
        hi = float(x.data.max())
        return _minmax_params(lo, hi, bits, "calibrate_minmax")
    if granularity == "channel":
        if x.channel_axis is None:
            raise ArgumentError("per-channel calibration requires a channel_axis")
        grouped = np.moveaxis(x.data, x.channel_axis, 0).reshape(x.shape[x.channel_axis], -1)
        channels = []
        for c in range(grouped.shape[0]):
            lo = float(grouped[c].min())
            hi = float(grouped[c].max())
            channels.append(_minmax_params(lo, hi, bits, f"calibrate_minmax channel {c}"))
        return UniformChannelParams(channels=tuple(channels), axis=x.channel_axis, bits=bits)
    raise ArgumentError(f"granularity must be 'tensor' or 'channel', got {granularity!r}")


def fake_quant_uniform(x: Tensor, p: UniformParams) -> Tensor:
    """Quantize-then-dequantize in one step (simulated quantization error)."""
    return uniform_dequant(uniform_quant(x, p))


def _fake_quant_array(x64: np.ndarray, p: UniformParams) -> np.ndarray:
    codes = _uniform_codes(x64, p.s, p.z, p.max_code)
    return p.s * (codes.astype(np.float64) - p.z)


def mse_sweep_uniform(x: Tensor, bits: int) -> tuple[UniformParams, list[float], list[float]]:
    """Sweep symmetric clip fractions 0.50..1.00 of the min/max range.

    For each fraction f the candidate quantizer covers [f*min, f*max]; values
    outside saturate. Returns the winning params (lowest fraction index on
    exact ties) plus the full (fractions, objectives) trace for auditing.
    """
    bits = _check_bits(bits)
    lo = float(x.data.min())
    hi = float(x.data.max())
    if hi <= lo:
        raise DegenerateRangeError("calibrate_mse_uniform: constant tensor")
    x64 = x.astype64()
    candidates: list[UniformParams] = []
    objectives: list[float] = []
    for f in MSE_CLIP_FRACTIONS:
        p = _minmax_params(f * lo, f * hi, bits, "calibrate_mse_uniform")
        diff = x64 - _fake_quant_array(x64, p)
        objectives.append(float(np.dot(diff.ravel(), diff.ravel()) / diff.size))
        candidates.append(p)
    best = first_argmin(objectives)
    return candidates[best], list(MSE_CLIP_FRACTIONS), objectives


def calibrate_mse_uniform(x: Tensor, bits: int) -> UniformParams:
    """Uniform params minimizing round-trip MSE over the clip-fraction grid."""
    params, _, _ = mse_sweep_uniform(x, bits)
    return params


def fake_quant_minmax_channel(x: Tensor, bits: int) -> Tensor:
    """Per-channel min/max fake quantization along ``x.channel_axis``."""
    params = calibrate_minmax(x, bits, granularity="channel")
    axis = params.axis
    moved = np.moveaxis(x.astype64(), axis, 0)
    out = np.empty_like(moved)
    for c, p in enumerate(params.channels):
        out[c] = _fake_quant_array(moved[c], p)
    out = np.moveaxis(out, 0, axis)
    return Tensor(out.astype(np.float32), channel_axis=x.channel_axis)


def params_to_json(params) -> dict:
    """Serialize any parameter set to the interchange dict."""
    if isinstance(params, UniformParams):
        return {"kind": "uniform", "s": params.s, "z": params.z,
                "bits": params.bits, "granularity": "tensor"}
    if isinstance(params, Log2Params):
        return {"kind": "log2", "s": params.s, "bits": params.bits,
                "granularity": "tensor"}
    if isinstance(params, HiDiParams):
        return {"kind": "hidi", "s": params.s, "beta": params.beta,
                "bits": params.bits, "granularity": "tensor"}
    if isinstance(params, UniformChannelParams):
        first = params.channels[0]
        return {
            "kind": "uniform",
            "s": first.s,
            "z": first.z,
            "bits": params.bits,
            "granularity": "channel",
            "axis": params.axis,
            "per_channel": [{"s": p.s, "z": p.z} for p in params.channels],
        }
    raise ArgumentError(f"unknown params type {type(params).__name__}")


def params_from_json(doc: dict):
    """Inverse of :func:`params_to_json`."""
    try:
        kind = doc["kind"]
        bits = int(doc["bits"])
        if doc.get("granularity", "tensor") == "channel":
            if kind != "uniform":
                raise ArgumentError("per-channel granularity is uniform-only")
            channels = tuple(
                UniformParams(s=c["s"], z=int(c["z"]), bits=bits)
                for c in doc["per_channel"]
            )
            return UniformChannelParams(channels=channels, axis=int(doc["axis"]), bits=bits)
        if kind == "uniform":
            return UniformParams(s=doc["s"], z=int(doc["z"]), bits=bits)
        if kind == "log2":
            return Log2Params(s=doc["s"], bits=bits)
        if kind == "hidi":
            return HiDiParams(s=doc["s"], beta=doc["beta"], bits=bits)
    except KeyError as exc:
        raise ArgumentError(f"params JSON missing field {exc}") from exc
    raise ArgumentError(f"unknown params kind {kind!r}")
