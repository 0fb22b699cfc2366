"""Dense float32 tensor container, per-channel statistics, error metrics,
and the QVDT binary tensor file format.

Values are 32-bit floats end to end; accumulating reductions (dot products,
norms, mean squared error) run in 64-bit. Tensors are immutable after
construction and therefore safe to share across threads; every function in
this module is pure.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateInputError, DegenerateRangeError, TensorFormatError

QVDT_MAGIC = b"QVDT"
QVDT_VERSION = 1
QVDT_MAX_RANK = 8


class Tensor:
    """An immutable dense float32 array with an optional channel axis.

    Construction rejects NaN/Inf values and empty shapes: downstream
    calibration searches assume finite objectives, so non-finite data is
    refused at the boundary instead of propagated.
    """

    __slots__ = ("_data", "_channel_axis")

    def __init__(self, data, channel_axis: int | None = None):
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ArgumentError("tensor must not be empty")
        if not np.isfinite(arr).all():
            raise ArgumentError("tensor values must be finite (no NaN/Inf)")
        if channel_axis is not None:
            channel_axis = int(channel_axis)
            if not 0 <= channel_axis < arr.ndim:
                raise ArgumentError(
                    f"channel_axis {channel_axis} out of range for rank {arr.ndim}"
                )
        arr.setflags(write=False)
        self._data = arr
        self._channel_axis = channel_axis

    @property
    def data(self) -> np.ndarray:
        """Read-only float32 ndarray, row-major."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def channel_axis(self) -> int | None:
        return self._channel_axis

    def astype64(self) -> np.ndarray:
        """Promoted float64 copy, used for accumulating arithmetic."""
        return self._data.astype(np.float64)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        ax = "" if self._channel_axis is None else f", channel_axis={self._channel_axis}"
        return f"Tensor(shape={self.shape}{ax})"


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel extrema of a tensor along one axis.

    ``absmax[c] == max(|min[c]|, |max[c]|)`` and the global extrema equal the
    extremes over channels.
    """

    min: np.ndarray
    max: np.ndarray
    absmax: np.ndarray
    global_min: float
    global_max: float

    @property
    def channels(self) -> int:
        return int(self.min.shape[0])


def _require_axis(x: Tensor, axis: int) -> int:
    axis = int(axis)
    if not 0 <= axis < x.rank:
        raise ArgumentError(f"axis {axis} out of range for rank {x.rank}")
    return axis


def channel_stats(x: Tensor, axis: int) -> ChannelStats:
    """Min/max/absmax per channel along ``axis``, reducing over all other axes.

    The reduction scans ascending flat index in a single pass, which makes the
    result reproducible and equal to a naive scalar loop (min/max are
    order-independent, so any IEEE evaluation agrees exactly).
    """
    axis = _require_axis(x, axis)
    grouped = np.moveaxis(x.data, axis, 0).reshape(x.shape[axis], -1)
    cmin = grouped.min(axis=1)
    cmax = grouped.max(axis=1)
    absmax = np.maximum(np.abs(cmin), np.abs(cmax))
    for v in (cmin, cmax, absmax):
        v.setflags(write=False)
    return ChannelStats(
        min=cmin,
        max=cmax,
        absmax=absmax,
        global_min=float(cmin.min()),
        global_max=float(cmax.max()),
    )


def coverage_ratio(x: Tensor, axis: int) -> np.ndarray:
    """Each channel's value range divided by the tensor's global range.

    Returns a float64 vector of length C with entries in [0, 1]. A constant
    tensor has no usable global range and is rejected: no quantizer search
    should ever receive one.
    """
    stats = channel_stats(x, axis)
    span = stats.global_max - stats.global_min
    if span <= 0.0:
        raise DegenerateRangeError(
            "coverage_ratio: global range is degenerate (max == min); tensor is constant"
        )
    ratios = (stats.max.astype(np.float64) - stats.min.astype(np.float64)) / span
    ratios.setflags(write=False)
    return ratios


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def cosine_similarity(a: Tensor, b: Tensor) -> float:
    """dot(a, b) / (|a| * |b|), accumulated in float64."""
    _require_same_shape(a, b, "cosine_similarity")
    av = a.astype64().ravel()
    bv = b.astype64().ravel()
    na = float(np.sqrt(np.dot(av, av)))
    nb = float(np.sqrt(np.dot(bv, bv)))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine_similarity: zero-norm operand")
    return float(np.dot(av, bv) / (na * nb))


def mse(a: Tensor, b: Tensor) -> float:
    """Mean of squared element-wise differences, accumulated in float64."""
    _require_same_shape(a, b, "mse")
    diff = a.astype64().ravel() - b.astype64().ravel()
    return float(np.dot(diff, diff) / diff.size)


def _format_error(offset: int, detail: str) -> TensorFormatError:
    return TensorFormatError(f"bad tensor file at byte offset {offset}: {detail}")


def write_tensor(x: Tensor, path: str | os.PathLike) -> None:
    """Write ``x`` in QVDT v1 format (little-endian, no compression).

    Layout: magic ``QVDT``, u32 version, u8 rank, u8 channel-axis flag,
    u8 channel axis, one zero pad byte, rank u32 dims, then the row-major
    float32 payload. The write is atomic (temp file + rename).
    """
    if x.rank > QVDT_MAX_RANK:
        raise ArgumentError(f"tensor rank {x.rank} exceeds format maximum {QVDT_MAX_RANK}")
    flag = 0 if x.channel_axis is None else 1
    axis = 0 if x.channel_axis is None else x.channel_axis
    header = QVDT_MAGIC
    header += struct.pack("<I", QVDT_VERSION)
    header += struct.pack("<BBBB", x.rank, flag, axis, 0)
    header += struct.pack(f"<{x.rank}I", *x.shape)
    payload = np.ascontiguousarray(x.data, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_tensor(path: str | os.PathLike) -> Tensor:
    """Read a QVDT v1 file back into a Tensor, bit-exactly.

    Malformed files raise :class:`TensorFormatError` naming the byte offset
    of the first offending field.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12:
        raise _format_error(len(buf), "truncated header")
    if buf[0:4] != QVDT_MAGIC:
        raise _format_error(0, f"wrong magic {buf[0:4]!r}, expected {QVDT_MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != QVDT_VERSION:
        raise _format_error(4, f"unsupported version {version}")
    rank, flag, axis, pad = struct.unpack_from("<BBBB", buf, 8)
    if not 1 <= rank <= QVDT_MAX_RANK:
        raise _format_error(8, f"rank {rank} outside [1, {QVDT_MAX_RANK}]")
    if flag not in (0, 1):
        raise _format_error(9, f"channel-axis flag must be 0 or 1, got {flag}")
    if flag == 1 and axis >= rank:
        raise _format_error(10, f"channel axis {axis} out of range for rank {rank}")
    if pad != 0:
        raise _format_error(11, f"pad byte must be 0, got {pad}")
    dims_end = 12 + 4 * rank
    if len(buf) < dims_end:
        raise _format_error(len(buf), "truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    for i, d in enumerate(dims):
        if d == 0:
            raise _format_error(12 + 4 * i, "zero dimension")
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count
    if len(buf) < expected:
        raise _format_error(
            len(buf), f"payload truncated: need {expected} bytes total, have {len(buf)}"
        )
    if len(buf) > expected:
        raise _format_error(expected, f"{len(buf) - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=dims_end)
    finite = np.isfinite(data)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise _format_error(dims_end + 4 * bad, f"non-finite payload value at element {bad}")
    arr = data.reshape(dims).astype(np.float32)
    return Tensor(arr, channel_axis=axis if flag == 1 else None)


def atomic_write_bytes(path: str | os.PathLike, blob: bytes) -> None:
    """Write bytes via a temp file in the same directory plus rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".qvd-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
