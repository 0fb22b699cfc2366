"""Model footprint estimation: stored size from weight bit-widths and bit
operations from MAC counts. All size arithmetic is exact (integers and
rationals); floats appear only when reporting.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ArgumentError

REFERENCE_BITS = 32


@dataclass(frozen=True)
class LayerSpec:
    name: str
    param_count: int
    macs_per_forward: int

    def __post_init__(self):
        if int(self.param_count) <= 0:
            raise ArgumentError(f"layer {self.name!r}: param_count must be positive")
        if int(self.macs_per_forward) <= 0:
            raise ArgumentError(f"layer {self.name!r}: macs_per_forward must be positive")


@dataclass(frozen=True)
class LayerFootprintSpec:
    layers: tuple[LayerSpec, ...]
    w_bits: int
    a_bits: int

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ArgumentError("footprint spec needs at least one layer")
        for bits, label in ((self.w_bits, "w_bits"), (self.a_bits, "a_bits")):
            if not 1 <= int(bits) <= 64:
                raise ArgumentError(f"{label} must be in [1, 64], got {bits}")


@dataclass(frozen=True)
class FootprintEstimate:
    """Exact footprint numbers plus ratios against a 32/32 reference."""

    total_params: int
    total_macs: int
    size_bits: int
    size_bytes: Fraction
    bops: int
    reference_size_bits: int
    reference_bops: int
    size_ratio: Fraction
    bops_ratio: Fraction

    def metrics(self) -> dict[str, float]:
        return {
            "total_params": float(self.total_params),
            "total_macs": float(self.total_macs),
            "size_bits": float(self.size_bits),
            "size_bytes": float(self.size_bytes),
            "size_gbits": self.size_bits / 1e9,
            "bops": float(self.bops),
            "size_ratio_vs_fp32": float(self.size_ratio),
            "bops_ratio_vs_fp32": float(self.bops_ratio),
        }


def estimate_footprint(spec: LayerFootprintSpec) -> FootprintEstimate:
    """size = sum(params) * w_bits; bops = sum(macs) * w_bits * a_bits."""
    total_params = sum(int(l.param_count) for l in spec.layers)
    total_macs = sum(int(l.macs_per_forward) for l in spec.layers)
    w, a = int(spec.w_bits), int(spec.a_bits)
    size_bits = total_params * w
    bops = total_macs * w * a
    ref_size = total_params * REFERENCE_BITS
    ref_bops = total_macs * REFERENCE_BITS * REFERENCE_BITS
    return FootprintEstimate(
        total_params=total_params,
        total_macs=total_macs,
        size_bits=size_bits,
        size_bytes=Fraction(size_bits, 8),
        bops=bops,
        reference_size_bits=ref_size,
        reference_bops=ref_bops,
        size_ratio=Fraction(size_bits, ref_size),
        bops_ratio=Fraction(bops, ref_bops),
    )


def footprint_spec_from_json(doc: dict) -> LayerFootprintSpec:
    try:
        layers = tuple(
            LayerSpec(
                name=str(l["name"]),
                param_count=int(l["param_count"]),
                macs_per_forward=int(l["macs_per_forward"]),
            )
            for l in doc["layers"]
        )
        return LayerFootprintSpec(layers=layers, w_bits=int(doc["w_bits"]),
                                  a_bits=int(doc["a_bits"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"malformed footprint spec: {exc}") from exc
