"""Partition-independent reductions.

Sums over columns are computed so that the result does not depend on how the
columns are grouped (one node, five nodes, thread chunks). Vector quantities
are rounded per column onto a power-of-two grid and accumulated as int64,
which is exact and associative. Scalar statistics are accumulated exactly as
rationals and shipped as double-double pairs.
"""
import math
from fractions import Fraction

import numpy as np

from .errors import ReductionOverflow

# per-column contributions are bounded by ``bound``; the grid leaves
# GRID_HEADROOM_BITS of int64 range above that bound.
GRID_HEADROOM_BITS = 6
_LIMIT = float(2 ** 61)


def grid_step(bound: float) -> float:
    """Power-of-two quantum for contributions whose summed magnitude is <= bound."""
    if not (bound > 0 and math.isfinite(bound)):
        bound = 1.0
    exp = math.ceil(math.log2(bound)) - (61 - GRID_HEADROOM_BITS)
    return math.ldexp(1.0, exp)


def quantize_sum(contribs, step: float) -> np.ndarray:
    """Exact fixed-point sum over axis 0 of a (K, ...) stack of contributions."""
    contribs = np.asarray(contribs, dtype=np.float64)
    if contribs.shape[0] == 0:
        return np.zeros(contribs.shape[1:], dtype=np.int64)
    scaled = contribs / step
    if not np.all(np.isfinite(scaled)) or np.abs(scaled).sum(axis=0).max() >= _LIMIT:
        raise ReductionOverflow("fixed-point partial sum exceeds the reserved int64 range")
    return np.rint(scaled).astype(np.int64).sum(axis=0)


def scatter_quantized(index, values, step: float, shape) -> np.ndarray:
    """Exact fixed-point ``out[index[i]] += values[i]`` for row-indexed values."""
    scaled = np.asarray(values, dtype=np.float64) / step
    out = np.zeros(shape, dtype=np.int64)
    if scaled.size == 0:
        return out
    if not np.all(np.isfinite(scaled)) or np.abs(scaled).sum(axis=0).max() >= _LIMIT:
        raise ReductionOverflow("fixed-point partial sum exceeds the reserved int64 range")
    np.add.at(out, index, np.rint(scaled).astype(np.int64))
    return out


def combine(parts) -> np.ndarray:
    """Center-side sum of int64 partials (order-free)."""
    parts = list(parts)
    mags = sum(float(np.abs(p).max(initial=0)) for p in parts)
    if mags >= 2 * _LIMIT:
        raise ReductionOverflow("aggregated fixed-point sum exceeds int64 range")
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total


def dequantize(total, step: float) -> np.ndarray:
    return np.asarray(total).astype(np.float64) * step


def exact_sum(values) -> Fraction:
    return sum((Fraction(float(v)) for v in np.ravel(values)), Fraction(0))


def to_double_double(x: Fraction):
    """Split an exact rational into (hi, lo) floats with hi + lo == x exactly."""
    hi = float(x)
    lo = float(x - Fraction(hi))
    if Fraction(hi) + Fraction(lo) != x:
        raise ReductionOverflow("partial statistic is not representable as a double-double")
    return hi, lo


def round_exact(parts) -> float:
    """Correctly rounded total of exact (hi, lo) partials."""
    return float(sum((Fraction(hi) + Fraction(lo) for hi, lo in parts), Fraction(0)))
