"""Oracle, multiscale, adaptive and modified adaptive scans.

All scans over a shape range share one pass (:func:`shape_maxima`) that finds
the largest Z-score for every shape in ``[h_lo, h_hi]^d``.  Cost is
``O((h_hi - h_lo + 1)^d n^d)``: each shape is one differencing pass over the
prefix-sum table.

Ties are broken towards the lexicographically smallest ``(shape, anchor)``.
"""
from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .field import FieldError, GridField, PrefixSumTable, Rect, prefix_sums, window_sums
from .thresholds import (
    CriticalParams,
    Kind,
    ScanFamily,
    alpha_from_tau,
    centering,
    oracle_centering,
    tau_hat,
)


class RegimeWarning(UserWarning):
    """The smallest scale is outside the range covered by the asymptotic theory."""


@dataclass(frozen=True)
class ShapeRange:
    h_lo: int
    h_hi: int

    def __post_init__(self):
        if not 1 <= self.h_lo <= self.h_hi:
            raise ValueError(f"need 1 <= h_lo <= h_hi, got [{self.h_lo}, {self.h_hi}]")

    def sides(self) -> range:
        return range(self.h_lo, self.h_hi + 1)

    def shapes(self, d: int):
        """Every shape in ``[h_lo, h_hi]^d``, in lexicographic order."""
        return itertools.product(self.sides(), repeat=d)

    def check_regime(self, n: int) -> None:
        if self.h_lo < math.log(n):
            warnings.warn(
                f"h_lo = {self.h_lo} is below log(n) = {math.log(n):.2f}; "
                "critical values are least accurate in this regime",
                RegimeWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class ShapeRecord:
    shape: tuple[int, ...]
    max_z: float
    v: float
    tau_hat: float
    clamped: bool = False

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "max_z": self.max_z,
            "v": self.v,
            "tau_hat": self.tau_hat,
            "clamped": self.clamped,
        }


@dataclass
class ScanOutcome:
    kind: str
    best_rect: Rect
    stat: float
    tau_hat: Optional[float]
    pvalue: Optional[float]
    alpha: Optional[float] = None
    per_shape: Optional[list[ShapeRecord]] = None
    flagged: list[tuple[int, ...]] = dc_field(default_factory=list)
    op_count: Optional[int] = None

    @property
    def reject(self) -> Optional[bool]:
        if self.alpha is None or self.pvalue is None:
            return None
        return self.pvalue <= self.alpha

    def to_dict(self, include_per_shape: bool = True) -> dict:
        out = {
            "kind": self.kind,
            "stat": self.stat,
            "tau_hat": self.tau_hat,
            "pvalue": self.pvalue,
            "best_rect": self.best_rect.to_dict(),
            "reject": self.reject,
            "alpha": self.alpha,
        }
        if include_per_shape and self.per_shape is not None:
            out["per_shape"] = [r.to_dict() for r in self.per_shape]
        if self.kind == "epsilon":
            out["flagged_count"] = len(self.flagged)
            if include_per_shape and self.per_shape is not None:
                out["flagged_shapes"] = [list(s) for s in self.flagged]
        if self.op_count is not None:
            out["op_count"] = self.op_count
        return out


def axis_maxima(cum: np.ndarray, sides: Sequence[Sequence[int]]) -> np.ndarray:
    """Largest window sum for every shape in ``sides[0] x ... x sides[d-1]``.

    ``cum`` is a zero-bordered prefix-sum table.  The differences along the
    leading axes are shared between all shapes with the same leading sides.
    """
    out = np.empty(tuple(len(s) for s in sides))

    def descend(arr, axis, index):
        if axis == arr.ndim:
            out[index] = arr.max()
            return
        for k, h in enumerate(sides[axis]):
            hi = [slice(None)] * arr.ndim
            lo = [slice(None)] * arr.ndim
            hi[axis] = slice(h, None)
            lo[axis] = slice(None, arr.shape[axis] - h)
            descend(arr[tuple(hi)] - arr[tuple(lo)], axis + 1, index + (k,))

    descend(cum, 0, ())
    return out


def best_anchor(table: PrefixSumTable, shape: Sequence[int]) -> tuple[int, ...]:
    """Lexicographically first anchor attaining the largest sum at ``shape``."""
    sums = window_sums(table.cum, shape)
    return tuple(int(i) for i in np.unravel_index(np.argmax(sums), sums.shape))


@dataclass
class ShapeMaxima:
    """Per-shape maximal Z-scores of one field over a shape range."""

    table: PrefixSumTable
    range: ShapeRange
    max_z: np.ndarray  # indexed by (h_1 - h_lo, ..., h_d - h_lo)

    @property
    def n(self) -> int:
        return self.table.dims[0]

    @property
    def d(self) -> int:
        return len(self.table.dims)

    def shape_at(self, flat_index: int) -> tuple[int, ...]:
        idx = np.unravel_index(flat_index, self.max_z.shape)
        return tuple(self.range.h_lo + int(i) for i in idx)

    def rect_for(self, shape: Sequence[int]) -> Rect:
        return Rect(best_anchor(self.table, shape), tuple(shape))


def _square_side(field: GridField) -> int:
    try:
        return field.side()
    except FieldError as exc:
        raise ValueError(str(exc)) from exc


def shape_maxima(field: GridField, shapes: ShapeRange) -> ShapeMaxima:
    n = _square_side(field)
    if shapes.h_hi > n:
        raise ValueError(f"h_hi = {shapes.h_hi} exceeds the grid side {n}")
    table = prefix_sums(field)
    sides = [list(shapes.sides())] * field.d
    sums = axis_maxima(table.cum, sides)
    sizes = np.ones_like(sums)
    for axis in range(field.d):
        shape = [1] * field.d
        shape[axis] = -1
        sizes = sizes * np.asarray(sides[axis], dtype=np.float64).reshape(shape)
    return ShapeMaxima(table, shapes, sums / np.sqrt(sizes))


# -- the four scans --------------------------------------------------------


def oracle_scan(field: GridField, h_star: Sequence[int], alpha: Optional[float] = None) -> ScanOutcome:
    n = _square_side(field)
    family = ScanFamily.oracle(n, h_star)
    table = prefix_sums(field)
    shape = family.oracle_shape
    sums = window_sums(table.cum, shape)
    flat = int(np.argmax(sums))
    anchor = tuple(int(i) for i in np.unravel_index(flat, sums.shape))
    stat = float(sums.reshape(-1)[flat]) / math.sqrt(math.prod(shape))
    t = tau_hat(centering(family), stat)
    return ScanOutcome("oracle", Rect(anchor, shape), stat, t, alpha_from_tau(t), alpha)


def multiscale_from(maxima: ShapeMaxima, alpha: Optional[float] = None, per_shape: bool = False) -> ScanOutcome:
    family = ScanFamily.multiscale(maxima.n, maxima.d, maxima.range.h_lo, maxima.range.h_hi)
    params = centering(family)
    flat = int(np.argmax(maxima.max_z))
    shape = maxima.shape_at(flat)
    stat = float(maxima.max_z.reshape(-1)[flat])
    t = tau_hat(params, stat)
    records = None
    if per_shape:
        records = [
            ShapeRecord(s, float(z), params.v, tau_hat(params, float(z)))
            for s, z in zip(maxima.range.shapes(maxima.d), maxima.max_z.reshape(-1))
        ]
    return ScanOutcome("multiscale", maxima.rect_for(shape), stat, t, alpha_from_tau(t), alpha, records)


@functools.lru_cache(maxsize=32)
def adaptive_params(family: ScanFamily, shapes: ShapeRange) -> tuple[CriticalParams, ...]:
    return tuple(centering(family, s) for s in shapes.shapes(family.d))


def adaptive_from(maxima: ShapeMaxima, alpha: Optional[float] = None, per_shape: bool = False) -> ScanOutcome:
    family = ScanFamily.adaptive(maxima.n, maxima.d, maxima.range.h_lo, maxima.range.h_hi)
    zs = maxima.max_z.reshape(-1)
    params = adaptive_params(family, maxima.range)
    taus = np.array([tau_hat(p, float(z)) for p, z in zip(params, zs)])
    flat = int(np.argmax(taus))
    shape = maxima.shape_at(flat)
    t = float(taus[flat])
    records = None
    if per_shape:
        records = [
            ShapeRecord(s, float(z), p.v, float(tt))
            for s, z, p, tt in zip(maxima.range.shapes(maxima.d), zs, params, taus)
        ]
    return ScanOutcome(
        "adaptive", maxima.rect_for(shape), float(zs[flat]), t, alpha_from_tau(t), alpha, records
    )


def modified_from(maxima: ShapeMaxima) -> tuple[float, Rect]:
    zs = maxima.max_z.reshape(-1)
    scores = np.empty_like(zs)
    for k, s in enumerate(maxima.range.shapes(maxima.d)):
        v = oracle_centering(maxima.n, s)
        scores[k] = (zs[k] - v) * v
    flat = int(np.argmax(scores))
    return float(scores[flat]), maxima.rect_for(maxima.shape_at(flat))


def _maxima_for(field: GridField, shapes: ShapeRange) -> ShapeMaxima:
    n = _square_side(field)
    # family validation (h_hi <= floor(n/e)) before the expensive pass
    ScanFamily.multiscale(n, field.d, shapes.h_lo, shapes.h_hi)
    shapes.check_regime(n)
    return shape_maxima(field, shapes)


def multiscale_scan(
    field: GridField, shapes: ShapeRange, alpha: Optional[float] = None, per_shape: bool = False
) -> ScanOutcome:
    return multiscale_from(_maxima_for(field, shapes), alpha, per_shape)


def adaptive_scan(
    field: GridField, shapes: ShapeRange, alpha: Optional[float] = None, per_shape: bool = False
) -> ScanOutcome:
    """Adaptive multiscale scan in its min-P-value form.

    For each shape ``h`` the largest Z-score ``m_h`` is converted to
    ``tau_h = tau_hat(params(h), m_h)``; the scan reports the largest ``tau_h``
    and ``alpha_from_tau`` of it, which is the smallest per-shape P-value.
    """
    return adaptive_from(_maxima_for(field, shapes), alpha, per_shape)


def modified_adaptive_stat(field: GridField, shapes: ShapeRange) -> tuple[float, Rect]:
    """``max_h (m_h - w_h) * w_h`` with ``w_h = sqrt(2 sum_j log(n / h_j))``.

    No closed-form P-value exists; calibrate by simulation.
    """
    return modified_from(_maxima_for(field, shapes))


def modified_outcome(field: GridField, shapes: ShapeRange) -> ScanOutcome:
    stat, rect = modified_adaptive_stat(field, shapes)
    return ScanOutcome("modified", rect, stat, None, None)
