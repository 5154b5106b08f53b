"""Near-linear adaptive scan over a dyadic epsilon-covering of the rectangles.

The covering consists of rectangles with anchor ``2^a * t`` and shape
``2^a * f`` (componentwise), for scales ``a`` in ``[a_lo, a_hi]^d`` and
multiples ``f`` in ``[1, f_max]^d``.  Their sums are read off a dyadic pyramid:
level ``a`` holds the sums of ``y`` over aligned blocks of side ``2^a``, so a
covering rectangle is a plain ``f``-window of level ``a``.

Scales are 0-based: level ``(0, ..., 0)`` is the field itself.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .field import GridField, Rect, prefix_sums, window_sums
from .scanners import ScanOutcome, ShapeRange, ShapeRecord, axis_maxima
from .thresholds import ScanFamily, alpha_from_tau, centering, tau_hat


def delta_metric(r0: Rect, r1: Rect) -> float:
    """Canonical distance ``sqrt(2 (1 - |R0 & R1| / sqrt(|R0| |R1|)))`` in ``[0, sqrt 2]``."""
    if r0.d != r1.d:
        raise ValueError("rectangles must have the same dimension")
    overlap = 1
    for t0, h0, t1, h1 in zip(r0.anchor, r0.shape, r1.anchor, r1.shape):
        overlap *= max(0, min(t0 + h0, t1 + h1) - max(t0, t1))
    rho = overlap / math.sqrt(r0.size * r1.size)
    return math.sqrt(max(0.0, 2.0 * (1.0 - rho)))


def _log2_exact(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"n must be a power of two, got {n}")
    return n.bit_length() - 1


# -- dyadic pyramid ----------------------------------------------------------


class DyadPyramid:
    """Block sums of a field over aligned dyadic blocks.

    ``level(a)[t] = sum of y over the block 2^a * t + [0, 2^a)``.  Every level
    other than the field itself is built from the level one step finer along
    the first axis with a positive scale, by adding neighbouring pairs.
    """

    def __init__(self, field: GridField, max_scale: Optional[int] = None):
        scales = [_log2_exact(n) for n in field.dims]
        if max_scale is not None:
            scales = [min(s, max_scale) for s in scales]
        self.field = field
        self.max_scales = tuple(scales)
        self.additions = 0
        levels = {(0,) * field.d: field.data}
        for a in itertools.product(*(range(s + 1) for s in scales)):
            if not any(a):
                continue
            j = next(i for i, x in enumerate(a) if x > 0)
            prev = levels[a[:j] + (a[j] - 1,) + a[j + 1 :]]
            even = [slice(None)] * field.d
            odd = [slice(None)] * field.d
            even[j] = slice(0, None, 2)
            odd[j] = slice(1, None, 2)
            level = prev[tuple(even)] + prev[tuple(odd)]
            level.setflags(write=False)
            self.additions += level.size
            levels[a] = level
        self._levels = levels

    def level(self, a: Sequence[int]) -> np.ndarray:
        return self._levels[tuple(int(x) for x in a)]

    @property
    def scales(self):
        return self._levels.keys()


def build_pyramid(field: GridField, max_scale: Optional[int] = None) -> DyadPyramid:
    return DyadPyramid(field, max_scale)


# -- the covering ------------------------------------------------------------


@dataclass(frozen=True)
class CoveringParams:
    eps: float
    d: int
    a_lo: int
    a_hi: int
    f_max: int

    @classmethod
    def build(cls, eps: float, d: int, shapes: ShapeRange, n: Optional[int] = None) -> "CoveringParams":
        """Loop bounds for ``eps``; requires ``eps^2 * h_lo >= 8 d``.

        ``a_hi`` is capped at ``log2 n`` when ``n`` is given.
        """
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if eps * eps * shapes.h_lo < 8 * d:
            raise ValueError(
                f"eps = {eps} is too small: need eps^2 * h_lo >= 8d "
                f"(eps >= {math.sqrt(8 * d / shapes.h_lo):.4g} for h_lo = {shapes.h_lo}, d = {d})"
            )
        a_lo = math.floor(math.log2(eps * eps * shapes.h_lo / (4 * d)))
        a_hi = math.ceil(math.log2(eps * eps * shapes.h_hi / (4 * d)))
        if n is not None:
            top = _log2_exact(n)
            a_hi = min(a_hi, top)
            a_lo = min(a_lo, a_hi)
        f_max = math.ceil(8 * d / (eps * eps))
        return cls(float(eps), d, a_lo, a_hi, f_max)

    def scales(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(range(self.a_lo, self.a_hi + 1), repeat=self.d)


@dataclass(frozen=True)
class CoveringElement:
    a: tuple[int, ...]
    f: tuple[int, ...]
    t: tuple[int, ...]

    def rect(self) -> Rect:
        return Rect(
            tuple(t << a for t, a in zip(self.t, self.a)),
            tuple(f << a for f, a in zip(self.f, self.a)),
        )


def _multiples(n: int, a: int, f_max: int) -> range:
    return range(1, min(f_max, n >> a) + 1)


def enumerate_covering(n: int, shapes: ShapeRange, params: CoveringParams) -> Iterator[CoveringElement]:
    """Every covering rectangle that fits ``[n]^d``, in ``(a, f, t)`` order."""
    _log2_exact(n)
    for a in params.scales():
        for f in itertools.product(*(_multiples(n, aj, params.f_max) for aj in a)):
            positions = [range((n >> aj) - fj + 1) for aj, fj in zip(a, f)]
            for t in itertools.product(*positions):
                yield CoveringElement(a, f, t)


def covering_size(n: int, params: CoveringParams) -> int:
    total = 0
    for a in params.scales():
        per_axis = [sum((n >> aj) - f + 1 for f in _multiples(n, aj, params.f_max)) for aj in a]
        total += math.prod(per_axis)
    return total


def _axis_candidates(n: int, params: CoveringParams) -> tuple[np.ndarray, np.ndarray]:
    """Start cells and lengths of all one-axis covering intervals."""
    starts, lengths = [], []
    for a in range(params.a_lo, params.a_hi + 1):
        for f in _multiples(n, a, params.f_max):
            t = np.arange((n >> a) - f + 1)
            starts.append(t << a)
            lengths.append(np.full(t.size, f << a))
    return np.concatenate(starts), np.concatenate(lengths)


def _best_axis_overlap(t: np.ndarray, h: np.ndarray, starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Largest ``|I & J| / sqrt(|I||J|)`` over candidate intervals ``J``, per query ``I``."""
    best = np.zeros(t.size)
    chunk = max(1, 2**22 // max(1, starts.size))
    for lo in range(0, t.size, chunk):
        tt = t[lo : lo + chunk, None]
        hh = h[lo : lo + chunk, None]
        inter = np.minimum(tt + hh, starts + lengths) - np.maximum(tt, starts)
        rho = np.clip(inter, 0, None) / np.sqrt(hh * lengths)
        best[lo : lo + chunk] = rho.max(axis=1)
    return best


def _construction_axis_overlap(t, h, n, params: CoveringParams) -> float:
    """Overlap ratio of the nearest-dyadic-multiple interval for one axis."""
    eps, d = params.eps, params.d
    a = math.floor(math.log2(h * eps * eps / (4 * d)))
    a = min(max(a, params.a_lo), params.a_hi)
    step = 1 << a
    best = 0.0
    for g in {(h // step) * step, -(-h // step) * step}:
        if not step <= g <= min(params.f_max * step, n):
            continue
        for s in {(t // step) * step, -(-t // step) * step}:
            if s + g > n:
                s = ((n - g) // step) * step
            inter = max(0, min(t + h, s + g) - max(t, s))
            best = max(best, inter / math.sqrt(h * g))
    return best


def random_rects(n: int, d: int, shapes: ShapeRange, trials: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform shapes in ``[h_lo, h_hi]^d`` with uniform fitting anchors."""
    rng = np.random.default_rng(seed)
    h = rng.integers(shapes.h_lo, shapes.h_hi + 1, size=(trials, d))
    t = np.floor(rng.random((trials, d)) * (n - h + 1)).astype(np.int64)
    return t, h


def covering_verify(
    n: int,
    shapes: ShapeRange,
    params: CoveringParams,
    trials: int,
    seed: int,
    method: str = "exact",
) -> float:
    """Largest, over random in-range rectangles, distance to the nearest covering element.

    ``method="exact"`` searches the whole covering (it is a product over axes,
    so the overlap ratio is maximized axis by axis).  ``method="construction"``
    uses only the nearest dyadic multiples of the shape and anchor, which can
    only give larger distances.
    """
    if shapes.h_hi > n:
        raise ValueError(f"h_hi = {shapes.h_hi} exceeds n = {n}")
    _log2_exact(n)
    t, h = random_rects(n, params.d, shapes, trials, seed)
    rho = np.ones(trials)
    if method == "exact":
        starts, lengths = _axis_candidates(n, params)
        for j in range(params.d):
            rho *= _best_axis_overlap(t[:, j], h[:, j], starts, lengths)
    elif method == "construction":
        for k in range(trials):
            for j in range(params.d):
                rho[k] *= _construction_axis_overlap(int(t[k, j]), int(h[k, j]), n, params)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.sqrt(np.clip(2.0 * (1.0 - rho), 0.0, None)).max())


# -- the epsilon-adaptive scan -------------------------------------------------


def epsilon_adaptive_scan(
    field: GridField,
    shapes: ShapeRange,
    eps: float,
    alpha: Optional[float] = None,
    in_range_only: bool = False,
    per_shape: bool = False,
) -> ScanOutcome:
    """Adaptive scan restricted to the dyadic covering.

    Shapes ``2^a * f`` falling outside ``[h_lo, h_hi]^d`` are scanned with the
    clamped adaptive centering and listed in ``flagged``; with
    ``in_range_only=True`` they are skipped instead.  ``op_count`` tallies
    pyramid additions, prefix-table cells and scanned anchors.
    """
    dims = field.dims
    if len(set(dims)) != 1:
        raise ValueError(f"expected a square grid [n]^d, got dims {dims}")
    n, d = dims[0], field.d
    top = _log2_exact(n)
    family = ScanFamily.adaptive(n, d, shapes.h_lo, shapes.h_hi)
    params = CoveringParams.build(eps, d, shapes, n)
    pyramid = build_pyramid(field, max_scale=min(params.a_hi, top))
    ops = pyramid.additions

    best_tau, best_shape, attaining = -math.inf, None, []
    flagged, records = [], []
    for a in params.scales():
        level = pyramid.level(a)
        table = prefix_sums(GridField(level))
        ops += table.cum.size
        sides = [list(_multiples(n, aj, params.f_max)) for aj in a]
        sums = axis_maxima(table.cum, sides)
        for idx in np.ndindex(sums.shape):
            f = tuple(sides[j][k] for j, k in enumerate(idx))
            shape = tuple(fj << aj for fj, aj in zip(f, a))
            ops += math.prod(lj - fj + 1 for lj, fj in zip(level.shape, f))
            crit = centering(family, shape)
            if crit.clamped:
                if in_range_only:
                    continue
                flagged.append(shape)
            s_hat = float(sums[idx]) / math.sqrt(math.prod(shape))
            tau = tau_hat(crit, s_hat)
            if per_shape:
                records.append(ShapeRecord(shape, s_hat, crit.v, tau, crit.clamped))
            if tau > best_tau or (tau == best_tau and shape < best_shape):
                best_tau, best_shape, attaining = tau, shape, [(a, f, s_hat)]
            elif tau == best_tau and shape == best_shape:
                attaining.append((a, f, s_hat))

    if best_shape is None:
        raise ValueError("no covering shape lies inside the shape range")
    # one shape can arise from several (a, f); keep the smallest anchor
    candidates = []
    for a, f, s_hat in attaining:
        window = window_sums(prefix_sums(GridField(pyramid.level(a))).cum, f)
        t = np.unravel_index(np.argmax(window), window.shape)
        candidates.append((tuple(int(tj) << aj for tj, aj in zip(t, a)), s_hat))
    anchor, s_hat = min(candidates)
    return ScanOutcome(
        "epsilon",
        Rect(anchor, best_shape),
        s_hat,
        best_tau,
        alpha_from_tau(best_tau),
        alpha,
        sorted(records, key=lambda r: r.shape) if per_shape else None,
        sorted(set(flagged)),
        op_count=ops,
    )
