"""Critical values and P-values for the oracle, multiscale and adaptive scans.

Every test thresholds a standardized score ``z`` at

    u(tau) = v + (e * log(v) + kappa + tau) / v

with a test-specific centering ``v``, exponent ``e`` and constant ``kappa``;
the level is tied to ``tau`` through the Gumbel link
``alpha = 1 - exp(-exp(-tau))``.  Because ``u`` is affine and increasing in
``tau``, the smallest level at which ``z`` is rejected has the closed form
``alpha_from_tau(tau_hat(z))``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class Kind(str, enum.Enum):
    ORACLE = "oracle"
    MULTISCALE = "multiscale"
    ADAPTIVE = "adaptive"


def max_scale(n: int) -> int:
    """Largest allowed upper scale, ``floor(n / e)``."""
    return math.floor(n / math.e)


@dataclass(frozen=True)
class ScanFamily:
    kind: Kind
    n: int
    d: int
    h_lo: int = 1
    h_hi: int = 1
    oracle_shape: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.n < 1 or self.d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if self.kind is Kind.ORACLE:
            if self.oracle_shape is None:
                raise ValueError("the oracle family needs the signal shape")
            shape = tuple(int(h) for h in self.oracle_shape)
            if len(shape) != self.d or not all(1 <= h <= self.n for h in shape):
                raise ValueError(f"oracle shape {shape} must have {self.d} entries in [1, {self.n}]")
            object.__setattr__(self, "oracle_shape", shape)
            return
        if not 1 <= self.h_lo <= self.h_hi:
            raise ValueError(f"need 1 <= h_lo <= h_hi, got {self.h_lo}, {self.h_hi}")
        if self.h_hi > max_scale(self.n):
            raise ValueError(
                f"h_hi = {self.h_hi} exceeds floor(n/e) = {max_scale(self.n)} for n = {self.n}"
            )

    @classmethod
    def oracle(cls, n: int, shape: Sequence[int]) -> "ScanFamily":
        return cls(Kind.ORACLE, n, len(shape), oracle_shape=tuple(shape))

    @classmethod
    def multiscale(cls, n: int, d: int, h_lo: int, h_hi: int) -> "ScanFamily":
        return cls(Kind.MULTISCALE, n, d, h_lo, h_hi)

    @classmethod
    def adaptive(cls, n: int, d: int, h_lo: int, h_hi: int) -> "ScanFamily":
        return cls(Kind.ADAPTIVE, n, d, h_lo, h_hi)


@dataclass(frozen=True)
class CriticalParams:
    v: float
    log_exponent: float
    kappa: float
    clamped: bool = False

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError(f"centering must be positive, got {self.v}")


def tau_from_alpha(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ValueError(f"level must lie in (0, 1), got {alpha}")
    return -math.log(-math.log1p(-alpha))


def alpha_from_tau(tau: float) -> float:
    return -math.expm1(-math.exp(-tau))


def _multiscale_kappa(d: int) -> float:
    return -(d * math.log(4.0) + LOG_SQRT_2PI)


def oracle_centering(n: int, shape: Sequence[int]) -> float:
    """``sqrt(2 * sum_j log(n / h_j))``; also the modified adaptive centering."""
    return math.sqrt(2 * sum(math.log(n / h) for h in shape))


def centering(family: ScanFamily, shape: Optional[Sequence[int]] = None) -> CriticalParams:
    """Return ``(v, exponent, kappa)`` for the family at ``shape``.

    Oracle and multiscale families ignore ``shape``.  For the adaptive family,
    ``log(h_j / h_lo)`` is clamped at zero so shapes below the range stay
    finite; such shapes are flagged with ``clamped=True``.  Shapes above
    ``h_hi`` are evaluated as-is and flagged too.
    """
    d, n = family.d, family.n
    if family.kind is Kind.ORACLE:
        return CriticalParams(oracle_centering(n, family.oracle_shape), 2 * d - 1, -LOG_SQRT_2PI)
    if family.kind is Kind.MULTISCALE:
        v = math.sqrt(2 * d * math.log(n / family.h_lo))
        return CriticalParams(v, 4 * d - 1, _multiscale_kappa(d))

    if shape is None or len(shape) != d:
        raise ValueError(f"adaptive centering needs a {d}-dimensional shape")
    if any(h < 1 for h in shape):
        raise ValueError(f"shape must be positive, got {tuple(shape)}")
    clamped = any(not family.h_lo <= h <= family.h_hi for h in shape)
    total = 0.0
    for h in shape:
        spread = max(math.log(h / family.h_lo), 0.0)
        total += math.log(n / h) + 2 * math.log1p(spread)
    if total <= 0:
        raise ValueError(f"adaptive centering is not positive at shape {tuple(shape)}")
    return CriticalParams(math.sqrt(2 * total), 4 * d - 1, _multiscale_kappa(d), clamped)


def critical_value(params: CriticalParams, tau: float) -> float:
    v = params.v
    return v + (params.log_exponent * math.log(v) + params.kappa + tau) / v


def tau_hat(params: CriticalParams, z: float) -> float:
    """The ``tau`` at which ``z`` sits exactly on the critical value."""
    v = params.v
    return v * (z - v) - params.log_exponent * math.log(v) - params.kappa


def pvalue(params: CriticalParams, z: float) -> float:
    return alpha_from_tau(tau_hat(params, z))
