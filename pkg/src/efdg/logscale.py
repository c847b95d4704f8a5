"""Sign/log representation of reals with a huge dynamic range.

All exponential-fitting quantities (kappa*, edge weights d, penalties S)
are products and ratios of numbers like exp(-psi/eps) whose exponents can
reach 1e9 in magnitude.  They are carried around as (sign, log|x|) pairs
and only exponentiated at the very last moment, so no intermediate result
ever overflows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# log of the largest finite float64; exp(x) overflows for x above this
LOG_MAX = 709.782712893384
# underflow boundary: magnitudes below 2**-1021 are materialized as exact
# 0.0.  Subnormals are never produced: halving a subnormal rounds, which
# would break the exact cancellations the split block structure relies on.
LOG_FLUSH = -1021 * math.log(2.0)
FLUSH_MIN = 2.0 ** -1021


@dataclass(frozen=True, slots=True)
class LogScaled:
    """A real number stored as sign and natural log of its magnitude.

    sign is -1, 0 or +1; log_mag is -inf exactly when sign is 0.
    Multiplication and division are exact in log space and never overflow
    for |log_mag| up to about 1e15.
    """

    sign: int
    log_mag: float

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign}")
        if self.sign == 0 and self.log_mag != -math.inf:
            raise ValueError("zero must carry log_mag == -inf")

    @classmethod
    def zero(cls) -> "LogScaled":
        return cls(0, -math.inf)

    @classmethod
    def one(cls) -> "LogScaled":
        return cls(1, 0.0)

    @classmethod
    def from_float(cls, x: float) -> "LogScaled":
        if x == 0.0:
            return cls.zero()
        if not math.isfinite(x):
            raise ValueError(f"cannot represent non-finite value {x}")
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    @classmethod
    def exp(cls, t: float) -> "LogScaled":
        """The positive number e**t, for any finite t."""
        if not math.isfinite(t):
            raise ValueError(f"exponent must be finite, got {t}")
        return cls(1, t)

    @property
    def overflows(self) -> bool:
        """True when to_float() cannot represent the magnitude."""
        return self.sign != 0 and self.log_mag > LOG_MAX

    @property
    def underflows(self) -> bool:
        return self.sign != 0 and self.log_mag < LOG_FLUSH

    def to_float(self) -> float:
        """Nearest float64: 0.0 on underflow, +-inf on overflow (flagged
        via .overflows, never an exception)."""
        if self.sign == 0:
            return 0.0
        if self.log_mag > LOG_MAX:
            return self.sign * math.inf
        if self.log_mag < LOG_FLUSH:
            return 0.0
        return self.sign * math.exp(self.log_mag)

    def __mul__(self, other: "LogScaled") -> "LogScaled":
        s = self.sign * other.sign
        if s == 0:
            return LogScaled.zero()
        return LogScaled(s, self.log_mag + other.log_mag)

    def __truediv__(self, other: "LogScaled") -> "LogScaled":
        if other.sign == 0:
            raise ZeroDivisionError("division by LogScaled zero")
        if self.sign == 0:
            return LogScaled.zero()
        return LogScaled(self.sign * other.sign, self.log_mag - other.log_mag)

    def __neg__(self) -> "LogScaled":
        return LogScaled(-self.sign, self.log_mag)

    def __abs__(self) -> "LogScaled":
        return LogScaled(abs(self.sign), self.log_mag)

    def __add__(self, other: "LogScaled") -> "LogScaled":
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        if self.sign == other.sign:
            return LogScaled(self.sign, np.logaddexp(self.log_mag, other.log_mag))
        # opposite signs: |a| - |b| with the dominant sign
        hi, lo = self, other
        if other.log_mag > self.log_mag:
            hi, lo = other, self
        diff = lo.log_mag - hi.log_mag
        if diff == 0.0:
            return LogScaled.zero()
        return LogScaled(hi.sign, hi.log_mag + math.log1p(-math.exp(diff)))

    def __sub__(self, other: "LogScaled") -> "LogScaled":
        return self + (-other)

    def scale_exp(self, t: float) -> "LogScaled":
        """Multiply by e**t without leaving log space."""
        if self.sign == 0:
            return self
        return LogScaled(self.sign, self.log_mag + t)


def log_mean_exp_pair(la: np.ndarray | float, lb: np.ndarray | float):
    """log(0.5 * (e**la + e**lb)), elementwise and overflow-safe."""
    return np.logaddexp(la, lb) - math.log(2.0)


def exp_with_flags(log_values: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Exponentiate a log array to float64.

    Returns (values, n_underflow, n_overflow).  Overflowed entries are +inf,
    underflowed ones exact 0.0 (flush boundary 2**-1021); neither raises.
    """
    log_values = np.asarray(log_values, dtype=float)
    n_over = int(np.count_nonzero(log_values > LOG_MAX))
    n_under = int(np.count_nonzero((log_values < LOG_FLUSH) & np.isfinite(log_values)))
    with np.errstate(over="ignore", under="ignore"):
        vals = np.exp(log_values)
    vals[np.abs(vals) < FLUSH_MIN] = 0.0
    return vals, n_under, n_over


def exp_flushed(log_values: np.ndarray) -> np.ndarray:
    """exp() with the subnormal range flushed to exact 0.0, overflow kept as inf."""
    with np.errstate(over="ignore", under="ignore"):
        vals = np.exp(np.asarray(log_values, dtype=float))
    vals[np.abs(vals) < FLUSH_MIN] = 0.0
    return vals
