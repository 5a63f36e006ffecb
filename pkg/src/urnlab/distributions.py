"""Integer-valued addition laws, step-indexed schedules, and the exact
hypergeometric draw used by the urn state machine.

Every law carries exact first and second moments computed from its
parameters, never from samples.  All laws are immutable values and safe to
share across workers; sampling is a pure function of (parameters, stream).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb, exp, lgamma, log
from typing import Union

import numpy as np

from .errors import DrawImpossibleError, InvalidLawError, UnattainableMomentsError
from .rng import RandomStream

# Series evaluation of truncated-Poisson moments is done in direct space;
# keep the rate where the mode pmf is representable.
_MAX_POISSON_RATE = 500.0


class AdditionLaw:
    """Base for nonnegative-integer addition laws with exact moments.

    Subclasses provide ``mean``, ``second_moment``, ``lower_bound`` and the
    samplers; ``variance`` is always derived so the moment bookkeeping
    identity holds by construction.
    """

    mean: float
    second_moment: float
    lower_bound: int

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    def sample(self, stream: RandomStream) -> int:
        raise NotImplementedError

    def sample_many(self, stream: RandomStream, size: int) -> np.ndarray:
        raise NotImplementedError


def _require_count(value, name: str) -> None:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise InvalidLawError(f"{name} must be an integer, got {value!r}")
    if value < 0:
        raise InvalidLawError(f"{name} must be >= 0, got {value}")


def _require_prob(value, name: str) -> None:
    if not 0.0 <= float(value) <= 1.0:
        raise InvalidLawError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class Constant(AdditionLaw):
    """Degenerate law: always ``value``."""

    value: int

    def __post_init__(self):
        _require_count(self.value, "value")

    @property
    def mean(self) -> float:
        return float(self.value)

    @property
    def second_moment(self) -> float:
        return float(self.value) ** 2

    @property
    def lower_bound(self) -> int:
        return int(self.value)

    def sample(self, stream: RandomStream) -> int:
        return self.value

    def sample_many(self, stream: RandomStream, size: int) -> np.ndarray:
        return np.full(size, self.value, dtype=np.int64)


@dataclass(frozen=True)
class UniformRange(AdditionLaw):
    """Uniform on the integers {low, ..., high}."""

    low: int
    high: int

    def __post_init__(self):
        _require_count(self.low, "low")
        _require_count(self.high, "high")
        if self.low > self.high:
            raise InvalidLawError(f"need low <= high, got [{self.low}, {self.high}]")

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2.0

    @property
    def second_moment(self) -> float:
        # sum of k^2 over the range, exactly, then one float division
        def sq(n):  # sum of squares 1..n
            return n * (n + 1) * (2 * n + 1) // 6

        count = self.high - self.low + 1
        total = sq(self.high) - (sq(self.low - 1) if self.low >= 1 else 0)
        return total / count

    @property
    def lower_bound(self) -> int:
        return int(self.low)

    def sample(self, stream: RandomStream) -> int:
        return stream.integers(self.low, self.high)

    def sample_many(self, stream: RandomStream, size: int) -> np.ndarray:
        return stream.integers_array(self.low, self.high, size)


@dataclass(frozen=True)
class ShiftedBernoulli(AdditionLaw):
    """``shift + scale * Bernoulli(p)``: two-point law on {shift, shift+scale}."""

    shift: int
    scale: int
    p: float

    def __post_init__(self):
        _require_count(self.shift, "shift")
        _require_count(self.scale, "scale")
        _require_prob(self.p, "p")

    @property
    def mean(self) -> float:
        return self.shift + self.scale * self.p

    @property
    def second_moment(self) -> float:
        lo, hi = self.shift, self.shift + self.scale
        return (1.0 - self.p) * lo * lo + self.p * hi * hi

    @property
    def lower_bound(self) -> int:
        return int(self.shift + self.scale) if self.p >= 1.0 else int(self.shift)

    def sample(self, stream: RandomStream) -> int:
        return self.shift + (self.scale if stream.uniform() < self.p else 0)

    def sample_many(self, stream: RandomStream, size: int) -> np.ndarray:
        hits = stream.uniform_array(size) < self.p
        return self.shift + self.scale * hits.astype(np.int64)


@dataclass(frozen=True)
class Binomial(AdditionLaw):
    """Binomial law with ``trials`` trials and success probability ``p``."""

    trials: int
    p: float

    def __post_init__(self):
        _require_count(self.trials, "trials")
        _require_prob(self.p, "p")

    @property
    def mean(self) -> float:
        return self.trials * self.p

    @property
    def second_moment(self) -> float:
        mu = self.trials * self.p
        return self.trials * self.p * (1.0 - self.p) + mu * mu

    @property
    def lower_bound(self) -> int:
        return int(self.trials) if self.p >= 1.0 else 0

    def sample(self, stream: RandomStream) -> int:
        return stream.binomial(self.trials, self.p)

    def sample_many(self, stream: RandomStream, size: int) -> np.ndarray:
        return stream.binomial_array(self.trials, self.p, size)


@dataclass(frozen=True)
class TruncatedPoisson(AdditionLaw):
    """``max(floor, Poisson(rate))``: unbounded but square integrable.

    Moments are evaluated by series summation from the mode outward and are
    accurate to well below 1e-12 relative error.
    """

    rate: float
    floor: int = 0

    def __post_init__(self):
        if not 0.0 < float(self.rate) <= _MAX_POISSON_RATE:
            raise InvalidLawError(
                f"rate must lie in (0, {_MAX_POISSON_RATE:.0f}], got {self.rate!r}"
            )
        _require_count(self.floor, "floor")

    @cached_property
    def _moments(self) -> tuple[float, float]:
        lam, lb = float(self.rate), self.floor
        if lb == 0:  # plain Poisson; moments are exact
            return lam, lam + lam * lam
        # start at the mode so the leading pmf value is representable
        k0 = int(lam)
        logp0 = k0 * log(lam) - lam - lgamma(k0 + 1)
        p0 = exp(logp0)
        m1 = m2 = 0.0
        # walk upward from the mode
        pk, k = p0, k0
        while True:
            v = lb if k < lb else k
            m1 += pk * v
            m2 += pk * v * v
            k += 1
            pk *= lam / k
            if k > max(lam, lb) and pk * (k + 2) ** 2 < 1e-18:
                break
        # walk downward from just below the mode
        pk, k = p0, k0
        while k > 0:
            pk *= k / lam
            k -= 1
            v = lb if k < lb else k
            m1 += pk * v
            m2 += pk * v * v
            if pk * (lb + k + 2) ** 2 < 1e-18 and k < lam:
                break
        return m1, m2

    @property
    def mean(self) -> float:
        return self._moments[0]

    @property
    def second_moment(self) -> float:
        return self._moments[1]

    @property
    def lower_bound(self) -> int:
        return int(self.floor)

    def sample(self, stream: RandomStream) -> int:
        return max(self.floor, stream.poisson(self.rate))

    def sample_many(self, stream: RandomStream, size: int) -> np.ndarray:
        return np.maximum(self.floor, stream.poisson_array(self.rate, size))


AnyLaw = Union[Constant, UniformRange, ShiftedBernoulli, Binomial, TruncatedPoisson]


def sample_addition(law: AdditionLaw, stream: RandomStream) -> int:
    """Draw one value from ``law`` on ``stream``."""
    return law.sample(stream)


# --------------------------------------------------------------------------
# Hypergeometric draw
# --------------------------------------------------------------------------


def _validate_hyper(white: int, total: int, m: int) -> None:
    _require_count(white, "white")
    _require_count(total, "total")
    if white > total:
        raise InvalidLawError(f"white={white} exceeds total={total}")
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise InvalidLawError(f"m must be a positive integer, got {m!r}")
    if m > total:
        raise DrawImpossibleError(f"cannot draw m={m} balls from an urn of {total}")


def hypergeometric_support(white: int, total: int, m: int) -> tuple[int, int]:
    """Inclusive support bounds of the white-count in an m-ball sample."""
    return max(0, m - (total - white)), min(m, white)


def hypergeometric_pmf(white: int, total: int, m: int) -> dict[int, float]:
    """Exact pmf of the number of white balls among m drawn without replacement.

    Probabilities are integer-ratio exact up to one final float rounding.
    """
    _validate_hyper(white, total, m)
    lo, hi = hypergeometric_support(white, total, m)
    denom = comb(total, m)
    black = total - white
    return {k: comb(white, k) * comb(black, m - k) / denom for k in range(lo, hi + 1)}


def hypergeometric_sample(white: int, total: int, m: int, stream: RandomStream) -> int:
    """One hypergeometric draw via an inverse-CDF walk over the support.

    The support has at most m+1 points; the walk starts from the exact
    integer-ratio probability of the lowest point and advances with the
    pmf ratio recurrence.
    """
    _validate_hyper(white, total, m)
    lo, hi = hypergeometric_support(white, total, m)
    if lo == hi:
        return lo
    black = total - white
    u = stream.uniform()
    k = lo
    pk = comb(white, k) * comb(black, m - k) / comb(total, m)
    acc = pk
    while u > acc and k < hi:
        pk *= ((white - k) * (m - k)) / ((k + 1) * (black - m + k + 1))
        k += 1
        acc += pk
    return k


# --------------------------------------------------------------------------
# Step-indexed law schedules (time-varying additions)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SlowlyVarying:
    """A slowly varying factor: ``scale`` or ``scale * log(n+1)**power``."""

    kind: str = "constant"
    scale: float = 1.0
    power: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "log"):
            raise InvalidLawError(f"unknown slowly varying kind {self.kind!r}")
        if not np.isfinite(self.scale) or self.scale < 0.0:
            raise InvalidLawError(f"scale must be finite and >= 0, got {self.scale!r}")
        if self.kind == "constant" and self.power != 0.0:
            raise InvalidLawError("constant factor takes no power")

    def value(self, n):
        """Evaluate at a step index; accepts scalars or numpy arrays."""
        if self.kind == "constant":
            return self.scale if np.isscalar(n) else np.full(np.shape(n), self.scale)
        return self.scale * np.log(n + 1.0) ** self.power

    @property
    def is_zero(self) -> bool:
        return self.scale == 0.0


@dataclass(frozen=True)
class LawSchedule:
    """A family of laws indexed by the step n with regularly varying moments.

    ``mean_at(n) = n**mean_exponent * sv_mean(n)`` and likewise for the
    variance.  Construction rejects (family, exponents, factors) combinations
    the family cannot realize exactly.
    """

    base_family: str  # "binomial" | "constant" | "poisson"
    mean_exponent: float
    variance_exponent: float
    sv_mean: SlowlyVarying
    sv_variance: SlowlyVarying

    def __post_init__(self):
        if self.mean_exponent <= -1.0 or self.variance_exponent <= -1.0:
            raise InvalidLawError("moment growth exponents must exceed -1")
        fam = self.base_family
        if fam == "binomial":
            # Binomial(n, p): mean n*p and variance n*p*(1-p), exactly
            if self.mean_exponent != 1.0 or self.variance_exponent != 1.0:
                raise UnattainableMomentsError(
                    "binomial schedule realizes exponent 1 for mean and variance only"
                )
            if self.sv_mean.kind != "constant" or self.sv_variance.kind != "constant":
                raise UnattainableMomentsError(
                    "binomial schedule takes constant slowly varying factors"
                )
            p = self.sv_mean.scale
            if not 0.0 < p <= 1.0:
                raise UnattainableMomentsError(f"binomial mean factor must be a p in (0, 1], got {p}")
            if abs(self.sv_variance.scale - p * (1.0 - p)) > 1e-12:
                raise UnattainableMomentsError(
                    f"binomial variance factor must equal p*(1-p)={p * (1 - p)!r}"
                )
        elif fam == "constant":
            if self.mean_exponent != 0.0:
                raise UnattainableMomentsError("constant schedule has flat mean (exponent 0)")
            if not self.sv_variance.is_zero:
                raise UnattainableMomentsError("constant schedule has zero variance")
            if self.sv_mean.kind != "constant" or self.sv_mean.scale != int(self.sv_mean.scale):
                raise UnattainableMomentsError("constant schedule needs an integer mean")
        elif fam == "poisson":
            # mean == variance pointwise, so the growth targets must coincide
            if self.mean_exponent != self.variance_exponent or self.sv_mean != self.sv_variance:
                raise UnattainableMomentsError(
                    "poisson schedule requires identical mean and variance targets"
                )
            if self.sv_mean.is_zero:
                raise UnattainableMomentsError("poisson schedule needs a positive rate")
        else:
            raise InvalidLawError(f"unknown schedule family {fam!r}")

    def mean_at(self, n: int) -> float:
        return n**self.mean_exponent * self.sv_mean.value(n)

    def variance_at(self, n: int) -> float:
        return n**self.variance_exponent * self.sv_variance.value(n)


def binomial_schedule(p: float) -> LawSchedule:
    """Schedule n -> Binomial(n, p)."""
    if not 0.0 < p <= 1.0:
        raise InvalidLawError(f"p must lie in (0, 1], got {p!r}")
    return LawSchedule(
        "binomial",
        1.0,
        1.0,
        SlowlyVarying("constant", p),
        SlowlyVarying("constant", p * (1.0 - p)),
    )


def constant_schedule(value: int) -> LawSchedule:
    """Schedule n -> Constant(value)."""
    _require_count(value, "value")
    return LawSchedule(
        "constant",
        0.0,
        0.0,
        SlowlyVarying("constant", float(value)),
        SlowlyVarying("constant", 0.0),
    )


def poisson_schedule(exponent: float, sv: SlowlyVarying) -> LawSchedule:
    """Schedule n -> Poisson with rate n**exponent * sv(n) (mean == variance)."""
    return LawSchedule("poisson", exponent, exponent, sv, sv)


def law_at_step(schedule: LawSchedule, n: int) -> AdditionLaw:
    """Concrete law for step ``n`` (n >= 1) of ``schedule``."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidLawError(f"step index must be a positive integer, got {n!r}")
    fam = schedule.base_family
    if fam == "binomial":
        return Binomial(int(n), schedule.sv_mean.scale)
    if fam == "constant":
        return Constant(int(schedule.sv_mean.scale))
    # poisson
    rate = schedule.mean_at(int(n))
    if not 0.0 < rate <= _MAX_POISSON_RATE:
        raise UnattainableMomentsError(
            f"poisson schedule rate {rate!r} at step {n} is outside (0, {_MAX_POISSON_RATE:.0f}]"
        )
    return TruncatedPoisson(rate, floor=0)
