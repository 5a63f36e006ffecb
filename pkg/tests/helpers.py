"""Independent oracles for the test suite.

Everything here is computed by brute force (subset enumeration, support
enumeration, direct summation) so the expectations frozen into the tests do
not share a code path with the package.
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction
from itertools import combinations, product
from math import comb

import numpy as np
import scipy.stats

from urnlab.distributions import (
    Binomial,
    Constant,
    ShiftedBernoulli,
    TruncatedPoisson,
    UniformRange,
)


def enumerate_hypergeometric_pmf(white: int, total: int, m: int) -> dict[int, Fraction]:
    """Exact pmf by enumerating every m-subset of labeled balls."""
    labels = [1] * white + [0] * (total - white)
    counts = Counter(sum(subset) for subset in combinations(labels, m))
    denom = comb(total, m)
    return {k: Fraction(c, denom) for k, c in sorted(counts.items())}


def law_brute_pmf(law) -> dict[int, float]:
    """Support pmf of an addition law, built without the law's own moments."""
    if isinstance(law, Constant):
        return {law.value: 1.0}
    if isinstance(law, UniformRange):
        n = law.high - law.low + 1
        return {k: 1.0 / n for k in range(law.low, law.high + 1)}
    if isinstance(law, ShiftedBernoulli):
        return {law.shift: 1.0 - law.p, law.shift + law.scale: law.p}
    if isinstance(law, Binomial):
        # enumerate all coin patterns; fine for small trial counts
        assert law.trials <= 12
        pmf: dict[int, float] = {}
        for pattern in product((0, 1), repeat=law.trials):
            k = sum(pattern)
            prob = law.p ** k * (1.0 - law.p) ** (law.trials - k)
            pmf[k] = pmf.get(k, 0.0) + prob
        return dict(sorted(pmf.items()))
    if isinstance(law, TruncatedPoisson):
        hi = int(scipy.stats.poisson.ppf(1.0 - 1e-13, law.rate)) + 2
        pmf = {}
        for k in range(hi + 1):
            v = max(law.floor, k)
            pmf[v] = pmf.get(v, 0.0) + float(scipy.stats.poisson.pmf(k, law.rate))
        pmf[hi] = pmf.get(hi, 0.0) + float(scipy.stats.poisson.sf(hi, law.rate))
        return dict(sorted(pmf.items()))
    raise TypeError(f"no oracle pmf for {type(law)!r}")


def pmf_moments(pmf: dict) -> tuple[float, float]:
    mean = sum(float(p) * k for k, p in pmf.items())
    second = sum(float(p) * k * k for k, p in pmf.items())
    return mean, second


def chi_square_gof(samples, pmf: dict, alpha: float = 0.001) -> tuple[float, bool]:
    """Goodness-of-fit p-value with low-expectation bins merged; True = accept."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    support = sorted(pmf)
    expected = np.array([float(pmf[k]) * n for k in support])
    observed = np.array([int(np.sum(samples == k)) for k in support], dtype=float)
    # fold sparse cells into their left neighbor so every expected count >= 5
    exp_bins, obs_bins = [], []
    acc_e = acc_o = 0.0
    for e, o in zip(expected, observed):
        acc_e += e
        acc_o += o
        if acc_e >= 5.0:
            exp_bins.append(acc_e)
            obs_bins.append(acc_o)
            acc_e = acc_o = 0.0
    if acc_e > 0.0:
        exp_bins[-1] += acc_e
        obs_bins[-1] += acc_o
    if len(exp_bins) < 2:  # degenerate law: fit is exact or impossible
        exact = obs_bins[0] == pytest_approx_count(exp_bins[0])
        return (1.0, True) if exact else (0.0, False)
    stat, p = scipy.stats.chisquare(obs_bins, exp_bins)
    return float(p), bool(p > alpha)


def pytest_approx_count(x: float) -> float:
    return round(x)


def enumerate_noise_moments(
    m: int, pmf_x: dict, pmf_y: dict, white: int, total: int
) -> tuple[float, float]:
    """Exact conditional mean and variance of the one-step update numerator.

    The numerator is D = xi (z (x - y) - x) + m x (1 - z) at the state
    (white, total); everything is enumerated over the three independent
    draws.
    """
    z = white / total
    pmf_xi = enumerate_hypergeometric_pmf(white, total, m)
    mean = second = 0.0
    for xi, p_xi in pmf_xi.items():
        for x, p_x in pmf_x.items():
            for y, p_y in pmf_y.items():
                d = xi * (z * (x - y) - x) + m * x * (1.0 - z)
                p = float(p_xi) * float(p_x) * float(p_y)
                mean += p * d
                second += p * d * d
    return mean, second - mean * mean


def limiting_noise_second_moment(m: int, pmf_x: dict, pmf_y: dict) -> float:
    """Limit of E[(n/T)^2 eps^2 | past]: the empirical variance target for the
    rescaled noise.

    In the limit the sampled white count is Binomial(m, z*) (the without-
    replacement draw loses its finite-population correction), so the value
    is Var[D]/ (m sqrt(mu_x mu_y))^2 with D enumerated at z*.
    """
    mu_x, _ = pmf_moments(pmf_x)
    mu_y, _ = pmf_moments(pmf_y)
    z = mu_x**0.5 / (mu_x**0.5 + mu_y**0.5)
    pmf_xi = {
        k: comb(m, k) * z**k * (1.0 - z) ** (m - k) for k in range(m + 1)
    }
    mean = second = 0.0
    for xi, p_xi in pmf_xi.items():
        for x, p_x in pmf_x.items():
            for y, p_y in pmf_y.items():
                d = xi * (z * (x - y) - x) + m * x * (1.0 - z)
                p = p_xi * float(p_x) * float(p_y)
                mean += p * d
                second += p * d * d
    var_d = second - mean * mean
    return var_d / (m * m * mu_x * mu_y)


def random_law(rng: np.random.Generator):
    """A random small law from the family zoo, for property tests."""
    family = rng.integers(0, 5)
    if family == 0:
        return Constant(int(rng.integers(1, 6)))
    if family == 1:
        low = int(rng.integers(0, 4))
        return UniformRange(low, low + int(rng.integers(1, 5)))
    if family == 2:
        return ShiftedBernoulli(int(rng.integers(0, 3)), int(rng.integers(1, 4)),
                                float(rng.uniform(0.05, 0.95)))
    if family == 3:
        return Binomial(int(rng.integers(1, 9)), float(rng.uniform(0.1, 0.9)))
    return TruncatedPoisson(float(rng.uniform(0.5, 6.0)), int(rng.integers(0, 3)))


def random_positive_mean_law(rng: np.random.Generator):
    while True:
        law = random_law(rng)
        if law.mean > 0:
            return law
