"""Closed-form limits for the urn process.

All predictors take their moment inputs from the exact law moments, never
from samples.  The drift of the white-ball proportion is the quadratic

    f(z) = m * ((mu_x - mu_y) z^2 - 2 mu_x z + mu_x)

whose unique root in (0, 1) is z* = sqrt(mu_x) / (sqrt(mu_x) + sqrt(mu_y)).
The fluctuation scale of sqrt(n) (Z_n - z*) is carried by the quartic

    P(z*) = (sx2 + sy2) z*^4 - 2 sx2 z*^3 + 2 sx2 z*^2 - 2 sx2 z* + sx2.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Optional

import numpy as np

from .distributions import AdditionLaw, LawSchedule, law_at_step
from .errors import ConfigError, InvalidMomentsError
from .urn_core import Model2, UrnConfig

GAMMA_LIMIT = 1.5  # limit of the rescaled contraction coefficient

_NOISE_GRID = 2001
_NOISE_MARGIN = 1.01


@dataclass(frozen=True)
class TheoryPrediction:
    """Every closed-form limit for a Model1 configuration."""

    z_star: float
    drift_coeffs: tuple[float, float, float]  # (c2, c1, c0): f(z) = c2 z^2 + c1 z + c0
    p_at_zstar: float
    clt_variance_z: float  # variance of sqrt(n) (Z_n - z*)
    clt_variance_w: float  # variance of sqrt(n) (W_n/n - (T_n/n) z*)
    tn_rate: float  # limit of T_n / n
    wn_rate: float  # limit of W_n / n
    gamma_limit: float
    sigma_sq: float  # limiting second moment of the rescaled noise
    noise_bound: float  # a valid uniform bound on E[eps^2 | past]
    drift_growth_k: float  # |f(z)| <= K (1 + |z|) on [0, 1]

    def drift(self, z: float) -> float:
        c2, c1, c0 = self.drift_coeffs
        return c2 * z * z + c1 * z + c0

    def drift_secant(self, z) -> float:
        """f(z) / (z* - z), continued through z* by its exact linear form."""
        c2, c1, _ = self.drift_coeffs
        return -(c2 * (z + self.z_star) + c1)

    def to_dict(self) -> dict:
        return {
            "z_star": self.z_star,
            "drift_coeffs": list(self.drift_coeffs),
            "p_at_zstar": self.p_at_zstar,
            "clt_variance_z": self.clt_variance_z,
            "clt_variance_w": self.clt_variance_w,
            "tn_rate": self.tn_rate,
            "wn_rate": self.wn_rate,
            "gamma_limit": self.gamma_limit,
            "sigma_sq": self.sigma_sq,
            "noise_bound": self.noise_bound,
            "drift_growth_k": self.drift_growth_k,
        }


def _require_positive_means(law_x: AdditionLaw, law_y: AdditionLaw) -> None:
    if law_x.mean <= 0.0 or law_y.mean <= 0.0:
        raise InvalidMomentsError(
            f"both addition means must be positive, got {law_x.mean}, {law_y.mean}"
        )


def quartic_at(z: float, sx2: float, sy2: float) -> float:
    """The fluctuation quartic P evaluated at z."""
    return (sx2 + sy2) * z**4 - 2 * sx2 * z**3 + 2 * sx2 * z**2 - 2 * sx2 * z + sx2


def noise_second_moment_bound(m: int, law_x: AdditionLaw, law_y: AdditionLaw) -> float:
    """A concrete uniform bound on the conditional second moment of the noise.

    Maximizes, over z in [0, 1] with the sample count at its ceiling m, the
    closed-form bound

        m^2 A(z) - m^2 z^2 (z (mu_x - mu_y) - mu_x)^2 + m^2 (1 - z)^2 sx2,

    where A(z) is the second moment of z (x - y) - x; a 1% safety margin is
    applied on top of the grid maximum.
    """
    mux, muy = law_x.mean, law_y.mean
    mux2, muy2 = law_x.second_moment, law_y.second_moment
    sx2 = law_x.variance
    z = np.linspace(0.0, 1.0, _NOISE_GRID)
    a = z * z * (mux2 + muy2 - 2 * mux * muy) + 2 * z * (mux * muy - mux2) + mux2
    b = (z * (mux - muy) - mux) ** 2
    vals = m * m * (a - z * z * b + (1.0 - z) ** 2 * sx2)
    return float(vals.max()) * _NOISE_MARGIN


def predict_model1(m: int, law_x: AdditionLaw, law_y: AdditionLaw) -> TheoryPrediction:
    """All closed-form limits for a Model1 urn with the given laws."""
    if m < 1:
        raise InvalidMomentsError(f"m must be a positive integer, got {m!r}")
    _require_positive_means(law_x, law_y)
    mux, muy = law_x.mean, law_y.mean
    sx2, sy2 = law_x.variance, law_y.variance
    rx, ry = sqrt(mux), sqrt(muy)

    z_star = rx / (rx + ry)
    coeffs = (m * (mux - muy), -2.0 * m * mux, m * mux)
    p_star = quartic_at(z_star, sx2, sy2)
    sigma_sq = p_star / (mux * muy)
    return TheoryPrediction(
        z_star=z_star,
        drift_coeffs=coeffs,
        p_at_zstar=p_star,
        clt_variance_z=p_star / (3.0 * mux * muy),
        clt_variance_w=m * m * p_star / 3.0,
        tn_rate=m * rx * ry,
        wn_rate=m * mux * ry / (rx + ry),
        gamma_limit=GAMMA_LIMIT,
        sigma_sq=sigma_sq,
        noise_bound=noise_second_moment_bound(m, law_x, law_y),
        drift_growth_k=m * (abs(mux - muy) + 2.0 * mux),
    )


def sigma_sq_longform(m: int, law_x: AdditionLaw, law_y: AdditionLaw) -> float:
    """The limiting rescaled noise second moment, evaluated term by term.

    This is the three-part expression in the raw second moments mu_x2, mu_y2;
    it serves as an independent route to p_at_zstar / (mu_x mu_y) and the two
    must agree to floating-point accuracy.  ``m`` is part of the call contract
    but cancels out of the limit.
    """
    if m < 1:
        raise InvalidMomentsError(f"m must be a positive integer, got {m!r}")
    _require_positive_means(law_x, law_y)
    mux, muy = law_x.mean, law_y.mean
    mux2, muy2 = law_x.second_moment, law_y.second_moment
    sx2 = law_x.variance
    z = sqrt(mux) / (sqrt(mux) + sqrt(muy))

    term1 = (z * z / (mux * muy)) * (
        z * z * (mux2 + muy2 - 2 * mux * muy) + 2 * z * (mux * muy - mux2) + mux2
    )
    term2 = (z * z / (mux * muy)) * (
        z * z * (mux - muy) ** 2 - 2 * z * mux * (mux - muy) + mux * mux
    )
    term3 = (1.0 - z) ** 2 * sx2 / (mux * muy)
    return term1 - term2 + term3


# --------------------------------------------------------------------------
# Model2 predictions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Model2Prediction:
    """Exact finite-sum moments and asymptotic targets for a Model2 urn."""

    schedule: LawSchedule
    m: int
    t0: int
    horizon: int
    mean_tn: float  # exact E[T_horizon]
    var_tn: float  # exact Var[T_horizon]
    tilde_t_target: float  # m / (alpha + 1)
    theta_exponent: float  # lambda used for the scaled deviation
    limit_l: Optional[float]  # 1 + t0 / (m * lim sum of means), when finite

    def mean_total(self, n: int) -> float:
        return exact_mean_total(self.schedule, self.m, self.t0, n)

    def var_total(self, n: int) -> float:
        return exact_var_total(self.schedule, self.m, n)

    def to_dict(self) -> dict:
        return {
            "mean_tn": self.mean_tn,
            "var_tn": self.var_tn,
            "tilde_t_target": self.tilde_t_target,
            "theta_exponent": self.theta_exponent,
            "limit_l": self.limit_l,
            "mean_exponent": self.schedule.mean_exponent,
            "variance_exponent": self.schedule.variance_exponent,
        }


def exact_mean_total(schedule: LawSchedule, m: int, t0: int, n: int) -> float:
    """E[T_n] = t0 + m * sum of the step-law means, as an exact finite sum."""
    total = 0.0
    for k in range(1, n + 1):
        total += law_at_step(schedule, k).mean
    return t0 + m * total


def exact_var_total(schedule: LawSchedule, m: int, n: int) -> float:
    """Var[T_n] = m^2 * sum of the step-law variances."""
    total = 0.0
    for k in range(1, n + 1):
        total += law_at_step(schedule, k).variance
    return m * m * total


def default_theta_exponent(schedule: LawSchedule) -> float:
    """Midpoint of the valid scaling window, or 0.25 for noiseless schedules."""
    if schedule.sv_variance.is_zero:
        return 0.25
    window = schedule.mean_exponent - schedule.variance_exponent / 2.0
    if window <= 0.0:
        raise InvalidMomentsError(
            "no valid scaling exponent: need 2*mean_exponent > variance_exponent"
        )
    return window / 2.0


def theta_exponent_valid(schedule: LawSchedule, lam: float) -> bool:
    """Whether theta_n = n**lam keeps the scaled deviation summable."""
    if schedule.sv_variance.is_zero:
        return lam > 0.0
    return 0.0 < lam < schedule.mean_exponent - schedule.variance_exponent / 2.0


def predict_model2(
    config: UrnConfig, n: Optional[int] = None, theta_exponent: Optional[float] = None
) -> Model2Prediction:
    """Exact moments at step ``n`` plus the asymptotic targets."""
    if not isinstance(config.variant, Model2):
        raise ConfigError("predict_model2 requires a Model2 configuration")
    schedule = config.variant.schedule
    horizon = config.horizon if n is None else int(n)
    t0 = config.w0 + config.b0
    lam = default_theta_exponent(schedule) if theta_exponent is None else float(theta_exponent)
    if not theta_exponent_valid(schedule, lam):
        raise InvalidMomentsError(
            f"scaling exponent {lam!r} violates the summability window for this schedule"
        )
    # sum of means diverges whenever the growth exponent is > -1 (always, here);
    # the ratio limit is only finite when the series converges
    limit_l = None
    return Model2Prediction(
        schedule=schedule,
        m=config.m,
        t0=t0,
        horizon=horizon,
        mean_tn=exact_mean_total(schedule, config.m, t0, horizon),
        var_tn=exact_var_total(schedule, config.m, horizon),
        tilde_t_target=config.m / (schedule.mean_exponent + 1.0),
        theta_exponent=lam,
        limit_l=limit_l,
    )


def regvar_partial_sum(alpha: float, sv, n: int) -> float:
    """Asymptotic partial sum of a regularly varying sequence.

    For c_k = k**alpha * l(k) with alpha > -1, the first n terms behave like
    n**(alpha+1) * l(n) / (alpha + 1).
    """
    if alpha <= -1.0:
        raise InvalidMomentsError(f"growth exponent must exceed -1, got {alpha!r}")
    if n < 1:
        raise InvalidMomentsError(f"n must be a positive integer, got {n!r}")
    return n ** (alpha + 1.0) * sv.value(n) / (alpha + 1.0)
