"""Extraction of the stochastic-approximation quantities hidden inside a
simulated trajectory, and empirical checkers for the root-finding and CLT
condition sets.

For Model1 the proportion of white balls follows

    Z_n = Z_{n-1} + (f(Z_{n-1}) + eps_n) / T_n

exactly, where f is the quadratic drift and eps_n is the centered noise of
the draw-and-add update.  The rescaled sequence K_n = sqrt(n) (Z_n - z*)
follows a contraction recursion with coefficient Gamma_n -> 3/2 and noise
V_n; checking the conditions of the two limit theorems amounts to binned
conditional-moment estimation on an ensemble of trajectories.

For Model2 the increments decompose into an L2-bounded martingale part and
an absolutely summable remainder; both partial sums are extracted along
with the scaled total-ball deviation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import sqrt
from typing import Optional, Sequence

import numpy as np

from .distributions import LawSchedule
from .errors import InsufficientDataError, InvalidMomentsError, MissingDrawLogError
from .theory import TheoryPrediction, theta_exponent_valid
from .urn_core import TrajectoryRecord

TRUNCATION_EPSILON = 0.5  # k-threshold scale in the truncated second-moment sum
MIN_BIN_COUNT = 50  # samples per conditional-expectation bin
MIN_CONDITION_REPLICATES = 100


@dataclass(frozen=True)
class DiagnosticsTrace:
    """Proof-internal quantities sampled on the checkpoint grid (steps >= 1).

    Model1 traces fill the contraction/noise group; Model2 traces fill the
    martingale-decomposition group.  Entries needing two consecutive steps
    are NaN at step 1.
    """

    steps: np.ndarray
    gamma: np.ndarray  # 1 / T_n
    z: np.ndarray
    total: np.ndarray
    z_prev: np.ndarray  # state just before the step; used as binning key
    total_prev: np.ndarray
    eps: np.ndarray  # centered update noise at step n
    d_term: np.ndarray  # raw update numerator at step n
    k_scaled: np.ndarray  # sqrt(n) (Z_n - z*)
    alpha_seq: np.ndarray  # sqrt(1 + 1/n) - 1
    gamma_big: Optional[np.ndarray] = None  # contraction coefficient
    v: Optional[np.ndarray] = None  # rescaled noise
    trunc_avg: Optional[np.ndarray] = None  # (1/n) sum_k V_k^2 1{V_k^2 >= eps k}
    recon_error: Optional[float] = None  # max |Z - reconstructed Z| on the path
    # Model2 group
    delta: Optional[np.ndarray] = None  # X_n / T_n
    tilde_delta: Optional[np.ndarray] = None  # (alpha+1) X_n / (m n E[X_n])
    tilde_xi: Optional[np.ndarray] = None  # xi_n - m Z_{n-1}
    m1: Optional[np.ndarray] = None  # martingale partial sum
    m2: Optional[np.ndarray] = None  # remainder partial sum
    tilde_t: Optional[np.ndarray] = None  # theta_n (T_n / (n E[X_n]) - m/(alpha+1))
    theta: Optional[np.ndarray] = None  # n ** lambda
    decomp_error: Optional[float] = None  # max |Z_n - Z_0 - M1_n - M2_n|


def _require_draw_log(record: TrajectoryRecord) -> None:
    if record.draws is None:
        raise MissingDrawLogError(
            "diagnostics extraction needs a trajectory recorded with record_draws=True"
        )
    if int(record.steps[0]) != 0:
        raise MissingDrawLogError("trajectory record must include the initial state")


def _checkpoint_steps(record: TrajectoryRecord) -> np.ndarray:
    steps = record.steps
    return steps[steps >= 1].astype(np.int64)


def extract_model1_diagnostics(
    record: TrajectoryRecord, prediction: TheoryPrediction, m: int
) -> DiagnosticsTrace:
    """Compute the Model1 diagnostics along a logged trajectory.

    The state path is rebuilt from the draw log, every per-step quantity is
    evaluated vectorized, and the result is sampled at the checkpoints.  The
    reconstruction residual of the update identity is reported over the whole
    path.
    """
    _require_draw_log(record)
    draws = record.draws
    xi = draws.xi.astype(np.float64)
    x = draws.x.astype(np.float64)
    y = draws.y.astype(np.float64)
    n_steps = xi.shape[0]

    w0, b0 = int(record.white[0]), int(record.black[0])
    white = np.concatenate(([w0], w0 + np.cumsum(draws.x * (m - draws.xi))))
    black = np.concatenate(([b0], b0 + np.cumsum(draws.y * draws.xi)))
    total = (white + black).astype(np.float64)
    z = white / total

    z_prev = z[:-1]
    t_next = total[1:]
    d_term = xi * (z_prev * (x - y) - x) + m * x * (1.0 - z_prev)
    f_prev = prediction.drift(z_prev)
    eps = d_term - f_prev

    recon_error = float(np.max(np.abs(z[1:] - (z_prev + (f_prev + eps) / t_next))))

    idx = np.arange(1, n_steps + 1, dtype=np.float64)
    k_scaled = np.sqrt(idx) * (z[1:] - prediction.z_star)
    alpha_seq = np.sqrt(1.0 + 1.0 / idx) - 1.0

    v = np.full(n_steps, np.nan)
    gamma_big = np.full(n_steps, np.nan)
    if n_steps >= 2:
        i = idx[1:]  # step numbers >= 2
        v[1:] = eps[1:] * np.sqrt((i - 1.0) * i) / t_next[1:]
        g_prev = prediction.drift_secant(z_prev[1:])
        ratio = g_prev / t_next[1:]
        alpha_prev = np.sqrt(1.0 + 1.0 / (i - 1.0)) - 1.0
        gamma_big[1:] = (i - 1.0) * ratio - (i - 1.0) * alpha_prev * (1.0 - ratio)

    v_sq = np.where(np.isnan(v), 0.0, v * v)
    truncated = np.where(v_sq >= TRUNCATION_EPSILON * idx, v_sq, 0.0)
    trunc_avg = np.cumsum(truncated) / idx

    cp = _checkpoint_steps(record)
    at = cp - 1  # per-step arrays are 0-indexed by step-1
    return DiagnosticsTrace(
        steps=cp,
        gamma=1.0 / total[cp],
        z=z[cp],
        total=total[cp],
        z_prev=z[cp - 1],
        total_prev=total[cp - 1],
        eps=eps[at],
        d_term=d_term[at],
        k_scaled=k_scaled[at],
        alpha_seq=alpha_seq[at],
        gamma_big=gamma_big[at],
        v=v[at],
        trunc_avg=trunc_avg[at],
        recon_error=recon_error,
    )


def extract_model2_diagnostics(
    record: TrajectoryRecord, schedule: LawSchedule, m: int, lam: float
) -> DiagnosticsTrace:
    """Compute the Model2 decomposition along a logged trajectory.

    Requires a valid scaling exponent: 0 < lam < alpha - gamma/2 whenever the
    schedule carries noise (for noiseless schedules any positive lam works).
    """
    _require_draw_log(record)
    if not schedule.sv_variance.is_zero:
        window = 2.0 * schedule.mean_exponent - schedule.variance_exponent
        if window <= 0.0:
            raise InvalidMomentsError(
                "schedule violates 2*mean_exponent > variance_exponent"
            )
    if not theta_exponent_valid(schedule, lam):
        raise InvalidMomentsError(
            f"scaling exponent {lam!r} is outside the valid window for this schedule"
        )

    draws = record.draws
    xi = draws.xi.astype(np.float64)
    x = draws.x.astype(np.float64)
    n_steps = xi.shape[0]

    w0, b0 = int(record.white[0]), int(record.black[0])
    white = np.concatenate(([w0], w0 + np.cumsum(draws.x * draws.xi)))
    black = np.concatenate(([b0], b0 + np.cumsum(draws.x * (m - draws.xi))))
    total = (white + black).astype(np.float64)
    z = white / total

    idx = np.arange(1, n_steps + 1, dtype=np.float64)
    mean_x = schedule.mean_at(idx)
    alpha = schedule.mean_exponent

    delta = x / total[1:]
    tilde_delta = (alpha + 1.0) * x / (m * idx * mean_x)
    tilde_xi = xi - m * z[:-1]
    m1 = np.cumsum(tilde_delta * tilde_xi)
    m2 = np.cumsum((delta - tilde_delta) * tilde_xi)
    theta = idx**lam
    tilde_t = theta * (total[1:] / (idx * mean_x) - m / (alpha + 1.0))

    decomp_error = float(np.max(np.abs(z[1:] - z[0] - m1 - m2)))

    d_term = x * (xi - m * z[:-1])  # update numerator: T_n (Z_n - Z_{n-1})
    eps = d_term  # centered by construction: E[xi | past] = m Z_{n-1}
    k_scaled = np.sqrt(idx) * (z[1:] - z[-1])  # scaled against the path's endpoint
    alpha_seq = np.sqrt(1.0 + 1.0 / idx) - 1.0

    cp = _checkpoint_steps(record)
    at = cp - 1
    return DiagnosticsTrace(
        steps=cp,
        gamma=1.0 / total[cp],
        z=z[cp],
        total=total[cp],
        z_prev=z[cp - 1],
        total_prev=total[cp - 1],
        eps=eps[at],
        d_term=d_term[at],
        k_scaled=k_scaled[at],
        alpha_seq=alpha_seq[at],
        delta=delta[at],
        tilde_delta=tilde_delta[at],
        tilde_xi=tilde_xi[at],
        m1=m1[at],
        m2=m2[at],
        tilde_t=tilde_t[at],
        theta=theta[at],
        decomp_error=decomp_error,
    )


# --------------------------------------------------------------------------
# Binned conditional statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BinStat:
    count: int
    mean: float
    se: float


def binned_conditional_stats(
    z_key: np.ndarray,
    t_key: np.ndarray,
    values: np.ndarray,
    min_count: int = MIN_BIN_COUNT,
) -> list[BinStat]:
    """Group ``values`` by quantile bins of the (z, t) state keys.

    Bins holding fewer than ``min_count`` samples are dropped, so every
    reported mean has a usable standard error.
    """
    finite = np.isfinite(values)
    z_key, t_key, values = z_key[finite], t_key[finite], values[finite]
    n = values.shape[0]
    if n == 0:
        return []
    per_axis = max(1, int(sqrt(n / min_count)))
    z_edges = np.quantile(z_key, np.linspace(0.0, 1.0, per_axis + 1)[1:-1])
    t_edges = np.quantile(t_key, np.linspace(0.0, 1.0, per_axis + 1)[1:-1])
    codes = np.searchsorted(z_edges, z_key, side="right") * (per_axis + 1)
    codes += np.searchsorted(t_edges, t_key, side="right")
    out = []
    for code in np.unique(codes):
        sel = values[codes == code]
        if sel.shape[0] < min_count:
            continue
        se = sel.std(ddof=1) / sqrt(sel.shape[0]) if sel.shape[0] > 1 else 0.0
        out.append(BinStat(int(sel.shape[0]), float(sel.mean()), float(se)))
    return out


def _zero_within(stats: Sequence[BinStat], se_mult: float = 4.0) -> tuple[bool, float]:
    """Whether every binned mean is consistent with zero; returns worst ratio."""
    worst = 0.0
    ok = True
    for b in stats:
        if b.se == 0.0:
            if b.mean != 0.0:
                ok = False
                worst = float("inf")
            continue
        ratio = abs(b.mean) / b.se
        worst = max(worst, ratio)
        if ratio > se_mult:
            ok = False
    return ok, worst


# --------------------------------------------------------------------------
# Condition reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    status: str  # "pass" | "fail" | "unverifiable"
    criterion: str
    observed: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "criterion": self.criterion,
            "observed": self.observed,
        }


@dataclass(frozen=True)
class ConditionReport:
    theorem: str
    checks: tuple[ConditionCheck, ...]

    @property
    def all_pass(self) -> bool:
        return all(c.status == "pass" for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "all_pass": self.all_pass,
            "checks": [c.to_dict() for c in self.checks],
        }


def _stack(traces: Sequence[DiagnosticsTrace], name: str) -> np.ndarray:
    ref = traces[0].steps
    for t in traces:
        if not np.array_equal(t.steps, ref):
            raise InsufficientDataError("traces must share one checkpoint grid")
    return np.vstack([getattr(t, name) for t in traces])


def check_robbins_monro_conditions(
    prediction: TheoryPrediction,
    law_x,
    law_y,
    traces: Sequence[DiagnosticsTrace] = (),
) -> ConditionReport:
    """Empirical/analytic checks of the four root-finding conditions.

    (a) needs an ensemble of diagnostics traces and is reported unverifiable
    without one; (b) and (c) are grid checks of the closed-form drift; (d)
    rests on the growth floor, which needs a positive uniform lower bound on
    the additions.
    """
    checks = []

    # (a) centered noise
    if traces:
        worst = 0.0
        ok = True
        eps_mat = _stack(traces, "eps")
        z_mat = _stack(traces, "z_prev")
        t_mat = _stack(traces, "total_prev")
        for j in range(eps_mat.shape[1]):
            stats = binned_conditional_stats(z_mat[:, j], t_mat[:, j], eps_mat[:, j])
            ok_j, worst_j = _zero_within(stats)
            ok = ok and ok_j
            worst = max(worst, worst_j)
        checks.append(
            ConditionCheck(
                "a_noise_centered",
                "pass" if ok else "fail",
                "binned conditional means of the update noise within 4 SE of zero",
                {"worst_abs_mean_over_se": worst, "replicates": len(traces)},
            )
        )
    else:
        checks.append(
            ConditionCheck(
                "a_noise_centered",
                "unverifiable",
                "binned conditional means of the update noise within 4 SE of zero",
                {"reason": "no diagnostics ensemble supplied"},
            )
        )

    # (b) drift sign
    grid = np.linspace(0.0, 1.0, 1001)
    grid = grid[np.abs(grid - prediction.z_star) > 1e-9]
    product = prediction.drift(grid) * (grid - prediction.z_star)
    max_product = float(product.max())
    checks.append(
        ConditionCheck(
            "b_drift_sign",
            "pass" if max_product < 0.0 else "fail",
            "f(z) (z - z*) < 0 on a 1000-point grid of [0,1] excluding z*",
            {"max_product": max_product},
        )
    )

    # (c) linear growth bound
    grid = np.linspace(0.0, 1.0, 1001)
    slack = float(
        (np.abs(prediction.drift(grid)) - prediction.drift_growth_k * (1.0 + grid)).max()
    )
    checks.append(
        ConditionCheck(
            "c_growth_bound",
            "pass" if slack <= 1e-12 else "fail",
            "|f(z)| <= K (1 + |z|) on [0, 1]",
            {"max_excess": slack, "k": prediction.drift_growth_k},
        )
    )

    # (d) step sizes: the growth floor T_n >= T_0 + n m L needs L >= 1
    lower = min(law_x.lower_bound, law_y.lower_bound)
    if lower >= 1:
        status = "pass"
        note = "T_n >= T_0 + n m L makes the step sizes non-summable with summable squares"
    else:
        status = "unverifiable"
        note = "no positive uniform lower bound on the additions; floor argument unavailable"
    checks.append(
        ConditionCheck(
            "d_step_sizes",
            status,
            "sum gamma_n = inf and sum gamma_n^2 < inf via the growth floor",
            {"lower_bound": lower, "note": note},
        )
    )

    return ConditionReport("robbins_monro", tuple(checks))


def _decade_slices(steps: np.ndarray) -> list[np.ndarray]:
    """Masks for the last three decades of the checkpoint range."""
    n_max = float(steps[-1])
    bounds = [n_max / 1000.0, n_max / 100.0, n_max / 10.0, n_max]
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        out.append((steps > lo) & (steps <= hi))
    return out


def check_renlund_conditions(
    traces: Sequence[DiagnosticsTrace],
    prediction: TheoryPrediction,
    m: int,
    lower_bound: int,
    *,
    v2_rel_tol: float = 0.15,
    gamma_tol: float = 0.1,
    trunc_threshold: float = 0.01,
) -> ConditionReport:
    """Empirical checks of the five CLT conditions on a diagnostics ensemble.

    The rescaled-noise conditional mean (a) is evaluated per decade with
    state-binned means: the sqrt(n)-scaled magnitudes must not grow, or every
    binned mean must already be statistically indistinguishable from zero
    (the scaled magnitude of a mean-zero estimate grows like sqrt(n/M), so
    the trend test alone would reject any finite ensemble).
    """
    if len(traces) < MIN_CONDITION_REPLICATES:
        raise InsufficientDataError(
            f"need at least {MIN_CONDITION_REPLICATES} replicates, got {len(traces)}"
        )
    steps = traces[0].steps
    v_mat = _stack(traces, "v")
    z_mat = _stack(traces, "z_prev")
    t_mat = _stack(traces, "total_prev")
    gamma_mat = _stack(traces, "gamma_big")
    trunc_mat = _stack(traces, "trunc_avg")
    with warnings.catch_warnings():
        # V is undefined at step 1, so that column is all-NaN by construction
        warnings.simplefilter("ignore", RuntimeWarning)
        v2_mean = np.nanmean(v_mat * v_mat, axis=0)
    checks = []

    # (a) conditional mean of the rescaled noise
    metrics = []
    zero_ok_all = True
    worst_ratio = 0.0
    for mask in _decade_slices(steps):
        cols = np.where(mask)[0]
        if cols.size == 0:
            metrics.append(float("nan"))
            continue
        weighted = 0.0
        weight = 0.0
        for j in cols:
            stats = binned_conditional_stats(z_mat[:, j], t_mat[:, j], v_mat[:, j])
            ok_j, worst_j = _zero_within(stats)
            zero_ok_all = zero_ok_all and ok_j
            worst_ratio = max(worst_ratio, worst_j)
            scale = sqrt(float(steps[j]))
            for b in stats:
                weighted += b.count * scale * abs(b.mean)
                weight += b.count
        metrics.append(weighted / weight if weight else float("nan"))
    finite = [v for v in metrics if np.isfinite(v)]
    trend_ok = all(a >= b for a, b in zip(finite, finite[1:])) and len(finite) >= 2
    status = "pass" if (trend_ok or zero_ok_all) else "fail"
    checks.append(
        ConditionCheck(
            "a_noise_conditional_mean",
            status,
            "sqrt(n)-scaled binned means of V non-increasing across the last "
            "three decades, or all binned means within 4 SE of zero",
            {
                "decade_metrics": metrics,
                "trend_non_increasing": trend_ok,
                "all_bins_zero_within_4se": zero_ok_all,
                "worst_abs_mean_over_se": worst_ratio,
            },
        )
    )

    # (b) bounded second moment
    if lower_bound >= 1:
        bound = 3.0 * prediction.noise_bound / (2.0 * m * m * lower_bound * lower_bound)
        max_v2 = float(np.nanmax(v2_mean))
        checks.append(
            ConditionCheck(
                "b_v2_bounded",
                "pass" if max_v2 <= bound else "fail",
                "ensemble mean of V^2 below 3 C_eps / (2 m^2 L^2) at every checkpoint",
                {"max_mean_v2": max_v2, "bound": bound},
            )
        )
    else:
        checks.append(
            ConditionCheck(
                "b_v2_bounded",
                "unverifiable",
                "bound requires a positive uniform lower bound on the additions",
                {"lower_bound": lower_bound},
            )
        )

    # (c) second moment converges to the predicted limit
    tail = steps >= steps[-1] / 10.0
    tail_avg = float(np.nanmean(v2_mean[tail]))
    target = prediction.sigma_sq
    if target > 0.0:
        ok = abs(tail_avg - target) <= v2_rel_tol * target
    else:
        ok = tail_avg <= 1e-3
    checks.append(
        ConditionCheck(
            "c_v2_limit",
            "pass" if ok else "fail",
            f"tail average of mean V^2 within {v2_rel_tol:.0%} of the predicted limit",
            {"tail_mean_v2": tail_avg, "target": target},
        )
    )

    # (d) contraction coefficient
    gamma_final = gamma_mat[:, -1]
    gamma_median = float(np.nanmedian(gamma_final))
    ok = abs(gamma_median - prediction.gamma_limit) <= gamma_tol
    checks.append(
        ConditionCheck(
            "d_gamma_limit",
            "pass" if ok else "fail",
            f"median contraction coefficient within {gamma_tol} of {prediction.gamma_limit}",
            {"gamma_median": gamma_median},
        )
    )

    # (e) truncated second-moment average
    trunc_final = float(np.mean(trunc_mat[:, -1]))
    checks.append(
        ConditionCheck(
            "e_truncation_sum",
            "pass" if trunc_final <= trunc_threshold else "fail",
            f"(1/n) sum of V^2 above the eps*k cut at the horizon <= {trunc_threshold}",
            {"final_truncated_avg": trunc_final, "epsilon": TRUNCATION_EPSILON},
        )
    )

    return ConditionReport("renlund", tuple(checks))


def cauchy_tail_pass_fraction(values: np.ndarray, steps: np.ndarray) -> float:
    """Fraction of replicates whose tail spread strictly shrinks by decades.

    ``values`` is (replicates x checkpoints).  For each replicate the suffix
    supremum of |value - final| is compared at the first checkpoint of each
    of the last three decades; a replicate passes when the spread at the
    earliest anchor strictly exceeds the spread at the latest (or the series
    is already exactly flat).
    """
    dev = np.abs(values - values[:, -1:])
    suffix = np.flip(np.maximum.accumulate(np.flip(dev, axis=1), axis=1), axis=1)
    n_max = float(steps[-1])
    anchors = []
    for target in (n_max / 1000.0, n_max / 100.0, n_max / 10.0):
        anchors.append(int(np.searchsorted(steps, target, side="left")))
    r_first = suffix[:, anchors[0]]
    r_last = suffix[:, anchors[-1]]
    passed = (r_first > r_last) | (r_first == 0.0)
    return float(np.mean(passed))
