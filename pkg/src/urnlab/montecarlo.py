"""Parallel ensemble runner and the statistical layer that turns simulated
trajectories into hypothesis tests against the closed-form predictions.

Replicate k always draws from the substream keyed by k under the master
seed, so an ensemble is a pure function of (spec, seed): the summary is
bit-identical whether it ran on one worker or many.  Reductions iterate in
replicate order.
"""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import erfc, exp, pi, sqrt
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .rng import RandomStream
from .stochastic_approx import (
    DiagnosticsTrace,
    cauchy_tail_pass_fraction,
    extract_model1_diagnostics,
    extract_model2_diagnostics,
)
from .theory import (
    Model2Prediction,
    TheoryPrediction,
    default_theta_exponent,
    predict_model1,
    predict_model2,
)
from .urn_core import Model1, Model2, TrajectoryRecord, UrnConfig, run_trajectory

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

# Every statistical pass/fail below cites one of these named tolerances;
# experiment configs may override them per run.
DEFAULT_TOLERANCES = {
    "mean_se_mult": 3.0,  # SLLN mean within 3 standard errors
    "slln_band_rel": 0.02,  # final relative deviation of the per-step means
    "clt_variance_rel": 0.15,  # CLT variance within 15% of the prediction
    "zero_variance_abs": 1e-3,  # absolute cap when the predicted variance is 0
    "ks_alpha": 0.01,  # normality KS p-value floor
    "decay_fraction_min": 0.90,  # replicate fraction with shrinking scaled deviation
    "decomposition_abs": 1e-12,  # martingale decomposition residual cap
    "gamma_median_tol": 0.1,  # contraction-coefficient median window
    "trunc_sum_abs": 0.01,  # truncated second-moment average cap
}

KNOWN_TESTS = (
    "slln_z",
    "slln_t",
    "slln_w",
    "clt_z",
    "clt_w",
    "clt_t",
    "tilde_decay",
    "decomposition",
    "cauchy_z",
)


@dataclass(frozen=True)
class DiagnosticsRequest:
    """Ask the workers to keep draw logs and extract a diagnostics trace."""

    enabled: bool = False
    lambda_exponent: Optional[float] = None  # Model2 scaling exponent


@dataclass(frozen=True)
class EnsembleSpec:
    config: UrnConfig
    replicates: int
    master_seed: int
    checkpoints: Optional[tuple[int, ...]] = None
    tests: tuple[str, ...] = ()
    tolerances: dict = field(default_factory=dict)
    diagnostics: DiagnosticsRequest = DiagnosticsRequest()

    def __post_init__(self):
        if self.replicates < 2:
            raise ConfigError(f"need at least 2 replicates, got {self.replicates}")
        unknown = set(self.tests) - set(KNOWN_TESTS)
        if unknown:
            raise ConfigError(f"unknown tests requested: {sorted(unknown)}")
        bad = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if bad:
            raise ConfigError(f"unknown tolerance overrides: {sorted(bad)}")

    def tolerance(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))


@dataclass(frozen=True)
class ReplicateResult:
    replicate: int
    steps: np.ndarray
    white: np.ndarray
    black: np.ndarray
    trace: Optional[DiagnosticsTrace] = None

    @property
    def total(self) -> np.ndarray:
        return self.white + self.black


def _run_replicate(args) -> ReplicateResult:
    config, master_seed, checkpoints, diagnostics, replicate = args
    stream = RandomStream(master_seed).substream(replicate)
    record = run_trajectory(
        config,
        stream,
        checkpoints=checkpoints,
        record_draws=diagnostics.enabled,
        replicate=replicate,
    )
    trace = None
    if diagnostics.enabled:
        trace = _extract_trace(record, config, diagnostics)
    return ReplicateResult(replicate, record.steps, record.white, record.black, trace)


def _extract_trace(
    record: TrajectoryRecord, config: UrnConfig, diagnostics: DiagnosticsRequest
) -> DiagnosticsTrace:
    variant = config.variant
    if isinstance(variant, Model1):
        prediction = predict_model1(config.m, variant.law_x, variant.law_y)
        return extract_model1_diagnostics(record, prediction, config.m)
    lam = diagnostics.lambda_exponent
    if lam is None:
        lam = default_theta_exponent(variant.schedule)
    return extract_model2_diagnostics(record, variant.schedule, config.m, lam)


def simulate_ensemble(
    spec: EnsembleSpec, threads: Optional[int] = None
) -> list[ReplicateResult]:
    """Run all replicates; the result list is ordered by replicate id and is
    independent of the worker count."""
    workers = threads if threads else (os.cpu_count() or 1)
    payloads = [
        (spec.config, spec.master_seed, spec.checkpoints, spec.diagnostics, r)
        for r in range(spec.replicates)
    ]
    if workers <= 1 or spec.replicates <= 2:
        return [_run_replicate(p) for p in payloads]
    chunk = max(1, spec.replicates // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_replicate, payloads, chunksize=chunk))


# --------------------------------------------------------------------------
# Statistical tests
# --------------------------------------------------------------------------


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the Kolmogorov distribution."""
    if lam < 1e-8:
        return 1.0
    if lam < 1.18:  # theta-function form converges fast for small arguments
        total = 0.0
        for j in range(1, 20):
            total += exp(-((2 * j - 1) ** 2) * pi * pi / (8.0 * lam * lam))
        return max(0.0, min(1.0, 1.0 - sqrt(2.0 * pi) / lam * total))
    total = 0.0
    for j in range(1, 200):
        term = (-1.0) ** (j - 1) * exp(-2.0 * j * j * lam * lam)
        total += term
        if abs(term) < 1e-16:
            break
    return max(0.0, min(1.0, 2.0 * total))


def ks_normal_test(samples: Sequence[float]) -> tuple[float, float]:
    """Two-sided KS statistic and asymptotic p-value against a standard normal."""
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = xs.shape[0]
    if n < 50:
        raise InsufficientDataError(f"KS test needs at least 50 samples, got {n}")
    cdf = 0.5 * np.array([erfc(-v / sqrt(2.0)) for v in xs])
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    stat = float(max(upper.max(), lower.max()))
    return stat, kolmogorov_sf(sqrt(n) * stat)


@dataclass(frozen=True)
class TestResult:
    name: str
    passed: bool
    observed: Optional[float] = None
    target: Optional[float] = None
    statistic: Optional[float] = None
    p_value: Optional[float] = None
    tolerance: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "observed": _jsonable(self.observed),
            "target": _jsonable(self.target),
            "statistic": _jsonable(self.statistic),
            "p_value": _jsonable(self.p_value),
            "tolerance": self.tolerance,
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


def variance_match_test(
    samples: Sequence[float],
    target_variance: float,
    tolerance_rel: float = 0.15,
    *,
    abs_threshold: float = 1e-3,
    n_boot: int = 2000,
    boot_seed: int = 0,
    name: str = "variance_match",
) -> TestResult:
    """Empirical variance versus a predicted one, judged through a bootstrap CI.

    Passes when the target lies inside the 95% bootstrap interval inflated by
    ``tolerance_rel``; a zero target is handled as an absolute cap instead.
    """
    xs = np.asarray(samples, dtype=np.float64)
    if xs.shape[0] < 100:
        raise InsufficientDataError(f"variance test needs >= 100 samples, got {xs.shape[0]}")
    if not np.all(np.isfinite(xs)) or xs.std() == 0.0:
        raise InsufficientDataError("degenerate sample for variance test")
    observed = float(xs.var(ddof=1))
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(boot_seed)))
    idx = gen.integers(0, xs.shape[0], size=(n_boot, xs.shape[0]))
    boot = xs[idx].var(axis=1, ddof=1)
    lo, hi = (float(q) for q in np.quantile(boot, (0.025, 0.975)))
    if target_variance > 0.0:
        passed = lo * (1.0 - tolerance_rel) <= target_variance <= hi * (1.0 + tolerance_rel)
        tol = f"target inside bootstrap 95% CI inflated by {tolerance_rel:.0%}"
    else:
        passed = observed <= abs_threshold
        tol = f"observed variance <= {abs_threshold} (zero-variance prediction)"
    return TestResult(
        name=name,
        passed=bool(passed),
        observed=observed,
        target=target_variance,
        tolerance=tol,
        details={"ci_low": lo, "ci_high": hi},
    )


def slln_band_test(
    steps: np.ndarray,
    means: np.ndarray,
    target: float,
    band_rel: float = 0.02,
    *,
    name: str = "slln_band",
) -> TestResult:
    """Per-checkpoint ensemble means must approach ``target`` by decades and
    land within the final relative band."""
    steps = np.asarray(steps, dtype=np.float64)
    pos = steps > 0
    steps, means = steps[pos], np.asarray(means, dtype=np.float64)[pos]
    if steps.shape[0] < 3 or steps[-1] / steps[0] < 100.0:
        raise InsufficientDataError("need >= 3 checkpoints spanning >= 2 decades")
    n_max = steps[-1]
    bounds = [n_max / 1000.0, n_max / 100.0, n_max / 10.0, n_max]
    devs = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        mask = (steps > lo) & (steps <= hi)
        if mask.any():
            devs.append(float(np.mean(np.abs(means[mask] - target))))
    shrinking = all(a >= b for a, b in zip(devs, devs[1:]))
    final_dev = abs(float(means[-1]) - target)
    rel = final_dev / abs(target) if target != 0.0 else final_dev
    passed = shrinking and rel <= band_rel
    return TestResult(
        name=name,
        passed=bool(passed),
        observed=float(means[-1]),
        target=float(target),
        statistic=rel,
        tolerance=f"decade deviations non-increasing and final relative deviation <= {band_rel:.0%}",
        details={"decade_deviations": devs},
    )


# --------------------------------------------------------------------------
# Summaries
# --------------------------------------------------------------------------


def _jsonable(v):
    if v is None:
        return None
    if isinstance(v, (bool, str, int)):
        return v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    f = float(v)
    return f if np.isfinite(f) else None


@dataclass(frozen=True)
class StatBlock:
    mean: np.ndarray
    variance: np.ndarray
    quantiles: np.ndarray  # (len(QUANTILES), K)

    def to_dict(self) -> dict:
        return {
            "mean": _jsonable(self.mean),
            "variance": _jsonable(self.variance),
            "quantiles": {
                f"q{int(q * 100):02d}": _jsonable(self.quantiles[i])
                for i, q in enumerate(QUANTILES)
            },
        }


def _nanmean_cols(matrix: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(matrix, axis=0)


def _stat_block(matrix: np.ndarray) -> StatBlock:
    # the n = 0 column of per-step ratios is all-NaN by construction
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return StatBlock(
            mean=np.nanmean(matrix, axis=0),
            variance=np.nanvar(matrix, axis=0, ddof=1),
            quantiles=np.nanquantile(matrix, QUANTILES, axis=0),
        )


@dataclass(frozen=True)
class EnsembleSummary:
    replicates: int
    steps: np.ndarray
    stats: dict  # name -> StatBlock
    clt_samples: dict  # kind -> (M,) array
    tests: tuple[TestResult, ...]
    runtime: dict = field(default_factory=dict)  # volatile; not serialized

    @property
    def all_tests_pass(self) -> bool:
        return all(t.passed for t in self.tests)

    def test(self, name: str) -> TestResult:
        for t in self.tests:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> dict:
        """Deterministic representation: no wall-clock or worker-count data."""
        return {
            "replicates": self.replicates,
            "checkpoints": [int(s) for s in self.steps],
            "stats": {k: v.to_dict() for k, v in self.stats.items()},
            "clt_samples": {k: _jsonable(v) for k, v in self.clt_samples.items()},
            "tests": [t.to_dict() for t in self.tests],
            "all_tests_pass": self.all_tests_pass,
        }


def summarize(
    spec: EnsembleSpec,
    results: Sequence[ReplicateResult],
    prediction: Optional[TheoryPrediction] = None,
    model2_prediction: Optional[Model2Prediction] = None,
) -> EnsembleSummary:
    """Cross-replicate statistics plus every requested hypothesis test."""
    results = sorted(results, key=lambda r: r.replicate)
    steps = results[0].steps
    for r in results:
        if not np.array_equal(r.steps, steps):
            raise ConfigError("replicates disagree on the checkpoint grid")

    white = np.vstack([r.white for r in results]).astype(np.float64)
    total = np.vstack([r.total for r in results]).astype(np.float64)
    z_mat = white / total
    with np.errstate(divide="ignore", invalid="ignore"):
        steps_f = steps.astype(np.float64)
        t_over_n = np.where(steps_f > 0, total / steps_f, np.nan)
        w_over_n = np.where(steps_f > 0, white / steps_f, np.nan)

    stats = {
        "z": _stat_block(z_mat),
        "t_over_n": _stat_block(t_over_n),
        "w_over_n": _stat_block(w_over_n),
    }
    traces = [r.trace for r in results if r.trace is not None]
    if traces and traces[0].tilde_t is not None:
        tilde_abs = np.abs(np.vstack([t.tilde_t for t in traces]))
        stats["tilde_t_abs"] = _stat_block(tilde_abs)

    config = spec.config
    variant = config.variant
    horizon = int(steps[-1])
    if isinstance(variant, Model1) and prediction is None:
        prediction = predict_model1(config.m, variant.law_x, variant.law_y)
    if isinstance(variant, Model2) and model2_prediction is None:
        lam = spec.diagnostics.lambda_exponent
        model2_prediction = predict_model2(config, horizon, theta_exponent=lam)

    clt_samples: dict[str, np.ndarray] = {}
    if isinstance(variant, Model1) and horizon > 0:
        root_n = sqrt(horizon)
        clt_samples["z"] = root_n * (z_mat[:, -1] - prediction.z_star)
        clt_samples["w"] = root_n * (
            w_over_n[:, -1] - t_over_n[:, -1] * prediction.z_star
        )
    if isinstance(variant, Model2) and horizon > 0 and model2_prediction.var_tn > 0:
        clt_samples["t"] = (total[:, -1] - model2_prediction.mean_tn) / sqrt(
            model2_prediction.var_tn
        )

    tests: list[TestResult] = []
    for test_name in spec.tests:
        tests.extend(
            _run_test(
                test_name, spec, steps, z_mat, t_over_n, w_over_n, clt_samples,
                prediction, model2_prediction, traces,
            )
        )

    return EnsembleSummary(
        replicates=len(results),
        steps=steps,
        stats=stats,
        clt_samples=clt_samples,
        tests=tuple(tests),
    )


def _run_test(
    name, spec, steps, z_mat, t_over_n, w_over_n, clt_samples,
    prediction, model2_prediction, traces,
) -> list[TestResult]:
    tol = spec.tolerance
    m_reps = z_mat.shape[0]

    if name == "slln_z":
        _need(prediction is not None, name, "a Model1 configuration")
        final = z_mat[:, -1]
        se = float(final.std(ddof=1)) / sqrt(m_reps)
        dev = abs(float(final.mean()) - prediction.z_star)
        mult = tol("mean_se_mult")
        return [
            TestResult(
                name,
                dev <= mult * se,
                observed=float(final.mean()),
                target=prediction.z_star,
                statistic=dev / se if se > 0 else float("inf"),
                tolerance=f"|mean - target| <= {mult:g} SE",
                details={"se": se},
            )
        ]
    if name == "slln_t":
        _need(prediction is not None, name, "a Model1 configuration")
        return [
            slln_band_test(
                steps, _nanmean_cols(t_over_n), prediction.tn_rate,
                tol("slln_band_rel"), name=name,
            )
        ]
    if name == "slln_w":
        _need(prediction is not None, name, "a Model1 configuration")
        return [
            slln_band_test(
                steps, _nanmean_cols(w_over_n), prediction.wn_rate,
                tol("slln_band_rel"), name=name,
            )
        ]
    if name == "clt_z":
        _need("z" in clt_samples, name, "final-step proportion samples")
        out = []
        var_z = prediction.clt_variance_z
        if var_z > 0.0:
            stat, p = ks_normal_test(clt_samples["z"] / sqrt(var_z))
            alpha = tol("ks_alpha")
            out.append(
                TestResult(
                    "clt_z_ks", p > alpha, statistic=stat, p_value=p,
                    tolerance=f"KS p-value > {alpha:g}",
                )
            )
        out.append(
            variance_match_test(
                clt_samples["z"], var_z, tol("clt_variance_rel"),
                abs_threshold=tol("zero_variance_abs"), name="clt_z_variance",
            )
        )
        return out
    if name == "clt_w":
        _need("w" in clt_samples, name, "final-step white-count samples")
        return [
            variance_match_test(
                clt_samples["w"], prediction.clt_variance_w, tol("clt_variance_rel"),
                abs_threshold=tol("zero_variance_abs"), name="clt_w_variance",
            )
        ]
    if name == "clt_t":
        _need("t" in clt_samples, name, "standardized total-ball samples")
        stat, p = ks_normal_test(clt_samples["t"])
        alpha = tol("ks_alpha")
        return [
            TestResult(
                "clt_t_ks", p > alpha, statistic=stat, p_value=p,
                tolerance=f"KS p-value > {alpha:g}",
                details={"sample_variance": float(np.var(clt_samples["t"], ddof=1))},
            )
        ]
    if name == "tilde_decay":
        _need(traces and traces[0].tilde_t is not None, name, "Model2 diagnostics traces")
        tr_steps = traces[0].steps
        tilde = np.vstack([t.tilde_t for t in traces])
        early = int(np.searchsorted(tr_steps, tr_steps[-1] / 100.0, side="left"))
        frac = float(np.mean(np.abs(tilde[:, -1]) < np.abs(tilde[:, early])))
        floor = tol("decay_fraction_min")
        return [
            TestResult(
                name, frac >= floor, observed=frac, target=floor,
                tolerance=f"|scaled deviation| shrinks on >= {floor:.0%} of replicates",
                details={"early_step": int(tr_steps[early]), "final_step": int(tr_steps[-1])},
            )
        ]
    if name == "decomposition":
        _need(traces and traces[0].decomp_error is not None, name, "Model2 diagnostics traces")
        worst = max(t.decomp_error for t in traces)
        cap = tol("decomposition_abs")
        return [
            TestResult(
                name, worst <= cap, observed=worst, target=cap,
                tolerance=f"max decomposition residual <= {cap:g}",
            )
        ]
    if name == "cauchy_z":
        _need(bool(traces), name, "diagnostics traces")
        z_paths = np.vstack([t.z for t in traces])
        frac = cauchy_tail_pass_fraction(z_paths, traces[0].steps)
        floor = tol("decay_fraction_min")
        return [
            TestResult(
                name, frac >= floor, observed=frac, target=floor,
                tolerance=f"tail spread of Z shrinks on >= {floor:.0%} of replicates",
            )
        ]
    raise ConfigError(f"unknown test {name!r}")


def _need(condition: bool, test: str, what: str) -> None:
    if not condition:
        raise ConfigError(f"test {test!r} requires {what}")


def run_ensemble(spec: EnsembleSpec, threads: Optional[int] = None) -> EnsembleSummary:
    """Simulate all replicates and reduce them into an EnsembleSummary."""
    t0 = time.perf_counter()
    results = simulate_ensemble(spec, threads=threads)
    summary = summarize(spec, results)
    runtime = {
        "elapsed_seconds": time.perf_counter() - t0,
        "workers": threads if threads else (os.cpu_count() or 1),
    }
    return replace(summary, runtime=runtime)
