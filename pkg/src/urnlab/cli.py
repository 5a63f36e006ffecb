"""Experiment driver.

``urnlab run <config>`` simulates the configured ensemble, writes the
machine-readable artifacts, prints a one-line-per-test report, and exits 0
only when every enabled test (and condition report) passed.  ``urnlab
predict <config>`` prints the closed-form predictions without simulating.

Exit codes: 0 all tests pass, 1 some test failed, 2 configuration error,
3 runtime/simulation error.

``summary.json`` is a pure function of (config, seed): it carries no
wall-clock or worker-count data, so runs with different ``--threads``
produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, UrnLabError
from .montecarlo import EnsembleSummary, simulate_ensemble, summarize
from .stochastic_approx import check_renlund_conditions, check_robbins_monro_conditions
from .theory import predict_model1, predict_model2

SCHEMA_VERSION = "urnlab-summary-1"

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _float_str(value: float) -> str:
    return f"{value:.17g}"


def _theory_dict(cfg: ExperimentConfig) -> dict:
    if cfg.model == "model1":
        prediction = predict_model1(cfg.m, cfg.law_x, cfg.law_y)
        return {"kind": "model1", **prediction.to_dict()}
    prediction = predict_model2(cfg.urn_config(), theta_exponent=cfg.lambda_exponent)
    return {"kind": "model2", **prediction.to_dict()}


def _write_summary_json(path: Path, cfg, summary, theory, conditions) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.to_dict(),
        "theory": theory,
        "ensemble": summary.to_dict(),
        "conditions": conditions,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_trajectories_csv(path: Path, results) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("replicate,n,W,B,T,Z\n")
        for r in results:
            for i in range(r.steps.shape[0]):
                w, b = int(r.white[i]), int(r.black[i])
                t = w + b
                fh.write(
                    f"{r.replicate},{int(r.steps[i])},{w},{b},{t},{_float_str(w / t)}\n"
                )


def _write_clt_samples_csv(path: Path, summary: EnsembleSummary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("replicate,kind,value\n")
        for kind in sorted(summary.clt_samples):
            values = summary.clt_samples[kind]
            for rep, value in enumerate(values):
                fh.write(f"{rep},{kind},{_float_str(float(value))}\n")


def _condition_reports(cfg: ExperimentConfig, results, prediction):
    traces = [r.trace for r in results if r.trace is not None]
    if not traces:
        return None, []
    lower = min(cfg.law_x.lower_bound, cfg.law_y.lower_bound)
    rm = check_robbins_monro_conditions(prediction, cfg.law_x, cfg.law_y, traces)
    ren = check_renlund_conditions(
        traces,
        prediction,
        cfg.m,
        lower,
        gamma_tol=float(cfg.tolerances.get("gamma_median_tol", 0.1)),
        trunc_threshold=float(cfg.tolerances.get("trunc_sum_abs", 0.01)),
    )
    doc = {"robbins_monro": rm.to_dict(), "renlund": ren.to_dict()}
    return doc, [rm, ren]


def _cmd_run(args) -> int:
    cfg = load_config(args.config, overrides=args.override or [])
    if args.seed is not None:
        cfg = _replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = _replace(cfg, out_dir=args.out)
    threads = args.threads if args.threads is not None else cfg.threads
    formats = tuple(args.format) if args.format else cfg.formats

    spec = cfg.ensemble_spec()
    prediction = predict_model1(cfg.m, cfg.law_x, cfg.law_y) if cfg.model == "model1" else None

    t0 = time.perf_counter()
    results = simulate_ensemble(spec, threads=threads or None)
    summary = summarize(spec, results, prediction=prediction)
    elapsed = time.perf_counter() - t0

    conditions_doc, reports = (None, [])
    if cfg.model == "model1" and cfg.conditions:
        conditions_doc, reports = _condition_reports(cfg, results, prediction)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = out_dir / "summary.json"
        _write_summary_json(path, cfg, summary, _theory_dict(cfg), conditions_doc)
        written.append(path)
    if "csv" in formats:
        path = out_dir / "trajectories.csv"
        _write_trajectories_csv(path, results)
        written.append(path)
        path = out_dir / "clt_samples.csv"
        _write_clt_samples_csv(path, summary)
        written.append(path)

    print(f"urnlab run: {cfg.model}, m={cfg.m}, horizon={cfg.horizon}, "
          f"replicates={cfg.replicates}, seed={cfg.seed}")
    print(f"simulated in {elapsed:.1f}s")
    for t in summary.tests:
        print(_format_test(t))
    for report in reports:
        status = "PASS" if report.all_pass else "FAIL"
        detail = ", ".join(f"{c.name}={c.status}" for c in report.checks)
        print(f"[{status}] conditions {report.theorem}: {detail}")
    for path in written:
        print(f"wrote {path}")

    ok = summary.all_tests_pass and all(r.all_pass for r in reports)
    return EXIT_OK if ok else EXIT_TEST_FAILURE


def _format_test(t) -> str:
    status = "PASS" if t.passed else "FAIL"
    parts = []
    if t.observed is not None:
        parts.append(f"observed={t.observed:.6g}")
    if t.target is not None:
        parts.append(f"target={t.target:.6g}")
    if t.p_value is not None:
        parts.append(f"p={t.p_value:.4g}")
    parts.append(t.tolerance)
    return f"[{status}] {t.name}: " + ", ".join(parts)


def _cmd_predict(args) -> int:
    cfg = load_config(args.config, overrides=args.override or [])
    print(json.dumps(_theory_dict(cfg), indent=2, sort_keys=True))
    return EXIT_OK


def _replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, **changes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urnlab",
        description="Simulate multi-drawing urns and test them against their closed-form limits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate an ensemble and write artifacts")
    run_p.add_argument("config", help="experiment config file (INI)")
    run_p.add_argument("--seed", type=int, default=None, help="override the master seed")
    run_p.add_argument("--threads", type=int, default=None,
                       help="worker process cap (0 = all cores)")
    run_p.add_argument("--out", default=None, help="override the output directory")
    run_p.add_argument("--format", action="append", choices=("csv", "json"),
                       help="restrict artifact formats (repeatable)")
    run_p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. experiment.replicates=100")
    run_p.set_defaults(func=_cmd_run)

    pred_p = sub.add_parser("predict", help="print the closed-form predictions as JSON")
    pred_p.add_argument("config", help="experiment config file (INI)")
    pred_p.add_argument("--override", action="append", metavar="KEY=VALUE")
    pred_p.set_defaults(func=_cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UrnLabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
