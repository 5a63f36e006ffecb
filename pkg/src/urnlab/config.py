"""Experiment configuration: flat key/value text with one section level.

The file format is INI.  The ``[experiment]`` section holds the scalar run
parameters; laws and schedules get one section each (``[law_x]``,
``[law_y]``, ``[schedule]``); ``[diagnostics]`` and ``[tolerances]`` are
optional.  A parsed configuration serializes back to text losslessly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .distributions import (
    AdditionLaw,
    Binomial,
    Constant,
    LawSchedule,
    ShiftedBernoulli,
    SlowlyVarying,
    TruncatedPoisson,
    UniformRange,
    binomial_schedule,
    constant_schedule,
    poisson_schedule,
)
from .errors import ConfigError, UrnLabError
from .montecarlo import DEFAULT_TOLERANCES, DiagnosticsRequest, EnsembleSpec
from .urn_core import Model1, Model2, UrnConfig, geometric_checkpoints

MODEL1_TESTS = ("slln_z", "slln_t", "slln_w", "clt_z", "clt_w")
MODEL2_TESTS = ("clt_t", "tilde_decay", "decomposition", "cauchy_z")

_EXPERIMENT_KEYS = {
    "model", "m", "w0", "b0", "horizon", "replicates", "seed",
    "checkpoint_ratio", "threads", "out_dir", "formats", "tests",
}
_DIAGNOSTIC_KEYS = {"enabled", "conditions", "lambda"}

_LAW_KEYS = {
    "constant": {"value"},
    "uniform": {"low", "high"},
    "shifted_bernoulli": {"shift", "scale", "p"},
    "binomial": {"trials", "p"},
    "truncated_poisson": {"rate", "floor"},
}
_SCHEDULE_KEYS = {
    "binomial": {"p"},
    "constant": {"value"},
    "poisson": {"exponent", "scale", "kind", "power"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    m: int
    w0: int
    b0: int
    horizon: int
    replicates: int
    seed: int
    checkpoint_ratio: float = 1.2
    threads: int = 0  # 0 = one worker per available core
    out_dir: str = "results"
    formats: tuple[str, ...] = ("csv", "json")
    tests: tuple[str, ...] = ()
    law_x: Optional[AdditionLaw] = None
    law_y: Optional[AdditionLaw] = None
    schedule: Optional[LawSchedule] = None
    diagnostics: bool = True
    conditions: bool = False
    lambda_exponent: Optional[float] = None
    tolerances: dict = field(default_factory=dict)

    # ---- derived objects -------------------------------------------------

    def urn_config(self) -> UrnConfig:
        if self.model == "model1":
            variant = Model1(self.law_x, self.law_y)
        else:
            variant = Model2(self.schedule)
        return UrnConfig(self.m, self.w0, self.b0, variant, self.horizon)

    def ensemble_spec(self) -> EnsembleSpec:
        return EnsembleSpec(
            config=self.urn_config(),
            replicates=self.replicates,
            master_seed=self.seed,
            checkpoints=tuple(geometric_checkpoints(self.horizon, self.checkpoint_ratio)),
            tests=self.tests,
            tolerances=dict(self.tolerances),
            diagnostics=DiagnosticsRequest(
                enabled=self.diagnostics, lambda_exponent=self.lambda_exponent
            ),
        )

    # ---- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "m": self.m,
            "w0": self.w0,
            "b0": self.b0,
            "horizon": self.horizon,
            "replicates": self.replicates,
            "seed": self.seed,
            "checkpoint_ratio": self.checkpoint_ratio,
            "threads": self.threads,
            "out_dir": self.out_dir,
            "formats": list(self.formats),
            "tests": list(self.tests),
            "diagnostics": self.diagnostics,
            "conditions": self.conditions,
            "lambda": self.lambda_exponent,
            "tolerances": dict(sorted(self.tolerances.items())),
        }
        if self.law_x is not None:
            out["law_x"] = _law_fields(self.law_x)
            out["law_y"] = _law_fields(self.law_y)
        if self.schedule is not None:
            out["schedule"] = _schedule_fields(self.schedule)
        return out

    def to_ini(self) -> str:
        lines = ["[experiment]"]
        lines.append(f"model = {self.model}")
        for key in ("m", "w0", "b0", "horizon", "replicates", "seed"):
            lines.append(f"{key} = {getattr(self, key)}")
        lines.append(f"checkpoint_ratio = {self.checkpoint_ratio!r}")
        lines.append(f"threads = {self.threads}")
        lines.append(f"out_dir = {self.out_dir}")
        lines.append(f"formats = {', '.join(self.formats)}")
        lines.append(f"tests = {', '.join(self.tests)}")
        if self.law_x is not None:
            lines.append("")
            lines.extend(_section_lines("law_x", _law_fields(self.law_x)))
            lines.append("")
            lines.extend(_section_lines("law_y", _law_fields(self.law_y)))
        if self.schedule is not None:
            lines.append("")
            lines.extend(_section_lines("schedule", _schedule_fields(self.schedule)))
        lines.append("")
        lines.append("[diagnostics]")
        lines.append(f"enabled = {str(self.diagnostics).lower()}")
        lines.append(f"conditions = {str(self.conditions).lower()}")
        if self.lambda_exponent is not None:
            lines.append(f"lambda = {self.lambda_exponent!r}")
        if self.tolerances:
            lines.append("")
            lines.append("[tolerances]")
            for key in sorted(self.tolerances):
                lines.append(f"{key} = {self.tolerances[key]!r}")
        return "\n".join(lines) + "\n"


def _law_fields(law: AdditionLaw) -> dict:
    if isinstance(law, Constant):
        return {"family": "constant", "value": law.value}
    if isinstance(law, UniformRange):
        return {"family": "uniform", "low": law.low, "high": law.high}
    if isinstance(law, ShiftedBernoulli):
        return {"family": "shifted_bernoulli", "shift": law.shift, "scale": law.scale, "p": law.p}
    if isinstance(law, Binomial):
        return {"family": "binomial", "trials": law.trials, "p": law.p}
    if isinstance(law, TruncatedPoisson):
        return {"family": "truncated_poisson", "rate": law.rate, "floor": law.floor}
    raise ConfigError(f"unknown law type {type(law).__name__}")


def _schedule_fields(schedule: LawSchedule) -> dict:
    fam = schedule.base_family
    if fam == "binomial":
        return {"family": "binomial", "p": schedule.sv_mean.scale}
    if fam == "constant":
        return {"family": "constant", "value": int(schedule.sv_mean.scale)}
    return {
        "family": "poisson",
        "exponent": schedule.mean_exponent,
        "scale": schedule.sv_mean.scale,
        "kind": schedule.sv_mean.kind,
        "power": schedule.sv_mean.power,
    }


def _section_lines(name: str, fields: dict) -> list[str]:
    lines = [f"[{name}]"]
    for key, value in fields.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return lines


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


class _Section:
    """Typed access to one INI section with field-naming errors."""

    def __init__(self, name: str, mapping):
        self.name = name
        self.mapping = dict(mapping)

    def require(self, key: str) -> str:
        if key not in self.mapping:
            raise ConfigError(f"missing required field '{key}' in [{self.name}]")
        return self.mapping[key]

    def get(self, key: str, default=None):
        return self.mapping.get(key, default)

    def typed(self, key: str, conv, default=None, required=False):
        if key not in self.mapping:
            if required:
                raise ConfigError(f"missing required field '{key}' in [{self.name}]")
            return default
        raw = self.mapping[key]
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(
                f"field '{key}' in [{self.name}]: cannot parse {raw!r} ({exc})"
            ) from None

    def reject_unknown(self, allowed: set) -> None:
        unknown = set(self.mapping) - allowed
        if unknown:
            raise ConfigError(
                f"unknown field(s) {sorted(unknown)} in [{self.name}]"
            )


def _to_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _to_list(raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _parse_law(section: _Section) -> AdditionLaw:
    family = section.require("family").strip().lower()
    if family not in _LAW_KEYS:
        raise ConfigError(f"unknown law family {family!r} in [{section.name}]")
    section.reject_unknown(_LAW_KEYS[family] | {"family"})
    try:
        if family == "constant":
            return Constant(section.typed("value", int, required=True))
        if family == "uniform":
            return UniformRange(
                section.typed("low", int, required=True),
                section.typed("high", int, required=True),
            )
        if family == "shifted_bernoulli":
            return ShiftedBernoulli(
                section.typed("shift", int, required=True),
                section.typed("scale", int, required=True),
                section.typed("p", float, required=True),
            )
        if family == "binomial":
            return Binomial(
                section.typed("trials", int, required=True),
                section.typed("p", float, required=True),
            )
        return TruncatedPoisson(
            section.typed("rate", float, required=True),
            section.typed("floor", int, default=0),
        )
    except UrnLabError as exc:
        raise ConfigError(f"invalid [{section.name}]: {exc}") from None


def _parse_schedule(section: _Section) -> LawSchedule:
    family = section.require("family").strip().lower()
    if family not in _SCHEDULE_KEYS:
        raise ConfigError(f"unknown schedule family {family!r} in [{section.name}]")
    section.reject_unknown(_SCHEDULE_KEYS[family] | {"family"})
    try:
        if family == "binomial":
            return binomial_schedule(section.typed("p", float, required=True))
        if family == "constant":
            return constant_schedule(section.typed("value", int, required=True))
        sv = SlowlyVarying(
            kind=section.get("kind", "constant").strip().lower(),
            scale=section.typed("scale", float, required=True),
            power=section.typed("power", float, default=0.0),
        )
        return poisson_schedule(section.typed("exponent", float, required=True), sv)
    except UrnLabError as exc:
        raise ConfigError(f"invalid [{section.name}]: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None

    if not parser.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    exp = _Section("experiment", parser["experiment"])
    exp.reject_unknown(_EXPERIMENT_KEYS)

    model = exp.require("model").strip().lower()
    if model not in ("model1", "model2"):
        raise ConfigError(f"field 'model' must be model1 or model2, got {model!r}")

    law_x = law_y = schedule = None
    if model == "model1":
        for name in ("law_x", "law_y"):
            if not parser.has_section(name):
                raise ConfigError(f"{source}: model1 requires a [{name}] section")
        law_x = _parse_law(_Section("law_x", parser["law_x"]))
        law_y = _parse_law(_Section("law_y", parser["law_y"]))
    else:
        if not parser.has_section("schedule"):
            raise ConfigError(f"{source}: model2 requires a [schedule] section")
        schedule = _parse_schedule(_Section("schedule", parser["schedule"]))

    replicates = exp.typed("replicates", int, required=True)
    if replicates < 2:
        raise ConfigError(f"field 'replicates' must be >= 2, got {replicates}")
    horizon = exp.typed("horizon", int, required=True)
    if horizon < 1:
        raise ConfigError(f"field 'horizon' must be >= 1, got {horizon}")

    tests = exp.typed("tests", _to_list, default=None)
    if tests is None:
        tests = MODEL1_TESTS if model == "model1" else MODEL2_TESTS
    allowed = MODEL1_TESTS if model == "model1" else MODEL2_TESTS
    for t in tests:
        if t not in allowed:
            raise ConfigError(f"test {t!r} is not available for {model}")

    formats = exp.typed("formats", _to_list, default=("csv", "json"))
    for fmt in formats:
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {fmt!r}")

    diag = _Section("diagnostics", parser["diagnostics"] if parser.has_section("diagnostics") else {})
    diag.reject_unknown(_DIAGNOSTIC_KEYS)
    diagnostics = diag.typed("enabled", _to_bool, default=True)
    conditions = diag.typed("conditions", _to_bool, default=(model == "model1"))
    lambda_exponent = diag.typed("lambda", float, default=None)
    if model == "model1":
        if lambda_exponent is not None:
            raise ConfigError("field 'lambda' in [diagnostics] applies to model2 only")
        if conditions and not diagnostics:
            raise ConfigError("condition reports need [diagnostics] enabled = true")
        if conditions and replicates < 100:
            raise ConfigError(
                f"condition reports need replicates >= 100, got {replicates}"
            )
    else:
        if conditions:
            raise ConfigError("field 'conditions' in [diagnostics] applies to model1 only")
        needs_traces = bool({"tilde_decay", "decomposition", "cauchy_z"} & set(tests))
        if needs_traces and not diagnostics:
            raise ConfigError("the requested model2 tests need [diagnostics] enabled = true")

    tolerances = {}
    if parser.has_section("tolerances"):
        tol = _Section("tolerances", parser["tolerances"])
        tol.reject_unknown(set(DEFAULT_TOLERANCES))
        for key in tol.mapping:
            tolerances[key] = tol.typed(key, float)

    cfg = ExperimentConfig(
        model=model,
        m=exp.typed("m", int, required=True),
        w0=exp.typed("w0", int, required=True),
        b0=exp.typed("b0", int, required=True),
        horizon=horizon,
        replicates=replicates,
        seed=exp.typed("seed", int, required=True),
        checkpoint_ratio=exp.typed("checkpoint_ratio", float, default=1.2),
        threads=exp.typed("threads", int, default=0),
        out_dir=exp.get("out_dir", "results"),
        formats=formats,
        tests=tuple(tests),
        law_x=law_x,
        law_y=law_y,
        schedule=schedule,
        diagnostics=diagnostics,
        conditions=conditions,
        lambda_exponent=lambda_exponent,
        tolerances=tolerances,
    )
    try:
        cfg.urn_config()  # surface urn-level validation as a config error
    except UrnLabError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if overrides:
        text = _apply_overrides(text, overrides, source=str(path))
    return parse_config(text, source=str(path))


def _apply_overrides(text: str, overrides: Sequence[str], source: str) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like [section.]key=value")
        key, value = item.split("=", 1)
        section, _, option = key.strip().rpartition(".")
        section = section or "experiment"
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option.strip(), value.strip())
    out = []
    for section in parser.sections():
        out.append(f"[{section}]")
        for option, value in parser.items(section):
            out.append(f"{option} = {value}")
        out.append("")
    return "\n".join(out)
