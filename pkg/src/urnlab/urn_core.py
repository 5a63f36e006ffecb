"""The exact urn state machine.

One step draws m balls without replacement, observes the white count xi,
and adds balls by one of two variants:

* ``Model1``: add ``x * (m - xi)`` white and ``y * xi`` black, with x and y
  fresh independent draws from the two addition laws (the reinforcement is
  opposite to the sampled color counts);
* ``Model2``: add ``x * xi`` white and ``x * (m - xi)`` black with a single
  fresh x from the step-indexed schedule, so the total grows by exactly
  ``m * x`` per step.

Counters are exact integers, checked against the signed 64-bit range; the
proportion of white balls is always derived from the integer counts at read
time, never accumulated in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .distributions import AdditionLaw, LawSchedule, hypergeometric_sample, law_at_step
from .errors import (
    ConfigError,
    CounterOverflowError,
    DrawImpossibleError,
    SimulationError,
    UrnLabError,
)
from .rng import RandomStream

_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class Model1:
    """Independent addition laws for white (x) and black (y) reinforcement."""

    law_x: AdditionLaw
    law_y: AdditionLaw


@dataclass(frozen=True)
class Model2:
    """A single step-indexed law; the same draw scales both colors."""

    schedule: LawSchedule


Variant = Union[Model1, Model2]


@dataclass(frozen=True)
class UrnConfig:
    m: int
    w0: int
    b0: int
    variant: Variant
    horizon: int

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise ConfigError(f"m must be a positive integer, got {self.m!r}")
        for name in ("w0", "b0"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.w0 + self.b0 < self.m:
            raise ConfigError(
                f"initial total {self.w0 + self.b0} is below the draw size m={self.m}"
            )
        if not isinstance(self.horizon, (int, np.integer)) or self.horizon < 0:
            raise ConfigError(f"horizon must be a nonnegative integer, got {self.horizon!r}")
        if not isinstance(self.variant, (Model1, Model2)):
            raise ConfigError(f"variant must be Model1 or Model2, got {self.variant!r}")


@dataclass(frozen=True)
class UrnState:
    """Composition after ``n`` completed steps."""

    n: int
    white: int
    black: int

    @property
    def total(self) -> int:
        return self.white + self.black

    @property
    def z(self) -> float:
        """Proportion of white balls, derived from the integer counts."""
        return self.white / self.total


def initial_state(config: UrnConfig) -> UrnState:
    return UrnState(0, config.w0, config.b0)


def step_with_draw(
    state: UrnState, config: UrnConfig, stream: RandomStream
) -> tuple[UrnState, tuple[int, int, int]]:
    """Advance one step, returning the new state and the draws (xi, x, y)."""
    total = state.white + state.black
    if total < config.m:
        raise DrawImpossibleError(f"urn holds {total} balls, cannot draw m={config.m}")
    xi = hypergeometric_sample(state.white, total, config.m, stream)
    variant = config.variant
    if isinstance(variant, Model1):
        x = variant.law_x.sample(stream)
        y = variant.law_y.sample(stream)
        white = state.white + x * (config.m - xi)
        black = state.black + y * xi
    else:
        x = law_at_step(variant.schedule, state.n + 1).sample(stream)
        y = x
        white = state.white + x * xi
        black = state.black + x * (config.m - xi)
    if white + black > _INT64_MAX:
        raise CounterOverflowError(
            f"ball counters left the 64-bit range at step {state.n + 1}"
        )
    return UrnState(state.n + 1, white, black), (xi, x, y)


def step(state: UrnState, config: UrnConfig, stream: RandomStream) -> UrnState:
    """Advance the urn by one draw-and-add step."""
    new_state, _ = step_with_draw(state, config, stream)
    return new_state


# --------------------------------------------------------------------------
# Trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DrawLog:
    """Per-step draws; entry i-1 belongs to step i."""

    xi: np.ndarray
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class TrajectoryRecord:
    """States sampled on a checkpoint grid, plus the optional draw log."""

    steps: np.ndarray  # checkpoint step numbers, strictly increasing, starts at 0
    white: np.ndarray
    black: np.ndarray
    draws: Optional[DrawLog] = None

    @property
    def total(self) -> np.ndarray:
        return self.white + self.black

    @property
    def z(self) -> np.ndarray:
        return self.white / self.total

    @property
    def final_state(self) -> UrnState:
        return UrnState(int(self.steps[-1]), int(self.white[-1]), int(self.black[-1]))


def geometric_checkpoints(horizon: int, ratio: float = 1.2) -> list[int]:
    """Geometric step grid from 1 with the given ratio, plus 0 and the horizon."""
    if ratio <= 1.0:
        raise ConfigError(f"checkpoint ratio must exceed 1, got {ratio!r}")
    points = {0, horizon}
    v = 1.0
    while v <= horizon:
        points.add(int(round(v)))
        v *= ratio
    return sorted(points)


def linear_checkpoints(horizon: int, count: int) -> list[int]:
    """About ``count`` evenly spaced checkpoints, plus 0 and the horizon."""
    if count < 1:
        raise ConfigError(f"checkpoint count must be positive, got {count!r}")
    stride = max(1, horizon // count)
    points = set(range(0, horizon + 1, stride))
    points.update((0, horizon))
    return sorted(points)


def run_trajectory(
    config: UrnConfig,
    stream: RandomStream,
    checkpoints: Optional[Sequence[int]] = None,
    record_draws: bool = False,
    replicate: Optional[int] = None,
) -> TrajectoryRecord:
    """Run one trajectory, deterministic given the stream identity.

    Records the state at each checkpoint (0 and the horizon are always
    included).  With ``record_draws`` the full (xi, x, y) log is kept so the
    diagnostics layer can reconstruct every internal quantity.
    """
    horizon = config.horizon
    if checkpoints is None:
        checkpoints = geometric_checkpoints(horizon)
    grid = sorted({int(c) for c in checkpoints} | {0, horizon})
    if grid[0] < 0 or grid[-1] > horizon:
        raise ConfigError(f"checkpoints must lie in [0, {horizon}]")
    cpset = frozenset(grid)

    n_cp = len(grid)
    cp_white = np.empty(n_cp, dtype=np.int64)
    cp_black = np.empty(n_cp, dtype=np.int64)
    if record_draws:
        log_xi = np.empty(horizon, dtype=np.int64)
        log_x = np.empty(horizon, dtype=np.int64)
        log_y = np.empty(horizon, dtype=np.int64)

    state = initial_state(config)
    idx = 0
    if 0 in cpset:
        cp_white[idx], cp_black[idx] = state.white, state.black
        idx += 1
    for i in range(1, horizon + 1):
        try:
            state, (xi, x, y) = step_with_draw(state, config, stream)
        except UrnLabError as exc:
            raise SimulationError(str(exc), step=i, replicate=replicate) from exc
        if record_draws:
            log_xi[i - 1], log_x[i - 1], log_y[i - 1] = xi, x, y
        if i in cpset:
            cp_white[idx], cp_black[idx] = state.white, state.black
            idx += 1

    draws = DrawLog(log_xi, log_x, log_y) if record_draws else None
    return TrajectoryRecord(np.asarray(grid, dtype=np.int64), cp_white, cp_black, draws)
