"""Semantic exception hierarchy for urnlab.

The CLI maps these onto exit codes: configuration problems exit 2,
simulation/runtime problems exit 3.
"""


class UrnLabError(Exception):
    """Base error for this package."""


class ConfigError(UrnLabError, ValueError):
    """Experiment configuration is missing, malformed, or inconsistent."""


class InvalidLawError(UrnLabError, ValueError):
    """Addition-law parameters violate the law's domain."""


class InvalidMomentsError(UrnLabError, ValueError):
    """Moment inputs outside the domain of a closed-form predictor."""


class UnattainableMomentsError(UrnLabError, ValueError):
    """A schedule's (mean, variance) target cannot be realized by its family."""


class DrawImpossibleError(UrnLabError):
    """A draw of m balls was requested from an urn holding fewer than m."""


class CounterOverflowError(UrnLabError, OverflowError):
    """A ball counter left the signed 64-bit range."""


class MissingDrawLogError(UrnLabError):
    """Diagnostics extraction requires a trajectory recorded with its draw log."""


class InsufficientDataError(UrnLabError):
    """Too few samples or replicates for the requested statistical check."""


class SimulationError(UrnLabError):
    """A step failed while running a trajectory; carries the step index."""

    def __init__(self, message: str, step: int, replicate: int | None = None):
        suffix = f" (step {step}" + (f", replicate {replicate})" if replicate is not None else ")")
        super().__init__(message + suffix)
        self.step = step
        self.replicate = replicate
