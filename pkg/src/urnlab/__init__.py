"""urnlab: simulate multi-drawing urns with random integer additions and
verify their closed-form limits by reproducible Monte Carlo ensembles."""

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
    hypergeometric_pmf,
    hypergeometric_sample,
    law_at_step,
    poisson_schedule,
    sample_addition,
)
from .errors import (
    ConfigError,
    CounterOverflowError,
    DrawImpossibleError,
    InsufficientDataError,
    InvalidLawError,
    InvalidMomentsError,
    MissingDrawLogError,
    SimulationError,
    UnattainableMomentsError,
    UrnLabError,
)
from .montecarlo import (
    DiagnosticsRequest,
    EnsembleSpec,
    EnsembleSummary,
    ks_normal_test,
    run_ensemble,
    simulate_ensemble,
    slln_band_test,
    summarize,
    variance_match_test,
)
from .rng import RandomStream
from .stochastic_approx import (
    DiagnosticsTrace,
    check_renlund_conditions,
    check_robbins_monro_conditions,
    extract_model1_diagnostics,
    extract_model2_diagnostics,
)
from .theory import (
    Model2Prediction,
    TheoryPrediction,
    predict_model1,
    predict_model2,
    regvar_partial_sum,
    sigma_sq_longform,
)
from .urn_core import (
    Model1,
    Model2,
    TrajectoryRecord,
    UrnConfig,
    UrnState,
    geometric_checkpoints,
    initial_state,
    run_trajectory,
    step,
)

__version__ = "0.1.0"
