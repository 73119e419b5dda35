"""Mean-field square-root particle systems and their McKean-Vlasov limit."""

from .analytics import (
    BoundaryClass,
    BoundaryReport,
    LaplaceGrid,
    NotRecurrent,
    classify_boundary,
    gamma_laplace,
    laplace_pde_residual,
    laplace_pde_solve,
    stationary_fixed_point,
)
from .ldp import (
    ISResult,
    RareEvent,
    RateReport,
    constant_control_search,
    importance_sampling,
    log_mgf_mean,
    rate_fit,
    simulate_controlled_limit,
    sum_tilt_control,
    tilt_parameter,
)
from .mckean_vlasov import (
    LawPath,
    PicardDivergence,
    monotonicity_time,
    picard_iterate,
    solve_selfconsistent,
    variance_closed_form,
    variance_ode,
)
from .measures import (
    EmpiricalMeasure,
    GammaParams,
    IncomparableMeasures,
    MeasurePath,
    gamma_cdf,
    ks_statistic,
    moment,
    path_distance,
    wasserstein1,
)
from .model import AssumptionError, AssumptionReport, GSpec, InitialLaw, ModelSpec, PhiSpec, validate_assumptions
from .particles import (
    ControlSpec,
    NumericalError,
    ReplicaBatch,
    SystemTrajectory,
    TestFunction,
    coupling_gap,
    martingale_residual,
    simulate,
    simulate_controlled,
    simulate_replicas,
)
from .rng import StreamRNG
from .sde import (
    PathSample,
    Scheme,
    SchemeConfig,
    TimeChange,
    cir_transition,
    local_time_at_zero,
    quadratic_variation,
    sample_besq_exact,
    simulate_besq_path,
    simulate_path,
    step_full_truncation,
    time_change_transform,
)

__version__ = "0.1.0"
