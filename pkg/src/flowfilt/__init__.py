"""flowfilt: integration-free exact Daum-Huang particle flow filtering.

The closed-form EDH update transports particles from prior to posterior
without numerically integrating the flow ODE; the N-step analytic variant
(NAEDH) extends it to nonlinear measurement models with per-substep
re-linearization, and the constant-contraction-rate schedule concentrates
substeps where ill-conditioned updates actually contract.
"""

from .baselines import (
    AdaptiveEulerConfig,
    WeightedEnsemble,
    bootstrap_pf_update,
    calibrate_delta_l,
    edh_adaptive_update,
    ekf_update,
)
from .benchmark import (
    AggregateResult,
    FilterSpec,
    ScenarioConfig,
    TrialResult,
    bearing_model,
    convergence_trace,
    generate_truth,
    run_monte_carlo,
)
from .flow import (
    FlowBasis,
    Schedule,
    SubstepOperator,
    apply_substep,
    build_flow_basis,
    ccr_schedule,
    closed_form_update,
    forcing_step,
    linear_schedule,
    make_substep_operator,
    omega_step,
)
from .gaussian import (
    GaussianBelief,
    LinearMeasurement,
    ParticleEnsemble,
    ensemble_moments,
    kalman_update,
    sample_ensemble,
    symmetric_sqrt_inverse,
)
from .naedh import (
    DynamicsModel,
    FilterRun,
    FilterState,
    FlowUpdateError,
    MeasurementModel,
    naedh_update,
    predict,
    run_filter,
)
from .ode_oracle import FlowField, eval_field, integrate_flow, quadrature_ci

__version__ = "0.1.0"
