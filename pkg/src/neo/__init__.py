"""Non-equilibrium orbit importance sampling and MCMC."""

from .core import (
    DegenerateError,
    InvalidInputError,
    NeoError,
    RngStream,
    WeightSequence,
    categorical_draw,
    log_sum_exp,
    point_mass_weights,
    uniform_window_weights,
)
from .transforms import (
    AffineMap1D,
    ConformalParams,
    ConformalSymplecticEuler,
    DivergenceError,
    Identity,
    PhasePoint,
    conformal_se_forward,
    conformal_se_inverse,
    conformal_se_log_jacobian,
)
from .targets import (
    PhaseTarget,
    TargetModel,
    make_cauchy_mixture,
    make_funnel,
    make_gaussian_L_1d,
    make_mg25,
    make_target,
    phase_transform,
)
from .orbit import Box, EnergyBall, OrbitTable, build_orbit, build_orbit_truncated, exit_times
from .estimators import (
    EstimateReport,
    estimate_efficiency,
    hoeffding_bound,
    neo_is,
    neo_snis,
    plain_is,
)
from .mcmc import (
    ChainOutput,
    ChainState,
    KernelConfig,
    isir_step,
    mixing_rate_bound,
    neo_mcmc_step,
    run_chain,
    run_isir,
    sir_sample,
)
from .continuous import FlowConfig, WeightFunction, flow, neis_estimate, theorem9_convergence

__version__ = "0.1.0"
