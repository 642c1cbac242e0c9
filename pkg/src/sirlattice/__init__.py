"""sirlattice: village SIR epidemics on Z^d, monotone couplings, and the
statistics of their measure-valued scaling window."""

from .params import (
    ModelParams,
    NegativeProbability,
    neighborhood_offsets,
    transmission_probability,
)
from .core import (
    EpidemicState,
    MassCap,
    RateTooLarge,
    RecoveredMassFloor,
    StepRecord,
    SupportCap,
    TrajectoryRecord,
    read_site_config,
    removed_field_from_rate,
    run_trajectory,
    step_branching_envelope,
    step_chain_binomial,
    step_collision_binomial,
    step_modified_sir,
)
from .oracle import CouplingOracle
from .couplings import (
    CoupledFamily,
    KappaTooSmall,
    OverlapError,
    SlotState,
    couple_decomposition,
    couple_domination_chain,
    couple_immigration,
    couple_sandwich,
    couple_suppression,
    couple_theta,
    step_exact_edges,
)
from .rescale import (
    ContinuumMeasure,
    QuadratureFailure,
    ScaledField,
    ScaledMeasure,
    check_assumption_2,
    concentration,
    feller_watanabe,
    green_function,
    heat_kernels,
    is_admissible,
    mu_convolve_qt,
    regeneration_time,
    sample_initial,
    smoothness_statistic,
    sugitani,
)
from .localtime import (
    TrialSummary,
    ball_localtime_moments,
    integration_by_parts_residual,
    local_extinction_time,
    local_time_field,
    map_box,
    survival_statistics,
)
from .scaling import (
    MartingaleProblemParams,
    ScaleTriple,
    apply_scaling,
    check_assumption_scaled,
    local_time_rescale,
    normalize_to_one_parameter,
    solve_exponents,
    verify_exponents,
)
from .diffusion import (
    DegenerateInterval,
    GridInstability,
    RadialGrid,
    SdeConfig,
    feller_survival_prob,
    scale_hitting_prob,
    simulate_feller,
    simulate_meanfield_sir,
    solve_dual_pde,
)

__version__ = "0.1.0"
