"""Duality-based filtering and smoothing for coupled Wright-Fisher diffusions."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    LociShape,
    ModelParams,
    ShapeError,
    StateError,
    apply_generator_to_monomial,
    as_multi_index,
    barycenter,
    diffusion_matrix,
    fitness_potential,
    mutation_drift,
    selection_drift,
    validate_point,
)
from .constants import (  # noqa: F401
    ConstantCache,
    EstimateError,
    multi_indices_up_to,
    sample_stationary_proposal,
    write_constants_csv,
)
from .dual import (  # noqa: F401
    DualProcessError,
    EmpiricalTransition,
    JumpRateTable,
    PrunePolicy,
    RunawayError,
    StateGraph,
    TransitionRunner,
    estimate_transition,
    jump_rates,
    prune,
    simulate_dual_path,
    write_transition_csv,
)
from .diffusion import (  # noqa: F401
    ObservationSet,
    SimulationError,
    Trajectory,
    read_observations_csv,
    sample_observation,
    sample_stationary,
    simulate_cwf,
    simulate_paths,
    write_observations_csv,
    write_trajectory_csv,
)
from .filtering import (  # noqa: F401
    FilterError,
    FilterStep,
    FilterTrace,
    Mixture,
    density_grid,
    init_filter,
    marginal_grid,
    predict_step,
    run_filter,
    trace_from_json,
    trace_to_json,
    update_step,
    write_density_grid_csv,
    write_diagnostics_csv,
)
from .smoothing import (  # noqa: F401
    CostToGoEntry,
    SmoothingEntry,
    SmoothingError,
    SmoothingResult,
    backward_step,
    combine,
    init_cost_to_go,
    run_smoother,
    smoothing_from_json,
    smoothing_to_json,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config  # noqa: F401
from .seeding import derive_rng, derive_seed  # noqa: F401
