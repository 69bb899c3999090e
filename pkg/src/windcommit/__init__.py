"""Rare-event-aware scenario trees and exact coal-plant commitment."""

from .dispatch_solver import (
    CostParams,
    PlantState,
    Solution,
    VerificationResult,
    export_lp,
    shortfall_power,
    solve_tree_dp,
    stage_cost,
    successor_states,
    verify_solution,
)
from .evaluation import (
    DispatchTrace,
    EvaluationReport,
    ReproduceResult,
    TableEntry,
    TableReport,
    closest_path,
    evaluate_batch,
    realized_dispatch,
    reproduce_table,
)
from .fv_tail import (
    EstimationError,
    FVConfig,
    TailPartition,
    TailProbabilities,
    build_partition,
    estimate_exit_mass,
    fv_run,
    rare_change_sampler,
    sample_rare_change,
    tail_probabilities,
    warm_start_particles,
)
from .scenario_tree import (
    ScenarioTree,
    TreeConfig,
    TreeFormatError,
    TreeMode,
    TreeNode,
    build_tree,
    deserialize,
    node_count,
    node_weight,
    serialize,
)
from .stochastic_models import (
    ARModel,
    ARState,
    Realization,
    RealizationConfig,
    apply_change,
    ar_step,
    generate_batch,
    generate_realization,
    simulate_changes,
    stationary_variance,
)

__version__ = "0.1.0"
