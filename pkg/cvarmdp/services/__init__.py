"""
Services Module
"""
from cvarmdp.services.pwl import (
    LinearInterval,
    PwlConcave,
    UniquePoint,
    evaluate,
    invert_superdifferential,
    left_deriv,
    merge_subroutine1,
    min_envelope,
    right_deriv,
    scale_argument,
    simplify,
    sup_distance,
    transform_successor,
)
from cvarmdp.services.nature import NatureAllocation, TransferInstance, build_F, optimal_allocation
from cvarmdp.services.shortfall import ShortfallFunction, conjugate, min_shortfall, mix_shortfall
from cvarmdp.services.solver import (
    OptimalActionSet,
    ValueTables,
    backup,
    cvar_value,
    optimal_action_set,
    risk_neutral_value,
    solve_finite,
    solve_infinite,
    threshold_action_set,
    worst_path_value,
)
from cvarmdp.services.oracle import (
    HistoryPolicy,
    OutcomeDistribution,
    cvar_of_distribution,
    enumerate_distribution,
    exhaustive_policy_search,
    grid_best_response,
)
from cvarmdp.services.policy import (
    AlgorithmCvarRunner,
    RunnerState,
    empirical_cvar,
    induced_history_policy,
    nature_tail_levels,
    run_trajectory,
)
from cvarmdp.services.tables_io import load_tables, save_tables, spec_hash

__all__ = [
    "LinearInterval",
    "PwlConcave",
    "UniquePoint",
    "evaluate",
    "invert_superdifferential",
    "left_deriv",
    "merge_subroutine1",
    "min_envelope",
    "right_deriv",
    "scale_argument",
    "simplify",
    "sup_distance",
    "transform_successor",
    "NatureAllocation",
    "TransferInstance",
    "build_F",
    "optimal_allocation",
    "ShortfallFunction",
    "conjugate",
    "min_shortfall",
    "mix_shortfall",
    "OptimalActionSet",
    "ValueTables",
    "backup",
    "cvar_value",
    "optimal_action_set",
    "risk_neutral_value",
    "solve_finite",
    "solve_infinite",
    "threshold_action_set",
    "worst_path_value",
    "HistoryPolicy",
    "OutcomeDistribution",
    "cvar_of_distribution",
    "enumerate_distribution",
    "exhaustive_policy_search",
    "grid_best_response",
    "AlgorithmCvarRunner",
    "RunnerState",
    "empirical_cvar",
    "induced_history_policy",
    "nature_tail_levels",
    "run_trajectory",
    "load_tables",
    "save_tables",
    "spec_hash",
]
