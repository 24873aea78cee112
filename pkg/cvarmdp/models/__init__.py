"""
Problem instances and document schemas
"""
from cvarmdp.models.mdp import (
    AnySpec,
    CostOutcome,
    CostShift,
    MdpSpec,
    RandomCostSpec,
    RandomTransition,
    Transition,
    augment_random_costs,
    augmented_state_name,
    dumps_spec,
    horizon_factor,
    load_spec,
    parse_spec,
    scale_mean_costs,
    shift_costs,
    spec_to_document,
    validate_spec,
)
from cvarmdp.models.schemas import (
    DerivativeSide,
    MdpDocument,
    ObjectiveMode,
    PropertyReport,
    TablesDocument,
    VerificationReport,
)

__all__ = [
    "AnySpec",
    "CostOutcome",
    "CostShift",
    "MdpSpec",
    "RandomCostSpec",
    "RandomTransition",
    "Transition",
    "augment_random_costs",
    "augmented_state_name",
    "dumps_spec",
    "horizon_factor",
    "load_spec",
    "parse_spec",
    "scale_mean_costs",
    "shift_costs",
    "spec_to_document",
    "validate_spec",
    "DerivativeSide",
    "MdpDocument",
    "ObjectiveMode",
    "PropertyReport",
    "TablesDocument",
    "VerificationReport",
]
