from ..nlp import NlpProblem
from .index import FeederSlots, VariableIndex, index_variables
from .model import (
    ConstraintGroup,
    LinearObjective,
    RestorationProblem,
    add_boundary,
    add_dn_power_flow,
    add_ess_constraints,
    add_pv_constraints,
    add_ramp_limits,
    add_tn_power_flow,
    apply_bounds,
    assemble,
    build_objective,
    extract_solution,
    start_hints,
)

__all__ = [
    "NlpProblem", "FeederSlots", "VariableIndex", "index_variables", "ConstraintGroup",
    "LinearObjective", "RestorationProblem", "add_boundary", "add_dn_power_flow",
    "add_ess_constraints", "add_pv_constraints", "add_ramp_limits", "add_tn_power_flow",
    "apply_bounds", "assemble", "build_objective", "extract_solution", "start_hints",
]
