from .audit import AUDIT_THRESHOLD, ValidationReport, audit_solution
from .kkt import kkt_parts, recompute_kkt
from .powerflow import (
    DistFlowResult,
    PowerFlowResult,
    branch_losses,
    bus_admittance,
    distflow_sweep,
    newton_power_flow,
)

__all__ = ["AUDIT_THRESHOLD", "DistFlowResult", "PowerFlowResult", "ValidationReport",
           "audit_solution", "branch_losses", "bus_admittance", "distflow_sweep", "kkt_parts",
           "newton_power_flow", "recompute_kkt"]
