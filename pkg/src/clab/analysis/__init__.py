from clab.analysis.bounds import (
    check_nash,
    check_sobolev,
    exit_tail_check,
    exit_tail_stability,
    fit_then_validate,
    localization_bounds,
    ratio_check,
)
from clab.analysis.events import LrpEventScan, scan_lrp_events, trap_probability_mc
from clab.analysis.forms import dirichlet_form, mollifier
from clab.analysis.kernels import (
    HeatKernelTable,
    check_hk_bounds,
    expm_oracle,
    heat_kernel_exact,
    killed_kernel_check,
)
from clab.analysis.qip import QipStats, qip_stats
from clab.analysis.report import BoundCheck, VerificationReport

__all__ = [
    "BoundCheck", "HeatKernelTable", "LrpEventScan", "QipStats", "VerificationReport",
    "check_hk_bounds", "check_nash", "check_sobolev", "dirichlet_form", "exit_tail_check",
    "exit_tail_stability", "expm_oracle", "fit_then_validate", "heat_kernel_exact",
    "killed_kernel_check", "localization_bounds", "mollifier", "qip_stats", "ratio_check",
    "scan_lrp_events", "trap_probability_mc",
]
