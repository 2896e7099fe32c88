from clab.env.core import (
    EnvError,
    Environment,
    load_environment,
    nearest_neighbor_edges,
    save_environment,
)
from clab.env.localize import LocalizedEnvironment, localize, localized_edges
from clab.env.moments import MomentReport, moment_report
from clab.env.samplers import (
    Marginal,
    constant,
    lrp_profile,
    plant_long_edge,
    sample_iid_nn,
    sample_lrp,
    sample_stable_like,
)
from clab.env.trap import (
    TrapFieldTrace,
    TrapSpec,
    default_schedule,
    plant_trap,
    plant_traps,
    sample_trap,
    segment_edges,
    trap_a,
    trap_b,
)

__all__ = [
    "EnvError", "Environment", "LocalizedEnvironment", "Marginal", "MomentReport",
    "TrapFieldTrace", "TrapSpec", "constant", "default_schedule", "load_environment",
    "localize", "localized_edges", "lrp_profile", "moment_report", "nearest_neighbor_edges",
    "plant_long_edge", "plant_trap", "plant_traps", "sample_iid_nn", "sample_lrp",
    "sample_stable_like", "sample_trap", "save_environment", "segment_edges",
    "trap_a", "trap_b",
]
