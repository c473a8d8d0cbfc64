"""Quasi-static AC grid simulation: model, power flow, profiles."""

from .model import (
    Bus,
    GridModel,
    Line,
    Load,
    ParseError,
    Sgen,
    Trafo,
    ValidationError,
    load_grid,
    parse_grid,
    validate,
)
from .powerflow import (
    BranchFlow,
    Measurement,
    PowerFlowSolution,
    UnconvergedSolution,
    UnknownElement,
    measurements_at,
    run_power_flow,
)
from .profiles import (
    ProfileError,
    ProfileSet,
    TimeSeriesProfile,
    UnknownTarget,
    apply_profiles,
    bus_injections,
    check_targets,
    element_values_at,
    load_profiles,
    parse_profiles,
)

__all__ = [
    "Bus",
    "GridModel",
    "Line",
    "Load",
    "ParseError",
    "Sgen",
    "Trafo",
    "ValidationError",
    "load_grid",
    "parse_grid",
    "validate",
    "BranchFlow",
    "Measurement",
    "PowerFlowSolution",
    "UnconvergedSolution",
    "UnknownElement",
    "measurements_at",
    "run_power_flow",
    "ProfileError",
    "ProfileSet",
    "TimeSeriesProfile",
    "UnknownTarget",
    "apply_profiles",
    "bus_injections",
    "check_targets",
    "element_values_at",
    "load_profiles",
    "parse_profiles",
]
