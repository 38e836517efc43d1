"""Stability tools for reflected diffusions in polyhedral cones."""

from .geometry import (
    GeometryError,
    PolyhedralCone,
    GeneratedCone,
    build_cone,
    dual_description,
    orthant,
    active_set,
    in_cone,
    check_drift_condition,
    check_nondegeneracy,
    check_regularity,
)
from .paths import PathGrid, uniform_grid
from .skorokhod import (
    ProjectionError,
    project_point,
    project_velocity,
    apply_skorokhod_map,
    verify_sp_solution,
    estimate_lipschitz,
)
from .dynamics import integrate_constrained_ode, decay_envelope, hitting_time_bracket
from .diffusion import DiffusionModel, SimulationError, simulate_path, simulate_ensemble
from .ergodics import (
    estimate_hitting_time,
    estimate_invariant_measure,
    lyapunov_drift_diagnostic,
    exp_moment_check,
    tightness_diagnostic,
)
from .config import Config, ConfigError, load_config

__version__ = "0.1.0"
