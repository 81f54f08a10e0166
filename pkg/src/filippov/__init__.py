"""Simulation of piecewise-smooth (Filippov) systems and their set-valued explosions."""

__version__ = "0.1.0"

from .errors import ConfigError, FilippovError, GrazingNotFoundError, NoBracketError
from .explosion import (
    BundleMember,
    ExplosionBundle,
    build_double_tangency_explosion,
    build_grazing_explosion,
    endpoint_hausdorff,
    first_return_time,
    refinement_ratio,
    run_nondeterministic_ensemble,
    split_return_time,
)
from .harness import ScenarioConfig, load_config, run, scan_grazing
from .integrator import (
    Event,
    EventKind,
    FlowState,
    IntegratorConfig,
    Region,
    Trajectory,
    bisect_indicator,
    detect_grazing,
    flow_free,
    flow_smooth,
    grazing_indicator,
    flow_sliding,
    integrate_orbit,
    step_surface,
)
from .policy import BranchPolicy, Choice
from .scenarios import (
    MechParams,
    ResonatorParams,
    SmoothingParams,
    make_dbfold,
    make_mech,
    build_scenario,
    make_graze_fixture,
    make_linear_drop,
    make_resonator,
    make_rotor,
    make_smoothed,
)
from .system import (
    Branch,
    NormalData,
    PwsSystem,
    SurfaceRegime,
    classify_surface_point,
    normal_components,
    quadratic_tangency_check,
    sliding_field,
)
