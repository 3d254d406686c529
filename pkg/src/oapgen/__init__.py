"""Worst-case perception scenario synthesis for automated vehicles.

Builds a 3D detection-probability grid from a sensor setup, searches the
minimum-cost approaching path of a challenger toward the ego vehicle, and
transforms that relative path into ego/challenger trajectories plus the
motorway geometry that realizes it.
"""

from .errors import ConfigError, GridFormatError, NoPathError, OapgenError, PathValidationError
from .grid import (
    DetectionGrid,
    GRID_PRESETS,
    GridSpec,
    SensorSetup,
    SensorSpec,
    build_grid,
    fuse,
    load_grid,
    reference_sensor_setup,
    save_grid,
    single_sensor_probability,
)
from .pathfind import ApproachPath, CostWeights, find_path, heuristic, node_cost, path_cost
from .searchspace import (
    EKA_1B,
    MotorwayDesignClass,
    lateral_bound,
    prune_nodes,
    vertical_bounds,
)
from .transform import (
    MotionLimits,
    Phase1Result,
    RoadEnvelope,
    ScenarioResult,
    STANDARD_CROSS_SECTION_HALF_WIDTH,
    TimedPath,
    VehicleTrajectory,
    ViolationInterval,
    clamp_motion,
    chord_ego_plan,
    derive_road_envelope,
    hermite_ego_plan,
    resample_path,
    smooth_path,
    transform_phase1,
    transform_phase2,
    transform_scenario,
)
from .cli import PipelineConfig, parse_config, run_kj_sweep, run_pipeline

__version__ = "0.1.0"
