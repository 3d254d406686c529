"""Pipeline orchestration and command-line interface.

Drives grid construction (or loading), search-space pruning, the path
search, the scenario transformation and artifact export from a single JSON
config file.  Also runs the weighting-factor sweep experiment.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, GridFormatError, NoPathError
from .grid import (
    DetectionGrid,
    GridSpec,
    GRID_PRESETS,
    SensorSetup,
    SensorSpec,
    build_grid,
    load_grid,
    reference_sensor_setup,
    save_grid,
)
from .pathfind import ApproachPath, CostWeights, find_path
from .searchspace import MotorwayDesignClass, lateral_bound, prune_nodes, vertical_bounds
from .transform import (
    KMH,
    MotionLimits,
    ScenarioResult,
    STANDARD_CROSS_SECTION_HALF_WIDTH,
    chord_ego_plan,
    derive_road_envelope,
    hermite_ego_plan,
    resample_path,
    smooth_path,
    transform_scenario,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_PATH = 3
EXIT_IO = 4

DEFAULT_V1 = (300.0, -20.0, 2.0)
DEFAULT_VN = (0.0, 0.0, 0.5)


@dataclass
class PipelineConfig:
    """Fully validated pipeline inputs with defaults filled in."""

    setup: SensorSetup | None
    grid_file: Path | None
    grid_spec: GridSpec
    design: MotorwayDesignClass
    v1: np.ndarray
    vn: np.ndarray
    k_values: list[float]
    limits: MotionLimits
    smoothing_half_window: float
    ego_plan_kind: str
    road_half_width: float
    out_dir: Path
    emit_plot_data: bool


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _get_vec3(raw: dict, key: str, default) -> np.ndarray:
    value = raw.get(key, default)
    _require(
        isinstance(value, (list, tuple)) and len(value) == 3,
        key,
        f"expected a 3-element list, got {value!r}",
    )
    try:
        return np.array([float(v) for v in value])
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: entries must be numbers, got {value!r}") from None


def _parse_sensor(raw: dict, path: str) -> SensorSpec:
    _require(isinstance(raw, dict), path, "sensor must be an object")
    required = ("mount", "azimuth", "azimuth_half_angle", "elevation_half_angle",
                "max_range", "p_peak", "decay")
    for key in required:
        _require(key in raw, f"{path}.{key}", "missing required field")
    mount = raw["mount"]
    _require(isinstance(mount, (list, tuple)) and len(mount) == 3, f"{path}.mount",
             "expected a 3-element list")
    try:
        return SensorSpec(
            mount=tuple(float(v) for v in mount),
            azimuth=float(raw["azimuth"]),
            azimuth_half_angle=float(raw["azimuth_half_angle"]),
            elevation_half_angle=float(raw["elevation_half_angle"]),
            max_range=float(raw["max_range"]),
            p_peak=float(raw["p_peak"]),
            decay=float(raw["decay"]),
            name=str(raw.get("name", "")),
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_setup(raw, path: str) -> SensorSetup:
    if raw == "reference":
        return reference_sensor_setup()
    _require(isinstance(raw, dict), path, 'expected "reference" or an object')
    attenuation = raw.get("attenuation", 1.0)
    sensors = raw.get("list")
    _require(isinstance(sensors, list) and sensors, f"{path}.list",
             "expected a non-empty list of sensors")
    try:
        return SensorSetup(
            sensors=tuple(_parse_sensor(s, f"{path}.list[{i}]") for i, s in enumerate(sensors)),
            attenuation=float(attenuation),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.attenuation: {exc}") from None


def _parse_grid_spec(raw, path: str) -> GridSpec:
    if isinstance(raw, str):
        _require(raw in GRID_PRESETS, path,
                 f"unknown preset {raw!r}; choose from {sorted(GRID_PRESETS)}")
        return GRID_PRESETS[raw]
    _require(isinstance(raw, dict), path, "expected a preset name or an object")
    keys = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max", "dx", "dy", "dz")
    for key in keys:
        _require(key in raw, f"{path}.{key}", "missing required field")
    try:
        return GridSpec(**{k: float(raw[k]) for k in keys})
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_limits(raw: dict, path: str) -> MotionLimits:
    _require(isinstance(raw, dict), path, "expected an object")
    known = {"v_ego_kmh", "v_ch_kmh", "dt", "yaw_rate_max", "yaw_diff_max",
             "pitch_rate_max", "grade_max_percent"}
    for key in raw:
        _require(key in known, f"{path}.{key}", f"unknown field; choose from {sorted(known)}")
    try:
        return MotionLimits(
            v_ego=float(raw.get("v_ego_kmh", 130.0)) * KMH,
            v_ch=float(raw.get("v_ch_kmh", 80.0)) * KMH,
            dt=float(raw.get("dt", 0.01)),
            yaw_rate_max=float(raw.get("yaw_rate_max", 0.22)),
            yaw_diff_max=float(raw.get("yaw_diff_max", 0.21)),
            pitch_rate_max=float(raw.get("pitch_rate_max", 0.22)),
            grade_max=float(raw.get("grade_max_percent", 6.0)) / 100.0,
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_design(raw: dict, path: str) -> MotorwayDesignClass:
    _require(isinstance(raw, dict), path, "expected an object")
    defaults = MotorwayDesignClass()
    known = ("r_min", "h_crest_min", "h_hollow_min", "y_off_max", "x_max", "z_lo", "z_hi")
    for key in raw:
        _require(key in known, f"{path}.{key}", f"unknown field; choose from {sorted(known)}")
    try:
        return MotorwayDesignClass(
            **{k: float(raw.get(k, getattr(defaults, k))) for k in known}
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(source) -> PipelineConfig:
    """Validate a config file (path) or an already-loaded config dict."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    _require(isinstance(raw, dict), "<root>", "config must be a JSON object")

    known = {"sensors", "grid_file", "grid", "design_class", "v1", "vn", "k_j",
             "limits", "smoothing_half_window_s", "ego_plan", "road_half_width",
             "out_dir", "emit_plot_data"}
    for key in raw:
        _require(key in known, key, f"unknown field; choose from {sorted(known)}")

    has_sensors = "sensors" in raw
    has_grid_file = "grid_file" in raw
    _require(has_sensors != has_grid_file, "sensors/grid_file",
             "exactly one of a sensor setup or a grid file must be given")

    setup = _parse_setup(raw["sensors"], "sensors") if has_sensors else None
    grid_file = Path(raw["grid_file"]) if has_grid_file else None

    k_raw = raw.get("k_j", 0.25)
    k_list = list(k_raw) if isinstance(k_raw, (list, tuple)) else [k_raw]
    _require(bool(k_list), "k_j", "at least one value required")
    k_values = []
    for i, k in enumerate(k_list):
        _require(isinstance(k, (int, float)) and not isinstance(k, bool),
                 f"k_j[{i}]", f"expected a number, got {k!r}")
        _require(k > 0, f"k_j[{i}]", f"must be > 0, got {k}")
        k_values.append(float(k))

    ego_plan_kind = raw.get("ego_plan", "hermite")
    _require(ego_plan_kind in ("hermite", "chord"), "ego_plan",
             f'expected "hermite" or "chord", got {ego_plan_kind!r}')

    half_window = raw.get("smoothing_half_window_s", 0.5)
    _require(isinstance(half_window, (int, float)) and half_window >= 0,
             "smoothing_half_window_s", f"must be >= 0, got {half_window!r}")

    half_width = raw.get("road_half_width", STANDARD_CROSS_SECTION_HALF_WIDTH)
    _require(isinstance(half_width, (int, float)) and half_width > 0,
             "road_half_width", f"must be > 0, got {half_width!r}")

    return PipelineConfig(
        setup=setup,
        grid_file=grid_file,
        grid_spec=_parse_grid_spec(raw.get("grid", "middle"), "grid"),
        design=_parse_design(raw.get("design_class", {}), "design_class"),
        v1=_get_vec3(raw, "v1", list(DEFAULT_V1)),
        vn=_get_vec3(raw, "vn", list(DEFAULT_VN)),
        k_values=k_values,
        limits=_parse_limits(raw.get("limits", {}), "limits"),
        smoothing_half_window=float(half_window),
        ego_plan_kind=str(ego_plan_kind),
        road_half_width=float(half_width),
        out_dir=Path(raw.get("out_dir", "out")),
        emit_plot_data=bool(raw.get("emit_plot_data", False)),
    )


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _exclusion_reason(position: np.ndarray, design: MotorwayDesignClass) -> str:
    x, y, z = (float(v) for v in position)
    if x < 0.0:
        return f"x = {x} m lies behind the ego (nodes behind the ego are removed)"
    if x > design.x_max:
        return f"x = {x} m exceeds the forward search range x_max = {design.x_max} m"
    lat = lateral_bound(x, design)
    if abs(y) > lat:
        return f"|y| = {abs(y)} m exceeds the lateral bound {lat:.3f} m at x = {x} m"
    z_lo, z_hi = vertical_bounds(x, design)
    if not (z_lo <= z <= z_hi):
        return f"z = {z} m outside the vertical band [{z_lo:.3f}, {z_hi:.3f}] m at x = {x} m"
    return "node is masked invalid"


def _obtain_grid(config: PipelineConfig) -> DetectionGrid:
    if config.grid_file is not None:
        return load_grid(config.grid_file)
    return build_grid(config.setup, config.grid_spec, ego_position=config.vn)


def _search(grid: DetectionGrid, mask: np.ndarray, config: PipelineConfig,
            k_j: float) -> tuple[ApproachPath, tuple, tuple]:
    start = grid.nearest_index(config.v1)
    goal = grid.nearest_index(config.vn)
    for name, node, position in (("start (v1)", start, config.v1), ("goal (vn)", goal, config.vn)):
        if not mask[node]:
            reason = _exclusion_reason(grid.node_position(node), config.design)
            raise NoPathError(f"{name} snapped to node {node} is outside the search space: {reason}")
    path = find_path(grid, mask, start, goal, CostWeights(k_j=k_j))
    return path, start, goal


def _constraint_report(result: ScenarioResult, limits: MotionLimits) -> dict:
    def rates(traj):
        dyaw = np.abs(np.diff(traj.yaw)) / limits.dt
        dpitch = np.abs(np.diff(traj.pitch)) / limits.dt
        return float(dyaw.max(initial=0.0)), float(dpitch.max(initial=0.0))

    ego_yaw_rate, ego_pitch_rate = rates(result.ego)
    ch_yaw_rate, ch_pitch_rate = rates(result.challenger)
    return {
        "max_abs_yaw_rate_ego_rad_s": ego_yaw_rate,
        "max_abs_yaw_rate_challenger_rad_s": ch_yaw_rate,
        "max_abs_pitch_rate_ego_rad_s": ego_pitch_rate,
        "max_abs_pitch_rate_challenger_rad_s": ch_pitch_rate,
        "max_abs_yaw_difference_rad": float(np.abs(result.ego.yaw - result.challenger.yaw).max()),
        "max_grade_ego": float(np.abs(np.tan(result.ego.pitch)).max()),
        "max_grade_challenger": float(np.abs(np.tan(result.challenger.pitch)).max()),
    }


def run_pipeline(config: PipelineConfig, out_dir: Path | None = None) -> ScenarioResult:
    """Run grid -> prune -> search -> transform -> export for one k_j value.

    Writes the grid file (when built from sensors), the path, both
    trajectories, the road envelope and a summary record to the output
    directory.  Outputs are deterministic for identical configs.
    """
    out = Path(out_dir) if out_dir is not None else config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    k_j = config.k_values[0]

    grid = _obtain_grid(config)
    mask = prune_nodes(grid, config.design)
    path, start, goal = _search(grid, mask, config, k_j)

    timed = resample_path(path, config.limits)
    smoothed = smooth_path(timed, config.smoothing_half_window)
    plan_builder = hermite_ego_plan if config.ego_plan_kind == "hermite" else chord_ego_plan
    ego_plan = plan_builder(smoothed.positions[-1], smoothed.positions[0])
    result = transform_scenario(smoothed, config.limits, ego_plan)
    result.road = derive_road_envelope(result, config.road_half_width)

    if config.grid_file is None:
        save_grid(grid, out / "grid.oapgrid")
    _write_csv(
        out / "path.csv",
        "x,y,z,p_d",
        ((p[0], p[1], p[2], pd) for p, pd in zip(path.positions, path.p_d)),
    )
    for name, traj in (("ego", result.ego), ("challenger", result.challenger)):
        _write_csv(
            out / f"{name}_trajectory.csv",
            "t,x,y,z,yaw,pitch",
            (
                (traj.t[i], traj.positions[i][0], traj.positions[i][1], traj.positions[i][2],
                 traj.yaw[i], traj.pitch[i])
                for i in range(len(traj))
            ),
        )
    road = result.road
    _write_csv(
        out / "road_envelope.csv",
        "s,cx,cy,cz,half_width,violation_flag",
        (
            (road.s[i], road.centerline[i][0], road.centerline[i][1], road.centerline[i][2],
             road.half_width, float(road.violation_flags[i]))
            for i in range(len(road.s))
        ),
    )
    if config.emit_plot_data:
        yaw = result.ego.yaw
        normal = np.column_stack((-np.sin(yaw), np.cos(yaw)))
        left = road.centerline[:, :2] + road.half_width * normal
        right = road.centerline[:, :2] - road.half_width * normal
        _write_csv(
            out / "road_boundaries.csv",
            "cx,cy,left_x,left_y,right_x,right_y",
            (
                (road.centerline[i][0], road.centerline[i][1],
                 left[i][0], left[i][1], right[i][0], right[i][1])
                for i in range(len(road.s))
            ),
        )

    recon = result.reconstruction_error
    summary = {
        "k_j": k_j,
        "grid": {
            "shape": list(grid.shape),
            "valid_nodes": int(mask.sum()),
            "source": "built" if config.grid_file is None else str(config.grid_file),
        },
        "start_node": list(start),
        "goal_node": list(goal),
        "start_position": [float(v) for v in grid.node_position(start)],
        "goal_position": [float(v) for v in grid.node_position(goal)],
        "path_nodes": len(path),
        "path_length_m": path.length,
        "path_cost": path.cost,
        "path_mean_p_d": path.mean_p_d,
        "duration_s": result.duration,
        "phase1_end_time_s": result.phase1_end_time,
        "ego_distance_m": result.ego_distance,
        "challenger_distance_m": result.challenger_distance,
        "closest_approach_time_s": result.closest_approach_time,
        "closest_approach_distance_m": result.closest_approach_distance,
        "reconstruction_error_max_m": float(recon.max()),
        "reconstruction_error_mean_m": float(recon.mean()),
        "constraints": _constraint_report(result, config.limits),
        "road_half_width_m": config.road_half_width,
        "violations": [
            {"x_start_m": v.x_start, "x_end_m": v.x_end, "max_exceedance_m": v.max_exceedance}
            for v in road.violations
        ],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result


def run_kj_sweep(config: PipelineConfig, k_values: Sequence[float],
                 out_dir: Path | None = None) -> dict:
    """Search the same grid for several k_j values and report the trends."""
    ks = [float(k) for k in k_values]
    if len(ks) < 2:
        raise ConfigError(f"sweep needs at least 2 k_j values, got {len(ks)}")
    if len(set(ks)) != len(ks):
        raise ConfigError(f"sweep k_j values must be distinct, got {ks}")
    for k in ks:
        if k <= 0:
            raise ConfigError(f"k_j must be > 0, got {k}")

    out = Path(out_dir) if out_dir is not None else config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    grid = _obtain_grid(config)
    mask = prune_nodes(grid, config.design)

    entries = []
    for k in ks:
        path, _, _ = _search(grid, mask, config, k)
        series_name = f"pd_vs_x_kj_{k:g}.csv"
        _write_csv(
            out / series_name,
            "x,p_d",
            ((p[0], pd) for p, pd in zip(path.positions, path.p_d)),
        )
        entries.append(
            {
                "k_j": k,
                "path_length_m": path.length,
                "path_cost": path.cost,
                "path_mean_p_d": path.mean_p_d,
                "path_nodes": len(path),
                "series_file": series_name,
            }
        )

    by_k = sorted(entries, key=lambda e: e["k_j"])
    lengths = [e["path_length_m"] for e in by_k]
    means = [e["path_mean_p_d"] for e in by_k]
    report = {
        "entries": entries,
        "length_strictly_decreasing_in_k_j": all(a > b for a, b in zip(lengths, lengths[1:])),
        "mean_p_d_strictly_increasing_in_k_j": all(a < b for a, b in zip(means, means[1:])),
    }
    (out / "sweep_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _cmd_run(args) -> int:
    config = parse_config(args.config)
    result = run_pipeline(config, out_dir=args.out)
    out = Path(args.out) if args.out else config.out_dir
    print(f"scenario duration {result.duration:.2f} s, "
          f"ego {result.ego_distance:.1f} m, challenger {result.challenger_distance:.1f} m")
    print(f"artifacts written to {out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = parse_config(args.config)
    ks = [float(tok) for tok in args.kj.split(",") if tok.strip()]
    report = run_kj_sweep(config, ks, out_dir=args.out)
    for entry in sorted(report["entries"], key=lambda e: e["k_j"]):
        print(f"k_j={entry['k_j']:g}: L={entry['path_length_m']:.1f} m, "
              f"mean P_D={entry['path_mean_p_d']:.3f}")
    print(f"length strictly decreasing: {report['length_strictly_decreasing_in_k_j']}")
    print(f"mean P_D strictly increasing: {report['mean_p_d_strictly_increasing_in_k_j']}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    if args.grid_command == "build":
        config = parse_config(args.config)
        if config.setup is None:
            raise ConfigError("grid build needs a config with a sensor setup")
        grid = build_grid(config.setup, config.grid_spec, ego_position=config.vn)
        save_grid(grid, args.file)
        print(f"grid {grid.shape[0]}x{grid.shape[1]}x{grid.shape[2]} written to {args.file}")
        return EXIT_OK
    grid = load_grid(args.file)
    s = grid.spec
    nx, ny, nz = grid.shape
    print(f"grid {nx}x{ny}x{nz} ({grid.values.size} nodes)")
    print(f"x [{s.x_min}, {s.x_max}] dx {s.dx}")
    print(f"y [{s.y_min}, {s.y_max}] dy {s.dy}")
    print(f"z [{s.z_min}, {s.z_max}] dz {s.dz}")
    print(f"ego position {tuple(float(v) for v in grid.ego_position)}")
    print(f"values: min {grid.values.min():.6f}, max {grid.values.max():.6f}, "
          f"nonzero {int(np.count_nonzero(grid.values))}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="oapgen",
        description="Worst-case perception scenario synthesis for automated vehicles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full pipeline from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="override the config output directory")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the weighting-factor sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--kj", required=True, help="comma-separated k_j values")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_grid = sub.add_parser("grid", help="grid file utilities")
    grid_sub = p_grid.add_subparsers(dest="grid_command", required=True)
    g_build = grid_sub.add_parser("build", help="build a grid from a config and write it")
    g_build.add_argument("file")
    g_build.add_argument("--config", required=True)
    g_info = grid_sub.add_parser("info", help="print a grid file header summary")
    g_info.add_argument("file")
    p_grid.set_defaults(func=_cmd_grid)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoPathError as exc:
        print(f"no path: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    except GridFormatError as exc:
        print(f"grid file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
