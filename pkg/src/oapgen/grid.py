"""3D detection-probability grid: sensor model, construction, file storage.

The grid assigns every lattice node the probability that the ego vehicle's
sensor setup correctly detects an object located there.  Nodes outside the
union of all sensor cones carry exactly 0.  Coordinates are metric, with the
x-axis pointing in the ego's driving direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, GridFormatError

GRID_MAGIC = "OAPGRID 1"

# Ego reference point: x/y at the vehicle, z at sensor-origin height.
DEFAULT_EGO_POSITION = (0.0, 0.0, 0.5)

# Guards float dust when a span is an exact multiple of the spacing
# (4.0 / 0.2 evaluates to 19.999...96).
_COUNT_EPS = 1e-9


def _axis_count(lo: float, hi: float, step: float) -> int:
    return int(math.floor((hi - lo) / step + _COUNT_EPS)) + 1


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice geometry: bounds and spacing per axis, in meters.

    Node count per axis is floor((max - min) / spacing) + 1; the node at
    index (i, j, k) sits at (x_min + i*dx, y_min + j*dy, z_min + k*dz).
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        for name in ("dx", "dy", "dz"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"grid spacing {name} must be > 0, got {getattr(self, name)}")
        for lo, hi in (("x_min", "x_max"), ("y_min", "y_max"), ("z_min", "z_max")):
            if getattr(self, hi) <= getattr(self, lo):
                raise ConfigError(f"grid bound {hi} must be > {lo}")
        if min(self.shape) < 2:
            # a single-level axis has no representable extent in the file format
            raise ConfigError(f"each axis needs at least 2 nodes, got shape {self.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (
            _axis_count(self.x_min, self.x_max, self.dx),
            _axis_count(self.y_min, self.y_max, self.dy),
            _axis_count(self.z_min, self.z_max, self.dz),
        )

    @property
    def n_nodes(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz

    def axis_levels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node coordinates along each axis."""
        nx, ny, nz = self.shape
        return (
            self.x_min + np.arange(nx) * self.dx,
            self.y_min + np.arange(ny) * self.dy,
            self.z_min + np.arange(nz) * self.dz,
        )

    def normalized(self) -> "GridSpec":
        """Spec with max bounds snapped to the last node coordinate.

        The lattice, not the requested max bound, defines the effective grid
        extent; normalizing makes save/load round trips bit-exact.
        """
        nx, ny, nz = self.shape
        return GridSpec(
            x_min=self.x_min,
            x_max=self.x_min + (nx - 1) * self.dx,
            y_min=self.y_min,
            y_max=self.y_min + (ny - 1) * self.dy,
            z_min=self.z_min,
            z_max=self.z_min + (nz - 1) * self.dz,
            dx=self.dx,
            dy=self.dy,
            dz=self.dz,
        )


# Grid presets: x covers the 300 m forward range, y the widest lateral
# envelope reach (+-76.35 m at 300 m), z the base 0-4 m band plus one coarse
# spacing of vertical-envelope margin on each side.  Extents are shared by
# all presets so results stay comparable across resolutions.
GRID_PRESETS: dict[str, GridSpec] = {
    "fine": GridSpec(0.0, 300.0, -76.0, 76.0, -0.8, 4.8, 1.0, 1.0, 0.2),
    "middle": GridSpec(0.0, 300.0, -76.0, 76.0, -0.8, 4.8, 2.0, 2.0, 0.4),
    "coarse": GridSpec(0.0, 300.0, -76.0, 76.0, -0.8, 4.8, 4.0, 4.0, 0.8),
}


@dataclass(frozen=True)
class SensorSpec:
    """One sensor: a cone-shaped field of view with range-decaying detection.

    mount: (x, y, z) m relative to the ego reference point
    azimuth: cone center direction in the xy-plane, rad (0 = forward)
    azimuth_half_angle, elevation_half_angle: cone half-openings, rad, (0, pi]
    max_range: m; p_peak: detection probability at zero range, [0, 1]
    decay: exponent of the range falloff p_peak * (1 - (r/max_range)**decay)
    """

    mount: tuple[float, float, float]
    azimuth: float
    azimuth_half_angle: float
    elevation_half_angle: float
    max_range: float
    p_peak: float
    decay: float
    name: str = ""

    def __post_init__(self):
        if not (0.0 < self.azimuth_half_angle <= math.pi):
            raise ConfigError(f"azimuth_half_angle must be in (0, pi], got {self.azimuth_half_angle}")
        if not (0.0 < self.elevation_half_angle <= math.pi):
            raise ConfigError(f"elevation_half_angle must be in (0, pi], got {self.elevation_half_angle}")
        if self.max_range <= 0.0:
            raise ConfigError(f"max_range must be > 0, got {self.max_range}")
        if not (0.0 <= self.p_peak <= 1.0):
            raise ConfigError(f"p_peak must be in [0, 1], got {self.p_peak}")


@dataclass(frozen=True)
class SensorSetup:
    """Fused collection of sensors plus a scalar environment attenuation.

    attenuation in (0, 1] scales every probability uniformly; 1 models good
    weather, smaller values degraded conditions.
    """

    sensors: tuple[SensorSpec, ...]
    attenuation: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.attenuation <= 1.0):
            raise ConfigError(f"attenuation must be in (0, 1], got {self.attenuation}")


def _sensor_probability(sensor: SensorSpec, px, py, pz):
    """Detection probability of one sensor, vectorized over point arrays.

    Points are in ego coordinates.  Shared by the scalar API and the grid
    builder so both produce bit-identical values.
    """
    mx, my, mz = sensor.mount
    vx = np.asarray(px, dtype=float) - mx
    vy = np.asarray(py, dtype=float) - my
    vz = np.asarray(pz, dtype=float) - mz
    r = np.sqrt(vx * vx + vy * vy + vz * vz)

    with np.errstate(invalid="ignore", divide="ignore"):
        azimuth = np.arctan2(vy, vx)
        az_dev = np.abs(np.arctan2(np.sin(azimuth - sensor.azimuth), np.cos(azimuth - sensor.azimuth)))
        elevation = np.abs(np.arctan2(vz, np.sqrt(vx * vx + vy * vy)))

    inside = (
        (r <= sensor.max_range)
        & (az_dev <= sensor.azimuth_half_angle)
        & (elevation <= sensor.elevation_half_angle)
    )
    inside = inside | (r == 0.0)  # mount point: direction undefined, in cone

    p = sensor.p_peak * (1.0 - (r / sensor.max_range) ** sensor.decay)
    return np.where(inside, np.maximum(p, 0.0), 0.0)


def single_sensor_probability(sensor: SensorSpec, point: Sequence[float]) -> float:
    """Detection probability of one sensor for a point in ego coordinates."""
    px, py, pz = point
    return float(_sensor_probability(sensor, px, py, pz))


def fuse(probabilities: Sequence[float]) -> float:
    """Combine per-sensor probabilities as independent detections.

    Iterative union r <- r + p*(1 - r); empty input fuses to 0.
    """
    result = 0.0
    for p in probabilities:
        result = result + p * (1.0 - result)
    return result


@dataclass(eq=False)
class DetectionGrid:
    """Dense detection probabilities on a GridSpec lattice.

    values has shape spec.shape (x-outer, z-inner); ego_position is the
    ego reference point in grid coordinates.  Immutable after construction.
    """

    spec: GridSpec
    values: np.ndarray
    ego_position: np.ndarray

    def __post_init__(self):
        self.spec = self.spec.normalized()
        self.values = np.asarray(self.values, dtype=np.float64)
        self.ego_position = np.asarray(self.ego_position, dtype=np.float64).reshape(3)
        if self.values.shape != self.spec.shape:
            raise GridFormatError(
                f"values shape {self.values.shape} does not match spec shape {self.spec.shape}"
            )
        if not np.all((self.values >= 0.0) & (self.values <= 1.0)):
            bad = np.argwhere(~((self.values >= 0.0) & (self.values <= 1.0)))[0]
            raise GridFormatError(
                f"probability out of [0, 1] at node index {tuple(int(b) for b in bad)}"
            )
        self.values.setflags(write=False)
        self.ego_position.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.spec.shape

    def node_position(self, index: Sequence[int]) -> np.ndarray:
        i, j, k = index
        s = self.spec
        return np.array([s.x_min + i * s.dx, s.y_min + j * s.dy, s.z_min + k * s.dz])

    def nearest_index(self, point: Sequence[float]) -> tuple[int, int, int]:
        """Index of the lattice node closest to a point; ties round up."""
        s = self.spec
        nx, ny, nz = s.shape
        i = int(math.floor((point[0] - s.x_min) / s.dx + 0.5))
        j = int(math.floor((point[1] - s.y_min) / s.dy + 0.5))
        k = int(math.floor((point[2] - s.z_min) / s.dz + 0.5))
        return (
            min(max(i, 0), nx - 1),
            min(max(j, 0), ny - 1),
            min(max(k, 0), nz - 1),
        )

    def value_at(self, index: Sequence[int]) -> float:
        i, j, k = index
        return float(self.values[i, j, k])


def build_grid(
    setup: SensorSetup,
    spec: GridSpec,
    ego_position: Sequence[float] = DEFAULT_EGO_POSITION,
) -> DetectionGrid:
    """Evaluate the fused sensor setup on every lattice node.

    Node value = attenuation * fuse(per-sensor probability at the node in
    ego coordinates).  Deterministic for a given input.
    """
    if not setup.sensors:
        raise ConfigError("sensor setup is empty; grid construction needs at least one sensor")
    spec = spec.normalized()
    ego = np.asarray(ego_position, dtype=float).reshape(3)
    xs, ys, zs = spec.axis_levels()
    px = (xs - ego[0])[:, None, None]
    py = (ys - ego[1])[None, :, None]
    pz = (zs - ego[2])[None, None, :]
    px, py, pz = np.broadcast_arrays(px, py, pz)

    fused = np.zeros(spec.shape, dtype=np.float64)
    for sensor in setup.sensors:
        p = _sensor_probability(sensor, px, py, pz)
        fused = fused + p * (1.0 - fused)
    return DetectionGrid(spec=spec, values=setup.attenuation * fused, ego_position=ego)


def reference_sensor_setup(attenuation: float = 1.0) -> SensorSetup:
    """Bundled example setup: a forward fan of staggered cones on a car.

    Narrow long-range radar, mid-range radar, camera and lidar overlap near
    the centerline, so fused probabilities terrace upward toward straight
    ahead and reach almost 1 close to the vehicle; the flanks stay poorly
    covered far out.  Approaching along the flank trades extra path length
    for low detection, straight in is short but well covered.
    """
    return SensorSetup(
        sensors=(
            SensorSpec((3.8, 0.0, 0.0), 0.0, 0.05, 0.60, 260.0, 0.35, 1.0, name="long_range_radar"),
            SensorSpec((3.8, 0.0, 0.0), 0.0, 0.10, 0.60, 250.0, 0.35, 1.0, name="mid_range_radar"),
            SensorSpec((1.9, 0.0, 0.9), 0.0, 0.15, 0.60, 240.0, 0.35, 1.0, name="tele_camera"),
            SensorSpec((1.9, 0.0, 0.9), 0.0, 0.20, 0.60, 230.0, 0.35, 1.0, name="front_camera"),
            SensorSpec((1.9, 0.0, 0.9), 0.0, 0.25, 0.60, 220.0, 0.35, 1.0, name="wide_camera"),
            SensorSpec((2.4, 0.0, 1.4), 0.0, 1.20, 0.90, 100.0, 0.97, 3.0, name="roof_lidar"),
            SensorSpec((3.6, 0.9, 0.1), 0.85, 0.75, 0.60, 70.0, 0.80, 2.0, name="corner_radar_left"),
            SensorSpec((3.6, -0.9, 0.1), -0.85, 0.75, 0.60, 70.0, 0.80, 2.0, name="corner_radar_right"),
            # all-around near-field ring; without it the column right at the
            # ego is blind (every cone points forward from mounts ahead of
            # the origin) and the search dives vertically through it
            SensorSpec((0.0, 0.0, 0.5), 0.0, math.pi, math.pi, 18.0, 0.95, 4.0, name="near_field_ring"),
        ),
        attenuation=attenuation,
    )


def save_grid(grid: DetectionGrid, destination) -> None:
    """Write a grid in the line-oriented text format (see load_grid)."""
    s = grid.spec
    nx, ny, nz = s.shape
    lines = [
        GRID_MAGIC,
        f"{nx} {ny} {nz}",
        f"{s.x_min!r} {s.y_min!r} {s.z_min!r}",
        f"{s.dx!r} {s.dy!r} {s.dz!r}",
        f"{grid.ego_position[0]!r} {grid.ego_position[1]!r} {grid.ego_position[2]!r}",
    ]
    flat = grid.values.reshape(nx * ny, nz)
    for row in flat:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(destination).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_grid(source) -> DetectionGrid:
    """Parse a grid file.

    Format: line 1 magic ``OAPGRID 1``; line 2 node counts ``nx ny nz``;
    line 3 origin; line 4 spacing; line 5 ego position; then nx*ny*nz
    probability values, row-major x-outer/z-inner, whitespace-separated.
    """
    text = Path(source).read_text(encoding="ascii")
    tokens = text.split("\n", 5)
    if len(tokens) < 6:
        raise GridFormatError("truncated grid file: fewer than 5 header lines")
    magic = tokens[0].strip()
    if magic != GRID_MAGIC:
        raise GridFormatError(f"malformed header: expected {GRID_MAGIC!r}, got {magic!r}")

    def parse_floats(line: str, what: str, n: int) -> list[float]:
        parts = line.split()
        if len(parts) != n:
            raise GridFormatError(f"{what}: expected {n} fields, got {len(parts)}")
        try:
            return [float(p) for p in parts]
        except ValueError as exc:
            raise GridFormatError(f"{what}: {exc}") from None

    dims_parts = tokens[1].split()
    if len(dims_parts) != 3:
        raise GridFormatError(f"dimension line: expected 3 fields, got {len(dims_parts)}")
    try:
        nx, ny, nz = (int(p) for p in dims_parts)
    except ValueError as exc:
        raise GridFormatError(f"dimension line: {exc}") from None
    if min(nx, ny, nz) < 2:
        raise GridFormatError(f"dimension line: counts must be >= 2, got {nx} {ny} {nz}")

    origin = parse_floats(tokens[2], "origin line", 3)
    spacing = parse_floats(tokens[3], "spacing line", 3)
    if min(spacing) <= 0.0:
        raise GridFormatError(f"spacing line: spacings must be > 0, got {spacing}")
    ego = parse_floats(tokens[4], "ego position line", 3)

    value_tokens = tokens[5].split()
    expected = nx * ny * nz
    if len(value_tokens) != expected:
        raise GridFormatError(
            f"dimension mismatch: declared {nx}x{ny}x{nz} = {expected} values, found {len(value_tokens)}"
        )
    values = np.empty(expected, dtype=np.float64)
    for idx, tok in enumerate(value_tokens):
        try:
            v = float(tok)
        except ValueError:
            raise GridFormatError(f"value {idx}: not a number: {tok!r}") from None
        if not (0.0 <= v <= 1.0):
            raise GridFormatError(f"value {idx}: probability out of [0, 1]: {tok}")
        values[idx] = v

    spec = GridSpec(
        x_min=origin[0],
        x_max=origin[0] + (nx - 1) * spacing[0],
        y_min=origin[1],
        y_max=origin[1] + (ny - 1) * spacing[1],
        z_min=origin[2],
        z_max=origin[2] + (nz - 1) * spacing[2],
        dx=spacing[0],
        dy=spacing[1],
        dz=spacing[2],
    )
    return DetectionGrid(spec=spec, values=values.reshape(nx, ny, nz), ego_position=np.array(ego))
