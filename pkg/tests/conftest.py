import numpy as np
import pytest

from oapgen import (
    CostWeights,
    MotionLimits,
    build_grid,
    derive_road_envelope,
    find_path,
    GRID_PRESETS,
    prune_nodes,
    reference_sensor_setup,
    resample_path,
    smooth_path,
    transform_scenario,
)

EGO_POSITION = (0.0, 0.0, 0.5)


@pytest.fixture(scope="session")
def coarse_grid():
    return build_grid(reference_sensor_setup(), GRID_PRESETS["coarse"], ego_position=EGO_POSITION)


@pytest.fixture(scope="session")
def coarse_mask(coarse_grid):
    return prune_nodes(coarse_grid)


@pytest.fixture(scope="session")
def middle_grid():
    return build_grid(reference_sensor_setup(), GRID_PRESETS["middle"], ego_position=EGO_POSITION)


@pytest.fixture(scope="session")
def middle_mask(middle_grid):
    return prune_nodes(middle_grid)


@pytest.fixture(scope="session")
def default_scenario(middle_grid, middle_mask):
    """Reference scenario: v_1 at x = 200 m, k_j = 0.25, default limits."""
    limits = MotionLimits()
    start = middle_grid.nearest_index((200.0, -20.0, 2.0))
    goal = middle_grid.nearest_index((0.0, 0.0, 0.5))
    path = find_path(middle_grid, middle_mask, start, goal, CostWeights(0.25))
    smoothed = smooth_path(resample_path(path, limits), 0.5)
    result = transform_scenario(smoothed, limits)
    result.road = derive_road_envelope(result)
    return {"path": path, "oap": smoothed, "limits": limits, "result": result}


def samples_outside_reported(result):
    """Mask of trajectory samples outside every reported interval."""
    t = result.ego.t
    outside = np.ones(len(t), dtype=bool)
    for iv in result.infeasibility_intervals:
        outside &= ~((t >= iv.t_start) & (t <= iv.t_end))
    if result.road is not None:
        ch_x = result.challenger.positions[:, 0]
        for v in result.road.violations:
            outside &= ~((ch_x >= v.x_start) & (ch_x <= v.x_end))
    return outside
