"""Restriction of the grid to a legally reachable motorway envelope.

Only nodes ahead of the ego that a motorway built to the design-class
minimum radii could reach are kept for the search.  The envelope is the
worst-case sweep of circular arcs at the minimum curve/crest/hollow radii
starting straight ahead from the ego, plus the lateral offset a vehicle can
have within the standard cross section.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import DetectionGrid


@dataclass(frozen=True)
class MotorwayDesignClass:
    """Design-class minimum radii and derived search-space limits.

    r_min: minimum horizontal curve radius (m)
    h_crest_min / h_hollow_min: minimum vertical crest / hollow radii (m)
    y_off_max: maximum lateral vehicle offset within the cross section (m)
    x_max: forward search range (m), about the longest automotive sensor reach
    z_lo, z_hi: base vertical band at the ego (m), road surface to tall vehicle
    """

    r_min: float = 720.0
    h_crest_min: float = 10_000.0
    h_hollow_min: float = 5_700.0
    y_off_max: float = 10.875
    x_max: float = 300.0
    z_lo: float = 0.0
    z_hi: float = 4.0

    def __post_init__(self):
        for name in ("r_min", "h_crest_min", "h_hollow_min", "x_max"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.z_hi <= self.z_lo:
            raise ConfigError("z_hi must be > z_lo")


EKA_1B = MotorwayDesignClass()


def lateral_bound(x, design: MotorwayDesignClass = EKA_1B):
    """Largest legal |y| at forward distance x.

    Tightest circular-arc sweep from the ego's straight-ahead pose,
    (r_min - sqrt(r_min**2 - x**2)), widened by y_off_max so a vehicle on
    the far lane edge of a maximally curved road stays inside.
    Accepts scalars or arrays; requires 0 <= x <= r_min.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > design.r_min):
        raise ConfigError(f"x must be in [0, r_min={design.r_min}]")
    bound = (design.r_min - np.sqrt(design.r_min**2 - x * x)) + design.y_off_max
    return bound if bound.ndim else float(bound)


def vertical_bounds(x, design: MotorwayDesignClass = EKA_1B):
    """(z_low, z_high) at forward distance x.

    The base band [z_lo, z_hi] widens with the crest arc downward and the
    hollow arc upward, the fastest the road may fall away or climb.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ConfigError("x must be >= 0")
    drop = design.h_crest_min - np.sqrt(design.h_crest_min**2 - x * x)
    rise = design.h_hollow_min - np.sqrt(design.h_hollow_min**2 - x * x)
    z_low = design.z_lo - drop
    z_high = design.z_hi + rise
    if x.ndim:
        return z_low, z_high
    return float(z_low), float(z_high)


def prune_nodes(grid: DetectionGrid, design: MotorwayDesignClass = EKA_1B) -> np.ndarray:
    """Boolean mask over grid.shape marking nodes reachable for the search.

    A node is valid iff x in [0, x_max], |y| <= lateral_bound(x) and z within
    vertical_bounds(x).  Everything behind the ego (x < 0) is removed.
    All bounds are inclusive.
    """
    xs, ys, zs = grid.spec.axis_levels()
    x_ok = (xs >= 0.0) & (xs <= design.x_max)
    # evaluate the arcs only where x is in range; sqrt would go complex past r_min
    x_safe = np.where(x_ok, xs, 0.0)
    lat = lateral_bound(x_safe, design)
    z_low, z_high = vertical_bounds(x_safe, design)
    mask = (
        x_ok[:, None, None]
        & (np.abs(ys)[None, :, None] <= lat[:, None, None])
        & (zs[None, None, :] >= z_low[:, None, None])
        & (zs[None, None, :] <= z_high[:, None, None])
    )
    return mask
