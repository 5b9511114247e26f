"""Reactive obstacle dodging: threshold the depth estimate into a foreground
mask, then map it to a velocity command with a single-aggregate potential
field.

The attractive term is constant forward motion; the repulsive term has
magnitude repulse_gain * (foreground area fraction) and points from the
foreground centroid toward the image center, mapped to lateral (+right) and
vertical (+up) body velocities and clamped.  A frame nearly full of
foreground saturates to the strongest dodge at creep forward speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import DepthEstimate
from .imagery import BinaryMask

# -log(peak^2 + eps) tops out just below 14 for eps = 1e-6, so the default cap
# leaves template-matching estimates unflagged; learned estimators can exceed it.
DEFAULT_LOGVAR_CAP = 14.0


@dataclass(frozen=True)
class NavConfig:
    dodge_distance: float = 1.0  # meters; foreground threshold Z_F
    forward_speed: float = 1.0  # m/s
    repulse_gain: float = 3.0  # m/s per unit foreground area fraction
    max_lateral: float = 1.0  # m/s
    max_vertical: float = 0.6  # m/s
    fg_area_deadband: float = 0.02  # area fraction below which we fly straight
    logvar_cap: float = DEFAULT_LOGVAR_CAP
    saturation_area: float = 0.9  # area fraction treated as full-frame obstacle
    creep_fraction: float = 0.1

    def __post_init__(self):
        for name in ("dodge_distance", "forward_speed", "repulse_gain",
                     "max_lateral", "max_vertical", "creep_fraction"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.fg_area_deadband < 1.0:
            raise ValueError("fg_area_deadband must be in [0, 1)")
        if not 0.0 < self.saturation_area <= 1.0:
            raise ValueError("saturation_area must be in (0, 1]")


@dataclass(frozen=True)
class NavCommand:
    v_forward: float
    v_lateral: float  # body frame, +right
    v_vertical: float  # +up

    def csv_row(self, t: float) -> str:
        return f"{t!r},{self.v_forward!r},{self.v_lateral!r},{self.v_vertical!r}"


def segment_fg_bg(
    est: DepthEstimate, z_threshold: float, logvar_cap: float = DEFAULT_LOGVAR_CAP
) -> BinaryMask:
    """Foreground = nearer than z_threshold; low-confidence pixels (log
    variance above the cap) are conservatively treated as foreground."""
    fg = (est.depth.data < z_threshold) | (est.log_variance > logvar_cap)
    return BinaryMask(fg)


def potential_field_cmd(fg_mask: BinaryMask, cfg: NavConfig) -> NavCommand:
    data = fg_mask.data
    area = float(data.mean())
    if area <= cfg.fg_area_deadband:
        return NavCommand(cfg.forward_speed, 0.0, 0.0)
    h, w = data.shape
    ys, xs = np.nonzero(data)
    cx = float(xs.mean())
    cy = float(ys.mean())
    center_x = (w - 1) / 2.0
    center_y = (h - 1) / 2.0
    if area >= cfg.saturation_area:
        # full-frame obstacle: strongest dodge, creep forward; ties resolve
        # right/up so the command is deterministic
        lat = cfg.max_lateral if cx <= center_x else -cfg.max_lateral
        vert = cfg.max_vertical if cy >= center_y else -cfg.max_vertical
        return NavCommand(cfg.creep_fraction * cfg.forward_speed, lat, vert)
    ox = center_x - cx  # image x: +right
    oy = center_y - cy  # image y: +down
    norm = math.hypot(ox, oy)
    if norm < 1e-9:
        ux, uy = 0.0, 0.0
    else:
        ux, uy = ox / norm, oy / norm
    mag = cfg.repulse_gain * area
    v_lat = max(-cfg.max_lateral, min(cfg.max_lateral, mag * ux))
    v_vert = max(-cfg.max_vertical, min(cfg.max_vertical, -mag * uy))
    return NavCommand(cfg.forward_speed, v_lat, v_vert)
