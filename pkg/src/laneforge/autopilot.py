"""Raycast oracle driver: three collider raycasts (ahead and +/-60 deg)
feed a proportional centering law plus a two-level throttle that eases off
when the forward distance falls under the braking threshold. Used to mass-
produce clean ground-truth driving data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlInput
from .geometry import rays_hit_segments
from .trackkit import Track


class DegenerateSense(Exception):
    """Both side distances are zero; no imbalance is defined."""


@dataclass(frozen=True)
class AutopilotParams:
    side_angle_deg: float = 60.0
    max_range_m: float = 5.0
    brake_distance_m: float = 1.2
    center_gain: float = 2.2
    cruise_throttle: float = 0.6
    slow_throttle: float = 0.25
    sense_forward_m: float = 0.0  # ray origin offset along heading

    def __post_init__(self):
        if not 0 < self.side_angle_deg < 90:
            raise ValueError("side_angle_deg must be in (0, 90)")
        if not self.brake_distance_m < self.max_range_m:
            raise ValueError("brake_distance_m must be < max_range_m")
        if self.center_gain <= 0:
            raise ValueError("center_gain must be > 0")


def sense(pose, track: Track, params: AutopilotParams):
    """(d_front, d_left, d_right) raycast distances from the camera origin."""
    x, y, heading = pose
    side = math.radians(params.side_angle_deg)
    angles = np.array([heading, heading + side, heading - side])
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    origin = np.array([x, y]) + params.sense_forward_m * dirs[0]
    d = rays_hit_segments(
        np.broadcast_to(origin, (3, 2)), dirs, track.colliders, params.max_range_m
    )
    return float(d[0]), float(d[1]), float(d[2])


def decide(d_front: float, d_left: float, d_right: float,
           params: AutopilotParams, speed: float) -> ControlInput:
    """Steer toward the longer side, proportional to the normalized
    imbalance; positive steer_axis is right, so a longer left distance
    drives the axis negative."""
    total = d_left + d_right
    if total == 0:
        raise DegenerateSense("d_left + d_right = 0")
    steer_axis = -params.center_gain * (d_left - d_right) / total
    throttle = params.cruise_throttle if d_front >= params.brake_distance_m else params.slow_throttle
    return ControlInput(steer_axis=steer_axis, throttle=throttle, brake=0.0).clamped()


def drive(pose, speed: float, track: Track, params: AutopilotParams) -> ControlInput:
    d_front, d_left, d_right = sense(pose, track, params)
    return decide(d_front, d_left, d_right, params, speed)
