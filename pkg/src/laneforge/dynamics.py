"""Kinematic Ackermann vehicle stepped at a fixed timestep.

Single-track (bicycle) model: front-wheel steering sets the yaw rate, speed
integrates throttle/brake, and pose advances along an exact circular arc.
Two steering regimes (wide angles below a crossover speed, narrow above)
and simple slip caps on forward and lateral acceleration stand in for
full tire physics.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .geometry import motions_first_crossing
from .trackkit import Track


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


@dataclass(frozen=True)
class VehicleParams:
    low_speed_steer_deg: float = 45.0
    high_speed_steer_deg: float = 12.0
    crossover_speed_mps: float = 5.0
    steer_coeff_front: float = 1.0
    steer_coeff_rear: float = 0.0
    fwd_slip_threshold: float = 8.0  # cap on |dspeed/dt|, m/s^2
    side_slip_threshold: float = 12.0  # cap on lateral accel, m/s^2
    speed_limit_mps: float = 1.2
    wheelbase_m: float = 0.26
    width_m: float = 0.30
    max_accel_mps2: float = 4.0
    max_brake_mps2: float = 8.0

    def __post_init__(self):
        if not (self.low_speed_steer_deg >= self.high_speed_steer_deg > 0):
            raise ValueError("need low_speed_steer_deg >= high_speed_steer_deg > 0")
        if self.crossover_speed_mps <= 0 or self.speed_limit_mps <= 0:
            raise ValueError("crossover_speed_mps and speed_limit_mps must be > 0")
        if self.wheelbase_m <= 0:
            raise ValueError("wheelbase_m must be > 0")


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0  # rad, unbounded (not wrapped)
    speed: float = 0.0  # m/s, >= 0
    steer_deg: float = 0.0  # actual front-wheel angle
    collided: bool = False


@dataclass(frozen=True)
class ControlInput:
    steer_axis: float = 0.0  # [-1, 1], positive steers right
    throttle: float = 0.0  # [0, 1]
    brake: float = 0.0  # [0, 1]

    def clamped(self) -> ControlInput:
        return ControlInput(
            steer_axis=_clamp(self.steer_axis, -1.0, 1.0),
            throttle=_clamp(self.throttle, 0.0, 1.0),
            brake=_clamp(self.brake, 0.0, 1.0),
        )


NEUTRAL_INPUT = ControlInput()

PHYSICS_DT = 1.0 / 240.0  # internal fixed physics step


def steering_limit(params: VehicleParams, speed: float) -> float:
    """Hard regime switch; the crossover boundary itself is high-speed."""
    if speed < params.crossover_speed_mps:
        return params.low_speed_steer_deg
    return params.high_speed_steer_deg


def step(state: VehicleState, inp: ControlInput, params: VehicleParams, dt: float) -> VehicleState:
    """One timestep. Speed updates first so the steering limit reflects the
    regime the vehicle is actually in at the end of the step."""
    accel = inp.throttle * params.max_accel_mps2 - inp.brake * params.max_brake_mps2
    accel = _clamp(accel, -params.fwd_slip_threshold, params.fwd_slip_threshold)
    speed = _clamp(state.speed + accel * dt, 0.0, params.speed_limit_mps)

    limit = steering_limit(params, speed)
    steer_deg = _clamp(inp.steer_axis * limit * params.steer_coeff_front, -limit, limit)

    # Rear coefficient bleeds off yaw (translation-biased steering); the
    # side-slip cap then bounds lateral acceleration speed^2 * tan / L.
    # Positive steer is rightward, which in this y-north frame is a
    # clockwise (negative) heading rate.
    tan_eff = math.tan(math.radians(steer_deg) * (1.0 - params.steer_coeff_rear))
    if speed > 0.0:
        max_tan = params.side_slip_threshold * params.wheelbase_m / (speed * speed)
        tan_eff = _clamp(tan_eff, -max_tan, max_tan)
    omega = -speed * tan_eff / params.wheelbase_m

    if abs(omega) < 1e-12:
        x = state.x + speed * dt * math.cos(state.heading)
        y = state.y + speed * dt * math.sin(state.heading)
        heading = state.heading
    else:
        # exact arc: integrating cos/sin of a linearly advancing heading
        heading = state.heading + omega * dt
        r = speed / omega
        x = state.x + r * (math.sin(heading) - math.sin(state.heading))
        y = state.y - r * (math.cos(heading) - math.cos(state.heading))

    return VehicleState(x=x, y=y, heading=heading, speed=speed, steer_deg=steer_deg, collided=False)


def footprint_points(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """Center plus the two half-width lateral offsets, world frame (3,2)."""
    lx = -math.sin(state.heading)
    ly = math.cos(state.heading)
    w2 = params.width_m / 2.0
    return np.array(
        [
            [state.x, state.y],
            [state.x + w2 * lx, state.y + w2 * ly],
            [state.x - w2 * lx, state.y - w2 * ly],
        ]
    )


_CONTACT_BACKOFF_M = 1e-4


def enforce_colliders(
    state: VehicleState, prev: VehicleState, track: Track, params: VehicleParams
) -> VehicleState:
    """Project the motion prev->state back to collider contact.

    All three footprint point paths are tested; the earliest crossing wins.
    On contact the pose is interpolated just short of the crossing, speed
    zeroed, and the collided flag raised. Clear motion passes through
    untouched (collided false).
    """
    p_prev = footprint_points(prev, params)
    p_new = footprint_points(state, params)
    segments = track.colliders_near((prev.x, prev.y))
    u_hit = motions_first_crossing(p_prev, p_new, segments)
    if u_hit is None:
        return replace(state, collided=False)

    motion_len = math.hypot(state.x - prev.x, state.y - prev.y)
    u = max(0.0, u_hit - _CONTACT_BACKOFF_M / max(motion_len, 1e-9))
    return VehicleState(
        x=prev.x + u * (state.x - prev.x),
        y=prev.y + u * (state.y - prev.y),
        heading=prev.heading + u * (state.heading - prev.heading),
        speed=0.0,
        steer_deg=state.steer_deg,
        collided=True,
    )


# ---------------------------------------------------------------------------
# Options.pref: the eleven runtime-tunable keys, plain `key=value` lines.

OPTION_KEYS = (
    "low_speed_steering_angle",
    "high_speed_steering_angle",
    "crossover_speed",
    "steer_coefficient_front",
    "steer_coefficient_back",
    "forward_slip_threshold",
    "side_slip_threshold",
    "speed_limiter",
    "vertical_fov",
    "sampling_camera_width_ratio",
    "sampling_rate",
)


@dataclass
class Options:
    low_speed_steering_angle: float = 45.0
    high_speed_steering_angle: float = 12.0
    crossover_speed: float = 5.0
    steer_coefficient_front: float = 1.0
    steer_coefficient_back: float = 0.0
    forward_slip_threshold: float = 8.0
    side_slip_threshold: float = 12.0
    speed_limiter: float = 1.2
    vertical_fov: float = 48.8
    sampling_camera_width_ratio: float = 4.0 / 3.0
    sampling_rate: float = 30.0

    def vehicle_params(self, base: VehicleParams | None = None) -> VehicleParams:
        base = base or VehicleParams()
        return replace(
            base,
            low_speed_steer_deg=self.low_speed_steering_angle,
            high_speed_steer_deg=self.high_speed_steering_angle,
            crossover_speed_mps=self.crossover_speed,
            steer_coeff_front=self.steer_coefficient_front,
            steer_coeff_rear=self.steer_coefficient_back,
            fwd_slip_threshold=self.forward_slip_threshold,
            side_slip_threshold=self.side_slip_threshold,
            speed_limit_mps=self.speed_limiter,
        )

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in OPTION_KEYS}

    def format(self) -> str:
        return "".join(f"{k}={repr(float(getattr(self, k)))}\n" for k in OPTION_KEYS)

    def apply(self, updates: dict) -> list[str]:
        """Set known keys, return the unknown ones (callers warn)."""
        unknown = []
        for k, v in updates.items():
            if k in OPTION_KEYS:
                setattr(self, k, float(v))
            else:
                unknown.append(str(k))
        return unknown


def parse_options(text: str) -> Options:
    opts = Options()
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"options line {lineno}: expected key=value")
        key, val = line.split("=", 1)
        updates[key.strip()] = val.strip()
    unknown = opts.apply(updates)
    if unknown:
        warnings.warn(f"unknown option keys ignored: {', '.join(sorted(unknown))}")
    return opts


def load_options(path) -> Options:
    with open(path, "r", encoding="ascii") as f:
        return parse_options(f.read())


def save_options(path, opts: Options) -> None:
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(opts.format())
