"""Game-session orchestration.

One Session owns all mutable state (vehicle, score, coins, env) and advances
it with a fixed 1/240 s physics step grouped into control-rate ticks. Each
tick resolves the active control source (human override beats the selected
AI), steps dynamics against the colliders, scores coins/collisions/laps, and
emits a log sample when the sampling clock fires while the capture gate is
open.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import autopilot as _ap
from . import dynamics as _dyn
from .datalog import RunWriter
from .dynamics import (
    NEUTRAL_INPUT,
    PHYSICS_DT,
    ControlInput,
    Options,
    VehicleState,
    load_options,
    steering_limit,
)
from .geometry import segments_intersect
from .synthcam import CameraConfig, EnvState, render
from .trackkit import Gate, TileKind, Track, TrackParams, load_layout

COIN_VALUE = 10
COLLISION_PENALTY = 50
COIN_RADIUS_M = 0.15
COLLISION_COOLDOWN_S = 1.0
DISQUALIFY_COLLISIONS = 10
HUMAN_DEADZONE = 0.05


class Mode(str, Enum):
    HUMAN = "human"
    INGAME_AI = "ingame_ai"
    EXTERNAL_AI = "external_ai"


class LapCrossing(Enum):
    FORWARD = 1
    BACKWARD = -1


@dataclass
class ScoreState:
    coins_collected: int = 0
    collision_count: int = 0
    lap_count: int = 0
    lap_times: list[float] = field(default_factory=list)
    score: int = 0
    disqualified: bool = False


def compute_score(coins_collected: int, collision_count: int) -> int:
    return coins_collected * COIN_VALUE - collision_count * COLLISION_PENALTY


def capture_gate(time_since_collision: float | None, score: ScoreState,
                 capture_enabled: bool = True,
                 cooldown_s: float = COLLISION_COOLDOWN_S) -> bool:
    """Sampling permission: closed while disabled, disqualified, or inside
    the post-collision cooldown."""
    if not capture_enabled or score.disqualified:
        return False
    if time_since_collision is not None and time_since_collision < cooldown_s:
        return False
    return True


def lap_check(prev_pose, pose, gate: Gate) -> LapCrossing | None:
    """Classify the motion segment prev_pose->pose against the gate."""
    p0 = (float(prev_pose[0]), float(prev_pose[1]))
    p1 = (float(pose[0]), float(pose[1]))
    if p0 == p1 or not segments_intersect(p0, p1, tuple(gate.p0), tuple(gate.p1)):
        return None
    d = (p1[0] - p0[0]) * gate.forward[0] + (p1[1] - p0[1]) * gate.forward[1]
    if d > 0:
        return LapCrossing.FORWARD
    if d < 0:
        return LapCrossing.BACKWARD
    return None


def arbitrate(human: ControlInput, ai: ControlInput,
              deadzone: float = HUMAN_DEADZONE) -> ControlInput:
    """Human wins the whole tick when any axis leaves the deadzone."""
    h = human.clamped()
    if max(abs(h.steer_axis), abs(h.throttle), abs(h.brake)) > deadzone:
        return h
    return ai.clamped()


def command_to_input(steer_deg: float, velocity_mps: float,
                     state: VehicleState, params) -> ControlInput:
    """Map an external (angle, target speed) command onto the axis model:
    steer ratio against the current limit, P-law throttle/brake."""
    limit = steering_limit(params, state.speed) * params.steer_coeff_front
    axis = 0.0 if limit <= 0 else steer_deg / limit
    err = velocity_mps - state.speed
    throttle = min(1.0, max(0.0, 2.0 * err))
    brake = min(1.0, max(0.0, 2.0 * (-err - 0.05)))
    return ControlInput(steer_axis=axis, throttle=throttle, brake=brake).clamped()


@dataclass
class SessionConfig:
    mode: Mode = Mode.INGAME_AI
    track: Track | str | Path | None = None
    options: Options | str | Path | None = None
    spawn_index: int | None = None
    spawn_heading_deg: float | None = None
    duration_s: float | None = None
    lap_target: int | None = None
    capture_enabled: bool = True
    seed: int = 0
    steering_noise: float = 0.0  # +-axis bias amplitude, held 0.3-1.0 s stretches
    autopilot: _ap.AutopilotParams = field(default_factory=_ap.AutopilotParams)

    def resolved_track(self) -> Track:
        if isinstance(self.track, Track):
            return self.track
        if self.track is None:
            raise ValueError("SessionConfig.track is required")
        return Track(load_layout(self.track), TrackParams())

    def resolved_options(self) -> Options:
        if isinstance(self.options, Options):
            return self.options
        if self.options is None:
            return Options()
        return load_options(self.options)

    def validate_headless(self):
        if (self.duration_s is None) == (self.lap_target is None):
            raise ValueError("headless runs need exactly one of duration_s or lap_target")


class Session:
    """Single owner of mutable game state; callers feed inputs in and read
    immutable snapshots out."""

    def __init__(self, config: SessionConfig, writer: RunWriter | None = None):
        self.config = config
        self.track = config.resolved_track()
        self.options = config.resolved_options()
        self.params = self.options.vehicle_params()
        self.camera = CameraConfig.with_ratio(
            height_px=120,
            width_ratio=self.options.sampling_camera_width_ratio,
            vertical_fov_deg=self.options.vertical_fov,
        )
        spawn = config.spawn_index if config.spawn_index is not None else self.track.start_index
        x, y, heading = self.track.spawn_pose(spawn, config.spawn_heading_deg)
        self.state = VehicleState(x=x, y=y, heading=heading, speed=0.0,
                                  steer_deg=0.0, collided=False)
        self.score = ScoreState()
        self.track.reset_coins()
        self._coin_xy = np.array([[c.point[0], c.point[1]] for c in self.track.coins])

        self.sim_time = 0.0
        self.seq = 0  # completed control ticks
        self._substeps = 0
        self.env = EnvState.at(config.seed, 0.0)
        self.writer = writer
        self.gate_open = capture_gate(None, self.score, config.capture_enabled)

        self.human = NEUTRAL_INPUT
        self.external_steer_deg = 0.0
        self.external_velocity = 0.0
        self.ai_mode = 1 if config.mode is Mode.EXTERNAL_AI else 0
        self.applied_input = NEUTRAL_INPUT

        self._in_contact = False
        self._last_collision_time: float | None = None
        self._lap_balance = 0
        self._lap_high_water = 0
        self._lap_start = 0.0
        self._noise_rng = np.random.default_rng(config.seed)
        self._noise_hold = 0.0
        self._noise_until = 0.0

        self.control_period = 1.0 / self.options.sampling_rate
        self._substeps_per_tick = max(1, round(self.control_period / PHYSICS_DT))

    def reset(self):
        """Back to the spawn state: score, coins, laps, clocks. Options and
        track stay as configured."""
        c = self.config
        spawn = c.spawn_index if c.spawn_index is not None else self.track.start_index
        x, y, heading = self.track.spawn_pose(spawn, c.spawn_heading_deg)
        self.state = VehicleState(x=x, y=y, heading=heading, speed=0.0,
                                  steer_deg=0.0, collided=False)
        self.score = ScoreState()
        self.track.reset_coins()
        self.sim_time = 0.0
        self.seq = 0
        self._substeps = 0
        self.env = EnvState.at(c.seed, 0.0)
        self.gate_open = capture_gate(None, self.score, c.capture_enabled)
        self._in_contact = False
        self._last_collision_time = None
        self._lap_balance = 0
        self._lap_high_water = 0
        self._lap_start = 0.0
        self._noise_rng = np.random.default_rng(c.seed)
        self._noise_hold = 0.0
        self._noise_until = 0.0
        self.applied_input = NEUTRAL_INPUT

    def place(self, x: float, y: float, heading: float):
        """Teleport at rest (a marshal lifting the car back onto the road).
        Scores and clocks keep running; no gate crossing is implied."""
        self.state = VehicleState(x=float(x), y=float(y), heading=float(heading),
                                  speed=0.0, steer_deg=0.0, collided=False)
        self._in_contact = False

    def nearest_spawn(self, straight_only: bool = False) -> tuple[float, float, float]:
        """Closest tile-center pose in loop direction, for scripted
        recovery. straight_only skips turn tiles, where a mid-corner restart
        would need immediate full lock."""
        p = np.array([self.state.x, self.state.y])
        idxs = list(range(len(self.track.spawn_points)))
        if straight_only:
            flat = (TileKind.STRAIGHT, TileKind.START_FINISH)
            idxs = [i for i in idxs if self.track.tiles[i].kind in flat] or idxs
        pts = np.array([self.track.spawn_points[i][0] for i in idxs])
        k = int(np.argmin(((pts - p) ** 2).sum(axis=1)))
        return self.track.spawn_pose(idxs[k])

    # -- input feeds -------------------------------------------------------
    def set_human_input(self, inp: ControlInput):
        self.human = inp.clamped()

    def set_external_command(self, steer_deg: float, velocity_mps: float, mode: int):
        self.external_steer_deg = float(steer_deg)
        self.external_velocity = float(velocity_mps)
        if self.config.mode is not Mode.HUMAN:
            self.ai_mode = 1 if mode else 0

    def set_options(self, updates: dict) -> list[str]:
        """Hot-reload option keys; unknown keys are returned, not applied."""
        unknown = self.options.apply(updates)
        self.params = self.options.vehicle_params()
        self.camera = CameraConfig.with_ratio(
            height_px=120,
            width_ratio=self.options.sampling_camera_width_ratio,
            vertical_fov_deg=self.options.vertical_fov,
        )
        self.control_period = 1.0 / self.options.sampling_rate
        self._substeps_per_tick = max(1, round(self.control_period / PHYSICS_DT))
        return unknown

    # -- control resolution --------------------------------------------------
    def ai_input(self) -> ControlInput:
        if self.config.mode is Mode.HUMAN:
            return NEUTRAL_INPUT
        if self.ai_mode == 1:
            return command_to_input(self.external_steer_deg, self.external_velocity,
                                    self.state, self.params)
        pose = (self.state.x, self.state.y, self.state.heading)
        try:
            return _ap.drive(pose, self.state.speed, self.track, self.config.autopilot)
        except _ap.DegenerateSense:
            return ControlInput(steer_axis=0.0, throttle=0.0, brake=1.0)

    def resolve_control(self) -> ControlInput:
        inp = arbitrate(self.human, self.ai_input())
        if self.config.steering_noise:
            # Additive axis bias held for a stretch, like a driver hugging one
            # side of the lane for a while. Per-tick dither integrates to
            # nothing and leaves off-center states unexplored.
            if self.sim_time >= self._noise_until:
                self._noise_hold = self.config.steering_noise * float(
                    self._noise_rng.uniform(-1.0, 1.0))
                self._noise_until = self.sim_time + float(
                    self._noise_rng.uniform(0.3, 1.0))
            inp = replace(inp, steer_axis=max(-1.0, min(1.0, inp.steer_axis + self._noise_hold)))
        return inp

    # -- the loop body -------------------------------------------------------
    def tick(self, dt: float | None = None) -> "Session":
        inp = self.resolve_control()
        self.applied_input = inp
        n = self._substeps_per_tick if dt is None else max(1, round(dt / PHYSICS_DT))

        contact = False
        for _ in range(n):
            prev = self.state
            s = _dyn.step(prev, inp, self.params, PHYSICS_DT)
            s = _dyn.enforce_colliders(s, prev, self.track, self.params)
            self._substeps += 1
            self.sim_time = self._substeps * PHYSICS_DT
            if s.collided:
                contact = True
                self._last_collision_time = self.sim_time
            crossing = lap_check((prev.x, prev.y), (s.x, s.y), self.track.gate)
            if crossing is LapCrossing.FORWARD:
                self._lap_balance += 1
                if self._lap_balance > self._lap_high_water:
                    self._lap_high_water = self._lap_balance
                    self.score.lap_count += 1
                    self.score.lap_times.append(self.sim_time - self._lap_start)
                    self._lap_start = self.sim_time
            elif crossing is LapCrossing.BACKWARD:
                self._lap_balance -= 1
            self.state = s

        frozen = self.score.disqualified
        if contact and not self._in_contact and not frozen:
            self.score.collision_count += 1
        self._in_contact = contact

        if not frozen:
            pos = np.array([self.state.x, self.state.y])
            for i in np.flatnonzero(
                np.linalg.norm(self._coin_xy - pos, axis=1) <= COIN_RADIUS_M
            ):
                coin = self.track.coins[int(i)]
                if not coin.collected:
                    coin.collected = True
                    self.score.coins_collected += 1
            self.score.score = compute_score(self.score.coins_collected,
                                             self.score.collision_count)
            if self.score.collision_count >= DISQUALIFY_COLLISIONS:
                self.score.disqualified = True

        self.env = EnvState.at(self.config.seed, self.sim_time)
        since = None if self._last_collision_time is None else self.sim_time - self._last_collision_time
        self.gate_open = capture_gate(since, self.score, self.config.capture_enabled)

        if self.writer is not None and self.gate_open and self.writer.due(self.sim_time):
            frame = self.render_camera()
            self.writer.log_sample(
                self.sim_time,
                self.state.speed,
                self.state.steer_deg,
                self.applied_input.throttle - self.applied_input.brake,
                frame.pixels,
            )
        self.seq += 1
        return self

    # -- views ----------------------------------------------------------------
    def render_camera(self) -> np.ndarray:
        pose = (self.state.x, self.state.y, self.state.heading)
        return render(pose, self.camera, self.track, self.env,
                      time=self.sim_time, seq=self.seq)

    def last_lap_s(self) -> float | None:
        return self.score.lap_times[-1] if self.score.lap_times else None

    def effective_mode(self) -> Mode:
        if self.config.mode is Mode.HUMAN:
            return Mode.HUMAN
        return Mode.EXTERNAL_AI if self.ai_mode == 1 else Mode.INGAME_AI

    def done(self) -> bool:
        c = self.config
        if c.duration_s is not None and self.sim_time >= c.duration_s - 1e-9:
            return True
        if c.lap_target is not None and self.score.lap_count >= c.lap_target:
            return True
        return False

    def snapshot_fields(self) -> dict:
        last = self.last_lap_s()
        return {
            "seq": self.seq,
            "x": self.state.x,
            "y": self.state.y,
            "heading_deg": math.degrees(self.state.heading),
            "speed_mps": self.state.speed,
            "steer_deg": self.state.steer_deg,
            "score": self.score.score,
            "laps": self.score.lap_count,
            "last_lap_s": last if last is not None else 0.0,
            "gate_open": self.gate_open,
            "mode": self.effective_mode().value,
            "coins": self.score.coins_collected,
            "collisions": self.score.collision_count,
            "disqualified": self.score.disqualified,
            "steer_axis": self.applied_input.steer_axis,
            "throttle": self.applied_input.throttle,
            "brake": self.applied_input.brake,
            "options": self.options.as_dict(),
        }
