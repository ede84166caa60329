"""Control-source bridging: the AI.input file protocol, the closed-loop
external-model driver, headless batch generation, and the websocket session
server.

The file protocol and the in-process call path share the command layout
(steer_deg, velocity, mode) and are exercised by the same loop so closed-loop
behavior matches between them.
"""

from __future__ import annotations

import asyncio
import json
import math
import os
import statistics
import time
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datalog import IoFailure, RunWriter
from .dynamics import ControlInput
from .gamecore import (
    HUMAN_DEADZONE,
    Mode,
    Session,
    SessionConfig,
    arbitrate,
    command_to_input,
)
from .lanevision import PipelineConfig, lighting_robust_config, preprocess
from .steernet import ARCH_SEQUENCE, ModelError, SteerModel, slew_limit
from .synthcam import pgm_bytes, render_minimap, resize_bilinear

__all__ = [
    "AiCommand", "NEUTRAL_COMMAND", "NoFile", "PortBusy",
    "write_ai_input", "read_ai_input", "AiInputReader", "arbitrate",
    "DriveStats", "external_drive_loop", "HeadlessResult", "run_headless",
    "serve",
]

AI_INPUT_NAME = "AI.input"


class NoFile(Exception):
    pass


class PortBusy(Exception):
    pass


@dataclass(frozen=True)
class AiCommand:
    steer_deg: float
    velocity: float
    mode: int  # 0 = in-game AI, 1 = external

    def __post_init__(self):
        if self.mode not in (0, 1):
            raise ValueError(f"mode must be 0 or 1, got {self.mode}")
        if not (math.isfinite(self.steer_deg) and math.isfinite(self.velocity)):
            raise ValueError("command values must be finite")


NEUTRAL_COMMAND = AiCommand(0.0, 0.0, 0)


def format_ai_input(cmd: AiCommand) -> str:
    return f"{cmd.steer_deg!r},{cmd.velocity!r},{cmd.mode}\n"


def parse_ai_input(text: str) -> AiCommand:
    parts = text.strip().split(",")
    if len(parts) != 3:
        raise ValueError(f"expected 3 fields, got {len(parts)}")
    return AiCommand(float(parts[0]), float(parts[1]), int(parts[2]))


def write_ai_input(path, cmd: AiCommand):
    """Write-temp-then-rename so a concurrent reader never sees a torn
    line."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="ascii", newline="") as f:
            f.write(format_ai_input(cmd))
        os.replace(tmp, path)
    except OSError as e:
        raise IoFailure(str(e))


def read_ai_input(path, last_good: AiCommand = NEUTRAL_COMMAND) -> AiCommand:
    """Parse the command file. Unparseable content returns last_good with a
    warning; a missing file returns the neutral command with a warning."""
    try:
        text = Path(path).read_text(encoding="ascii")
    except FileNotFoundError:
        warnings.warn(f"{path}: no command file, using neutral command")
        return NEUTRAL_COMMAND
    try:
        return parse_ai_input(text)
    except ValueError as e:
        warnings.warn(f"{path}: unparseable command ({e}), keeping last good")
        return last_good


class AiInputReader:
    """Stateful wrapper applying the fallback rules across polls."""

    def __init__(self, path):
        self.path = Path(path)
        self.last = NEUTRAL_COMMAND

    def read(self) -> AiCommand:
        self.last = read_ai_input(self.path, self.last)
        return self.last


# ---------------------------------------------------------------------------
# external-model closed loop


@dataclass
class DriveStats:
    cycles: int = 0
    commands_written: int = 0
    latencies_s: list[float] = field(default_factory=list)
    dropped_periods: int = 0
    stale_ticks: int = 0
    skipped_stale_frames: int = 0
    interventions: int = 0
    human_override_ticks: int = 0
    laps: int = 0
    collisions: int = 0
    sim_time_s: float = 0.0
    pairs: list[tuple[float, float]] = field(default_factory=list)

    @property
    def median_latency_s(self) -> float:
        return statistics.median(self.latencies_s) if self.latencies_s else 0.0

    @property
    def dropped_fraction(self) -> float:
        return self.dropped_periods / self.cycles if self.cycles else 0.0


def _model_frames(model: SteerModel, history: deque) -> np.ndarray:
    if model.arch == ARCH_SEQUENCE:
        frames = list(history)
        while len(frames) < 3:
            frames.insert(0, frames[0])
        return np.stack(frames[-3:])
    return history[-1]


def external_drive_loop(session: Session, model: SteerModel,
                        cadence_hz: float | None = None,
                        duration_s: float | None = None,
                        lap_target: int | None = None,
                        target_velocity: float = 1.0,
                        slew_rate_deg_s: float = 360.0,
                        pipeline: PipelineConfig | None = None,
                        ai_input_path=None,
                        reference_fn=None,
                        unstick_after_s: float | None = 1.5) -> DriveStats:
    """Drive the session closed-loop: latest frame -> preprocess -> model ->
    slew limit -> command. With ai_input_path the command goes through the
    file protocol; otherwise it is set in-process. Latency is measured from
    frame pixels ready to command written. reference_fn(session) -> deg, when
    given, records (reference, commanded) pairs for offline comparison.

    A vehicle that stays pinned (no speed despite a forward command) for
    unstick_after_s is lifted back to the nearest tile-center pose; each
    recovery counts as one intervention."""
    if session.config.mode is not Mode.EXTERNAL_AI:
        raise ValueError("session must be in external-AI mode")
    pipeline = pipeline or lighting_robust_config()
    period = 1.0 / cadence_hz if cadence_hz else session.control_period
    h, w = model.input_shape[-2], model.input_shape[-1]
    history: deque = deque(maxlen=3)
    reader = AiInputReader(ai_input_path) if ai_input_path else None
    stats = DriveStats()
    prev_cmd = 0.0
    last_seen_seq = -1
    last_cmd_seq = 0
    was_overriding = False
    stuck_ticks = 0
    stuck_limit = (max(1, round(unstick_after_s / session.control_period))
                   if unstick_after_s else None)
    end_time = session.sim_time + duration_s if duration_s is not None else None
    end_laps = session.score.lap_count + lap_target if lap_target is not None else None
    collisions0 = session.score.collision_count

    while True:
        if end_time is not None and session.sim_time >= end_time - 1e-9:
            break
        if end_laps is not None and session.score.lap_count >= end_laps:
            break
        if end_time is None and end_laps is None and session.done():
            break
        stats.cycles += 1

        if session.seq != last_seen_seq:
            last_seen_seq = session.seq
            t0 = time.perf_counter()
            raw = session.render_camera().pixels
            small = resize_bilinear(raw, w, h)
            history.append(preprocess(small, pipeline))
            try:
                pred = float(model.predict(_model_frames(model, history)))
            except ModelError as e:
                e.stats = stats
                raise
            cmd_deg = slew_limit(prev_cmd, pred, slew_rate_deg_s, period)
            prev_cmd = cmd_deg
            cmd = AiCommand(cmd_deg, target_velocity, 1)
            if reader is not None:
                write_ai_input(reader.path, cmd)
                got = reader.read()
                session.set_external_command(got.steer_deg, got.velocity, got.mode)
            else:
                session.set_external_command(cmd.steer_deg, cmd.velocity, cmd.mode)
            lat = time.perf_counter() - t0
            stats.latencies_s.append(lat)
            stats.commands_written += 1
            last_cmd_seq = session.seq
            if lat > period:
                stats.dropped_periods += 1
            if reference_fn is not None:
                stats.pairs.append((float(reference_fn(session)), cmd_deg))
        else:
            # stale frame: leave the previous command untouched
            stats.skipped_stale_frames += 1

        if session.seq - last_cmd_seq > 2:
            stats.stale_ticks += 1

        overriding = max(abs(session.human.steer_axis), abs(session.human.throttle),
                         abs(session.human.brake)) > HUMAN_DEADZONE
        if overriding:
            stats.human_override_ticks += 1
            if not was_overriding:
                stats.interventions += 1
        was_overriding = overriding

        session.tick()

        if stuck_limit is not None:
            pinned = session.state.speed < 0.02 and target_velocity > 0.1
            stuck_ticks = stuck_ticks + 1 if pinned else 0
            if stuck_ticks >= stuck_limit:
                session.place(*session.nearest_spawn(straight_only=True))
                history.clear()
                prev_cmd = 0.0
                stats.interventions += 1
                stuck_ticks = 0

    stats.laps = session.score.lap_count
    stats.collisions = session.score.collision_count - collisions0
    stats.sim_time_s = session.sim_time
    return stats


# ---------------------------------------------------------------------------
# headless generation


@dataclass
class HeadlessResult:
    run_dir: Path
    rows: int
    frames: int
    laps: int
    collisions: int
    sim_time_s: float
    recoveries: int = 0


def run_headless(config: SessionConfig, out_root, run_name: str | None = None,
                 source: str = "ingame_ai",
                 unstick_after_s: float | None = 1.5) -> HeadlessResult:
    """Full-speed loop without UI, logging through the run writer. Output
    bytes are a pure function of (config, seed). A vehicle pinned against a
    collider (noisy runs can do that) is lifted back to the nearest straight
    tile center so the rest of the run still yields data; the pinned rows are
    zero-speed and fall to the filter anyway."""
    if config.mode is not Mode.INGAME_AI:
        raise ValueError("headless generation requires in-game AI mode")
    config.validate_headless()
    options = config.resolved_options()
    writer = RunWriter(out_root, rate_hz=options.sampling_rate, options=options,
                       seed=config.seed, source=source, run_name=run_name)
    recoveries = 0
    try:
        session = Session(config, writer=writer)
        stuck_ticks = 0
        stuck_limit = (max(1, round(unstick_after_s / session.control_period))
                       if unstick_after_s else None)
        while not session.done():
            session.tick()
            if stuck_limit is None:
                continue
            pinned = (session.state.speed < 0.02
                      and session.applied_input.throttle > 0.1)
            stuck_ticks = stuck_ticks + 1 if pinned else 0
            if stuck_ticks >= stuck_limit:
                session.place(*session.nearest_spawn(straight_only=True))
                recoveries += 1
                stuck_ticks = 0
    finally:
        writer.close()
    return HeadlessResult(
        run_dir=writer.run_dir,
        rows=writer.rows,
        frames=writer.rows,
        laps=session.score.lap_count,
        collisions=session.score.collision_count,
        sim_time_s=session.sim_time,
        recoveries=recoveries,
    )


# ---------------------------------------------------------------------------
# websocket server

KIND_PREVIEW = 1
KIND_MINIMAP = 2
PREVIEW_HEIGHT = 60
MINIMAP_PX = 120
DEFAULT_PORT = 8700


def _binary_frame(kind: int, seq: int, payload: bytes) -> bytes:
    return bytes([kind]) + (seq & 0xFFFFFFFF).to_bytes(4, "little") + payload


async def _serve_async(session: Session, port: int, host: str,
                       ai_input_path, stop_after_s: float | None):
    try:
        import websockets
    except ImportError as e:
        raise RuntimeError("websockets package required for serve()") from e

    clients: list = []
    reader = AiInputReader(ai_input_path) if ai_input_path else None

    async def handler(ws):
        clients.append(ws)
        try:
            async for msg in ws:
                if isinstance(msg, (bytes, bytearray)):
                    continue
                try:
                    data = json.loads(msg)
                except json.JSONDecodeError:
                    await ws.send(json.dumps({"type": "warning", "error": "bad json"}))
                    continue
                kind = data.get("type")
                if kind == "input":
                    if clients and ws is clients[0]:  # driver seat only
                        session.set_human_input(ControlInput(
                            steer_axis=float(data.get("steer", 0.0)),
                            throttle=float(data.get("throttle", 0.0)),
                            brake=float(data.get("brake", 0.0)),
                        ))
                elif kind == "options":
                    unknown = session.set_options(data.get("set", {}))
                    if unknown:
                        await ws.send(json.dumps(
                            {"type": "warning", "unknown_options": unknown}))
                elif kind == "session":
                    cmd = data.get("cmd")
                    if cmd == "reset":
                        session.reset()
                    elif cmd == "mode":
                        session.config.mode = Mode(data.get("mode", "human"))
                        session.ai_mode = 1 if session.config.mode is Mode.EXTERNAL_AI else 0
                else:
                    await ws.send(json.dumps({"type": "warning",
                                              "error": f"unknown type {kind!r}"}))
        finally:
            if ws in clients:
                clients.remove(ws)

    async def ticker():
        from .synthcam import CameraConfig, render

        preview_cam = CameraConfig.with_ratio(
            height_px=PREVIEW_HEIGHT,
            width_ratio=session.options.sampling_camera_width_ratio,
            vertical_fov_deg=session.options.vertical_fov,
        )
        loop = asyncio.get_running_loop()
        t_next = loop.time()
        t_end = loop.time() + stop_after_s if stop_after_s is not None else None
        while t_end is None or loop.time() < t_end:
            if reader is not None and session.config.mode is not Mode.HUMAN:
                got = reader.read()
                session.set_external_command(got.steer_deg, got.velocity, got.mode)
            session.tick()
            if clients:
                snap = json.dumps({"type": "snapshot", **session.snapshot_fields()})
                pose = (session.state.x, session.state.y, session.state.heading)
                preview = render(pose, preview_cam, session.track, session.env,
                                 time=session.sim_time, seq=session.seq).pixels
                minimap = render_minimap(session.track, pose, MINIMAP_PX).pixels
                frames = [
                    snap,
                    _binary_frame(KIND_PREVIEW, session.seq, pgm_bytes(preview)),
                    _binary_frame(KIND_MINIMAP, session.seq, pgm_bytes(minimap)),
                ]
                dead = []
                for c in list(clients):
                    try:
                        for fr in frames:
                            await c.send(fr)
                    except Exception:
                        dead.append(c)
                for c in dead:
                    if c in clients:
                        clients.remove(c)
            t_next += session.control_period
            await asyncio.sleep(max(0.0, t_next - loop.time()))

    try:
        server = await websockets.serve(handler, host, port, max_size=2**22)
    except OSError as e:
        raise PortBusy(f"port {port} unavailable: {e}")
    task = asyncio.create_task(ticker())
    try:
        await task
    finally:
        task.cancel()
        server.close()
        await server.wait_closed()


def serve(session: Session, port: int = DEFAULT_PORT, host: str = "127.0.0.1",
          ai_input_path=None, stop_after_s: float | None = None):
    """Blocking websocket session server; see the wire protocol notes in the
    package docs. First client drives, later clients spectate."""
    asyncio.run(_serve_async(session, port, host, ai_input_path, stop_after_s))
