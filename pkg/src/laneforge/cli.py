"""laneforge command line: serve a playable session, generate training runs,
drive or evaluate a trained model, train, and batch-preprocess corpora."""

from __future__ import annotations

import argparse
import shutil
import sys
import time
from pathlib import Path

from . import autopilot as _ap
from .bridge import DEFAULT_PORT, external_drive_loop, run_headless, serve
from .datalog import load_runs, mirror_augment
from .dynamics import Options, load_options, steering_limit
from .gamecore import Mode, Session, SessionConfig
from .lanevision import (
    PipelineConfig,
    lighting_robust_config,
    load_pipeline_config,
    preprocess,
    preprocess_dataset,
)
from .steernet import (
    ARCH_SEQUENCE,
    ARCH_SINGLE,
    ModelError,
    TrainConfig,
    evaluate,
    load_model,
    save_model,
    train,
    write_pairs_csv,
)
from .synthcam import read_pgm, write_pgm
from .trackkit import Track, build_track, load_layout, ring_layout

DEFAULT_TRACK = "ring:6x4"


def _load_track(spec: str) -> Track:
    """`ring:CxR` builds a rectangular ring; anything else is a layout file."""
    if spec == "ring":
        spec = DEFAULT_TRACK
    if spec.startswith("ring:"):
        dims = spec[len("ring:"):].lower().split("x")
        if len(dims) != 2:
            raise SystemExit(f"bad ring size {spec!r}, expected ring:CxR")
        return build_track(ring_layout(int(dims[0]), int(dims[1])))
    return build_track(load_layout(spec))


def _load_opts(path: str | None) -> Options | None:
    return load_options(path) if path else None


def _load_pipeline(path: str | None) -> PipelineConfig | None:
    if path is None:
        return lighting_robust_config()
    if path.lower() == "none":
        return None
    return load_pipeline_config(path)


def _autopilot_reference(session: Session) -> float:
    """Oracle steering in degrees for the current pose, for pairs.csv."""
    pose = (session.state.x, session.state.y, session.state.heading)
    try:
        inp = _ap.drive(pose, session.state.speed, session.track,
                        session.config.autopilot)
    except _ap.DegenerateSense:
        return 0.0
    limit = steering_limit(session.params, session.state.speed)
    return inp.steer_axis * limit * session.params.steer_coeff_front


def cmd_play_server(args) -> int:
    cfg = SessionConfig(
        mode=Mode(args.mode),
        track=_load_track(args.track),
        options=_load_opts(args.options),
        spawn_index=args.spawn,
        spawn_heading_deg=args.spawn_heading,
        seed=args.seed,
    )
    session = Session(cfg)
    print(f"serving on ws://{args.host}:{args.port} "
          f"(mode={args.mode}, track={args.track})")
    serve(session, port=args.port, host=args.host, ai_input_path=args.ai_input)
    return 0


def cmd_generate(args) -> int:
    if args.duration is None and args.laps is None:
        args.duration = 600.0
    cfg = SessionConfig(
        mode=Mode(args.mode.replace("-", "_")),
        track=_load_track(args.track),
        options=_load_opts(args.options),
        spawn_index=args.spawn,
        spawn_heading_deg=args.spawn_heading,
        duration_s=args.duration,
        lap_target=args.laps,
        seed=args.seed,
        steering_noise=args.steering_noise,
    )
    source = "ingame_ai_noise" if args.steering_noise else "ingame_ai"
    res = run_headless(cfg, args.out, run_name=args.run_name, source=source)
    print(f"{res.run_dir}: rows={res.rows} laps={res.laps} "
          f"collisions={res.collisions} sim_time={res.sim_time_s:.1f}s")
    return 0


def _drive_session(args) -> Session:
    cfg = SessionConfig(
        mode=Mode.EXTERNAL_AI,
        track=_load_track(args.track),
        options=_load_opts(args.options),
        spawn_index=args.spawn,
        spawn_heading_deg=args.spawn_heading,
        seed=args.seed,
    )
    return Session(cfg)


def _check_arch(model, want_sequence: bool):
    want = ARCH_SEQUENCE if want_sequence else ARCH_SINGLE
    if model.arch != want:
        raise SystemExit(
            f"model is {model.arch}-frame; pass {'--sequence' if not want_sequence else 'no --sequence'}")


def cmd_drive(args) -> int:
    model = load_model(args.model)
    if args.sequence:
        _check_arch(model, True)
    session = _drive_session(args)
    duration = args.duration
    laps = args.laps if (args.laps or duration) else 3
    try:
        stats = external_drive_loop(
            session, model,
            duration_s=duration, lap_target=laps,
            target_velocity=args.velocity,
            pipeline=_load_pipeline(args.pipeline) or lighting_robust_config(),
            ai_input_path=args.ai_input,
        )
    except ModelError as e:
        print(f"model error: {e} (after {e.stats.cycles} cycles)", file=sys.stderr)
        return 1
    print(f"laps={stats.laps} collisions={stats.collisions} "
          f"interventions={stats.interventions} "
          f"median_latency_ms={stats.median_latency_s * 1000:.2f} "
          f"dropped={stats.dropped_periods}/{stats.cycles} "
          f"sim_time={stats.sim_time_s:.1f}s")
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    if args.data:
        ds = load_runs(args.data, image_size=(args.width, args.height),
                       triplets=model.arch == ARCH_SEQUENCE)
        pipeline = _load_pipeline(args.pipeline)
        if pipeline is not None:
            ds = preprocess_dataset(ds, pipeline)
        mse, pairs = evaluate(model, ds)
        write_pairs_csv(args.pairs_out, pairs)
        print(f"open-loop mse={mse:.4f} over {len(pairs)} samples -> {args.pairs_out}")
        return 0
    session = _drive_session(args)
    try:
        stats = external_drive_loop(
            session, model,
            lap_target=args.laps, duration_s=args.max_duration,
            target_velocity=args.velocity,
            pipeline=_load_pipeline(args.pipeline) or lighting_robust_config(),
            reference_fn=_autopilot_reference,
        )
    except ModelError as e:
        print(f"model error: {e} (after {e.stats.cycles} cycles)", file=sys.stderr)
        return 1
    write_pairs_csv(args.pairs_out, stats.pairs)
    print(f"laps={stats.laps}/{args.laps} collisions={stats.collisions} "
          f"interventions={stats.interventions} "
          f"median_latency_ms={stats.median_latency_s * 1000:.2f} "
          f"dropped={stats.dropped_periods}/{stats.cycles} -> {args.pairs_out}")
    return 0 if stats.laps >= args.laps else 1


def cmd_train(args) -> int:
    arch = ARCH_SEQUENCE if args.sequence else ARCH_SINGLE
    ds = load_runs(args.data, image_size=(args.width, args.height),
                   triplets=args.sequence, steer_limit_deg=args.steer_limit)
    pipeline = _load_pipeline(args.pipeline)
    if pipeline is not None:
        ds = preprocess_dataset(ds, pipeline)
    if not args.no_mirror:
        ds = mirror_augment(ds)
    cfg = TrainConfig(
        batch_size=args.batch, learning_rate=args.lr, momentum=args.momentum,
        max_epochs=args.epochs, patience_epochs=args.patience,
        min_delta=args.min_delta, val_fraction=args.val_fraction, seed=args.seed,
    )
    t0 = time.perf_counter()
    model, report = train(ds, arch, cfg)
    save_model(args.out, model)
    print(f"{args.out}: samples={len(ds.samples)} epochs={len(report.train_mse)} "
          f"final_train_mse={report.train_mse[-1]:.4f} "
          f"best_epoch={report.best_epoch} best_val_mse={report.best_val_mse:.4f} "
          f"early_stop={report.stopped_early} wall={time.perf_counter() - t0:.0f}s")
    return 0


def cmd_preprocess(args) -> int:
    src = Path(args.in_dir)
    dst = Path(args.out)
    pipeline = load_pipeline_config(args.config) if args.config else lighting_robust_config()
    frames_in = src / "frames"
    if not frames_in.is_dir():
        raise SystemExit(f"{src}: not a run directory (no frames/)")
    (dst / "frames").mkdir(parents=True, exist_ok=True)
    for name in ("log.csv", "meta.txt"):
        if (src / name).exists():
            shutil.copyfile(src / name, dst / name)
    n = 0
    for pgm in sorted(frames_in.glob("*.pgm")):
        write_pgm(dst / "frames" / pgm.name, preprocess(read_pgm(pgm), pipeline))
        n += 1
    print(f"{dst}: processed {n} frames")
    return 0


def _add_session_args(p, default_track=DEFAULT_TRACK):
    p.add_argument("--track", default=default_track,
                   help="layout file or ring:CxR (default %(default)s)")
    p.add_argument("--options", default=None, help="options file (key=value)")
    p.add_argument("--spawn", type=int, default=None, help="spawn tile index")
    p.add_argument("--spawn-heading", type=float, default=None,
                   help="spawn heading in degrees (default: loop direction)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="laneforge")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("play-server", help="websocket session server")
    _add_session_args(p)
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="human")
    p.add_argument("--ai-input", default=None, help="poll this command file")
    p.set_defaults(func=cmd_play_server)

    p = sub.add_parser("generate", help="headless run generation")
    _add_session_args(p)
    p.add_argument("--mode", choices=["ingame-ai"], default="ingame-ai")
    p.add_argument("--duration", type=float, default=None,
                   help="seconds of sim time (default 600 unless --laps)")
    p.add_argument("--laps", type=int, default=None, help="stop after N laps")
    p.add_argument("--out", required=True, help="parent directory for the run")
    p.add_argument("--steering-noise", type=float, default=0.0,
                   help="steering axis bias amplitude, e.g. 0.1 for +-10%%")
    p.add_argument("--run-name", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("drive", help="closed-loop drive with a trained model")
    _add_session_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--sequence", action="store_true")
    p.add_argument("--laps", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--velocity", type=float, default=1.0)
    p.add_argument("--pipeline", default=None,
                   help="pipeline config file, or 'none' for raw frames")
    p.add_argument("--ai-input", default=None,
                   help="route commands through this file instead of in-process")
    p.set_defaults(func=cmd_drive)

    p = sub.add_parser("evaluate", help="lap evaluation (writes pairs.csv)")
    _add_session_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--laps", type=int, default=3)
    p.add_argument("--max-duration", type=float, default=None)
    p.add_argument("--velocity", type=float, default=1.0)
    p.add_argument("--data", nargs="*", default=None,
                   help="run dirs for open-loop MSE instead of closed-loop laps")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--pipeline", default=None)
    p.add_argument("--pairs-out", default="pairs.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="train a steering model from run dirs")
    p.add_argument("--data", nargs="+", required=True,
                   help="run directories (or parents of run_*)")
    p.add_argument("--sequence", action="store_true")
    p.add_argument("--out", required=True, help="output .model path")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--pipeline", default=None)
    p.add_argument("--no-mirror", action="store_true")
    p.add_argument("--steer-limit", type=float, default=45.0)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--min-delta", type=float, default=0.1)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("preprocess", help="batch-process a run's frames")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="pipeline config file")
    p.set_defaults(func=cmd_preprocess)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
