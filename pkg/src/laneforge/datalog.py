"""Sampled CSV + frame export, run-directory loading, row filtering, and
mirror augmentation.

A run directory holds `log.csv` (header below), `frames/frame_{seq:08d}.pgm`,
and `meta.txt` (seed, source, options snapshot). Floats are written with
repr() so a write/parse round trip reproduces identical values.
"""

from __future__ import annotations

import math
import queue
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Options
from .synthcam import frame_filename, read_pgm, resize_bilinear, write_pgm

CSV_HEADER = "timestamp_ms,speed_mps,steer_deg,throttle,frame_file"


class MalformedRow(Exception):
    def __init__(self, index: int, reason: str):
        super().__init__(f"row {index}: {reason}")
        self.index = index


class IoFailure(Exception):
    pass


@dataclass(frozen=True)
class Sample:
    timestamp_ms: int
    speed_mps: float
    steer_deg: float
    throttle: float  # [-1, 1]; negative means braking/reverse
    frame_file: str


def format_row(s: Sample) -> str:
    return f"{s.timestamp_ms},{s.speed_mps!r},{s.steer_deg!r},{s.throttle!r},{s.frame_file}"


def parse_row(line: str, index: int) -> Sample:
    parts = line.split(",")
    if len(parts) != 5:
        raise MalformedRow(index, f"expected 5 fields, got {len(parts)}")
    try:
        return Sample(
            timestamp_ms=int(parts[0]),
            speed_mps=float(parts[1]),
            steer_deg=float(parts[2]),
            throttle=float(parts[3]),
            frame_file=parts[4],
        )
    except ValueError as e:
        raise MalformedRow(index, str(e))


def parse_log(text: str):
    """-> (samples, malformed_row_indices). Bad rows are skipped, counted,
    and warned about; the header line is required."""
    lines = text.splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise MalformedRow(0, "missing or wrong header")
    samples = []
    malformed = []
    for i, line in enumerate(lines[1:], start=1):
        if not line:
            continue
        try:
            samples.append(parse_row(line, i))
        except MalformedRow:
            malformed.append(i)
    if malformed:
        warnings.warn(f"skipped {len(malformed)} malformed log rows: {malformed[:10]}")
    return samples, malformed


def read_log(path):
    with open(path, "r", encoding="ascii") as f:
        return parse_log(f.read())


def filter_rows(rows: list[Sample], steer_limit_deg: float = 45.0) -> list[Sample]:
    """Keep moving, non-braking, in-limit rows; order preserved. Idempotent."""
    return [
        r
        for r in rows
        if r.speed_mps > 0.0 and r.throttle >= 0.0 and abs(r.steer_deg) <= steer_limit_deg
    ]


# ---------------------------------------------------------------------------
# run directories


class RunWriter:
    """Owns one run directory and rate-limits sampling to one row per
    period. Callers feed it every tick while capture is allowed; missed
    periods (capture gate closed) are skipped, never back-filled."""

    def __init__(self, root, rate_hz: float, options: Options | None = None,
                 seed: int = 0, source: str = "ingame_ai", run_name: str | None = None):
        if rate_hz <= 0:
            raise ValueError("rate_hz must be > 0")
        if run_name is not None:
            self.run_dir = Path(root) / run_name
        else:
            self.run_dir = Path(root) / f"run_{time.strftime('%Y%m%d_%H%M%S')}"
        self.frames_dir = self.run_dir / "frames"
        self.frames_dir.mkdir(parents=True)
        self.period = 1.0 / rate_hz
        self._slot = 0  # next unserved sampling slot; slot k is due at k*period
        self.rows = 0
        self.dropped = 0
        opts = options or Options()
        meta = f"seed={seed}\nsource={source}\nrate_hz={rate_hz!r}\n" + opts.format()
        (self.run_dir / "meta.txt").write_text(meta, encoding="ascii")
        self._csv = open(self.run_dir / "log.csv", "w", encoding="ascii", newline="")
        self._csv.write(CSV_HEADER + "\n")

    def due(self, sim_time: float) -> bool:
        return sim_time + 1e-9 >= self._slot * self.period

    def log_sample(self, sim_time: float, speed_mps: float, steer_deg: float,
                   throttle: float, pixels: np.ndarray) -> Sample | None:
        """Write one row+frame if a sampling period is due, else no-op."""
        if not self.due(sim_time):
            return None
        # claim the latest elapsed slot; periods that passed unserved (gate
        # closed) are skipped, never back-filled
        self._slot = math.floor(sim_time / self.period + 1e-9) + 1
        name = frame_filename(self.rows)
        try:
            write_pgm(self.frames_dir / name, pixels)
            sample = Sample(
                timestamp_ms=round(sim_time * 1000.0),
                speed_mps=float(speed_mps),
                steer_deg=float(steer_deg),
                throttle=float(throttle),
                frame_file=name,
            )
            self._csv.write(format_row(sample) + "\n")
        except OSError as e:
            raise IoFailure(str(e))
        self.rows += 1
        return sample

    def close(self):
        self._csv.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class QueuedWriter:
    """Bounded handoff to a writer thread for live sessions: the sim loop
    never blocks on disk; overflow drops the newest event and counts it."""

    def __init__(self, writer: RunWriter, maxsize: int = 64):
        self.writer = writer
        self.dropped = 0
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def due(self, sim_time: float) -> bool:
        return self.writer.due(sim_time)

    def log_sample(self, sim_time, speed_mps, steer_deg, throttle, pixels):
        if not self.writer.due(sim_time):
            return None
        try:
            self._q.put_nowait((sim_time, speed_mps, steer_deg, throttle, pixels))
        except queue.Full:
            self.dropped += 1
        return None

    def _drain(self):
        while True:
            item = self._q.get()
            if item is None:
                return
            try:
                self.writer.log_sample(*item)
            except IoFailure as e:
                warnings.warn(f"logging stopped: {e}")
                return

    def close(self):
        self._q.put(None)
        self._thread.join(timeout=5.0)
        self.writer.close()

    @property
    def run_dir(self):
        return self.writer.run_dir

    @property
    def rows(self):
        return self.writer.rows


def read_meta(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """samples: list of (frame, steer_deg) or ((f0,f1,f2), steer_deg);
    frames are uint8 arrays sharing one shape."""

    samples: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)


def _flip(frames):
    if isinstance(frames, tuple):
        return tuple(np.fliplr(f) for f in frames)
    return np.fliplr(frames)


def mirror_augment(ds: Dataset) -> Dataset:
    """Every sample plus its horizontal mirror with negated steering;
    exactly doubles the count and zeroes the mean steer by pairing."""
    mirrored = [(_flip(f), -a) for f, a in ds.samples]
    meta = dict(ds.meta)
    meta["mirrored"] = True
    return Dataset(samples=list(ds.samples) + mirrored, meta=meta)


def triplet_indices(timestamps_ms: list[int], max_gap_ms: float) -> list[tuple[int, int, int]]:
    """Index triples (i-2, i-1, i) whose consecutive gaps both stay within
    max_gap_ms; larger gaps (filtered rows, closed capture gate) break runs."""
    out = []
    for i in range(2, len(timestamps_ms)):
        g1 = timestamps_ms[i - 1] - timestamps_ms[i - 2]
        g2 = timestamps_ms[i] - timestamps_ms[i - 1]
        if 0 <= g1 <= max_gap_ms and 0 <= g2 <= max_gap_ms:
            out.append((i - 2, i - 1, i))
    return out


def make_triplets(rows: list[Sample], max_gap_ms: float = 50.0) -> list[tuple[Sample, Sample, Sample]]:
    idx = triplet_indices([r.timestamp_ms for r in rows], max_gap_ms)
    return [(rows[a], rows[b], rows[c]) for a, b, c in idx]


def load_run(run_dir, image_size: tuple[int, int] | None = None,
             triplets: bool = False, steer_limit_deg: float = 45.0,
             max_gap_ms: float = 50.0) -> Dataset:
    """Read one run directory into memory: parse, filter, load frames,
    optionally downsample to image_size=(w, h) and group into triplets."""
    run_dir = Path(run_dir)
    rows, _ = read_log(run_dir / "log.csv")
    rows = filter_rows(rows, steer_limit_deg)
    frames = {}
    for r in rows:
        if r.frame_file not in frames:
            img = read_pgm(run_dir / "frames" / r.frame_file)
            if image_size is not None:
                img = resize_bilinear(img, image_size[0], image_size[1])
            frames[r.frame_file] = img
    meta = read_meta(run_dir / "meta.txt") if (run_dir / "meta.txt").exists() else {}
    meta["run_dir"] = str(run_dir)
    if triplets:
        trip = make_triplets(rows, max_gap_ms)
        samples = [
            ((frames[a.frame_file], frames[b.frame_file], frames[c.frame_file]), c.steer_deg)
            for a, b, c in trip
        ]
    else:
        samples = [(frames[r.frame_file], r.steer_deg) for r in rows]
    return Dataset(samples=samples, meta=meta)


def load_runs(run_dirs, **kw) -> Dataset:
    """Concatenate several runs (or a directory whose children are runs;
    anything holding a log.csv counts)."""
    if isinstance(run_dirs, (str, Path)):
        run_dirs = [run_dirs]
    dirs = []
    for d in run_dirs:
        d = Path(d)
        if (d / "log.csv").exists():
            dirs.append(d)
        elif d.is_dir():
            dirs.extend(sorted(p for p in d.iterdir()
                               if p.is_dir() and (p / "log.csv").exists()))
    if not dirs:
        raise FileNotFoundError("no run directories found")
    parts = [load_run(d, **kw) for d in dirs]
    samples = [s for p in parts for s in p.samples]
    meta = {"sources": [p.meta.get("source", "?") for p in parts], "runs": len(parts)}
    return Dataset(samples=samples, meta=meta)
