"""Synthetic forward camera: pinhole projection of the ground plane with
procedural asphalt texture, seeded lighting drift, speckle noise, and a
row-band background above the horizon. Also the orthographic minimap and
binary PGM frame I/O.

Everything here is a pure function of its inputs; identical arguments give
bitwise-identical frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import reflect_points
from .trackkit import SurfaceClass, Track

MARKER_LEVEL = 230
ASPHALT_LEVEL = 40
TEXTURE_AMP = 15
OFFTRACK_LEVEL = 10
BACKGROUND_LO = 5
BACKGROUND_HI = 60

RGB_MARKER = (235, 235, 235)
RGB_ASPHALT = (45, 45, 48)
RGB_OFFTRACK = (12, 10, 10)


@dataclass(frozen=True)
class CameraConfig:
    width_px: int = 160
    height_px: int = 120
    vertical_fov_deg: float = 48.8
    width_ratio: float = 4.0 / 3.0
    mount_height_m: float = 0.12
    mount_forward_m: float = 0.20
    pitch_down_deg: float = 15.0

    def __post_init__(self):
        if self.width_px != round(self.height_px * self.width_ratio):
            raise ValueError("width_px must equal round(height_px * width_ratio)")
        if not 0 < self.vertical_fov_deg < 180:
            raise ValueError("vertical_fov_deg out of range")
        if self.mount_height_m <= 0:
            raise ValueError("mount_height_m must be > 0")

    @classmethod
    def with_ratio(cls, height_px: int = 120, width_ratio: float = 4.0 / 3.0, **kw) -> CameraConfig:
        return cls(
            width_px=round(height_px * width_ratio),
            height_px=height_px,
            width_ratio=width_ratio,
            **kw,
        )

    @property
    def focal_px(self) -> float:
        return (self.height_px / 2.0) / math.tan(math.radians(self.vertical_fov_deg) / 2.0)

    def horizon_row(self) -> float:
        """Row index where rays turn parallel to the ground; rows above it
        never intersect the plane."""
        cy = (self.height_px - 1) / 2.0
        return cy - self.focal_px * math.tan(math.radians(self.pitch_down_deg))


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # (H, W) or (H, W, 3) uint8, row-major
    timestamp: float = 0.0
    seq: int = 0

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class EnvState:
    rng_seed: int
    light_gain: float = 1.0  # [0.5, 1.5]
    speckle_phase: float = 0.0  # [0, 1]

    @classmethod
    def at(cls, seed: int, sim_time: float) -> EnvState:
        """Lighting and speckle drift as slow seeded oscillations; pure in
        (seed, sim_time)."""
        s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        p1 = _hash01(s, np.uint64(1), np.uint64(0x51))
        p2 = _hash01(s, np.uint64(2), np.uint64(0x52))
        gain = 1.0 + 0.5 * math.sin(2.0 * math.pi * (0.05 * sim_time + float(p1)))
        phase = 0.5 + 0.5 * math.sin(2.0 * math.pi * (0.03 * sim_time + float(p2)))
        return cls(rng_seed=seed, light_gain=gain, speckle_phase=phase)


def _hash01(ix, iy, seed):
    """Deterministic integer hash -> [0, 1); vectorized over uint64 arrays.
    Multiplications wrap mod 2^64 on purpose."""
    with np.errstate(over="ignore"):
        h = ix * np.uint64(0x9E3779B97F4A7C15)
        h ^= iy * np.uint64(0xC2B2AE3D27D4EB4F)
        h ^= seed * np.uint64(0xD6E8FEB86659FD93)
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xFF51AFD7ED558CCD)
        h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _texture(points: np.ndarray, seed: int) -> np.ndarray:
    """Asphalt grain in [-1, 1], hashed from 1 cm ground cells."""
    ix = np.floor(points[:, 0] * 100.0).astype(np.int64).astype(np.uint64)
    iy = np.floor(points[:, 1] * 100.0).astype(np.int64).astype(np.uint64)
    return 2.0 * _hash01(ix, iy, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)) - 1.0


def _background_rows(rows: np.ndarray, seed: int) -> np.ndarray:
    """Sky/background value per row: a dark-to-light band with seeded
    per-row jitter, column-independent so horizontal flips commute."""
    span = BACKGROUND_HI - BACKGROUND_LO
    base = BACKGROUND_LO + span * (rows / max(1.0, rows.max() + 1.0))
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    jitter = (_hash01(rows.astype(np.uint64), np.uint64(7), s) - 0.5) * 20.0
    return np.clip(base + jitter, BACKGROUND_LO, BACKGROUND_HI)


def _camera_rays(pose, cam: CameraConfig):
    """World-frame camera origin plus per-pixel ray directions.

    Returns (origin_xy, cam_height, dxy (H,W,2), dz (H,1)): dz has no
    lateral component, so the horizon is an exact image row.
    """
    x, y, heading = pose
    yaw_c, yaw_s = math.cos(heading), math.sin(heading)
    pitch = math.radians(cam.pitch_down_deg)
    pc, ps = math.cos(pitch), math.sin(pitch)
    f = cam.focal_px

    cx = (cam.width_px - 1) / 2.0
    cy = (cam.height_px - 1) / 2.0
    u = (np.arange(cam.width_px) - cx) / f  # right
    v = (cy - np.arange(cam.height_px)) / f  # up

    fwd = np.array([pc * yaw_c, pc * yaw_s, -ps])
    right = np.array([yaw_s, -yaw_c, 0.0])
    up = np.array([ps * yaw_c, ps * yaw_s, pc])

    dz = fwd[2] + v * up[2]  # (H,)
    dxy = (
        fwd[None, None, :2]
        + u[None, :, None] * right[None, None, :2]
        + v[:, None, None] * up[None, None, :2]
    )  # (H, W, 2)
    origin = np.array([x + cam.mount_forward_m * yaw_c, y + cam.mount_forward_m * yaw_s])
    return origin, cam.mount_height_m, dxy, dz[:, None]


def ground_points(pose, cam: CameraConfig):
    """Per-pixel ground-plane intersections.

    Returns (points (H,W,2), ground_mask (H,W), distance (H,W)); distance is
    the planar ray parameter, inf above the horizon.
    """
    origin, height, dxy, dz = _camera_rays(pose, cam)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dz < 0.0, height / -dz, np.inf)  # (H,1)
    mask = np.isfinite(t) & (dz < 0.0)
    t_grid = np.broadcast_to(t, dxy.shape[:2])
    pts = origin[None, None, :] + t_grid[..., None] * dxy
    return pts, np.broadcast_to(mask, dxy.shape[:2]), t_grid


def _classify_ground(pose, cam, track, mirror_axis):
    """Ground-hit sample points (reflected when mirroring) and their surface
    classes; sky pixels never reach the classifier."""
    pts, mask, dist = ground_points(pose, cam)
    ground = mask.ravel()
    sample = pts.reshape(-1, 2)[ground]
    if mirror_axis is not None:
        sample = reflect_points(sample, mirror_axis[0], mirror_axis[1])
    classes = track.classify_points(sample) if len(sample) else np.empty(0, np.uint8)
    return sample, classes, mask, dist


def render(pose, cam: CameraConfig, track: Track, env: EnvState, time: float,
           seq: int = 0, mirror_axis=None) -> Frame:
    """Grayscale forward frame.

    mirror_axis, when given as (point, direction), renders the world
    reflected across that line: sample points are reflected before surface
    and texture lookup, which is exactly a laterally mirrored scene.
    """
    sample, g_classes, mask, _ = _classify_ground(pose, cam, track, mirror_axis)
    h, w = mask.shape

    img = np.empty((h, w), dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    img[:] = _background_rows(rows, env.rng_seed)[:, None]

    vals = np.full(len(sample), float(OFFTRACK_LEVEL))
    vals[g_classes == int(SurfaceClass.MARKER)] = float(MARKER_LEVEL)
    asphalt = g_classes == int(SurfaceClass.ASPHALT)
    if asphalt.any():
        tex = _texture(sample[asphalt], env.rng_seed)
        vals[asphalt] = ASPHALT_LEVEL + TEXTURE_AMP * tex
    img.ravel()[np.flatnonzero(mask.ravel())] = vals

    img *= env.light_gain
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    frame = Frame(pixels=pixels, timestamp=time, seq=seq)
    if env.speckle_phase > 0.0:
        frame = speckle(frame, env)
    return frame


def render_rgb(pose, cam: CameraConfig, track: Track, env: EnvState, time: float,
               seq: int = 0) -> Frame:
    """Three-channel variant with near-white markers over tinted asphalt,
    for pipelines that key on hue/saturation/lightness."""
    sample, g_classes, mask, _ = _classify_ground(pose, cam, track, None)
    h, w = mask.shape

    img = np.empty((h, w, 3), dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    img[:] = _background_rows(rows, env.rng_seed)[:, None, None]

    vals = np.empty((len(sample), 3))
    vals[:] = RGB_OFFTRACK
    vals[g_classes == int(SurfaceClass.MARKER)] = RGB_MARKER
    asphalt = g_classes == int(SurfaceClass.ASPHALT)
    if asphalt.any():
        tex = _texture(sample[asphalt], env.rng_seed)
        vals[asphalt] = np.array(RGB_ASPHALT)[None, :] + TEXTURE_AMP * tex[:, None]
    img.reshape(-1, 3)[np.flatnonzero(mask.ravel())] = vals

    img *= env.light_gain
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    frame = Frame(pixels=pixels, timestamp=time, seq=seq)
    if env.speckle_phase > 0.0:
        frame = speckle(frame, env)
    return frame


def speckle(frame: Frame, env: EnvState) -> Frame:
    """Raise a seeded fraction (up to 2% at phase 1) of pixels toward 255
    by |N(0, 40)| amounts. phase 0 is a no-op."""
    f = 0.02 * float(np.clip(env.speckle_phase, 0.0, 1.0))
    if f <= 0.0:
        return frame
    rng = np.random.default_rng(
        [env.rng_seed & 0xFFFFFFFF, frame.seq & 0xFFFFFFFF, int(env.speckle_phase * 1e6)]
    )
    pix = frame.pixels.astype(np.float64)
    hit = rng.random(pix.shape[:2]) < f
    amount = np.abs(rng.normal(0.0, 40.0, size=pix.shape[:2]))
    if pix.ndim == 3:
        pix[hit] = np.clip(pix[hit] + amount[hit][:, None], 0, 255)
    else:
        pix[hit] = np.clip(pix[hit] + amount[hit], 0, 255)
    return Frame(pixels=np.rint(pix).astype(np.uint8), timestamp=frame.timestamp, seq=frame.seq)


def render_minimap(track: Track, pose, size_px: int) -> Frame:
    """Top-down orthographic view: marker polylines, uncollected coins, and
    a vehicle arrow, uniformly scaled to the track bounding box."""
    if size_px <= 0:
        raise ValueError("size_px must be > 0")
    img = np.zeros((size_px, size_px), dtype=np.uint8)
    x0, y0, x1, y1 = track.bounds()
    margin = 2.0
    scale = (size_px - 2 * margin) / max(x1 - x0, y1 - y0, 1e-9)

    def to_px(pts):
        pts = np.asarray(pts, dtype=np.float64)
        c = margin + (pts[..., 0] - x0) * scale
        r = size_px - 1 - (margin + (pts[..., 1] - y0) * scale)
        return r, c

    def plot(pts, value):
        r, c = to_px(pts)
        rr = np.clip(np.rint(r).astype(int), 0, size_px - 1)
        cc = np.clip(np.rint(c).astype(int), 0, size_px - 1)
        img[rr, cc] = np.maximum(img[rr, cc], value)

    for line in track.marker_polylines():
        seg = np.diff(line, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        for i in range(len(seg)):
            n = max(2, int(lengths[i] * scale * 2))
            ts = np.linspace(0.0, 1.0, n)
            plot(line[i] + ts[:, None] * seg[i], 170)

    for coin in track.coins:
        if not coin.collected:
            plot(coin.point[None, :], 220)

    if pose is not None:
        x, y, heading = pose
        ts = np.linspace(-0.06, 0.10, 9)
        pts = np.stack(
            [x + ts * math.cos(heading), y + ts * math.sin(heading)], axis=1
        )
        plot(pts, 255)

    return Frame(pixels=img)


# ---------------------------------------------------------------------------
# PGM I/O (binary P5, maxval 255) and resizing


def pgm_bytes(pixels: np.ndarray) -> bytes:
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("PGM wants a 2D uint8 array")
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def write_pgm(path, pixels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(pgm_bytes(pixels))


def parse_pgm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    pix = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if pix.size != w * h:
        raise ValueError("truncated PGM body")
    return pix.reshape(h, w).copy()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_pgm(f.read())


def frame_filename(seq: int) -> str:
    return f"frame_{seq:08d}.pgm"


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resize of a 2D image, uint8 in/out."""
    h, w = img.shape
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :]
    fy = (ys - y0)[:, None]
    p = img.astype(np.float64)
    a = p[np.ix_(y0, x0)] * (1 - fx) * (1 - fy)
    b = p[np.ix_(y0, x1)] * fx * (1 - fy)
    c = p[np.ix_(y1, x0)] * (1 - fx) * fy
    d = p[np.ix_(y1, x1)] * fx * fy
    return np.clip(np.rint(a + b + c + d), 0, 255).astype(np.uint8)
