"""Lane-marker image pipeline.

Fourteen composable stages; the default configuration chains the four that
earn their keep on the synthetic camera: HSL conversion, white/yellow
masking, Gaussian blur, and the polygonal region-of-interest mask. Lens
correction and the perspective transform exist but default to identity and
stay out of the default chain.

All stages are pure. The default chain is exactly mirror-equivariant when
the ROI polygon is left-right symmetric; blur uses paired summation and the
ROI test runs in centered pixel coordinates to keep that bitwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np


class BadKernel(Exception):
    pass


class BadThresholds(Exception):
    pass


class BadStage(Exception):
    pass


STAGE_NAMES = (
    "lens_correct",
    "perspective",
    "rgb_to_hsl",
    "gaussian_blur",
    "mask_white_yellow",
    "grayscale",
    "canny",
    "roi_mask",
    "hough_lines",
    "slope_filter",
    "group_by_slope",
    "fit_lane_lines",
    "draw_lane_lines",
    "blend_lines",
)

DEFAULT_STAGES = ("rgb_to_hsl", "mask_white_yellow", "gaussian_blur", "roi_mask")

# x coordinates are dyadic so a mirrored polygon is bit-exact
DEFAULT_ROI = ((0.125, 0.40), (0.875, 0.40), (1.0, 1.0), (0.0, 1.0))

IDENTITY_CORNERS = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[str, ...] = DEFAULT_STAGES
    white_l_min: float = 0.75
    yellow_h_min: float = 40.0
    yellow_h_max: float = 65.0
    yellow_s_min: float = 0.5
    yellow_l_min: float = 0.3
    blur_ksize: int = 5
    blur_sigma: float = 1.5
    roi_polygon: tuple[tuple[float, float], ...] = DEFAULT_ROI
    canny_low: float = 50.0
    canny_high: float = 150.0
    hough_rho: float = 1.0
    hough_theta_deg: float = 1.0
    hough_threshold: int = 20
    hough_min_len: float = 10.0
    hough_max_gap: float = 4.0
    slope_min: float = 0.3
    slope_max: float = 5.0
    lens_k1: float = 0.0
    persp_src: tuple[tuple[float, float], ...] = IDENTITY_CORNERS
    blend_alpha: float = 0.8

    def __post_init__(self):
        for s in self.stages:
            if s not in STAGE_NAMES:
                raise BadStage(f"unknown stage {s!r}")
        if len(self.roi_polygon) < 3:
            raise ValueError("roi_polygon needs at least 3 vertices")
        if not self.canny_low < self.canny_high:
            raise BadThresholds("canny_low must be < canny_high")


class Side(Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class LineSeg:
    """Detected segment in pixel coordinates (y grows downward)."""

    x1: float
    y1: float
    x2: float
    y2: float
    slope: float
    side: Side


def line_seg(x1, y1, x2, y2) -> LineSeg:
    dx = x2 - x1
    if dx == 0.0:
        dx = 1e-9  # vertical guard keeps slope finite
    slope = (y2 - y1) / dx
    return LineSeg(float(x1), float(y1), float(x2), float(y2), float(slope),
                   Side.LEFT if slope < 0 else Side.RIGHT)


@dataclass(frozen=True)
class LaneFit:
    """y = slope * x + intercept, pixel coordinates."""

    slope: float
    intercept: float


# ---------------------------------------------------------------------------
# color


def rgb_to_hsl(rgb: np.ndarray) -> np.ndarray:
    """(H,W,3) uint8 -> float64 planes stacked (H,W,3) as (hue deg in
    [0,360), saturation [0,1], lightness [0,1]). Grayscale input is treated
    as desaturated color."""
    arr = np.asarray(rgb)
    if arr.ndim == 2:
        l = arr.astype(np.float64) / 255.0
        out = np.zeros(arr.shape + (3,), dtype=np.float64)
        out[..., 2] = l
        return out
    c = arr.astype(np.float64) / 255.0
    cmax = c.max(axis=2)
    cmin = c.min(axis=2)
    delta = cmax - cmin
    l = (cmax + cmin) / 2.0

    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(delta == 0.0, 0.0, delta / (1.0 - np.abs(2.0 * l - 1.0)))
        r, g, b = c[..., 0], c[..., 1], c[..., 2]
        h = np.select(
            [cmax == r, cmax == g],
            [((g - b) / delta) % 6.0, (b - r) / delta + 2.0],
            default=(r - g) / delta + 4.0,
        )
    h = np.where(delta == 0.0, 0.0, h * 60.0) % 360.0
    s = np.clip(np.nan_to_num(s), 0.0, 1.0)
    return np.stack([h, s, l], axis=2)


def mask_white_yellow(hsl: np.ndarray, config: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """Binary keep-mask: bright pixels, or saturated yellows that are not
    too dark. 255 inside, 0 outside."""
    h, s, l = hsl[..., 0], hsl[..., 1], hsl[..., 2]
    white = l >= config.white_l_min
    yellow = (
        (h >= config.yellow_h_min)
        & (h <= config.yellow_h_max)
        & (s >= config.yellow_s_min)
        & (l >= config.yellow_l_min)
    )
    return np.where(white | yellow, 255, 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# blur


def gaussian_kernel(ksize: int, sigma: float) -> np.ndarray:
    if ksize < 3 or ksize % 2 == 0:
        raise BadKernel(f"ksize must be odd and >= 3, got {ksize}")
    if sigma <= 0:
        raise BadKernel(f"sigma must be > 0, got {sigma}")
    x = np.arange(ksize, dtype=np.float64) - (ksize - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """One separable pass with edge-repeating reflect padding. Symmetric
    taps are added in (left+right) pairs so mirroring the input mirrors the
    output bit-for-bit."""
    r = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    x = np.pad(img, pad, mode="symmetric")
    n = img.shape[axis]

    def take(off):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(off, off + n)
        return x[tuple(sl)]

    out = kernel[r] * take(r)
    for k in range(1, r + 1):
        out += kernel[r + k] * (take(r - k) + take(r + k))
    return out


def gaussian_blur(frame: np.ndarray, sigma: float, ksize: int) -> np.ndarray:
    """Separable Gaussian, kernel normalized to sum 1, reflect padding.
    uint8 in -> uint8 out (rounded); float in -> float out."""
    kernel = gaussian_kernel(ksize, sigma)
    arr = np.asarray(frame)
    work = arr.astype(np.float64)
    work = _blur_axis(work, kernel, axis=1)
    work = _blur_axis(work, kernel, axis=0)
    if arr.dtype == np.uint8:
        return np.clip(np.rint(work), 0, 255).astype(np.uint8)
    return work.astype(arr.dtype)


# ---------------------------------------------------------------------------
# region of interest


def _roi_inside(h: int, w: int, polygon) -> np.ndarray:
    """Even-odd fill over pixel centers, evaluated in centered coordinates
    so that mirrored polygons classify mirrored pixels identically."""
    cx, cy = w / 2.0, h / 2.0
    px = (np.arange(w, dtype=np.float64) + 0.5) - cx  # (W,)
    py = (np.arange(h, dtype=np.float64) + 0.5) - cy  # (H,)
    verts = [(v[0] * w - cx, v[1] * h - cy) for v in polygon]
    inside = np.zeros((h, w), dtype=bool)
    m = len(verts)
    for i in range(m):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % m]
        rows = (y1 > py) != (y2 > py)
        if not rows.any():
            continue
        t = (py[rows] - y1) / (y2 - y1)
        xint = x1 + (x2 - x1) * t  # (R,)
        inside[rows] ^= px[None, :] < xint[:, None]
    return inside


def roi_mask(frame: np.ndarray, polygon) -> np.ndarray:
    """Zero everything outside the normalized-coordinate polygon."""
    arr = np.asarray(frame)
    inside = _roi_inside(arr.shape[0], arr.shape[1], polygon)
    if arr.ndim == 3:
        inside = inside[:, :, None]
    return np.where(inside, arr, 0).astype(arr.dtype)


# ---------------------------------------------------------------------------
# edges


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _conv3(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    x = np.pad(img, 1, mode="symmetric")
    out = np.zeros_like(img, dtype=np.float64)
    h, w = img.shape
    for dy in range(3):
        for dx in range(3):
            if k[dy, dx] != 0.0:
                out += k[dy, dx] * x[dy : dy + h, dx : dx + w]
    return out


def sobel_gradients(frame: np.ndarray):
    img = np.asarray(frame, dtype=np.float64)
    gx = _conv3(img, _SOBEL_X)
    gy = _conv3(img, _SOBEL_Y)
    return gx, gy


def canny(frame: np.ndarray, low: float, high: float) -> np.ndarray:
    """Sobel gradients, 4-bin non-maximum suppression, double-threshold
    hysteresis with 8-connected propagation. Returns {0,255} uint8."""
    if not low < high:
        raise BadThresholds(f"low must be < high, got ({low}, {high})")
    gx, gy = sobel_gradients(frame)
    mag = np.hypot(gx, gy)

    # quantize gradient direction to 0/45/90/135 degrees
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = ((ang + 22.5) // 45.0).astype(np.int64) % 4

    padded = np.pad(mag, 1, mode="constant")
    h, w = mag.shape

    def shifted(dy, dx):
        return padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    # neighbor offsets along the gradient per bin: 0deg -> horizontal pair,
    # 45deg -> down-right/up-left, 90deg -> vertical, 135deg -> down-left/up-right
    pairs = {0: ((0, 1), (0, -1)), 1: ((1, 1), (-1, -1)),
             2: ((1, 0), (-1, 0)), 3: ((1, -1), (-1, 1))}
    keep = np.zeros((h, w), dtype=bool)
    for b, (d1, d2) in pairs.items():
        sel = bins == b
        keep |= sel & (mag >= shifted(*d1)) & (mag >= shifted(*d2))
    nms = np.where(keep, mag, 0.0)

    weak = nms >= low
    strong = nms >= high
    cur = strong.copy()
    while True:
        p = np.pad(cur, 1, mode="constant")
        grown = np.zeros_like(cur)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                grown |= p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        nxt = cur | (grown & weak)
        if (nxt == cur).all():
            break
        cur = nxt
    return np.where(cur, 255, 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# lines


def hough_lines(edges: np.ndarray, config: PipelineConfig = PipelineConfig()) -> list[LineSeg]:
    """rho-theta accumulator over edge pixels; 3x3 accumulator peaks at or
    above the vote threshold are walked along their supporting pixels and
    split at gaps, keeping runs of at least the minimum length."""
    if config.hough_rho <= 0 or config.hough_theta_deg <= 0:
        raise ValueError("hough resolutions must be > 0")
    ys, xs = np.nonzero(np.asarray(edges))
    if len(xs) == 0:
        return []
    h, w = np.asarray(edges).shape
    diag = math.hypot(h, w)
    thetas = np.deg2rad(np.arange(0.0, 180.0, config.hough_theta_deg))
    n_rho = int(math.ceil(2.0 * diag / config.hough_rho)) + 1
    cos_t, sin_t = np.cos(thetas), np.sin(thetas)

    rho = xs[:, None] * cos_t[None, :] + ys[:, None] * sin_t[None, :]
    ridx = np.rint((rho + diag) / config.hough_rho).astype(np.int64)
    acc = np.zeros((n_rho, len(thetas)), dtype=np.int64)
    np.add.at(acc, (ridx.ravel(), np.tile(np.arange(len(thetas)), len(xs))), 1)

    # peak = cell >= its 3x3 neighborhood and >= threshold
    p = np.pad(acc, 1, mode="constant")
    neigh = np.stack([
        p[1 + dy : 1 + dy + n_rho, 1 + dx : 1 + dx + len(thetas)]
        for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)
    ]).max(axis=0)
    peaks = np.argwhere((acc >= config.hough_threshold) & (acc >= neigh))

    segs: list[LineSeg] = []
    used = np.zeros(len(xs), dtype=bool)  # emitted support is consumed once
    order = np.argsort(-acc[peaks[:, 0], peaks[:, 1]], kind="stable")
    for ri, ti in peaks[order]:
        rho_v = ri * config.hough_rho - diag
        c, s = cos_t[ti], sin_t[ti]
        sel = np.flatnonzero(
            (np.abs(xs * c + ys * s - rho_v) <= 0.5 * config.hough_rho) & ~used)
        if len(sel) < 2:
            continue
        sx, sy = xs[sel], ys[sel]
        t = -sx * s + sy * c  # position along the line direction
        order_t = np.argsort(t, kind="stable")
        t, sx, sy, sel = t[order_t], sx[order_t], sy[order_t], sel[order_t]
        run = 0
        for i in range(1, len(t) + 1):
            if i < len(t) and t[i] - t[i - 1] <= config.hough_max_gap:
                continue
            if t[i - 1] - t[run] >= config.hough_min_len:
                segs.append(line_seg(sx[run], sy[run], sx[i - 1], sy[i - 1]))
                used[sel[run:i]] = True
            run = i
    return segs


def fit_lane_lines(segments, slope_range: tuple[float, float] = (0.3, 5.0)):
    """Slope-filter, split left/right by slope sign, then least-squares a
    line through each group's segment endpoints. -> (left, right), each a
    LaneFit or None."""
    lo, hi = slope_range
    kept = [s for s in segments if lo <= abs(s.slope) <= hi]

    def fit(group):
        if not group:
            return None
        xs = np.array([v for s in group for v in (s.x1, s.x2)])
        ys = np.array([v for s in group for v in (s.y1, s.y2)])
        if np.ptp(xs) == 0.0:
            return None
        slope, intercept = np.polyfit(xs, ys, 1)
        return LaneFit(float(slope), float(intercept))

    left = fit([s for s in kept if s.side is Side.LEFT])
    right = fit([s for s in kept if s.side is Side.RIGHT])
    return left, right


def draw_lane_fits(fits, shape, value: int = 255) -> np.ndarray:
    """Rasterize fitted lines into a fresh grayscale frame (1 px per row)."""
    h, w = shape[:2]
    img = np.zeros((h, w), dtype=np.uint8)
    for f in fits:
        if f is None or f.slope == 0.0:
            continue
        ys = np.arange(h, dtype=np.float64) + 0.5
        xs = (ys - f.intercept) / f.slope
        ok = (xs >= 0) & (xs <= w - 1)
        img[np.arange(h)[ok], np.rint(xs[ok]).astype(np.int64)] = value
    return img


def blend(base: np.ndarray, overlay: np.ndarray, alpha: float = 0.8) -> np.ndarray:
    """Additive blend of a line image over a base frame, clipped to uint8."""
    b = np.asarray(base, dtype=np.float64)
    o = np.asarray(overlay, dtype=np.float64)
    if b.ndim == 3 and o.ndim == 2:
        o = o[:, :, None]
    return np.clip(b + alpha * o, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# geometric correction (identity-defaulted, outside the default chain)


def _sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float pixel coords; outside the frame reads 0."""
    h, w = img.shape[:2]
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None] if img.ndim == 3 else x - x0
    fy = (y - y0)[..., None] if img.ndim == 3 else y - y0
    v = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )
    if img.ndim == 3:
        v = np.where(valid[..., None], v, 0.0)
    else:
        v = np.where(valid, v, 0.0)
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def lens_correct(frame: np.ndarray, k1: float) -> np.ndarray:
    """Single-coefficient radial undistortion about the frame center; k1=0
    is the identity."""
    arr = np.asarray(frame)
    if k1 == 0.0:
        return arr.copy()
    h, w = arr.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    scale = math.hypot(cx, cy)
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    nx, ny = (gx - cx) / scale, (gy - cy) / scale
    r2 = nx * nx + ny * ny
    f = 1.0 + k1 * r2
    return _sample_bilinear(arr, cx + nx * f * scale, cy + ny * f * scale)


def _homography(src, dst) -> np.ndarray:
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    m = np.linalg.solve(np.array(a, dtype=np.float64), np.array(b, dtype=np.float64))
    return np.append(m, 1.0).reshape(3, 3)


def perspective_transform(frame: np.ndarray, src_corners) -> np.ndarray:
    """Warp the quad src_corners (normalized, clockwise from top-left) onto
    the full frame; unit-square corners are the identity."""
    arr = np.asarray(frame)
    if tuple(map(tuple, src_corners)) == IDENTITY_CORNERS:
        return arr.copy()
    h, w = arr.shape[:2]
    src = [(x * (w - 1), y * (h - 1)) for x, y in src_corners]
    dst = [(0, 0), (w - 1, 0), (w - 1, h - 1), (0, h - 1)]
    hm = _homography(dst, src)  # output pixel -> source pixel
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    d = hm[2, 0] * gx + hm[2, 1] * gy + hm[2, 2]
    xs = (hm[0, 0] * gx + hm[0, 1] * gy + hm[0, 2]) / d
    ys = (hm[1, 0] * gx + hm[1, 1] * gy + hm[1, 2]) / d
    return _sample_bilinear(arr, xs, ys)


def grayscale(frame: np.ndarray) -> np.ndarray:
    """Rec.601 luma for color frames; grayscale passes through."""
    arr = np.asarray(frame)
    if arr.ndim == 2:
        return arr.copy()
    w = np.array([0.299, 0.587, 0.114])
    return np.clip(np.rint(arr.astype(np.float64) @ w), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# composition


class _State:
    def __init__(self, frame):
        self.image = np.asarray(frame)
        self.hsl = None
        self.segments: list[LineSeg] = []
        self.fits = (None, None)


def _st_lens(st, cfg):
    st.image = lens_correct(st.image, cfg.lens_k1)


def _st_persp(st, cfg):
    st.image = perspective_transform(st.image, cfg.persp_src)


def _st_hsl(st, cfg):
    st.hsl = rgb_to_hsl(st.image)


def _st_blur(st, cfg):
    st.image = gaussian_blur(st.image, cfg.blur_sigma, cfg.blur_ksize)
    st.hsl = None  # stale after reshading


def _st_mask(st, cfg):
    hsl = st.hsl if st.hsl is not None else rgb_to_hsl(st.image)
    st.image = mask_white_yellow(hsl, cfg)
    st.hsl = None


def _st_gray(st, cfg):
    st.image = grayscale(st.image)


def _st_canny(st, cfg):
    st.image = canny(grayscale(st.image), cfg.canny_low, cfg.canny_high)


def _st_roi(st, cfg):
    st.image = roi_mask(st.image, cfg.roi_polygon)


def _st_hough(st, cfg):
    st.segments = hough_lines(grayscale(st.image), cfg)


def _st_slope_filter(st, cfg):
    st.segments = [s for s in st.segments if cfg.slope_min <= abs(s.slope) <= cfg.slope_max]


def _st_group(st, cfg):
    st.segments = sorted(st.segments, key=lambda s: s.side.value)


def _st_fit(st, cfg):
    st.fits = fit_lane_lines(st.segments, (cfg.slope_min, cfg.slope_max))


def _st_draw(st, cfg):
    st.image = draw_lane_fits(st.fits, st.image.shape)


def _st_blend(st, cfg):
    st.image = blend(st.image, draw_lane_fits(st.fits, st.image.shape), cfg.blend_alpha)


STAGES = {
    "lens_correct": _st_lens,
    "perspective": _st_persp,
    "rgb_to_hsl": _st_hsl,
    "gaussian_blur": _st_blur,
    "mask_white_yellow": _st_mask,
    "grayscale": _st_gray,
    "canny": _st_canny,
    "roi_mask": _st_roi,
    "hough_lines": _st_hough,
    "slope_filter": _st_slope_filter,
    "group_by_slope": _st_group,
    "fit_lane_lines": _st_fit,
    "draw_lane_lines": _st_draw,
    "blend_lines": _st_blend,
}


def run_pipeline(frame: np.ndarray, config: PipelineConfig = PipelineConfig()) -> _State:
    st = _State(frame)
    for name in config.stages:
        STAGES[name](st, config)
    return st


def preprocess(frame: np.ndarray, config: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """Run the configured stage chain; the default produces the blurred
    binary ROI-masked grayscale model input, dimensions preserved."""
    return run_pipeline(frame, config).image


def lighting_robust_config() -> PipelineConfig:
    """Stage parameters tuned for the simulator's lighting sweep (gain 0.5
    to 1.5): the white threshold sits between the dimmest marker
    (230 x 0.5) and the brightest non-marker surface (60 x 1.5), so the
    mask never goes blank at the dark end of the sweep."""
    return PipelineConfig(white_l_min=0.40)


def preprocess_dataset(dataset, config: PipelineConfig | None = None):
    """Map the stage chain over every frame of a training dataset, keeping
    labels and triplet grouping."""
    from .datalog import Dataset

    config = config or PipelineConfig()
    samples = []
    for frames, steer in dataset.samples:
        if isinstance(frames, tuple):
            samples.append((tuple(preprocess(f, config) for f in frames), steer))
        else:
            samples.append((preprocess(frames, config), steer))
    meta = dict(dataset.meta)
    meta["preprocessed"] = True
    return Dataset(samples=samples, meta=meta)


# ---------------------------------------------------------------------------
# config files


def _fmt_points(points) -> str:
    return ",".join(f"{x!r}:{y!r}" for x, y in points)


def _parse_points(text: str):
    pts = []
    for chunk in text.split(","):
        x, y = chunk.split(":")
        pts.append((float(x), float(y)))
    return tuple(pts)


def format_pipeline_config(cfg: PipelineConfig) -> str:
    lines = [
        f"stages={','.join(cfg.stages)}",
        f"white_l_min={cfg.white_l_min!r}",
        f"yellow_h_min={cfg.yellow_h_min!r}",
        f"yellow_h_max={cfg.yellow_h_max!r}",
        f"yellow_s_min={cfg.yellow_s_min!r}",
        f"yellow_l_min={cfg.yellow_l_min!r}",
        f"blur_ksize={cfg.blur_ksize}",
        f"blur_sigma={cfg.blur_sigma!r}",
        f"roi_polygon={_fmt_points(cfg.roi_polygon)}",
        f"canny_low={cfg.canny_low!r}",
        f"canny_high={cfg.canny_high!r}",
        f"hough_rho={cfg.hough_rho!r}",
        f"hough_theta_deg={cfg.hough_theta_deg!r}",
        f"hough_threshold={cfg.hough_threshold}",
        f"hough_min_len={cfg.hough_min_len!r}",
        f"hough_max_gap={cfg.hough_max_gap!r}",
        f"slope_min={cfg.slope_min!r}",
        f"slope_max={cfg.slope_max!r}",
        f"lens_k1={cfg.lens_k1!r}",
        f"persp_src={_fmt_points(cfg.persp_src)}",
        f"blend_alpha={cfg.blend_alpha!r}",
    ]
    return "\n".join(lines) + "\n"


def parse_pipeline_config(text: str) -> PipelineConfig:
    cfg = PipelineConfig()
    updates = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            warnings.warn(f"ignoring malformed pipeline config line: {raw!r}")
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if key == "stages":
            updates[key] = tuple(s.strip() for s in val.split(",") if s.strip())
        elif key in ("roi_polygon", "persp_src"):
            updates[key] = _parse_points(val)
        elif key in ("blur_ksize", "hough_threshold"):
            updates[key] = int(val)
        elif key in PipelineConfig.__dataclass_fields__:
            updates[key] = float(val)
        else:
            warnings.warn(f"unknown pipeline config key: {key}")
    return replace(cfg, **updates)


def load_pipeline_config(path) -> PipelineConfig:
    return parse_pipeline_config(Path(path).read_text(encoding="ascii"))


def save_pipeline_config(path, cfg: PipelineConfig):
    Path(path).write_text(format_pipeline_config(cfg), encoding="ascii")
