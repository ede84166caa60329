"""Shared 2D geometry helpers: exact quadrant rotations, segment
intersection, raycasting against segment soups, and point/segment
distances. Everything is vectorized over numpy arrays; angles are radians
unless a name says otherwise."""

from __future__ import annotations

import math

import numpy as np

# Integer rotation matrices for the four tile orientations. Using exact
# 0/±1 entries keeps rebuilt track geometry bitwise reproducible.
_QUADRANT_ROT = {
    0: np.array([[1, 0], [0, 1]], dtype=np.float64),
    90: np.array([[0, -1], [1, 0]], dtype=np.float64),
    180: np.array([[-1, 0], [0, -1]], dtype=np.float64),
    270: np.array([[0, 1], [-1, 0]], dtype=np.float64),
}


def quadrant_rot(rotation_deg: int) -> np.ndarray:
    """Exact rotation matrix for rotation_deg in {0, 90, 180, 270}."""
    try:
        return _QUADRANT_ROT[rotation_deg % 360]
    except KeyError:
        raise ValueError(f"rotation must be a multiple of 90, got {rotation_deg}")


def rotate_int_vec(vec: tuple[int, int], rotation_deg: int) -> tuple[int, int]:
    """Rotate an integer direction vector by a quadrant angle, exactly."""
    x, y = vec
    r = rotation_deg % 360
    if r == 0:
        return (x, y)
    if r == 90:
        return (-y, x)
    if r == 180:
        return (-x, -y)
    if r == 270:
        return (y, -x)
    raise ValueError(f"rotation must be a multiple of 90, got {rotation_deg}")


def heading_vec(heading: float) -> np.ndarray:
    return np.array([math.cos(heading), math.sin(heading)])


def ray_segments(origin, direction, segments, max_range: float) -> float:
    """Distance from origin along direction to the nearest segment hit.

    segments is (M, 2, 2): M segments of (start, end) points. Returns
    max_range when nothing is hit within range. direction must be a unit
    vector; the math is plain 2x2 solves, no tolerance fudging beyond
    excluding near-parallel pairs.
    """
    if len(segments) == 0:
        return float(max_range)
    ox, oy = float(origin[0]), float(origin[1])
    dx, dy = float(direction[0]), float(direction[1])
    ax = segments[:, 0, 0]
    ay = segments[:, 0, 1]
    ex = segments[:, 1, 0] - ax
    ey = segments[:, 1, 1] - ay
    # origin + t*d = a + s*e  ->  [d, -e] [t, s]^T = a - o
    denom = dx * ey - dy * ex
    ok = np.abs(denom) > 1e-15
    rx = ax - ox
    ry = ay - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rx * ey - ry * ex) / denom
        s = (rx * dy - ry * dx) / denom
    hit = ok & (t >= 0.0) & (t <= max_range) & (s >= 0.0) & (s <= 1.0)
    if not hit.any():
        return float(max_range)
    return float(t[hit].min())


def rays_hit_segments(origins, directions, segments, max_range: float) -> np.ndarray:
    """Batched ray_segments: origins/directions (K,2) against (M,2,2),
    returning (K,) distances (max_range where clear)."""
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    if len(segments) == 0:
        return np.full(len(o), float(max_range))
    a = segments[:, 0, :]  # (M,2)
    e = segments[:, 1, :] - a
    denom = d[:, 0:1] * e[None, :, 1] - d[:, 1:2] * e[None, :, 0]  # (K,M)
    r = a[None, :, :] - o[:, None, :]  # (K,M,2)
    ok = np.abs(denom) > 1e-15
    safe = np.where(ok, denom, 1.0)
    t = (r[..., 0] * e[None, :, 1] - r[..., 1] * e[None, :, 0]) / safe
    s = (r[..., 0] * d[:, 1:2] - r[..., 1] * d[:, 0:1]) / safe
    hit = ok & (t >= 0.0) & (t <= max_range) & (s >= 0.0) & (s <= 1.0)
    t = np.where(hit, t, max_range)
    return t.min(axis=1)


def motions_first_crossing(p0s, p1s, segments) -> float | None:
    """Earliest crossing parameter in [0,1] over a batch of point motions
    (K,2)->(K,2), or None when every motion is clear."""
    p0s = np.asarray(p0s, dtype=np.float64)
    p1s = np.asarray(p1s, dtype=np.float64)
    d = p1s - p0s
    lengths = np.hypot(d[:, 0], d[:, 1])
    moving = lengths > 0.0
    if not moving.any() or len(segments) == 0:
        return None
    dirs = d[moving] / lengths[moving][:, None]
    t = rays_hit_segments(p0s[moving], dirs, segments, np.inf)
    u = t / lengths[moving]
    u_min = u.min() if len(u) else np.inf
    return float(u_min) if u_min <= 1.0 else None


def motion_hits_segments(p0, p1, segments) -> float | None:
    """First crossing parameter in [0,1] of the motion p0->p1 against a
    segment soup, or None when the motion is clear."""
    d = np.asarray(p1, dtype=np.float64) - np.asarray(p0, dtype=np.float64)
    length = math.hypot(d[0], d[1])
    if length == 0.0 or len(segments) == 0:
        return None
    t = ray_segments(p0, d / length, segments, length)
    if t >= length:
        return None
    return t / length


def point_segments_distance(points, segments) -> np.ndarray:
    """Min distance from each point (N,2) to a segment soup (M,2,2)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    a = segments[:, 0, :]  # (M,2)
    b = segments[:, 1, :]
    ab = b - a
    ab2 = np.einsum("md,md->m", ab, ab)
    ab2 = np.where(ab2 == 0, 1.0, ab2)
    ap = pts[:, None, :] - a[None, :, :]  # (N,M,2)
    t = np.clip(np.einsum("nmd,md->nm", ap, ab) / ab2, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.linalg.norm(pts[:, None, :] - closest, axis=2)
    return d.min(axis=1)


def reflect_points(points, axis_point, axis_dir) -> np.ndarray:
    """Reflect points across the line through axis_point along axis_dir."""
    pts = np.asarray(points, dtype=np.float64)
    p0 = np.asarray(axis_point, dtype=np.float64)
    d = np.asarray(axis_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    rel = pts - p0
    proj = rel @ d
    par = proj[..., None] * d
    perp = rel - par
    return p0 + par - perp


def segments_intersect(p0, p1, a, b) -> bool:
    """True if the closed segments p0-p1 and a-b intersect (non-parallel)."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = p1 - p0
    e = b - a
    denom = d[0] * e[1] - d[1] * e[0]
    if abs(denom) < 1e-15:
        return False
    r = a - p0
    t = (r[0] * e[1] - r[1] * e[0]) / denom
    s = (r[0] * d[1] - r[1] * d[0]) / denom
    return bool(0.0 <= t <= 1.0 and 0.0 <= s <= 1.0)
