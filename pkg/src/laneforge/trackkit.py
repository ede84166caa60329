"""Modular tile tracks: monomer geometry, closed-loop assembly, surface
classification, collider raycasts, and spawn poses.

World frame: x east, y north, meters. A tile at grid cell (col, row)
occupies [col*S, (col+1)*S] x [row*S, (row+1)*S] with S the tile size; its
local frame is centered on the cell with rotation a multiple of 90 deg.
Canonical (unrotated) tiles run west->east, turns run west->south.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import point_segments_distance, quadrant_rot, ray_segments, rotate_int_vec


class TrackError(Exception):
    pass


class DuplicateCell(TrackError):
    pass


class OpenLoop(TrackError):
    pass


class NoStartFinish(TrackError):
    pass


class BadIndex(TrackError):
    pass


class TileKind(enum.Enum):
    STRAIGHT = "straight"
    SWEEP_TURN = "sweep_turn"
    HARD_TURN = "hard_turn"
    LANE_CHANGE_NARROW = "lane_change_narrow"
    LANE_CHANGE_WIDE = "lane_change_wide"
    START_FINISH = "start_finish"


class SurfaceClass(enum.IntEnum):
    MARKER = 0
    ASPHALT = 1
    OFF_TRACK = 2


# Edge outward normals as integer vectors.
_EDGES = {"W": (-1, 0), "E": (1, 0), "N": (0, 1), "S": (0, -1)}

# Canonical (rotation 0) port edges per kind, ordered (path start, path end).
_PORTS = {
    TileKind.STRAIGHT: ("W", "E"),
    TileKind.START_FINISH: ("W", "E"),
    TileKind.LANE_CHANGE_NARROW: ("W", "E"),
    TileKind.LANE_CHANGE_WIDE: ("W", "E"),
    TileKind.SWEEP_TURN: ("W", "S"),
    TileKind.HARD_TURN: ("W", "S"),
}


@dataclass(frozen=True)
class Tile:
    kind: TileKind
    col: int
    row: int
    rotation: int = 0

    def __post_init__(self):
        if self.rotation not in (0, 90, 180, 270):
            raise TrackError(f"rotation must be 0/90/180/270, got {self.rotation}")


@dataclass(frozen=True)
class TrackParams:
    tile_size_m: float = 0.61
    lane_width_m: float = 0.45  # distance between marker centerlines
    marker_width_m: float = 0.025
    collider_inset_m: float = 0.02
    lane_change_amp_m: float = 0.06  # narrow lane-change sideways bump
    wide_lane_width_m: float = 0.58  # widest point of the wide lane change
    hard_turn_cue_len_m: float = 0.07  # 45-degree tape cues at the inner corner
    hard_turn_cue_gap_m: float = 0.05
    arc_points: int = 25  # collider discretization per quarter arc


@dataclass
class Coin:
    point: np.ndarray
    collected: bool = False


@dataclass(frozen=True)
class Gate:
    p0: np.ndarray
    p1: np.ndarray
    forward: np.ndarray  # unit vector, loop direction through the gate


def _smooth_bump(u):
    # 0 at both ends with zero slope, 1 at the middle
    return np.sin(np.pi * u) ** 2


class _TileGeom:
    """Per-tile world-frame geometry and classification."""

    def __init__(self, tile: Tile, params: TrackParams):
        self.tile = tile
        self.params = params
        s = params.tile_size_m
        self.center = np.array([(tile.col + 0.5) * s, (tile.row + 0.5) * s])
        self.rot = quadrant_rot(tile.rotation)
        self.inv_rot = self.rot.T
        self.port_edges = tuple(
            rotate_int_vec(_EDGES[e], tile.rotation) for e in _PORTS[tile.kind]
        )
        # Traversal orientation, fixed by Track during loop walk:
        # True when the loop enters through the canonical path-start port.
        self.forward = True

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.center) @ self.inv_rot.T

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rot.T + self.center

    def dir_to_world(self, d: np.ndarray) -> np.ndarray:
        return d @ self.rot.T

    # -- lateral profile of the straight-family kinds ------------------
    def _center_offset(self, u):
        k = self.tile.kind
        if k is TileKind.LANE_CHANGE_NARROW:
            return self.params.lane_change_amp_m * _smooth_bump(u)
        return np.zeros_like(u)

    def _half_width(self, u):
        k = self.tile.kind
        lw = self.params.lane_width_m
        if k is TileKind.LANE_CHANGE_WIDE:
            extra = (self.params.wide_lane_width_m - lw) / 2.0
            return lw / 2.0 + extra * _smooth_bump(u)
        return np.full_like(u, lw / 2.0)

    def classify_local(self, pts: np.ndarray) -> np.ndarray:
        """SurfaceClass codes for local-frame points inside this cell."""
        p = self.params
        s = p.tile_size_m
        mh = p.marker_width_m / 2.0
        k = self.tile.kind
        x, y = pts[:, 0], pts[:, 1]
        out = np.full(len(pts), int(SurfaceClass.OFF_TRACK), dtype=np.uint8)

        if k is TileKind.SWEEP_TURN:
            corner = np.array([-s / 2.0, -s / 2.0])
            r = np.hypot(x - corner[0], y - corner[1])
            lat = r - s / 2.0
            hw = p.lane_width_m / 2.0
            marker = np.abs(np.abs(lat) - hw) <= mh
            asphalt = np.abs(lat) <= hw
            out[asphalt] = int(SurfaceClass.ASPHALT)
            out[marker] = int(SurfaceClass.MARKER)
            return out

        if k is TileKind.HARD_TURN:
            hw = p.lane_width_m / 2.0
            in_h = (x <= hw) & (np.abs(y) <= hw)
            in_v = (y <= hw) & (np.abs(x) <= hw)
            out[in_h | in_v] = int(SurfaceClass.ASPHALT)
            d = point_segments_distance(pts, self._hard_turn_marker_segments())
            out[d <= mh] = int(SurfaceClass.MARKER)
            return out

        # straight family
        u = (x + s / 2.0) / s
        lat = y - self._center_offset(u)
        hw = self._half_width(u)
        asphalt = np.abs(lat) <= hw
        band = np.abs(np.abs(lat) - hw) <= mh
        if k is TileKind.LANE_CHANGE_WIDE:
            left = lat > 0
            present = np.where(left, u <= 0.5, u >= 0.5)
            band = band & present
        out[asphalt] = int(SurfaceClass.ASPHALT)
        out[band] = int(SurfaceClass.MARKER)
        return out

    def _hard_turn_marker_segments(self) -> np.ndarray:
        p = self.params
        s2 = p.tile_size_m / 2.0
        hw = p.lane_width_m / 2.0
        c = p.hard_turn_cue_len_m
        g = p.hard_turn_cue_gap_m
        segs = [
            [(-s2, hw), (hw, hw)],
            [(hw, hw), (hw, -s2)],
            [(-s2, -hw), (-hw, -hw)],
            [(-hw, -hw), (-hw, -s2)],
            # the two angled tape cues at the inner corner
            [(-hw, -hw + c), (-hw + c, -hw)],
            [(-hw, -hw + c + g), (-hw + c + g, -hw)],
        ]
        return np.array(segs, dtype=np.float64)

    # -- colliders ------------------------------------------------------
    def collider_chains_local(self) -> list[np.ndarray]:
        p = self.params
        s2 = p.tile_size_m / 2.0
        inset = p.collider_inset_m
        k = self.tile.kind

        if k is TileKind.SWEEP_TURN:
            corner = np.array([-s2, -s2])
            chains = []
            for radius in (s2 - p.lane_width_m / 2.0 + inset, s2 + p.lane_width_m / 2.0 - inset):
                ang = np.linspace(np.pi / 2.0, 0.0, p.arc_points)
                pts = corner + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
                chains.append(pts)
            return chains

        if k is TileKind.HARD_TURN:
            hw = p.lane_width_m / 2.0
            outer = hw - inset
            inner = hw - inset
            return [
                np.array([(-s2, outer), (outer, outer), (outer, -s2)]),
                np.array([(-s2, -inner), (-inner, -inner), (-inner, -s2)]),
            ]

        if k in (TileKind.STRAIGHT, TileKind.START_FINISH):
            off = p.lane_width_m / 2.0 - inset
            return [
                np.array([(-s2, off), (s2, off)]),
                np.array([(-s2, -off), (s2, -off)]),
            ]

        # lane changes: sampled offset polylines
        u = np.linspace(0.0, 1.0, 33)
        x = -s2 + u * p.tile_size_m
        c = self._center_offset(u)
        hw = self._half_width(u) - inset
        return [
            np.stack([x, c + hw], axis=1),
            np.stack([x, c - hw], axis=1),
        ]

    # -- centerline path (canonical direction) ---------------------------
    def centerline(self, t):
        """Local point on the lane centerline at canonical parameter t."""
        t = np.asarray(t, dtype=np.float64)
        p = self.params
        s2 = p.tile_size_m / 2.0
        k = self.tile.kind
        if k is TileKind.SWEEP_TURN:
            phi = (1.0 - t) * (np.pi / 2.0)
            corner = np.array([-s2, -s2])
            return corner + s2 * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        if k is TileKind.HARD_TURN:
            x = np.where(t < 0.5, -s2 + t * p.tile_size_m, 0.0)
            y = np.where(t < 0.5, 0.0, -(t - 0.5) * p.tile_size_m)
            return np.stack([x, y], axis=-1)
        x = -s2 + t * p.tile_size_m
        u = (x + s2) / p.tile_size_m
        return np.stack([x, self._center_offset(u)], axis=-1)

    def tangent(self, t: float) -> np.ndarray:
        p = self.params
        k = self.tile.kind
        if k is TileKind.SWEEP_TURN:
            phi = (1.0 - t) * (np.pi / 2.0)
            v = np.array([np.sin(phi), -np.cos(phi)])
        elif k is TileKind.HARD_TURN:
            v = np.array([1.0, 0.0]) if t < 0.5 else np.array([0.0, -1.0])
        elif k is TileKind.LANE_CHANGE_NARROW:
            u = t
            slope = (
                self.params.lane_change_amp_m
                * 2.0
                * np.sin(np.pi * u)
                * np.cos(np.pi * u)
                * np.pi
                / p.tile_size_m
            )
            v = np.array([1.0, slope])
        else:
            v = np.array([1.0, 0.0])
        return v / np.linalg.norm(v)


class Track:
    """Immutable track assembled from tiles (coin flags are owned by the
    game session). Safe for concurrent reads."""

    def __init__(self, tiles: list[Tile], params: TrackParams):
        self.params = params
        self.tiles = list(tiles)
        self.geoms = [_TileGeom(t, params) for t in self.tiles]
        self._grid: dict[tuple[int, int], int] = {}
        for i, t in enumerate(self.tiles):
            key = (t.col, t.row)
            if key in self._grid:
                raise DuplicateCell(f"two tiles share grid cell {key}")
            self._grid[key] = i

        self._validate_loop()
        self._build_colliders()
        self._build_gate()
        self.coins = [
            Coin(point=g.to_world(g.centerline(0.5))) for g in self.geoms
        ]
        self.spawn_points = [
            (np.array(g.center), self._loop_heading(i)) for i, g in enumerate(self.geoms)
        ]

    # -- assembly checks -------------------------------------------------
    def _validate_loop(self):
        sf = [i for i, t in enumerate(self.tiles) if t.kind is TileKind.START_FINISH]
        if len(sf) != 1:
            raise NoStartFinish(f"track needs exactly one start/finish tile, found {len(sf)}")
        self.start_index = sf[0]

        # every port must face a matching neighbor port
        for i, (tile, geom) in enumerate(zip(self.tiles, self.geoms)):
            for edge in geom.port_edges:
                ncell = (tile.col + edge[0], tile.row + edge[1])
                j = self._grid.get(ncell)
                back = (-edge[0], -edge[1])
                if j is None or back not in self.geoms[j].port_edges:
                    raise OpenLoop(
                        f"tile at ({tile.col},{tile.row}) has an unmatched port toward {ncell}"
                    )

        # walk the loop from start/finish, leaving through its path-end port
        order = []
        idx = self.start_index
        exit_edge = self.geoms[idx].port_edges[1]
        while True:
            geom = self.geoms[idx]
            entry = tuple(-e for e in exit_edge) if order else None
            if order:
                # entered through entry; leave through the other port
                ports = list(geom.port_edges)
                if entry not in ports:
                    raise OpenLoop("loop walk hit a tile without a facing port")
                exit_edge = ports[1] if ports[0] == entry else ports[0]
                geom.forward = ports[0] == entry
            order.append(idx)
            tile = self.tiles[idx]
            nxt = self._grid[(tile.col + exit_edge[0], tile.row + exit_edge[1])]
            if nxt == self.start_index:
                break
            idx = nxt
            if len(order) > len(self.tiles):
                raise OpenLoop("loop walk did not close")
        if len(order) != len(self.tiles):
            raise OpenLoop(
                f"ports close into a loop of {len(order)} tiles but track has {len(self.tiles)}"
            )
        self.loop_order = order

    def _build_colliders(self):
        segs = []
        for geom in self.geoms:
            for chain in geom.collider_chains_local():
                world = geom.to_world(chain)
                segs.append(np.stack([world[:-1], world[1:]], axis=1))
        self.colliders = np.concatenate(segs, axis=0)

        # spatial bucket per grid cell (3x3 neighborhood) so the per-step
        # footprint check only touches nearby segments
        s = self.params.tile_size_m
        lo = np.floor(self.colliders.min(axis=1) / s).astype(np.int64)
        hi = np.floor(self.colliders.max(axis=1) / s).astype(np.int64)
        by_cell: dict[tuple[int, int], list[int]] = {}
        for i in range(len(self.colliders)):
            for c in range(lo[i, 0], hi[i, 0] + 1):
                for r in range(lo[i, 1], hi[i, 1] + 1):
                    by_cell.setdefault((c, r), []).append(i)
        self._cell_colliders: dict[tuple[int, int], np.ndarray] = {}
        for (c, r) in self._grid:
            idx: set[int] = set()
            for dc in (-1, 0, 1):
                for dr in (-1, 0, 1):
                    idx.update(by_cell.get((c + dc, r + dr), ()))
            self._cell_colliders[(c, r)] = self.colliders[sorted(idx)]

    def colliders_near(self, point) -> np.ndarray:
        """Collider segments within one tile of the given point's cell;
        falls back to the full set off the grid."""
        s = self.params.tile_size_m
        cell = (int(math.floor(point[0] / s)), int(math.floor(point[1] / s)))
        return self._cell_colliders.get(cell, self.colliders)

    def _build_gate(self):
        # gate sits on the start tile's entry edge so a vehicle spawned at
        # the tile center must complete a full circuit before crossing it
        geom = self.geoms[self.start_index]
        hw = self.params.lane_width_m / 2.0
        x = -self.params.tile_size_m / 2.0
        p0 = geom.to_world(np.array([x, -hw]))
        p1 = geom.to_world(np.array([x, hw]))
        forward = geom.dir_to_world(np.array([1.0, 0.0]))
        self.gate = Gate(p0=p0, p1=p1, forward=forward)

    def _loop_heading(self, i: int) -> float:
        geom = self.geoms[i]
        tan = geom.dir_to_world(geom.tangent(0.5))
        if not geom.forward:
            tan = -tan
        return math.atan2(tan[1], tan[0])

    # -- queries ----------------------------------------------------------
    def classify_points(self, points: np.ndarray) -> np.ndarray:
        """Vectorized sample_surface over (N,2) points."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        s = self.params.tile_size_m
        col = np.floor(pts[:, 0] / s).astype(np.int64)
        row = np.floor(pts[:, 1] / s).astype(np.int64)
        out = np.full(len(pts), int(SurfaceClass.OFF_TRACK), dtype=np.uint8)
        for (c, r), i in self._grid.items():
            mask = (col == c) & (row == r)
            if not mask.any():
                continue
            geom = self.geoms[i]
            out[mask] = geom.classify_local(geom.to_local(pts[mask]))
        return out

    def sample_surface(self, point) -> SurfaceClass:
        return SurfaceClass(int(self.classify_points(np.asarray(point))[0]))

    def raycast_collider(self, origin, direction, max_range: float) -> float:
        return ray_segments(origin, direction, self.colliders, max_range)

    def spawn_pose(self, spawn_index: int, heading_deg: float | None = None):
        """(x, y, heading_rad) at the indexed tile center. heading_deg None
        means 'aligned with the loop direction at that tile'."""
        if not 0 <= spawn_index < len(self.spawn_points):
            raise BadIndex(f"spawn index {spawn_index} out of range (track has {len(self.spawn_points)} tiles)")
        point, loop_heading = self.spawn_points[spawn_index]
        heading = loop_heading if heading_deg is None else math.radians(heading_deg)
        return float(point[0]), float(point[1]), float(heading)

    def bounds(self):
        s = self.params.tile_size_m
        cols = [t.col for t in self.tiles]
        rows = [t.row for t in self.tiles]
        return (
            min(cols) * s,
            min(rows) * s,
            (max(cols) + 1) * s,
            (max(rows) + 1) * s,
        )

    def reset_coins(self):
        for c in self.coins:
            c.collected = False

    def marker_polylines(self) -> list[np.ndarray]:
        """World-frame marker centerlines, for the minimap and test oracles."""
        out = []
        for geom in self.geoms:
            p = self.params
            s2 = p.tile_size_m / 2.0
            k = geom.tile.kind
            if k is TileKind.SWEEP_TURN:
                corner = np.array([-s2, -s2])
                for radius in (s2 - p.lane_width_m / 2.0, s2 + p.lane_width_m / 2.0):
                    ang = np.linspace(np.pi / 2.0, 0.0, p.arc_points)
                    pts = corner + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
                    out.append(geom.to_world(pts))
            elif k is TileKind.HARD_TURN:
                for seg in geom._hard_turn_marker_segments():
                    out.append(geom.to_world(np.asarray(seg)))
            else:
                u = np.linspace(0.0, 1.0, 33)
                x = -s2 + u * p.tile_size_m
                c = geom._center_offset(u)
                hw = geom._half_width(u)
                upper = np.stack([x, c + hw], axis=1)
                lower = np.stack([x, c - hw], axis=1)
                if k is TileKind.LANE_CHANGE_WIDE:
                    out.append(geom.to_world(upper[u <= 0.5]))
                    out.append(geom.to_world(lower[u >= 0.5]))
                else:
                    out.append(geom.to_world(upper))
                    out.append(geom.to_world(lower))
        return out


def build_track(layout: list[Tile], params: TrackParams | None = None) -> Track:
    if not layout:
        raise TrackError("layout is empty")
    return Track(layout, params or TrackParams())


# ---------------------------------------------------------------------------
# layout files: one tile per line, `kind col row rotation`, '#' comments


def parse_layout(text: str) -> list[Tile]:
    tiles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise TrackError(f"layout line {lineno}: expected 'kind col row rotation'")
        kind_s, col_s, row_s, rot_s = parts
        try:
            kind = TileKind(kind_s)
        except ValueError:
            raise TrackError(f"layout line {lineno}: unknown tile kind {kind_s!r}")
        tiles.append(Tile(kind=kind, col=int(col_s), row=int(row_s), rotation=int(rot_s)))
    return tiles


def format_layout(tiles: list[Tile]) -> str:
    lines = [f"{t.kind.value} {t.col} {t.row} {t.rotation}" for t in tiles]
    return "\n".join(lines) + "\n"


def load_layout(path) -> list[Tile]:
    with open(path, "r", encoding="ascii") as f:
        return parse_layout(f.read())


def ring_layout(cols: int = 4, rows: int = 2) -> list[Tile]:
    """Rectangular ring: sweep turns at the corners, straights between,
    start/finish on the south side. cols, rows >= 2."""
    if cols < 2 or rows < 2:
        raise TrackError("ring needs at least 2x2 tiles")
    tiles = []
    cmax, rmax = cols - 1, rows - 1
    for c in range(cols):
        for r in range(rows):
            if 0 < c < cmax and 0 < r < rmax:
                continue  # interior stays empty
            corner = {
                (0, 0): 180,  # needs ports {N,E}
                (cmax, 0): 270,  # {N,W}
                (0, rmax): 90,  # {S,E}
                (cmax, rmax): 0,  # {S,W}
            }
            if (c, r) in corner:
                tiles.append(Tile(TileKind.SWEEP_TURN, c, r, corner[(c, r)]))
            elif r in (0, rmax):
                kind = TileKind.START_FINISH if (c, r) == (1, 0) else TileKind.STRAIGHT
                tiles.append(Tile(kind, c, r, 0))
            else:
                tiles.append(Tile(TileKind.STRAIGHT, c, r, 90))
    return tiles
