"""Route polylines and conflict zones for the unsigned T-junction.

World frame: the through road runs along x with the junction at the origin.
The near lane (``near``) carries traffic in +x at y = -w/2, the far lane
(``far``) carries traffic in -x at y = +w/2.  The ego waits on the stem south
of the road and turns left: it crosses the near lane and merges into the far
lane heading -x.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .config import SimConfig

EGO = "ego"
NEAR = "near"
FAR = "far"
THROUGH_ROUTES = (NEAR, FAR)


@dataclass(frozen=True)
class ConflictZone:
    own: tuple[float, float]
    other_route: str
    other: tuple[float, float]


@dataclass
class RouteGeometry:
    id: str
    polyline: np.ndarray
    conflict_zones: list[ConflictZone] = field(default_factory=list)

    def __post_init__(self):
        pts = np.asarray(self.polyline, dtype=float)
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise ValueError(f"route {self.id}: arc length must be strictly increasing")
        self.polyline = pts
        self.arc = np.concatenate([[0.0], np.cumsum(seg_len)])
        self._heading = np.arctan2(seg[:, 1], seg[:, 0])
        self._straight = None
        if len(pts) == 2:
            self._straight = (pts[0, 0], pts[0, 1], seg[0, 0] / seg_len[0], seg[0, 1] / seg_len[0])

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def point_at(self, s):
        """(x, y) at arc length ``s`` (scalar or array); clamped to the route ends."""
        x = np.interp(s, self.arc, self.polyline[:, 0])
        y = np.interp(s, self.arc, self.polyline[:, 1])
        return x, y

    def xy(self, s: float) -> tuple[float, float]:
        """Scalar fast path of :meth:`point_at`."""
        if self._straight is not None:
            x0, y0, ux, uy = self._straight
            s = min(max(s, 0.0), self.arc[-1])
            return x0 + ux * s, y0 + uy * s
        x, y = self.point_at(s)
        return float(x), float(y)

    def heading_at(self, s: float) -> float:
        i = int(np.searchsorted(self.arc, s, side="right")) - 1
        return float(self._heading[min(max(i, 0), len(self._heading) - 1)])

    def zones_with(self, other_route: str) -> list[ConflictZone]:
        return [z for z in self.conflict_zones if z.other_route == other_route]


def _point_polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    a = polyline[:-1][None, :, :]
    b = polyline[1:][None, :, :]
    p = points[:, None, :]
    ab = b - a
    t = np.clip(np.sum((p - a) * ab, axis=2) / np.sum(ab * ab, axis=2), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.min(np.hypot(*(p - closest).transpose(2, 0, 1)), axis=1)


def _interval(arc: np.ndarray, hit: np.ndarray) -> tuple[float, float] | None:
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return None
    if idx[-1] - idx[0] + 1 != idx.size:
        raise ValueError("conflict region is not a single interval")
    return float(arc[idx[0]]), float(arc[idx[-1]])


def conflict_zone(own: RouteGeometry, other: RouteGeometry, radius: float,
                  own_limit: float | None = None, resolution: float = 0.01):
    """Arc intervals on both routes whose points come within ``radius`` of each other.

    ``own_limit`` truncates the region on ``own`` (used for the merge, where the
    shared stretch of lane beyond the merge is handled by car following).
    Returns ``(own_interval, other_interval)`` or ``None``.
    """
    s_own = np.arange(0.0, own.length + resolution, resolution)
    s_own = s_own[s_own <= own.length]
    p_own = np.column_stack(own.point_at(s_own))
    hit_own = _point_polyline_distance(p_own, other.polyline) < radius
    if own_limit is not None:
        hit_own &= s_own <= own_limit
    own_iv = _interval(s_own, hit_own)
    if own_iv is None:
        return None
    sub = p_own[hit_own]
    s_other = np.arange(0.0, other.length + resolution, resolution)
    s_other = s_other[s_other <= other.length]
    p_other = np.column_stack(other.point_at(s_other))
    # chunked to bound memory: |p_other| x |sub| distances
    hit_other = np.zeros(len(s_other), dtype=bool)
    for lo in range(0, len(s_other), 2000):
        chunk = p_other[lo:lo + 2000]
        d = np.hypot(chunk[:, None, 0] - sub[None, :, 0], chunk[:, None, 1] - sub[None, :, 1])
        hit_other[lo:lo + 2000] = d.min(axis=1) < radius
    other_iv = _interval(s_other, hit_other)
    return own_iv, other_iv


@dataclass
class Junction:
    routes: dict[str, RouteGeometry]
    stop_y: float
    arc_end_s: float   # ego arc length where the turn ends on the far-lane centerline
    far_join_s: float  # ego arc length at which the ego becomes a leader in the far lane

    @property
    def ego(self) -> RouteGeometry:
        return self.routes[EGO]

    @cached_property
    def zone_table(self) -> dict[str, list[tuple[int, float, float]]]:
        """Per through-route: (index into the ego's zones, other-route interval)."""
        table: dict[str, list[tuple[int, float, float]]] = {}
        for i, z in enumerate(self.ego.conflict_zones):
            table.setdefault(z.other_route, []).append((i, z.other[0], z.other[1]))
        return table

    @cached_property
    def ego_zone_intervals(self) -> tuple[tuple[float, float], ...]:
        return tuple(z.own for z in self.ego.conflict_zones)

    def ego_far_coordinate(self, s_ego: float) -> float:
        """Project the ego onto far-lane arc length (far lane runs in -x)."""
        x, _ = self.ego.xy(s_ego)
        return self.routes[FAR].length / 2.0 - x


def build_junction(cfg: SimConfig, merge_tail: float | None = None) -> Junction:
    """Junction for ``cfg``; memoized on the geometry fields (treat as read-only)."""
    key = (cfg.lane_width, cfg.road_half_length, cfg.turn_radius, cfg.ego_exit_length,
           cfg.vehicle_length, cfg.vehicle_width, merge_tail)
    return _build_junction(*key)


@lru_cache(maxsize=16)
def _build_junction(lane_width, road_half_length, turn_radius, ego_exit_length,
                    vehicle_length, vehicle_width, merge_tail) -> Junction:
    cfg = SimConfig(lane_width=lane_width, road_half_length=road_half_length,
                    turn_radius=turn_radius, ego_exit_length=ego_exit_length,
                    vehicle_length=vehicle_length, vehicle_width=vehicle_width)
    half_w = cfg.lane_width / 2.0
    L = cfg.road_half_length
    near = RouteGeometry(NEAR, np.array([[-L, -half_w], [L, -half_w]]))
    far = RouteGeometry(FAR, np.array([[L, half_w], [-L, half_w]]))

    r = cfg.turn_radius
    radius = cfg.collision_radius
    stem_x = half_w
    stop_y = -half_w - radius - 0.25
    arc_start_y = half_w - r
    cx, cy = stem_x - r, arc_start_y
    theta = np.linspace(0.0, np.pi / 2.0, 91)
    arc_pts = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
    pts = [np.array([[stem_x, stop_y]])]
    if arc_start_y > stop_y:
        pts.append(arc_pts)
    else:
        raise ValueError("turn radius too large for the stop-line position")
    end_x = cx - cfg.ego_exit_length
    pts.append(np.array([[end_x, half_w]]))
    ego = RouteGeometry(EGO, np.vstack(pts))
    arc_end_s = (arc_start_y - stop_y) + r * np.pi / 2.0

    tail = cfg.vehicle_length if merge_tail is None else merge_tail
    zones = {
        NEAR: conflict_zone(ego, near, radius),
        FAR: conflict_zone(ego, far, radius, own_limit=arc_end_s + tail),
    }
    for rid, pair in zones.items():
        if pair is None:
            continue
        own_iv, other_iv = pair
        ego.conflict_zones.append(ConflictZone(own_iv, rid, other_iv))
        other = near if rid == NEAR else far
        other.conflict_zones.append(ConflictZone(other_iv, EGO, own_iv))
    far_join_s = ego.zones_with(FAR)[0].own[0]
    return Junction({EGO: ego, NEAR: near, FAR: far}, stop_y, arc_end_s, far_join_s)
