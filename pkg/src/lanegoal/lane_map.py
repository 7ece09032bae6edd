"""Lane-graph map model, map-file loading and goal-path proposal."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import frenet

SEARCH_RADIUS = 2.0
PATH_LENGTH = 80.0
PATH_SPACING = 1.0
MAX_PATHS = 32
SUCCESSOR_GAP = 0.5

CONTROL_KINDS = ("stop_sign", "yield_sign", "light_green", "light_red", "light_other")


class MapError(ValueError):
    """Raised for malformed or inconsistent map content."""


@dataclass(frozen=True)
class TrafficControl:
    kind: str
    region: np.ndarray

    def to_dict(self) -> dict:
        return {"kind": self.kind, "region": self.region.tolist()}


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: np.ndarray
    successor_ids: tuple = ()
    controls: tuple = ()

    @property
    def length(self) -> float:
        return frenet.polyline_length(self.centerline)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "centerline": self.centerline.tolist(),
            "successors": list(self.successor_ids),
            "controls": [c.to_dict() for c in self.controls],
        }


@dataclass(frozen=True)
class GoalPath:
    points: np.ndarray
    source_lane_ids: tuple

    @property
    def length(self) -> float:
        return frenet.polyline_length(self.points)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class LaneMap:
    lanes: dict = field(default_factory=dict)

    def __post_init__(self):
        validate(self)

    @property
    def edges(self) -> list:
        return [(lid, s) for lid in sorted(self.lanes) for s in self.lanes[lid].successor_ids]

    @property
    def controls(self) -> list:
        return [c for lid in sorted(self.lanes) for c in self.lanes[lid].controls]

    def to_dict(self) -> dict:
        return {"lanes": [self.lanes[k].to_dict() for k in sorted(self.lanes)]}

    @classmethod
    def from_dict(cls, obj) -> "LaneMap":
        if not isinstance(obj, dict) or not isinstance(obj.get("lanes"), list):
            raise MapError("map must be an object with a 'lanes' list")
        lanes = {}
        for i, raw in enumerate(obj["lanes"]):
            lane_id = raw.get("id") if isinstance(raw, dict) else None
            if not isinstance(lane_id, str):
                raise MapError(f"lane #{i}: missing string id")
            if lane_id in lanes:
                raise MapError(f"lane {lane_id}: duplicate id")
            try:
                center = np.asarray(raw["centerline"], dtype=np.float64)
                succ = tuple(str(s) for s in raw.get("successors", []))
                controls = tuple(
                    TrafficControl(str(c["kind"]), np.asarray(c["region"], dtype=np.float64))
                    for c in raw.get("controls", [])
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MapError(f"lane {lane_id}: malformed field ({exc})") from None
            lanes[lane_id] = Lane(lane_id, center, succ, controls)
        return cls(lanes)


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12 and \
            min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2)) or \
        (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2))


def polygon_is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a1, a2, poly[j], poly[(j + 1) % n]):
                return False
    return True


def validate(lane_map: LaneMap) -> None:
    lanes = lane_map.lanes
    for lid, lane in lanes.items():
        c = lane.centerline
        if c.ndim != 2 or c.shape[1] != 2 or len(c) < 2:
            raise MapError(f"lane {lid}: degenerate centerline (need >= 2 points)")
        if not np.all(np.isfinite(c)):
            raise MapError(f"lane {lid}: non-finite centerline")
        if np.any(np.linalg.norm(np.diff(c, axis=0), axis=1) == 0):
            raise MapError(f"lane {lid}: degenerate centerline (repeated point)")
        for ctl in lane.controls:
            if ctl.kind not in CONTROL_KINDS:
                raise MapError(f"lane {lid}: unknown control kind {ctl.kind!r}")
            if ctl.region.ndim != 2 or ctl.region.shape[1] != 2 or not polygon_is_simple(ctl.region):
                raise MapError(f"lane {lid}: control region must be a simple polygon")
    for lid, lane in lanes.items():
        for sid in lane.successor_ids:
            if sid not in lanes:
                raise MapError(f"lane {lid}: dangling successor id {sid!r}")
            gap = np.linalg.norm(lanes[sid].centerline[0] - lane.centerline[-1])
            if gap > SUCCESSOR_GAP:
                raise MapError(f"lane {lid}: successor gap of {gap:.3f} m to lane {sid}")


def load_map(content) -> LaneMap:
    """Parse map-file bytes/str (JSON) into a validated :class:`LaneMap`."""
    if isinstance(content, (bytes, bytearray)):
        content = content.decode("utf-8")
    try:
        obj = json.loads(content)
    except json.JSONDecodeError as exc:
        raise MapError(f"map parse failure: {exc}") from None
    return LaneMap.from_dict(obj)


def dump_map(lane_map: LaneMap) -> str:
    return json.dumps(lane_map.to_dict())


def find_root_lanes(lane_map: LaneMap, centroid, radius: float = SEARCH_RADIUS) -> list:
    """Lanes whose centerline passes within ``radius`` of ``centroid``.

    Returns ``(lane_id, arclength_of_closest_point)`` sorted by (distance, id).
    """
    p = np.asarray(centroid, dtype=np.float64)
    found = []
    for lid, lane in lane_map.lanes.items():
        c = lane.centerline
        A, D = c[:-1], np.diff(c, axis=0)
        t = np.clip(((p - A) * D).sum(1) / (D * D).sum(1), 0.0, 1.0)
        q = A + t[:, None] * D
        d = np.linalg.norm(p - q, axis=1)
        k = int(np.argmin(d))
        if d[k] <= radius:
            s = frenet.vertex_arclengths(c)[k] + t[k] * np.linalg.norm(D[k])
            found.append((float(d[k]), lid, float(s)))
    found.sort(key=lambda x: (x[0], x[1]))
    return [(lid, s) for _, lid, s in found]


def lane_sequences(lane_map: LaneMap, root: str, start_s: float, max_length: float = PATH_LENGTH) -> list:
    """Every root-to-leaf lane sequence of the depth-limited lane graph.

    A lane is a leaf once the accumulated length reaches ``max_length``, when it
    has no successors, or when all successors were already visited on this
    branch.
    """
    out = []

    def walk(seq, covered):
        lane = lane_map.lanes[seq[-1]]
        if covered >= max_length:
            out.append(tuple(seq))
            return
        nxt = [s for s in lane.successor_ids if s not in seq]
        if not nxt:
            out.append(tuple(seq))
            return
        for s in nxt:
            walk(seq + [s], covered + lane_map.lanes[s].length)

    walk([root], lane_map.lanes[root].length - start_s)
    return out


def _sequence_polyline(lane_map: LaneMap, seq, start_s: float) -> np.ndarray:
    first = lane_map.lanes[seq[0]].centerline
    cum = frenet.vertex_arclengths(first)
    k = int(np.clip(np.searchsorted(cum, start_s, side="right") - 1, 0, len(first) - 2))
    start = np.array([np.interp(start_s, cum, first[:, 0]), np.interp(start_s, cum, first[:, 1])])
    pts = [start[None], first[k + 1:]]
    for lid in seq[1:]:
        c = lane_map.lanes[lid].centerline
        # successor starts within the join tolerance; skip a duplicated join point
        if np.linalg.norm(c[0] - pts[-1][-1]) < 1e-9:
            c = c[1:]
        pts.append(c)
    poly = np.vstack([p for p in pts if len(p)])
    keep = np.concatenate([[True], np.linalg.norm(np.diff(poly, axis=0), axis=1) > 1e-12])
    return poly[keep]


def propose_goal_paths(lane_map: LaneMap, actor_centroid, max_paths: int = MAX_PATHS) -> list:
    """Goal paths reachable by following lanes from every nearby root lane."""
    candidates = []
    n_chords = int(round(PATH_LENGTH / PATH_SPACING))
    for lid, s in find_root_lanes(lane_map, actor_centroid):
        for seq in lane_sequences(lane_map, lid, s):
            poly = _sequence_polyline(lane_map, seq, s)
            if len(poly) < 2:
                continue
            pts = frenet.chord_resample(poly, PATH_SPACING, max_chords=n_chords)
            if len(pts) < 2:
                continue
            candidates.append(GoalPath(pts, seq))
    candidates.sort(key=lambda g: g.source_lane_ids)
    unique = []
    for g in candidates:
        if any(u.points.shape == g.points.shape and np.allclose(u.points, g.points, rtol=0, atol=1e-6)
               for u in unique):
            continue
        unique.append(g)
    return unique[:max_paths]
