"""Synthetic driving scenes, JSON Lines datasets and seed-based splits.

Scenes are pure functions of (kind, behavior, seed). Maps are built in a local
frame and then moved by a seeded rigid transform.

Dataset line schema (version 1)::

    {"version": 1, "seed": int, "kind": str, "behavior": str,
     "map": {"lanes": [...]},
     "actors": [{"id", "centroid", "heading", "velocity", "acceleration",
                 "history": [[x, y]] * 20, "future": [[x, y]] * 12 | null,
                 "is_target", "is_parked", "is_ego"}]}
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import frenet
from .features import FUTURE_T, HISTORY_T, ActorState
from .labeling import label_spatial
from .lane_map import CONTROL_KINDS, Lane, LaneMap, TrafficControl, propose_goal_paths

SCHEMA_VERSION = 1
LANE_OFFSET = 1.75
NOISE_SIGMA = 0.1
MAP_KINDS = ("straight", "curved", "n_way3", "n_way4", "n_way5", "n_way6", "roundabout")
MIXED_KINDS = ("straight", "curved", "n_way3", "n_way4")
BEHAVIORS = ("lane_follow", "off_map", "pull_over")
MIXED_BEHAVIOR_WEIGHTS = {"lane_follow": 0.9, "off_map": 0.05, "pull_over": 0.05}
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Malformed dataset content."""


class SchemaVersionError(DatasetError):
    pass


# --- map generation --------------------------------------------------------

def _bezier(p0, p1, p2, p3, n=200) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t * t * p2 + t ** 3 * p3


def _line(p0, p1, spacing=1.0) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(1, int(math.ceil(np.linalg.norm(p1 - p0) / spacing)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return p0 + t * (p1 - p0)


def _arc(center, radius, a0, a1, spacing=1.0) -> np.ndarray:
    n = max(2, int(math.ceil(abs(a1 - a0) * radius / spacing)))
    ang = np.linspace(a0, a1, n + 1)
    return np.asarray(center, float) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _smooth(points) -> np.ndarray:
    return frenet.resample_polyline(points, 1.0)


def _box(center, direction, length=3.0, width=3.2) -> np.ndarray:
    u = np.asarray(direction, float) / np.linalg.norm(direction)
    n = np.array([-u[1], u[0]])
    c = np.asarray(center, float)
    hl, hw = length / 2, width / 2
    return np.array([c - hl * u - hw * n, c + hl * u - hw * n, c + hl * u + hw * n, c - hl * u + hw * n])


def _unit(theta) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def _straight_lanes(rng) -> list:
    return [Lane("s0", _line((0.0, 0.0), (200.0, 0.0)))]


def _curved_lanes(rng, radius=None) -> list:
    R = float(radius) if radius is not None else float(rng.uniform(20.0, 80.0))
    sweep = float(rng.uniform(math.radians(40), math.radians(100)))
    side = 1.0 if rng.random() < 0.5 else -1.0
    lead = _line((-40.0, 0.0), (0.0, 0.0))
    # arc tangent to +x at the origin, turning toward ``side``
    center = np.array([0.0, side * R])
    a0 = -side * math.pi / 2
    arc = _arc(center, R, a0, a0 + side * sweep)
    end_dir = _unit(side * sweep)
    out = _line(arc[-1], arc[-1] + 120.0 * end_dir)
    return [
        Lane("in", lead, ("arc",)),
        Lane("arc", arc, ("out",)),
        Lane("out", out),
    ]


def _n_way_lanes(rng, n: int, approach=60.0, exit_len=120.0, radius=12.0) -> list:
    base = 2 * math.pi / n
    thetas = [k * base + float(rng.uniform(-0.1, 0.1)) * base for k in range(n)]
    lanes = []
    for k, th in enumerate(thetas):
        u = _unit(th)
        left = np.array([-u[1], u[0]])
        in_end = radius * u + LANE_OFFSET * left
        in_start = (radius + approach) * u + LANE_OFFSET * left
        out_start = radius * u - LANE_OFFSET * left
        out_end = (radius + exit_len) * u - LANE_OFFSET * left
        kind = CONTROL_KINDS[int(rng.integers(len(CONTROL_KINDS)))]
        ctl = TrafficControl(kind, _box(in_end + 2.0 * u, -u))
        succ = tuple(f"j{k}_{m}" for m in range(n) if m != k)
        lanes.append(Lane(f"in{k}", _line(in_start, in_end), succ, (ctl,)))
        lanes.append(Lane(f"out{k}", _line(out_start, out_end)))
    for k, th in enumerate(thetas):
        u_k = _unit(th)
        p0 = radius * u_k + LANE_OFFSET * np.array([-u_k[1], u_k[0]])
        for m, tm in enumerate(thetas):
            if m == k:
                continue
            u_m = _unit(tm)
            p3 = radius * u_m - LANE_OFFSET * np.array([-u_m[1], u_m[0]])
            h = 0.4 * np.linalg.norm(p3 - p0)
            curve = _bezier(p0, p0 - h * u_k, p3 - h * u_m, p3)
            lanes.append(Lane(f"j{k}_{m}", _smooth(curve), (f"out{m}",)))
    return lanes


def _roundabout_lanes(rng, n=4, ring=15.0) -> list:
    delta = math.radians(14.0)
    thetas = [k * 2 * math.pi / n + float(rng.uniform(-0.05, 0.05)) for k in range(n)]
    lanes = []

    def ring_pt(a):
        return ring * _unit(a)

    def tangent(a):
        return np.array([-math.sin(a), math.cos(a)])

    for k, th in enumerate(thetas):
        u = _unit(th)
        left = np.array([-u[1], u[0]])
        merge_a, diverge_a = th - delta, th + delta
        nxt = thetas[(k + 1) % n] - delta if k + 1 < n else thetas[0] - delta + 2 * math.pi
        far_in = (ring + 70.0) * u + LANE_OFFSET * left
        near_in = (ring + 8.0) * u + LANE_OFFSET * left
        m = ring_pt(merge_a)
        approach = np.vstack([_line(far_in, near_in)[:-1],
                              _bezier(near_in, near_in - 4.0 * u, m - 4.0 * tangent(merge_a), m)])
        lanes.append(Lane(f"in{k}", _smooth(approach), (f"r{k}a",)))
        d = ring_pt(diverge_a)
        near_out = (ring + 8.0) * u - LANE_OFFSET * left
        far_out = (ring + 110.0) * u - LANE_OFFSET * left
        leave = np.vstack([_bezier(d, d + 4.0 * tangent(diverge_a), near_out - 4.0 * u, near_out)[:-1],
                           _line(near_out, far_out)])
        lanes.append(Lane(f"out{k}", _smooth(leave)))
        lanes.append(Lane(f"r{k}a", _arc((0.0, 0.0), ring, merge_a, diverge_a), (f"r{k}b", f"out{k}")))
        lanes.append(Lane(f"r{k}b", _arc((0.0, 0.0), ring, diverge_a, nxt), (f"r{(k + 1) % n}a",)))
    return lanes


def parse_kind(kind: str) -> tuple:
    if kind in ("straight", "curved", "roundabout"):
        return kind, {}
    if kind.startswith("n_way"):
        tail = kind[len("n_way"):].lstrip("(").rstrip(")")
        n = int(tail) if tail else 4
        if not 3 <= n <= 6:
            raise ValueError(f"n_way needs 3 <= n <= 6, got {n}")
        return "n_way", {"n": n}
    raise ValueError(f"unknown map kind {kind!r}")


def _transform_lanes(lanes, rng) -> list:
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    shift = rng.uniform(-50.0, 50.0, size=2)
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])

    def tf(p):
        return p @ R.T + shift

    return [Lane(l.id, tf(l.centerline), l.successor_ids,
                 tuple(TrafficControl(t.kind, tf(t.region)) for t in l.controls)) for l in lanes]


def gen_map(kind: str, seed: int, radius=None, n=None, transform: bool = True) -> LaneMap:
    """Procedural lane map. ``kind`` is straight, curved, n_way (or n_wayN) or roundabout."""
    base, extra = parse_kind(kind)
    rng = np.random.default_rng([seed, 17])
    if base == "straight":
        lanes = _straight_lanes(rng)
    elif base == "curved":
        lanes = _curved_lanes(rng, radius)
    elif base == "n_way":
        lanes = _n_way_lanes(rng, n if n is not None else extra["n"])
    else:
        lanes = _roundabout_lanes(rng)
    if transform:
        lanes = _transform_lanes(lanes, rng)
    return LaneMap({l.id: l for l in lanes})


# --- actor generation ------------------------------------------------------

@dataclass
class Route:
    lane_ids: tuple
    points: np.ndarray
    cum: np.ndarray

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def at(self, s):
        s = np.asarray(s, dtype=np.float64)
        x = np.interp(s, self.cum, self.points[:, 0])
        y = np.interp(s, self.cum, self.points[:, 1])
        return np.stack([x, y], axis=-1)

    def heading(self, s):
        d = np.diff(self.points, axis=0)
        h = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
        mid = 0.5 * (self.cum[1:] + self.cum[:-1])
        return np.interp(s, mid, h)

    def normal(self, s):
        h = self.heading(s)
        return np.stack([-np.sin(h), np.cos(h)], axis=-1)


def _predecessors(lane_map: LaneMap) -> dict:
    pred = {k: [] for k in lane_map.lanes}
    for k, lane in lane_map.lanes.items():
        for s in lane.successor_ids:
            pred[s].append(k)
    return pred


def _random_route(lane_map: LaneMap, rng, start=None, min_length=230.0) -> Route:
    pred = _predecessors(lane_map)
    entries = sorted(k for k, v in pred.items() if not v) or sorted(lane_map.lanes)
    seq = [start if start is not None else entries[int(rng.integers(len(entries)))]]
    total = lane_map.lanes[seq[0]].length
    while total < min_length:
        nxt = [s for s in lane_map.lanes[seq[-1]].successor_ids if s not in seq]
        if not nxt:
            break
        seq.append(nxt[int(rng.integers(len(nxt)))])
        total += lane_map.lanes[seq[-1]].length
    pts = [lane_map.lanes[seq[0]].centerline]
    for lid in seq[1:]:
        c = lane_map.lanes[lid].centerline
        pts.append(c[1:] if np.linalg.norm(c[0] - pts[-1][-1]) < 1e-6 else c)
    poly = np.vstack(pts)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(poly, axis=0), axis=1) > 1e-9])
    poly = poly[keep]
    return Route(tuple(seq), poly, frenet.vertex_arclengths(poly))


def _speed_profile(route: Route, rng, ds=0.25, cruise=None):
    """Curvature-limited speed over arclength with acceleration/braking limits."""
    s = np.arange(0.0, route.length + ds, ds)
    s[-1] = min(s[-1], route.length)
    h = route.heading(s)
    kappa = np.abs(np.gradient(h, s))
    win = int(6.0 / ds)
    kappa = np.convolve(kappa, np.ones(win) / win, mode="same")
    cruise = rng.uniform(8.0, 14.0) if cruise is None else float(cruise)
    lat = rng.uniform(1.5, 2.5)
    brake = rng.uniform(1.5, 2.5)
    accel = rng.uniform(0.8, 1.5)
    v = np.minimum(cruise, np.sqrt(lat / np.maximum(kappa, 1e-6)))
    v = np.maximum(v, 2.0)
    for i in range(len(s) - 2, -1, -1):
        v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2 * brake * ds))
    for i in range(1, len(s)):
        v[i] = min(v[i], math.sqrt(v[i - 1] ** 2 + 2 * accel * ds))
    return s, v


def _turn_bias(route: Route, s, lookahead=35.0, magnitude=0.6):
    """Lateral offset toward the side of an upcoming turn (drivers hug the turn side)."""
    s = np.asarray(s, dtype=np.float64)
    ahead = np.minimum(s + lookahead, route.length)
    dpsi = route.heading(ahead) - route.heading(s)
    return magnitude * np.clip(dpsi / (math.pi / 3), -1.0, 1.0)


def _decision_points(lane_map: LaneMap, route: Route) -> list:
    pts, acc = [], 0.0
    for lid in route.lane_ids[:-1]:
        acc += lane_map.lanes[lid].length
        if len(lane_map.lanes[lid].successor_ids) > 1:
            pts.append(acc)
    return pts


def _state_from(pos_fn, t0=0.0):
    h = 0.05
    p_m, p_0, p_p = pos_fn(t0 - h), pos_fn(t0), pos_fn(t0 + h)
    vel = (p_p - p_m) / (2 * h)
    H = 0.25
    acc = (pos_fn(t0 + H) - 2 * p_0 + pos_fn(t0 - H)) / (H * H)
    return p_0, vel, acc


def _make_actor(actor_id, pos_fn, rng, noise, fallback_heading, is_target=False) -> ActorState:
    centroid, vel, acc = _state_from(pos_fn)
    heading = math.atan2(vel[1], vel[0]) if np.hypot(*vel) > 0.1 else fallback_heading
    hist = np.array([pos_fn(t) for t in HISTORY_T])
    fut = np.array([pos_fn(t) for t in FUTURE_T])
    if noise > 0:
        hist[:-1] += rng.normal(0.0, noise, size=hist[:-1].shape)
        fut += rng.normal(0.0, noise, size=fut.shape)
    hist[-1] = centroid
    return ActorState(actor_id, centroid, heading, vel, acc, hist, fut, is_target=is_target)


def _lane_follow_fn(lane_map, rng, route=None, s0=None, prefer_decision=True, speed=None):
    route = route or _random_route(lane_map, rng)
    sg, vg = _speed_profile(route, rng, cruise=speed)
    tg = np.concatenate([[0.0], np.cumsum(2.0 * np.diff(sg) / (vg[1:] + vg[:-1]))])
    lo = float(np.interp(tg[0] + 2.2, tg, sg))
    hi = float(np.interp(tg[-1] - 6.2, tg, sg))
    if hi <= lo:
        hi = lo
    if s0 is None:
        dec = [d for d in _decision_points(lane_map, route) if lo <= d <= hi + 35.0]
        if prefer_decision and dec and rng.random() < 0.8:
            d = dec[0]
            s0 = float(np.clip(rng.uniform(d - 35.0, d + 8.0), lo, hi))
        else:
            s0 = float(rng.uniform(lo, hi))
    t_at = float(np.interp(s0, sg, tg))

    def s_of_t(t):
        return float(np.interp(t_at + t, tg, sg))

    def pos(t):
        s = s_of_t(t)
        return route.at(s) + _turn_bias(route, s) * route.normal(s)

    return route, s_of_t, pos


def gen_actor(lane_map: LaneMap, behavior: str, seed: int, actor_id: str = "a0",
              noise: float = NOISE_SIGMA, is_target: bool = True, route=None, s0=None,
              speed=None) -> ActorState:
    """Synthesize an actor with 2 s of 10 Hz history and 6 s of 2 Hz future."""
    if behavior not in BEHAVIORS:
        raise ValueError(f"unknown behavior {behavior!r}")
    rng = np.random.default_rng([seed, 29])
    if behavior == "lane_follow":
        route, _, pos = _lane_follow_fn(lane_map, rng, route, s0, speed=speed)
        return _make_actor(actor_id, pos, rng, noise, float(route.heading(0.0)), is_target)

    if behavior == "pull_over":
        route, s_of_t, base_pos = _lane_follow_fn(lane_map, rng, route, s0, prefer_decision=False)
        v0 = (s_of_t(0.05) - s_of_t(-0.05)) / 0.1
        s_start = s_of_t(0.0)
        shift = rng.uniform(2.5, 3.5)

        def pos(t):
            if t <= 0:
                return base_pos(t)
            tt = min(t, 6.0)
            s = s_start + v0 * (tt - tt * tt / 14.0)
            ramp = min(1.0, tt / 4.0)
            off = -shift * ramp * ramp * (3 - 2 * ramp)
            return route.at(s) + (_turn_bias(route, s) + off) * route.normal(s)

        return _make_actor(actor_id, pos, rng, noise, float(route.heading(0.0)), is_target)

    # off_map: leave the lane network at a steep angle; retried until no goal path fits
    for attempt in range(50):
        sub = np.random.default_rng([seed, 31, attempt])
        route, s_of_t, base_pos = _lane_follow_fn(lane_map, sub, route if attempt == 0 else None,
                                                  s0 if attempt == 0 else None, prefer_decision=False)
        v0 = max((s_of_t(0.05) - s_of_t(-0.05)) / 0.1, 5.0)
        p0 = base_pos(0.0)
        h0 = float(route.heading(s_of_t(0.0)))
        side = 1.0 if sub.random() < 0.5 else -1.0
        veer = side * math.radians(sub.uniform(40.0, 70.0))
        ts = np.arange(0.0, 6.0 + 1e-9, 0.01)
        ramp = np.clip(ts / 1.5, 0.0, 1.0)
        psi = h0 + veer * ramp * ramp * (3 - 2 * ramp)
        vel = v0 * np.stack([np.cos(psi), np.sin(psi)], axis=1)
        path = p0 + np.vstack([[0.0, 0.0], np.cumsum(0.5 * (vel[1:] + vel[:-1]) * 0.01, axis=0)])

        def pos(t, path=path, base_pos=base_pos, ts=ts):
            if t <= 0:
                return base_pos(t)
            return np.array([np.interp(t, ts, path[:, 0]), np.interp(t, ts, path[:, 1])])

        actor = _make_actor(actor_id, pos, sub, noise, h0, is_target)
        paths = propose_goal_paths(lane_map, actor.centroid)
        if label_spatial(paths, actor.future).goal_free_prob == 1.0:
            return actor
    raise RuntimeError(f"could not place an off-map actor for seed {seed}")


@dataclass
class Scene:
    map: LaneMap
    actors: list
    seed: int
    kind: str = "custom"
    behavior: str = "lane_follow"

    @property
    def target(self) -> ActorState:
        for a in self.actors:
            if a.is_target:
                return a
        raise DatasetError(f"scene {self.seed} has no target actor")

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "seed": self.seed,
            "kind": self.kind,
            "behavior": self.behavior,
            "map": self.map.to_dict(),
            "actors": [a.to_dict() for a in self.actors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        version = d.get("version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(f"dataset version {version!r} is not supported (reader version {SCHEMA_VERSION})")
        return cls(
            map=LaneMap.from_dict(d["map"]),
            actors=[ActorState.from_dict(a) for a in d["actors"]],
            seed=int(d["seed"]),
            kind=str(d.get("kind", "custom")),
            behavior=str(d.get("behavior", "lane_follow")),
        )


def _pick(rng, weights: dict) -> str:
    keys = list(weights)
    p = np.array([weights[k] for k in keys], dtype=np.float64)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def gen_scene(kind: str, seed: int, behavior: str | None = None) -> Scene:
    """A scene with one target actor plus a few other lane-following or parked actors."""
    rng = np.random.default_rng([seed, 7])
    if kind == "mixed":
        kind = MIXED_KINDS[int(rng.integers(len(MIXED_KINDS)))]
    if behavior is None:
        behavior = _pick(rng, MIXED_BEHAVIOR_WEIGHTS)
    lane_map = gen_map(kind, seed)
    target = gen_actor(lane_map, behavior, seed, "a0")
    actors = [target]
    for i in range(int(rng.integers(0, 5))):
        sub = int(rng.integers(2 ** 31))
        if rng.random() < 0.2:
            other = _parked_actor(lane_map, sub, f"a{i + 1}")
        else:
            other = gen_actor(lane_map, "lane_follow", sub, f"a{i + 1}", is_target=False)
        actors.append(other)
    return Scene(lane_map, actors, seed, kind, behavior)


def _parked_actor(lane_map: LaneMap, seed: int, actor_id: str) -> ActorState:
    rng = np.random.default_rng([seed, 37])
    route = _random_route(lane_map, rng)
    s = float(rng.uniform(0.0, route.length))
    p = route.at(s) - 2.8 * route.normal(s)
    h = float(route.heading(s))
    return ActorState(actor_id, p, h, np.zeros(2), np.zeros(2), np.repeat(p[None], 20, axis=0),
                      np.repeat(p[None], 12, axis=0), is_parked=True)


def gen_scenes(kind: str, count: int, seed: int) -> list:
    return [gen_scene(kind, seed + i) for i in range(count)]


# --- dataset files ---------------------------------------------------------

def split_of(seed: int) -> str:
    """Deterministic split: seed mod 10 in 0..7 train, 8 val, 9 test."""
    r = seed % 10
    return "train" if r < 8 else ("val" if r == 8 else "test")


@dataclass
class Dataset:
    scenes: list = field(default_factory=list)

    def split(self, name: str) -> list:
        if name == "all":
            return list(self.scenes)
        if name == "heldout":
            return [s for s in self.scenes if split_of(s.seed) != "train"]
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.scenes if split_of(s.seed) == name]

    def __len__(self):
        return len(self.scenes)


def write_dataset(path, scenes) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sc in scenes:
            fh.write(json.dumps(sc.to_dict(), separators=(",", ":")))
            fh.write("\n")


def read_dataset(path) -> Dataset:
    path = Path(path)
    scenes = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                scenes.append(Scene.from_dict(obj))
            except SchemaVersionError as exc:
                raise SchemaVersionError(f"{path}:{lineno}: {exc}") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: schema error ({exc})") from None
    return Dataset(scenes)
