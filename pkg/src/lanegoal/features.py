"""Model inputs: actor-centric history, path-aligned rasters and kinematic rollouts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import frenet
from .lane_map import CONTROL_KINDS

HISTORY_STEPS = 20
HISTORY_DT = 0.1
FUTURE_STEPS = 12
FUTURE_DT = 0.5
HISTORY_T = (np.arange(HISTORY_STEPS) - (HISTORY_STEPS - 1)) * HISTORY_DT
FUTURE_T = np.arange(1, FUTURE_STEPS + 1) * FUTURE_DT
ROLLOUT_T = np.arange(FUTURE_STEPS + 1) * FUTURE_DT

RASTER_LENGTH = 80
RASTER_WIDTH = 4
RASTER_CHANNELS = ("curvature", "actor_occupancy", "actor_speed") + CONTROL_KINDS
MAX_RASTER_ACTORS = 20


@dataclass
class ActorState:
    id: str
    centroid: np.ndarray
    heading: float
    velocity: np.ndarray
    acceleration: np.ndarray
    history: np.ndarray
    future: np.ndarray | None = None
    is_target: bool = False
    is_parked: bool = False
    is_ego: bool = False

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.acceleration = np.asarray(self.acceleration, dtype=np.float64)
        self.history = np.asarray(self.history, dtype=np.float64)
        self.heading = float(self.heading)
        if self.history.shape != (HISTORY_STEPS, 2):
            raise ValueError(f"actor {self.id}: history must be ({HISTORY_STEPS}, 2), got {self.history.shape}")
        if self.future is not None:
            self.future = np.asarray(self.future, dtype=np.float64)
            if self.future.shape != (FUTURE_STEPS, 2):
                raise ValueError(f"actor {self.id}: future must be ({FUTURE_STEPS}, 2), got {self.future.shape}")

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "centroid": self.centroid.tolist(),
            "heading": self.heading,
            "velocity": self.velocity.tolist(),
            "acceleration": self.acceleration.tolist(),
            "history": self.history.tolist(),
            "future": None if self.future is None else self.future.tolist(),
            "is_target": self.is_target,
            "is_parked": self.is_parked,
            "is_ego": self.is_ego,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActorState":
        return cls(
            id=str(d["id"]),
            centroid=d["centroid"],
            heading=d["heading"],
            velocity=d["velocity"],
            acceleration=d["acceleration"],
            history=d["history"],
            future=d.get("future"),
            is_target=bool(d.get("is_target", False)),
            is_parked=bool(d.get("is_parked", False)),
            is_ego=bool(d.get("is_ego", False)),
        )


def rotation(heading: float) -> np.ndarray:
    """Matrix taking world offsets into the heading-aligned frame."""
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, s], [-s, c]])


def to_actor_frame(actor: ActorState, xy) -> np.ndarray:
    return (np.asarray(xy, dtype=np.float64) - actor.centroid) @ rotation(actor.heading).T


def from_actor_frame(actor: ActorState, xy) -> np.ndarray:
    return np.asarray(xy, dtype=np.float64) @ rotation(actor.heading) + actor.centroid


def rollout_world(actor: ActorState, times=ROLLOUT_T) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)[:, None]
    return actor.centroid + actor.velocity * t + 0.5 * actor.acceleration * t * t


def kinematic_rollout(actor: ActorState, path) -> np.ndarray:
    """Constant-acceleration rollout at 2Hz over 6s, in the path frame (13, 2)."""
    _, _, _, along, cross = frenet.project_points(rollout_world(actor), path)
    return np.stack([along, cross], axis=1)


def free_rollout(actor: ActorState) -> np.ndarray:
    """The same rollout expressed in the actor-centric frame (13, 2)."""
    return to_actor_frame(actor, rollout_world(actor))


def actor_history_features(actor: ActorState) -> np.ndarray:
    return to_actor_frame(actor, actor.history)


def state_vector(actor: ActorState) -> np.ndarray:
    """[speed, longitudinal accel, lateral accel, yaw rate]."""
    R = rotation(actor.heading)
    acc = R @ actor.acceleration
    d = np.diff(actor.history, axis=0)
    step = np.linalg.norm(d, axis=1)
    yaw_rate = 0.0
    lag = 5
    if step[-1] > 1e-3 and step[-1 - lag] > 1e-3:
        h1 = np.arctan2(d[-1, 1], d[-1, 0])
        h0 = np.arctan2(d[-1 - lag, 1], d[-1 - lag, 0])
        yaw_rate = wrap_angle(h1 - h0) / (lag * HISTORY_DT)
    return np.array([actor.speed, acc[0], acc[1], yaw_rate])


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if np.ndim(w) else float(w)


def path_curvature(path) -> np.ndarray:
    """Per-metre heading change at each raster row (row l uses vertex l+1)."""
    pts = frenet.as_points(path)
    d = np.diff(pts, axis=0)
    heading = np.arctan2(d[:, 1], d[:, 0])
    turn = wrap_angle(np.diff(heading)) if len(heading) > 1 else np.zeros(0)
    out = np.zeros(RASTER_LENGTH)
    n = min(len(turn), RASTER_LENGTH)
    out[:n] = turn[:n]
    return out


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    x, y = points[:, 0:1], points[:, 1:2]
    x0, y0 = poly[:, 0][None], poly[:, 1][None]
    x1, y1 = np.roll(poly[:, 0], -1)[None], np.roll(poly[:, 1], -1)[None]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return (crosses & (x < xint)).sum(axis=1) % 2 == 1


def cell_centers() -> np.ndarray:
    """Path-frame centres of every raster cell, shape (80, 4, 2)."""
    a = np.arange(RASTER_LENGTH) + 0.5
    c = np.arange(RASTER_WIDTH) - RASTER_WIDTH / 2 + 0.5
    A, C = np.meshgrid(a, c, indexing="ij")
    return np.stack([A, C], axis=-1)


def closest_actors(scene_actors, target: ActorState, limit: int = MAX_RASTER_ACTORS) -> list:
    others = [a for a in scene_actors if a.id != target.id]
    others.sort(key=lambda a: (float(np.linalg.norm(a.centroid - target.centroid)), a.id))
    return others[:limit]


def build_raster(path, scene_actors, target: ActorState, controls=()) -> np.ndarray:
    """Path-aligned raster of shape (80, 4, 8).

    Row ``l`` covers along-track [l, l+1) m, column ``w`` covers cross-track
    [w-2, w-1) m. ``controls`` may be a LaneMap or an iterable of TrafficControl.
    """
    grid = np.zeros((RASTER_LENGTH, RASTER_WIDTH, len(RASTER_CHANNELS)))
    grid[:, :, 0] = path_curvature(path)[:, None]

    near = closest_actors(scene_actors, target)
    if near:
        cents = np.array([a.centroid for a in near])
        seg, t_raw, _, along, cross = frenet.project_points(cents, path)
        behind = (seg == 0) & (t_raw < 0)
        rows = np.floor(along).astype(int)
        cols = np.floor(cross + RASTER_WIDTH / 2).astype(int)
        inside = ~behind & (rows >= 0) & (rows < RASTER_LENGTH) & (cols >= 0) & (cols < RASTER_WIDTH)
        for k in np.flatnonzero(inside):
            grid[rows[k], cols[k], 1] = 1.0
            grid[rows[k], cols[k], 2] = max(grid[rows[k], cols[k], 2], near[k].speed)

    ctl_list = getattr(controls, "controls", controls)
    if ctl_list:
        world = frenet.unproject_points(path, cell_centers().reshape(-1, 2))
        for ctl in ctl_list:
            ch = 3 + CONTROL_KINDS.index(ctl.kind)
            lo, hi = ctl.region.min(axis=0), ctl.region.max(axis=0)
            box = np.all((world >= lo) & (world <= hi), axis=1)
            if not box.any():
                continue
            hit = np.zeros(len(world), dtype=bool)
            hit[box] = points_in_polygon(world[box], ctl.region)
            grid[:, :, ch] = np.maximum(grid[:, :, ch], hit.reshape(RASTER_LENGTH, RASTER_WIDTH))
    return grid
