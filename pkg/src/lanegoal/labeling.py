"""Target mode probabilities: goal auto-labeling and temporal-mode selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import frenet

TIE_TOLERANCE = 0.1
FOLLOW_THRESHOLD = 5.0


@dataclass(frozen=True)
class SpatialTarget:
    goal_probs: np.ndarray
    goal_free_prob: float

    @property
    def probs(self) -> np.ndarray:
        """Spatial probabilities in mode order (goals..., goal-free)."""
        return np.append(self.goal_probs, self.goal_free_prob)

    @property
    def followed(self) -> np.ndarray:
        return np.flatnonzero(self.goal_probs > 0)


@dataclass(frozen=True)
class ModeTarget:
    joint_probs: np.ndarray
    num_goals: int
    num_temporal: int

    def spatial(self) -> np.ndarray:
        return self.joint_probs.reshape(self.num_goals + 1, self.num_temporal).sum(axis=1)


def max_cross_track_deviation(path, future) -> float:
    """Largest |cross-track| of ``future`` relative to ``path``."""
    xy = getattr(future, "xy", future)
    if len(xy) == 0:
        raise ValueError("future trajectory is empty")
    _, _, _, _, cross = frenet.project_points(xy, path)
    return float(np.max(np.abs(cross)))


def label_spatial(paths, future, tolerance: float = TIE_TOLERANCE,
                  threshold: float = FOLLOW_THRESHOLD) -> SpatialTarget:
    n = len(paths)
    if n == 0:
        return SpatialTarget(np.zeros(0), 1.0)
    dev = np.array([max_cross_track_deviation(p, future) for p in paths])
    best = dev.min()
    if not best < threshold:
        return SpatialTarget(np.zeros(n), 1.0)
    chosen = dev <= best + tolerance
    probs = np.where(chosen, 1.0 / chosen.sum(), 0.0)
    return SpatialTarget(probs, 0.0)


def label_temporal(predicted, ground_truth) -> int:
    """Index of the predicted trajectory with the lowest ADE (first on ties)."""
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(getattr(ground_truth, "xy", ground_truth), dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[None]
    ade = np.linalg.norm(pred - gt[None], axis=-1).mean(axis=-1)
    return int(np.argmin(ade))


def build_mode_target(spatial: SpatialTarget, temporal_indices, num_temporal: int) -> ModeTarget:
    """Joint target over (goal_0..goal_{N-1}, goal-free) x temporal modes."""
    sp = spatial.probs
    joint = np.zeros((len(sp), num_temporal))
    for j, p in enumerate(sp):
        if p > 0:
            m = temporal_indices[j]
            if m is None or not 0 <= m < num_temporal:
                raise ValueError(f"spatial mode {j} has probability {p} but no valid temporal index")
            joint[j, m] = p
    return ModeTarget(joint.ravel(), len(sp) - 1, num_temporal)
