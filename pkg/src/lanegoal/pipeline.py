"""Per-actor feature assembly, batching and world-frame prediction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import features as F
from . import frenet
from .labeling import SpatialTarget, label_spatial
from .lane_map import LaneMap, propose_goal_paths
from .loss import BatchTargets
from .model import Batch, GoalGraphNet, Prediction


@dataclass
class SampleFeatures:
    actor: F.ActorState
    paths: list
    history: np.ndarray
    state: np.ndarray
    rasters: np.ndarray
    rollouts: np.ndarray
    free_rollout: np.ndarray
    gt_path: np.ndarray | None = None
    gt_free: np.ndarray | None = None
    spatial: SpatialTarget | None = None
    seed: int = -1

    @property
    def num_goals(self) -> int:
        return len(self.paths)


def build_features(lane_map: LaneMap, actor: F.ActorState, scene_actors=(), seed: int = -1) -> SampleFeatures:
    paths = propose_goal_paths(lane_map, actor.centroid)
    n = len(paths)
    rasters = np.zeros((n, F.RASTER_LENGTH, F.RASTER_WIDTH, len(F.RASTER_CHANNELS)))
    rollouts = np.zeros((n, F.FUTURE_STEPS + 1, 2))
    controls = lane_map.controls
    for j, p in enumerate(paths):
        rasters[j] = F.build_raster(p, scene_actors, actor, controls)
        rollouts[j] = F.kinematic_rollout(actor, p)
    sf = SampleFeatures(actor, paths, F.actor_history_features(actor), F.state_vector(actor),
                        rasters, rollouts, F.free_rollout(actor), seed=seed)
    if actor.future is not None:
        gt = np.zeros((n, F.FUTURE_STEPS, 2))
        for j, p in enumerate(paths):
            _, _, _, a, c = frenet.project_points(actor.future, p)
            gt[j] = np.stack([a, c], axis=1)
        sf.gt_path = gt
        sf.gt_free = F.to_actor_frame(actor, actor.future)
        sf.spatial = label_spatial(paths, actor.future)
    return sf


def scene_features(scene) -> SampleFeatures:
    return build_features(scene.map, scene.target, scene.actors, seed=scene.seed)


def collate(samples) -> tuple:
    """Stack samples into a model Batch plus per-row targets (None if unlabeled)."""
    B = len(samples)
    owner = np.concatenate([np.full(s.num_goals, i, dtype=np.int64) for i, s in enumerate(samples)]) \
        if B else np.zeros(0, dtype=np.int64)
    shape = (F.RASTER_LENGTH, F.RASTER_WIDTH, len(F.RASTER_CHANNELS))
    batch = Batch(
        history=np.stack([s.history for s in samples]),
        state=np.stack([s.state for s in samples]),
        rasters=np.concatenate([s.rasters.reshape((-1,) + shape) for s in samples]),
        rollouts=np.concatenate([s.rollouts.reshape(-1, F.FUTURE_STEPS + 1, 2) for s in samples]),
        free_rollouts=np.stack([s.free_rollout for s in samples]),
        owner=owner.astype(np.int64),
    )
    if any(s.spatial is None for s in samples):
        return batch, None
    spatial = np.concatenate([s.spatial.goal_probs for s in samples] + [[s.spatial.goal_free_prob for s in samples]])
    gt = np.concatenate([s.gt_path.reshape(-1, F.FUTURE_STEPS, 2) for s in samples]
                        + [np.stack([s.gt_free for s in samples])])
    return batch, BatchTargets(spatial, gt)


def world_modes(pred: Prediction, paths, actor: F.ActorState) -> np.ndarray:
    """All K = (N+1)M trajectories in the world frame, in joint-probability order.

    Negative along-track predictions are clipped to the path start before
    unprojection.
    """
    out = []
    for j, path in enumerate(paths):
        for m in range(pred.goal_trajectories.shape[1]):
            ac = pred.goal_trajectories[j, m].copy()
            ac[:, 0] = np.maximum(ac[:, 0], 0.0)
            out.append(frenet.unproject_points(path, ac))
    for m in range(len(pred.free_trajectories)):
        out.append(F.from_actor_frame(actor, pred.free_trajectories[m]))
    return np.stack(out)


def predict_samples(model: GoalGraphNet, samples, batch_size: int = 64) -> list:
    """Return ``(world_trajectories, joint_probs, prediction)`` per sample."""
    results = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch, _ = collate(chunk)
        for s, pred in zip(chunk, model.predict_batch(batch)):
            results.append((world_modes(pred, s.paths, s.actor), pred.joint_probs, pred))
    return results


def predict(model: GoalGraphNet, actor: F.ActorState, lane_map: LaneMap, scene_actors=()) -> tuple:
    """Full pipeline for one actor: goals, features, graph network, world frame."""
    sf = build_features(lane_map, actor, scene_actors)
    trajs, probs, pred = predict_samples(model, [sf])[0]
    return trajs, probs, sf.paths, pred


def kinematic_baseline(actor: F.ActorState) -> np.ndarray:
    """Constant-acceleration extrapolation at the future timestamps (12, 2)."""
    return F.rollout_world(actor, F.FUTURE_T)
