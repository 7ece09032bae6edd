"""Soft-target classification plus mode-weighted path-frame L1 regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .labeling import label_temporal

PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))
DEFAULT_GAMMA = 5.0
DEFAULT_LAMBDA = 1.0


@dataclass
class LossBreakdown:
    cls: float
    reg: float
    total: float
    per_actor_cls: np.ndarray
    per_actor_reg: np.ndarray
    tensor: T.Tensor | None = None


def classification_loss(target, predicted) -> float:
    target = np.asarray(getattr(target, "joint_probs", target), dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if target.shape != predicted.shape:
        raise ValueError(f"target has {target.shape} modes but prediction has {predicted.shape}")
    return float(-(target * np.log(np.maximum(predicted, PROB_FLOOR))).sum())


def regression_loss(target, gt_per_mode, predictions, gamma: float = DEFAULT_GAMMA) -> float:
    """``gt_per_mode`` and ``predictions`` are indexed by flat mode k, each (T, 2)
    in that mode's frame; ``gt_per_mode[k]`` may be None only when the mode's
    target probability is zero."""
    p = np.asarray(getattr(target, "joint_probs", target), dtype=np.float64)
    total = 0.0
    for k, w in enumerate(p):
        if w <= 0:
            continue
        gt = gt_per_mode[k]
        if gt is None:
            raise ValueError(f"no ground truth projection for supported mode {k}")
        d = np.abs(np.asarray(gt) - np.asarray(predictions[k]))
        total += w * (d[:, 0].sum() + gamma * d[:, 1].sum())
    return float(total)


@dataclass
class BatchTargets:
    """Per-row targets aligned with model output rows (goals..., goal-free per sample)."""
    spatial: np.ndarray      # (G + B,) target spatial probability of each row
    gt: np.ndarray           # (G + B, 12, 2) ground truth in each row's frame


def temporal_labels(out, targets: BatchTargets) -> np.ndarray:
    """Closest temporal mode per row (computed from the current predictions)."""
    traj = np.concatenate([out.edge_traj.data, out.free_traj.data], axis=0)
    idx = np.zeros(len(traj), dtype=np.int64)
    for r in np.flatnonzero(targets.spatial > 0):
        idx[r] = label_temporal(traj[r], targets.gt[r])
    return idx


def total_loss(out, targets: BatchTargets, gamma: float = DEFAULT_GAMMA,
               lam: float = DEFAULT_LAMBDA) -> LossBreakdown:
    """Summed over actors: cls + lam * reg, with a differentiable ``tensor`` field."""
    M = out.temporal_logp.shape[1]
    rows = len(targets.spatial)
    tidx = temporal_labels(out, targets)
    weights = np.zeros((rows, M))
    weights[np.arange(rows), tidx] = targets.spatial

    logp = T.add(T.reshape(out.spatial_logp, (rows, 1)), out.temporal_logp)
    logp = T.maximum(logp, LOG_FLOOR)
    cls = T.weighted_nll(logp, weights)

    traj = T.concat([out.edge_traj, out.free_traj], axis=0)        # (rows, M, 12, 2)
    gt = np.broadcast_to(targets.gt[:, None], traj.shape)
    coord = np.array([1.0, gamma])
    w = weights[:, :, None, None] * coord
    reg = T.l1_loss(traj, gt, w)
    total = T.add(cls, T.mul(reg, lam))

    owner = out.row_owner
    row_cls = -(weights * np.maximum(logp.data, LOG_FLOOR)).sum(axis=1)
    row_reg = (np.abs(traj.data - gt) * w).sum(axis=(1, 2, 3))
    per_cls = np.bincount(owner, weights=row_cls, minlength=out.size)
    per_reg = np.bincount(owner, weights=row_reg, minlength=out.size)
    return LossBreakdown(float(cls.data), float(reg.data), float(total.data), per_cls, per_reg, total)
