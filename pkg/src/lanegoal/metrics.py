"""Displacement, along/cross-track and min_k evaluation metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import frenet
from .features import FUTURE_STEPS, wrap_angle

GT_RESOLUTION = 0.1
TURN_THRESHOLD_DEG = 10.0
MIN_EVAL_MOTION = 1.0
DEGENERATE_MOTION = 0.2
K_VALUES = (1, 3, 5, 10)
METRIC_NAMES = ("ADE", "FDE", "AATE", "ACTE")


def _xy(traj) -> np.ndarray:
    return np.asarray(getattr(traj, "xy", traj), dtype=np.float64)


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"trajectory length mismatch: {pred.shape} vs {gt.shape}")


def ade(pred, gt) -> float:
    p, g = _xy(pred), _xy(gt)
    _check(p, g)
    return float(np.linalg.norm(p - g, axis=-1).mean())


def fde(pred, gt) -> float:
    p, g = _xy(pred), _xy(gt)
    _check(p, g)
    return float(np.linalg.norm(p[-1] - g[-1]))


def ade_many(preds, gt) -> np.ndarray:
    return np.linalg.norm(np.asarray(preds) - np.asarray(gt)[None], axis=-1).mean(axis=-1)


def top_k_modes(probs, k: int) -> np.ndarray:
    """Indices of the k most probable modes; ties go to the lower index."""
    probs = np.asarray(probs)
    order = np.lexsort((np.arange(len(probs)), -probs))
    return order[:k]


def min_k_select(trajs, probs, gt, k: int) -> int:
    """Index of the lowest-ADE mode among the k most probable."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cand = top_k_modes(probs, k)
    errs = ade_many(np.asarray(trajs)[cand], _xy(gt))
    return int(cand[int(np.argmin(errs))])


def expected_ade(trajs, probs, gt) -> float:
    return float(np.dot(np.asarray(probs), ade_many(trajs, _xy(gt))))


def reference_path(gt, origin=None, heading=None) -> np.ndarray:
    """Ground-truth path resampled every 0.1 m (or the heading line when gt barely moves)."""
    g = _xy(gt)
    if frenet.polyline_length(g) < DEGENERATE_MOTION and heading is not None:
        start = g[0] if origin is None else np.asarray(origin, dtype=np.float64)
        direction = np.array([np.cos(heading), np.sin(heading)])
        return frenet.resample_polyline(np.stack([start, start + direction]), GT_RESOLUTION)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(g, axis=0), axis=1) > 1e-9])
    g = g[keep]
    if len(g) < 2:
        raise ValueError("ground truth does not move; pass heading for the fallback line")
    return frenet.resample_polyline(g, GT_RESOLUTION)


@dataclass
class AlongCross:
    ate: np.ndarray
    cte: np.ndarray

    @property
    def aate(self) -> float:
        return float(self.ate.mean())

    @property
    def acte(self) -> float:
        return float(self.cte.mean())


def along_cross_error(pred, gt, origin=None, heading=None, ref=None) -> AlongCross:
    p, g = _xy(pred), _xy(gt)
    _check(p, g)
    if ref is None:
        ref = reference_path(g, origin, heading)
    _, _, _, a_hat, c_hat = frenet.project_points(p, ref)
    _, _, _, a_gt, _ = frenet.project_points(g, ref)
    return AlongCross(np.abs(a_hat - a_gt), np.abs(c_hat))


def turning_filter(actor) -> bool:
    fut = actor.future
    d = fut[-1] - fut[-2]
    if np.hypot(*d) < 1e-9:
        return False
    final = np.arctan2(d[1], d[0])
    return abs(np.degrees(wrap_angle(final - actor.heading))) > TURN_THRESHOLD_DEG


def train_filter(actor) -> bool:
    return (not actor.is_parked and not actor.is_ego and actor.future is not None
            and len(actor.future) == FUTURE_STEPS)


def eval_filter(actor) -> bool:
    if not train_filter(actor):
        return False
    return float(np.linalg.norm(actor.future[-1] - actor.centroid)) >= MIN_EVAL_MOTION


def _sel_label(k) -> str:
    return "min_*" if k == "*" else f"min_{k}"


@dataclass
class SampleMetrics:
    """Metrics for one sample; ``sel[label][metric]``."""
    sel: dict
    eade: float
    ate_curve: dict
    cte_curve: dict
    num_modes: int


def sample_metrics(trajs, probs, gt, origin=None, heading=None) -> SampleMetrics:
    trajs = np.asarray(trajs, dtype=np.float64)
    g = _xy(gt)
    ref = reference_path(g, origin, heading)
    K = len(trajs)
    sel, ate_c, cte_c = {}, {}, {}
    for k in K_VALUES + ("*",):
        idx = min_k_select(trajs, probs, g, K if k == "*" else k)
        ac = along_cross_error(trajs[idx], g, ref=ref)
        lab = _sel_label(k)
        sel[lab] = {"ADE": ade(trajs[idx], g), "FDE": fde(trajs[idx], g), "AATE": ac.aate, "ACTE": ac.acte}
        ate_c[lab], cte_c[lab] = ac.ate, ac.cte
    return SampleMetrics(sel, expected_ade(trajs, probs, g), ate_c, cte_c, K)


SELECTIONS = tuple(_sel_label(k) for k in K_VALUES + ("*",))


@dataclass
class EvalReport:
    """Aggregated metrics per slice (``all``, ``turning``) and per method."""
    slices: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.slices, indent=2, sort_keys=True)

    def table(self) -> str:
        cols = ["min_1 ADE", "min_1 FDE", "min_3 ADE", "min_3 FDE", "min_5 ADE", "min_10 ADE", "E[ADE]",
                "min_* ADE", "min_* AATE", "min_* ACTE", "min_1 AATE", "min_1 ACTE"]
        lines = []
        for slice_name in sorted(self.slices):
            methods = self.slices[slice_name]
            count = next(iter(methods.values()))["count"] if methods else 0
            lines.append(f"[{slice_name}] samples={count}")
            width = max([len("method")] + [len(m) for m in methods])
            lines.append("  ".join([f"{'method':<{width}}"] + [f"{c:>10}" for c in cols]))
            for name in sorted(methods):
                m = methods[name]
                vals = []
                for c in cols:
                    if c == "E[ADE]":
                        v = m["E[ADE]"]
                    else:
                        sel, met = c.split(" ")
                        v = m["metrics"][sel][met]
                    vals.append(f"{v:>10.3f}")
                lines.append("  ".join([f"{name:<{width}}"] + vals))
            lines.append("")
        return "\n".join(lines)


def aggregate(samples: list) -> dict:
    if not samples:
        return {"count": 0, "metrics": {s: {m: 0.0 for m in METRIC_NAMES} for s in SELECTIONS},
                "E[ADE]": 0.0, "ATE_curve": {}, "CTE_curve": {}, "modes_mean": 0.0, "modes_std": 0.0}
    out = {s: {m: float(np.mean([x.sel[s][m] for x in samples])) for m in METRIC_NAMES} for s in SELECTIONS}
    modes = np.array([x.num_modes for x in samples], dtype=np.float64)
    return {
        "count": len(samples),
        "metrics": out,
        "E[ADE]": float(np.mean([x.eade for x in samples])),
        "ATE_curve": {s: np.mean([x.ate_curve[s] for x in samples], axis=0).tolist() for s in ("min_1", "min_*")},
        "CTE_curve": {s: np.mean([x.cte_curve[s] for x in samples], axis=0).tolist() for s in ("min_1", "min_*")},
        "modes_mean": float(modes.mean()),
        "modes_std": float(modes.std()),
    }
