"""Static SVG figures: scene predictions and error-vs-horizon curves.

Output bytes are deterministic for fixed inputs (fixed hash salt, no date
metadata, explicit element ids).
"""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .features import FUTURE_T  # noqa: E402

_RC = {"svg.hashsalt": "lanegoal", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path) -> None:
    buf = io.StringIO()
    with plt.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    text = buf.getvalue()
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text


def scene_figure(lane_map, paths, trajectories, probs, actor, history=None, ground_truth=None):
    """Lanes in grey, goal paths dashed, modes with opacity proportional to probability."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 7))
    for lane_id in sorted(lane_map.lanes):
        c = lane_map.lanes[lane_id].centerline
        ax.plot(c[:, 0], c[:, 1], color="0.75", lw=1.0, gid=f"lane-{lane_id}")
    for i, ctrl in enumerate(lane_map.controls):
        r = np.vstack([ctrl.region, ctrl.region[:1]])
        ax.fill(r[:, 0], r[:, 1], color="tab:orange", alpha=0.25, lw=0, gid=f"control-{i}-{ctrl.kind}")
    for j, p in enumerate(paths):
        ax.plot(p.points[:, 0], p.points[:, 1], color="tab:blue", lw=1.2, ls="--", gid=f"goal-path-{j}")
    probs = np.asarray(probs, dtype=np.float64)
    top = probs.max() if len(probs) else 1.0
    for k, traj in enumerate(trajectories):
        alpha = float(np.clip(probs[k] / top if top > 0 else 0.0, 0.05, 1.0))
        ax.plot(traj[:, 0], traj[:, 1], color="tab:red", lw=2.0, alpha=alpha, marker="o", ms=2,
                gid=f"mode-{k}")
    if history is not None:
        ax.plot(history[:, 0], history[:, 1], color="k", lw=1.5, gid="history")
    if ground_truth is not None:
        ax.plot(ground_truth[:, 0], ground_truth[:, 1], color="tab:green", lw=1.5, marker="x", ms=3,
                gid="ground-truth")
    ax.plot([actor.centroid[0]], [actor.centroid[1]], "ks", ms=5, gid="actor")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    return fig


def render_scene_svg(path, lane_map, paths, trajectories, probs, actor, ground_truth=None) -> str:
    fig = scene_figure(lane_map, paths, trajectories, probs, actor, actor.history, ground_truth)
    return _save(fig, path)


def render_curves_svg(path, report: dict, slice_name: str = "all") -> str:
    """Mean along-track and cross-track error versus horizon for each method (min_1 selection)."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    methods = report.get(slice_name, {})
    for name in sorted(methods):
        agg = methods[name]
        for ax, key in zip(axes, ("ATE_curve", "CTE_curve")):
            curve = agg.get(key, {}).get("min_1")
            if curve:
                ax.plot(FUTURE_T[:len(curve)], curve, marker="o", ms=3, label=name, gid=f"{key}-{name}")
    axes[0].set_title("along-track error")
    axes[1].set_title("cross-track error")
    for ax in axes:
        ax.set_xlabel("horizon [s]")
        ax.set_ylabel("error [m]")
        ax.grid(alpha=0.3)
    if methods:
        axes[0].legend()
    fig.tight_layout()
    return _save(fig, path)
