"""Training loop, checkpoints and evaluation over datasets."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from . import tensor as T
from .config import RunConfig
from .loss import total_loss
from .metrics import EvalReport, aggregate, eval_filter, sample_metrics, train_filter, turning_filter
from .model import GoalGraphNet, ModelConfig
from .pipeline import collate, kinematic_baseline, predict_samples, scene_features

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "lanegoal-checkpoint"


class NumericError(RuntimeError):
    pass


def prepare_samples(scenes, keep=train_filter) -> list:
    return [scene_features(s) for s in scenes if keep(s.target)]


def save_checkpoint(path, model: GoalGraphNet, opt: T.Adam | None, epoch: int, run: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in model.state_arrays().items()}
    if opt is not None:
        for name, m, v in zip(model.params, opt.m, opt.v):
            arrays[f"adam_m/{name}"] = m
            arrays[f"adam_v/{name}"] = v
    meta = {
        "kind": CHECKPOINT_KIND,
        "epoch": epoch,
        "adam_t": 0 if opt is None else opt.t,
        "model": model.config.to_dict(),
        "run": run or {},
    }
    Path(path).write_text(T.dumps_arrays(arrays, meta), encoding="utf-8")


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Returns ``(model, adam_state_or_None, epoch, meta)``."""
    arrays, meta = T.loads_arrays(Path(path).read_text(encoding="utf-8"))
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path} is not a model checkpoint")
    cfg = ModelConfig(**meta["model"])
    if expect is not None:
        mine, theirs = expect.to_dict(), cfg.to_dict()
        mine.pop("seed"), theirs.pop("seed")
        if mine != theirs:
            diff = sorted(k for k in mine if mine[k] != theirs[k])
            raise ValueError(f"checkpoint/config shape mismatch in {', '.join(diff)}")
    model = GoalGraphNet(cfg)
    model.load_state_arrays({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    adam = None
    if any(k.startswith("adam_m/") for k in arrays):
        adam = {
            "t": int(meta.get("adam_t", 0)),
            "m": [arrays[f"adam_m/{k}"] for k in model.params],
            "v": [arrays[f"adam_v/{k}"] for k in model.params],
        }
    return model, adam, int(meta.get("epoch", 0)), meta


@dataclass
class EpochLog:
    epoch: int
    cls: float
    reg: float
    total: float


def train_model(samples, run: RunConfig, model: GoalGraphNet | None = None, adam_state=None,
                start_epoch: int = 0, epochs: int | None = None, on_epoch=None):
    """Mini-batch Adam over ``samples``; returns ``(model, optimizer, logs)``.

    Shuffling uses ``seed + epoch`` so resumed runs see the same order.
    """
    model = model or GoalGraphNet(run.model)
    opt = T.Adam(model.parameters(), lr=run.learning_rate)
    if adam_state is not None:
        opt.t, opt.m, opt.v = adam_state["t"], [m.copy() for m in adam_state["m"]], [v.copy() for v in adam_state["v"]]
    logs = []
    n_epochs = run.epochs if epochs is None else epochs
    for epoch in range(start_epoch, start_epoch + n_epochs):
        rng = np.random.default_rng([run.seed, epoch])
        order = rng.permutation(len(samples))
        opt.lr = run.epoch_learning_rate(epoch)
        sums = np.zeros(3)
        for i in range(0, len(order), run.batch_size):
            chunk = [samples[j] for j in order[i:i + run.batch_size]]
            batch, targets = collate(chunk)
            out = model.forward(batch)
            lb = total_loss(out, targets, run.gamma, run.lam)
            if not np.isfinite(lb.total):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}")
            opt.zero_grad()
            lb.tensor.backward()
            opt.step()
            sums += (lb.cls, lb.reg, lb.total)
        n = max(len(samples), 1)
        entry = EpochLog(epoch + 1, float(sums[0] / n), float(sums[1] / n), float(sums[2] / n))
        logs.append(entry)
        log.info("epoch %d cls %.4f reg %.4f total %.4f", entry.epoch, entry.cls, entry.reg, entry.total)
        if on_epoch is not None:
            on_epoch(entry, model, opt)
    return model, opt, logs


def write_loss_csv(path, logs, append=False) -> None:
    path = Path(path)
    new = not append or not path.exists()
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["epoch", "cls", "reg", "total"])
        for e in logs:
            w.writerow([e.epoch, repr(float(e.cls)), repr(float(e.reg)), repr(float(e.total))])


# --- evaluation ---------------------------------------------------------------

@dataclass
class EvalResult:
    report: EvalReport
    goal_accuracy: float
    goal_samples: int
    mode_counts: np.ndarray
    min1_ade_model: float
    min1_ade_baseline: float


def evaluate(model: GoalGraphNet, scenes) -> EvalResult:
    kept = [s for s in scenes if eval_filter(s.target)]
    samples = prepare_samples(kept, keep=lambda a: True)
    preds = predict_samples(model, samples)
    rows = {"all": {"model": [], "kinematic": []}, "turning": {"model": [], "kinematic": []}}
    hits, goal_n, counts = 0, 0, []
    for s, (trajs, probs, pred) in zip(samples, preds):
        actor = s.actor
        gt = actor.future
        sm = sample_metrics(trajs, probs, gt, actor.centroid, actor.heading)
        base = kinematic_baseline(actor)[None]
        bm = sample_metrics(base, np.ones(1), gt, actor.centroid, actor.heading)
        slices = ["all"] + (["turning"] if turning_filter(actor) else [])
        for sl in slices:
            rows[sl]["model"].append(sm)
            rows[sl]["kinematic"].append(bm)
        counts.append(s.num_goals)
        if s.spatial is not None and s.spatial.goal_free_prob == 0.0:
            goal_n += 1
            top = int(np.argmax(pred.spatial_scores))
            if top < s.num_goals and s.spatial.goal_probs[top] > 0:
                hits += 1
    report = EvalReport({sl: {m: aggregate(v) for m, v in d.items()} for sl, d in rows.items()})
    return EvalResult(
        report=report,
        goal_accuracy=hits / goal_n if goal_n else float("nan"),
        goal_samples=goal_n,
        mode_counts=np.array(counts),
        min1_ade_model=report.slices["all"]["model"]["metrics"]["min_1"]["ADE"],
        min1_ade_baseline=report.slices["all"]["kinematic"]["metrics"]["min_1"]["ADE"],
    )
