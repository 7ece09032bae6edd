"""Command-line entry point: ``lanegoal gen-data | train | eval | predict``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.  Errors are
reported on stderr as one JSON line ``{"error": <category>, "message": ...}``.
Set ``LANEGOAL_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to change verbosity.
"""
from __future__ import annotations

import argparse
import collections
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lanegoal")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(category: str, message: str, code: int) -> int:
    line = json.dumps({"error": category, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def _setup_logging() -> None:
    level = os.environ.get("LANEGOAL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# --- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from . import dataio

    if args.kind != "mixed":
        try:
            dataio.parse_kind(args.kind)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    out = Path(args.out)
    if not out.parent.is_dir():
        raise DataError(f"cannot write {out}: directory {out.parent} does not exist")
    scenes = dataio.gen_scenes(args.kind, args.count, args.seed)
    try:
        dataio.write_dataset(out, scenes)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc.strerror}") from None
    kinds = collections.Counter(s.kind for s in scenes)
    behaviors = collections.Counter(s.behavior for s in scenes)
    splits = collections.Counter(dataio.split_of(s.seed) for s in scenes)
    print("field,name,count")
    for field, counter in (("kind", kinds), ("behavior", behaviors), ("split", splits)):
        for name in sorted(counter):
            print(f"{field},{name},{counter[name]}")
    print(f"total,all,{len(scenes)}")
    return EXIT_OK


def _load_run(path, require=("train_data",)):
    from .config import ConfigError, load_config

    try:
        return load_config(path, require=require)
    except ConfigError as exc:
        raise DataError("invalid config: " + "; ".join(exc.problems)) from None


def _read(path, split):
    from . import dataio

    try:
        return dataio.read_dataset(path).split(split)
    except FileNotFoundError:
        raise DataError(f"dataset {path} does not exist") from None
    except dataio.DatasetError as exc:
        raise DataError(str(exc)) from None


def _load_ckpt(path, expect=None):
    from . import train

    try:
        return train.load_checkpoint(path, expect)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} does not exist") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from None


def cmd_train(args) -> int:
    from . import train

    run = _load_run(args.config)
    scenes = _read(run.train_data, run.train_split)
    samples = train.prepare_samples(scenes)
    if not samples:
        raise DataError(f"no trainable samples in split {run.train_split!r} of {run.train_data}")
    model, adam, start = None, None, 0
    if args.resume:
        model, adam, start, _ = _load_ckpt(args.resume, run.model)
    log.info("training on %d samples from epoch %d", len(samples), start)

    def checkpoint(entry, m, opt):
        train.save_checkpoint(run.checkpoint, m, opt, entry.epoch, run.to_dict())
        train.write_loss_csv(run.loss_csv, [entry], append=True)

    if not args.resume:
        train.write_loss_csv(run.loss_csv, [])
    model, opt, logs = train.train_model(samples, run, model, adam, start_epoch=start, on_epoch=checkpoint)
    if not logs:
        train.save_checkpoint(run.checkpoint, model, opt, start, run.to_dict())
    print("epoch,cls,reg,total")
    for e in logs:
        print(f"{e.epoch},{e.cls:.6f},{e.reg:.6f},{e.total:.6f}")
    print(f"# checkpoint {run.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import plotting, train

    run = _load_run(args.config, require=())
    data = run.eval_data
    if data is None:
        raise DataError("config has no [data] eval or train dataset")
    split = args.split or run.eval_split
    model, _, epoch, _ = _load_ckpt(args.checkpoint or run.checkpoint, run.model)
    scenes = _read(data, split)
    result = train.evaluate(model, scenes)
    out = Path(args.out) if args.out else run.report_dir
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "split": split,
        "checkpoint_epoch": epoch,
        "goal_accuracy": result.goal_accuracy,
        "goal_samples": result.goal_samples,
        "goal_count_mean": float(result.mode_counts.mean()) if len(result.mode_counts) else 0.0,
        "goal_count_std": float(result.mode_counts.std()) if len(result.mode_counts) else 0.0,
        "goal_count_values": sorted(int(v) for v in set(result.mode_counts.tolist())),
        "slices": result.report.slices,
    }
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    table = result.report.table()
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    with (out / "curves.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slice", "method", "selection", "step", "ate", "cte"])
        for sl in sorted(result.report.slices):
            for method in sorted(result.report.slices[sl]):
                agg = result.report.slices[sl][method]
                for sel in sorted(agg["ATE_curve"]):
                    for step, (a, c) in enumerate(zip(agg["ATE_curve"][sel], agg["CTE_curve"][sel])):
                        w.writerow([sl, method, sel, step, f"{a:.6f}", f"{c:.6f}"])
    plotting.render_curves_svg(out / "curves.svg", result.report.slices, "all")
    print(table)
    print(f"goal_accuracy,{result.goal_accuracy:.4f},{result.goal_samples}")
    print(f"# report {out / 'report.json'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from . import metrics, plotting
    from .pipeline import build_features, predict_samples

    scene_path = Path(args.scene)
    if not scene_path.is_file():
        raise DataError(f"scene file {scene_path} does not exist")
    scenes = _read(scene_path, "all")
    if not 0 <= args.index < len(scenes):
        raise DataError(f"scene index {args.index} out of range ({len(scenes)} scenes)")
    scene = scenes[args.index]
    model, _, _, _ = _load_ckpt(args.checkpoint)
    actor = scene.target
    sf = build_features(scene.map, actor, scene.actors, seed=scene.seed)
    trajs, probs, _ = predict_samples(model, [sf])[0]
    if not np.all(np.isfinite(trajs)) or not np.all(np.isfinite(probs)):
        return _fail("numeric", "non-finite prediction", EXIT_NUMERIC)
    if args.svg:
        plotting.render_scene_svg(args.svg, scene.map, sf.paths, trajs, probs, actor, actor.future)
    M = model.config.temporal_modes
    print("mode,spatial,temporal,probability,final_x,final_y,ade")
    for k, (traj, p) in enumerate(zip(trajs, probs)):
        j, m = divmod(k, M)
        spatial = "free" if j >= sf.num_goals else f"goal{j}"
        err = metrics.ade(traj, actor.future) if actor.future is not None else float("nan")
        print(f"{k},{spatial},{m},{p:.6f},{traj[-1, 0]:.3f},{traj[-1, 1]:.3f},{err:.3f}")
    if args.svg:
        print(f"# svg {args.svg}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lanegoal", description="Goal-path trajectory prediction toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic JSONL dataset")
    g.add_argument("--kind", default="mixed",
                   help="straight, curved, n_way3..n_way6, roundabout or mixed (default)")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from an INI config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", help="defaults to the config's checkpoint")
    e.add_argument("--split", choices=("train", "val", "test", "heldout", "all"))
    e.add_argument("--out", help="report directory (defaults to the config's report_dir)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="predict one scene and render an SVG")
    r.add_argument("--scene", required=True, help="JSONL scene file")
    r.add_argument("--index", type=int, default=0, help="line of the scene within the file")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--svg", help="output SVG path")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    from .train import NumericError

    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a command is required: gen-data, train, eval or predict")
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except DataError as exc:
        return _fail("data", exc, EXIT_DATA)
    except (NumericError, FloatingPointError) as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except OSError as exc:
        return _fail("data", f"{exc.filename}: {exc.strerror}", EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
