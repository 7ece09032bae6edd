"""Run configuration (INI file) with all-at-once validation.

Example::

    [model]
    temporal_modes = 1
    history_hidden = 64
    state_hidden = 32
    cnn_channels = 16, 32, 32
    pool = 8, 4
    graph_hidden = 64
    head_hidden = 64

    [loss]
    gamma = 5.0
    lambda = 1.0

    [train]
    learning_rate = 0.002
    schedule = cosine
    epochs = 70
    batch_size = 32
    seed = 0

    [data]
    train = data/train.jsonl
    train_split = train
    eval = data/train.jsonl
    eval_split = test

    [output]
    checkpoint = runs/model.ckpt.json
    loss_csv = runs/loss.csv
    report_dir = runs/report

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


SCHEDULES = ("constant", "cosine")
MIN_LR_FRACTION = 0.05


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    gamma: float = 5.0
    lam: float = 1.0
    learning_rate: float = 2e-3
    schedule: str = "cosine"
    epochs: int = 70
    batch_size: int = 32
    seed: int = 0
    train_data: Path | None = None
    train_split: str = "train"
    eval_data: Path | None = None
    eval_split: str = "test"
    checkpoint: Path = Path("model.ckpt.json")
    loss_csv: Path = Path("loss.csv")
    report_dir: Path = Path("report")

    def epoch_learning_rate(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``; cosine decays to 5% at the last epoch."""
        if self.schedule == "constant" or self.epochs <= 1:
            return self.learning_rate
        frac = min(epoch, self.epochs - 1) / (self.epochs - 1)
        scale = MIN_LR_FRACTION + (1 - MIN_LR_FRACTION) * 0.5 * (1 + math.cos(math.pi * frac))
        return self.learning_rate * scale

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "gamma": self.gamma,
            "lambda": self.lam,
            "learning_rate": self.learning_rate,
            "schedule": self.schedule,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


def _ints(text):
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


def load_config(path, require=("train_data",)) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file {path} does not exist"])
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError([f"config parse error: {exc}"]) from None
    return parse_config(cp, path.parent, require)


def parse_config(cp: configparser.ConfigParser, base: Path = Path("."), require=()) -> RunConfig:
    problems = []

    def get(section, key, conv, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError):
            problems.append(f"[{section}] {key}: cannot parse {raw!r}")
            return default

    d = ModelConfig()
    m = dict(
        temporal_modes=get("model", "temporal_modes", int, d.temporal_modes),
        history_hidden=get("model", "history_hidden", int, d.history_hidden),
        state_hidden=get("model", "state_hidden", int, d.state_hidden),
        cnn_channels=get("model", "cnn_channels", _ints, d.cnn_channels),
        pool=get("model", "pool", _ints, d.pool),
        graph_hidden=get("model", "graph_hidden", int, d.graph_hidden),
        head_hidden=get("model", "head_hidden", int, d.head_hidden),
    )
    cfg = RunConfig()
    cfg.gamma = get("loss", "gamma", float, cfg.gamma)
    cfg.lam = get("loss", "lambda", float, cfg.lam)
    cfg.learning_rate = get("train", "learning_rate", float, cfg.learning_rate)
    cfg.schedule = get("train", "schedule", str, cfg.schedule).strip().lower()
    cfg.epochs = get("train", "epochs", int, cfg.epochs)
    cfg.batch_size = get("train", "batch_size", int, cfg.batch_size)
    cfg.seed = get("train", "seed", int, cfg.seed)
    m["seed"] = cfg.seed

    if m["temporal_modes"] < 1:
        problems.append("[model] temporal_modes must be >= 1")
    for k in ("history_hidden", "state_hidden", "graph_hidden", "head_hidden"):
        if m[k] < 1:
            problems.append(f"[model] {k} must be >= 1")
    if len(m["cnn_channels"]) < 1 or any(c < 1 for c in m["cnn_channels"]):
        problems.append("[model] cnn_channels must be positive integers")
    if len(m["pool"]) != 2 or 80 % max(m["pool"][0], 1) or 4 % max(m["pool"][-1], 1):
        problems.append("[model] pool must be two integers dividing (80, 4)")
    if not cfg.gamma > 1.0:
        problems.append("[loss] gamma must be > 1")
    if cfg.lam < 0:
        problems.append("[loss] lambda must be >= 0")
    if cfg.learning_rate <= 0:
        problems.append("[train] learning_rate must be > 0")
    if cfg.schedule not in SCHEDULES:
        problems.append(f"[train] schedule must be one of {', '.join(SCHEDULES)}")
    if cfg.epochs < 0:
        problems.append("[train] epochs must be >= 0")
    if cfg.batch_size < 1:
        problems.append("[train] batch_size must be >= 1")

    def path_opt(section, key):
        if not cp.has_option(section, key):
            return None
        p = Path(cp.get(section, key))
        return p if p.is_absolute() else base / p

    cfg.train_data = path_opt("data", "train")
    cfg.eval_data = path_opt("data", "eval") or cfg.train_data
    cfg.train_split = cp.get("data", "train_split", fallback="train")
    cfg.eval_split = cp.get("data", "eval_split", fallback="test")
    for key in ("train_split", "eval_split"):
        if getattr(cfg, key) not in ("train", "val", "test", "heldout", "all"):
            problems.append(f"[data] {key} must be one of train/val/test/heldout/all")
    for key, attr in (("train", "train_data"), ("eval", "eval_data")):
        p = getattr(cfg, attr)
        if attr in require and p is None:
            problems.append(f"[data] {key} is required")
        elif attr in require and not p.is_file():
            problems.append(f"[data] {key}: {p} does not exist")
    cfg.checkpoint = path_opt("output", "checkpoint") or base / "model.ckpt.json"
    cfg.loss_csv = path_opt("output", "loss_csv") or base / "loss.csv"
    cfg.report_dir = path_opt("output", "report_dir") or base / "report"
    for p in (cfg.checkpoint, cfg.loss_csv):
        if not p.parent.exists():
            try:
                p.parent.mkdir(parents=True, exist_ok=True)
            except OSError:
                problems.append(f"[output] cannot create directory {p.parent}")

    if problems:
        raise ConfigError(problems)
    try:
        cfg.model = ModelConfig(**m)
    except ValueError as exc:
        raise ConfigError([f"[model] {exc}"]) from None
    return cfg
