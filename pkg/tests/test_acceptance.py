"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The end-to-end learning check trains the default model on 2,000 generated
scenes and takes several minutes on a laptop-class CPU.
"""
from __future__ import annotations

import json
import time

import numpy as np
import pytest

from lanegoal import dataio, frenet, metrics
from lanegoal import features as F
from lanegoal.cli import main
from lanegoal.config import RunConfig
from lanegoal.labeling import label_spatial
from lanegoal.lane_map import propose_goal_paths
from lanegoal.loss import BatchTargets, regression_loss, total_loss
from lanegoal.model import GoalGraphNet, ModelConfig
from lanegoal.pipeline import build_features, predict_samples
from lanegoal import train as trainer

from oracles import dense_samples, nearest_on_samples
from test_loss import _random_case, make_output
from test_model import TINY, full_model_gradcheck, random_actor, random_inputs


@pytest.fixture
def verdict(capsys):
    def emit(num, label, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {num:2d} {label}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
        assert ok, detail
    return emit


# -- 1 ---------------------------------------------------------------------

def _random_path(rng):
    n = int(rng.integers(3, 9))
    heading = rng.uniform(-np.pi, np.pi) + np.concatenate([[0.0], np.cumsum(rng.uniform(-0.8, 0.8, n - 2))])
    steps = rng.uniform(1.0, 4.0, n - 1)[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    return np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)]) + rng.uniform(-50, 50, 2)


def _oracle_check(path, pts, along, cross):
    """Largest along/|cross| disagreement with the dense oracle, skipping points
    whose nearest sample is a path end (the package extrapolates there) and
    points with two distinct nearest locations (the oracle is ambiguous)."""
    samples, arcs = dense_samples(path)
    worst = 0.0
    used = 0
    for p, a, c in zip(pts, along, cross):
        d, s, i, dist = nearest_on_samples(samples, arcs, p)
        if i == 0 or i == len(samples) - 1:
            continue
        near = np.flatnonzero(dist <= d + 1e-9)
        if np.ptp(arcs[near]) > 1e-3:
            continue
        worst = max(worst, abs(a - s), abs(abs(c) - d))
        used += 1
    return worst, used


def test_criterion_01_frenet_correctness(verdict):
    rng = np.random.default_rng(2024)
    pairs = []
    for _ in range(1000):
        path = _random_path(rng)
        total = frenet.polyline_length(path)
        ac = np.stack([rng.uniform(0.05 * total, 0.95 * total, 12), rng.uniform(-3, 3, 12)], axis=1)
        pairs.append((path, frenet.unproject_points(path, ac)))

    t0 = time.perf_counter()
    projected = [frenet.project_points(xy, path) for path, xy in pairs]
    elapsed = time.perf_counter() - t0

    worst_oracle, checked, worst_rt, rt_checked = 0.0, 0, 0.0, 0
    for (path, xy), (seg, t_raw, _, a, c) in zip(pairs, projected):
        w, n = _oracle_check(path, xy, a, c)
        worst_oracle, checked = max(worst_oracle, w), checked + n
        interior = (t_raw > 1e-6) & (t_raw < 1 - 1e-6)
        if interior.any():
            back = frenet.unproject_points(path, np.stack([a, c], axis=1)[interior])
            worst_rt = max(worst_rt, float(np.max(np.abs(back - xy[interior]))))
            rt_checked += int(interior.sum())
    ok = worst_oracle < 1e-3 and worst_rt < 1e-9 and elapsed < 10.0 and checked > 10_000
    verdict(1, "frenet correctness", ok,
            f"(oracle max err {worst_oracle:.2e} m over {checked} pts, round trip {worst_rt:.1e} m "
            f"over {rt_checked} pts, {elapsed:.2f}s)")


# -- 2 ---------------------------------------------------------------------

def test_criterion_02_projection_closed_form(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    x = np.arange(0.0, 51.0)
    # the four axis directions; left of travel is positive cross-track
    frames = [(np.stack([x, 0 * x], 1), lambda a, c: (a, c)),
              (np.stack([0 * x, x], 1), lambda a, c: (-c, a)),
              (np.stack([-x, 0 * x], 1), lambda a, c: (-a, -c)),
              (np.stack([0 * x, -x], 1), lambda a, c: (c, -a))]
    for path, to_xy in frames:
        a = rng.uniform(0.0, 50.0, 200)
        c = rng.uniform(-5.0, 5.0, 200)
        px, py = to_xy(a, c)
        _, _, _, a_hat, c_hat = frenet.project_points(np.stack([px, py], 1), path)
        xy = frenet.unproject_points(path, np.stack([a, c], 1))
        worst = max(worst, np.max(np.abs(a_hat - a)), np.max(np.abs(c_hat - c)),
                    np.max(np.abs(xy - np.stack([px, py], 1))))
    # rollout of constant acceleration on a straight path is the closed form
    act = F.ActorState("k", (0.0, 0.0), 0.0, (4.0, 0.0), (0.5, 0.0), np.zeros((20, 2)))
    r = F.kinematic_rollout(act, np.stack([np.arange(81.0), np.zeros(81)], 1))
    t = np.arange(13) * 0.5
    worst = max(worst, np.max(np.abs(r[:, 0] - (4.0 * t + 0.25 * t * t))), np.max(np.abs(r[:, 1])))
    verdict(2, "projection closed form", worst <= 1e-12, f"(max err {worst:.1e})")


# -- 3 ---------------------------------------------------------------------

def test_criterion_03_auto_labeling(verdict):
    scenes = dataio.gen_scenes("mixed", 1000, seed=50_000)
    off = [0, 0]
    follow = [0, 0]
    equal_checked = 0
    equal_ok = True
    for sc in scenes:
        t = sc.target
        paths = propose_goal_paths(sc.map, t.centroid)
        tgt = label_spatial(paths, t.future)
        nz = tgt.goal_probs[tgt.goal_probs > 0]
        if len(nz) > 1:
            equal_checked += 1
            equal_ok &= bool(np.all(nz == 1.0 / len(nz)))
        if sc.behavior == "off_map":
            off[0] += tgt.goal_free_prob == 1.0
            off[1] += 1
        elif sc.behavior == "lane_follow":
            follow[0] += len(nz) >= 1
            follow[1] += 1
    straight = lambda o: np.stack([np.arange(81.0), np.full(81, o)], 1)
    fut = np.stack([np.arange(1, 13) * 5.0, np.zeros(12)], 1)
    boundaries = (
        label_spatial([straight(0.0), straight(0.1)], fut).goal_probs.tolist() == [0.5, 0.5]
        and label_spatial([straight(0.0), straight(0.1 + 1e-9)], fut).goal_probs.tolist() == [1.0, 0.0]
        and label_spatial([straight(5.0)], fut).goal_free_prob == 1.0
        and label_spatial([straight(5.0 - 1e-9)], fut).goal_free_prob == 0.0
    )
    ok = (off[1] > 0 and off[0] == off[1] and follow[0] >= 0.95 * follow[1] and equal_ok
          and equal_checked > 0 and boundaries)
    verdict(3, "auto labeling", ok,
            f"(off_map {off[0]}/{off[1]}, lane_follow {follow[0]}/{follow[1]}, "
            f"shared labels {equal_checked}, boundaries {'ok' if boundaries else 'bad'})")


# -- 4 ---------------------------------------------------------------------

def test_criterion_04_graph_network_properties(verdict):
    worst_eq, worst_sum, counts_ok = 0.0, 0.0, True
    for M in (1, 2):
        for N in range(0, 9):
            rng = np.random.default_rng(1000 + 10 * N + M)
            model = GoalGraphNet(ModelConfig(temporal_modes=M, seed=N, **TINY))
            actor = random_actor(rng)
            r, ro = random_inputs(rng, N)
            base = model.graph_forward(model.encode(actor, r, ro))
            counts_ok &= base.num_modes == (N + 1) * M == len(base.joint_probs)
            worst_sum = max(worst_sum, abs(base.joint_probs.sum() - 1.0))
            if N == 0:
                continue
            perm = rng.permutation(N)
            other = model.graph_forward(model.encode(actor, r[perm], ro[perm]))
            pairs = [(other.goal_trajectories, base.goal_trajectories[perm]),
                     (other.spatial_scores[:-1], base.spatial_scores[:-1][perm]),
                     (other.temporal_scores[:-1], base.temporal_scores[:-1][perm]),
                     (other.free_trajectories, base.free_trajectories),
                     (other.spatial_scores[-1:], base.spatial_scores[-1:])]
            worst_eq = max([worst_eq] + [float(np.max(np.abs(x - y))) for x, y in pairs])
    ok = worst_eq <= 1e-9 and worst_sum <= 1e-12 and counts_ok
    verdict(4, "graph network properties", ok,
            f"(equivariance {worst_eq:.1e}, prob sum {worst_sum:.1e}, mode counts {'ok' if counts_ok else 'bad'})")


# -- 5 ---------------------------------------------------------------------

def test_criterion_05_gradient_integrity(verdict):
    results = [full_model_gradcheck(seed, M=1 + seed % 2) for seed in range(10)]
    worst = max(r[0] for r in results)
    checked = sum(r[1] for r in results)
    worst_small = max(r[2] for r in results)
    small = sum(r[3] for r in results)
    verdict(5, "gradient integrity", worst < 1e-4 and worst_small < 1e-4,
            f"(max relative error {worst:.2e} over {checked} entries at step 1e-5; "
            f"{small} entries below 1e-4 rechecked at step 1e-3: {worst_small:.2e})")


# -- 6 ---------------------------------------------------------------------

def test_criterion_06_loss_semantics(verdict):
    gt = np.zeros((12, 2))
    arithmetic = (abs(regression_loss([1.0], [gt], [gt + [0.5, 0.0]]) - 6.0) < 1e-12
                  and abs(regression_loss([1.0], [gt], [gt + [0.5, 0.1]], gamma=5.0) - 12.0) < 1e-12)
    rng = np.random.default_rng(0)
    g = rng.normal(size=(2, 12, 2))
    out = make_output([0], 1, 1, rng, traj=g[:1, None], free=g[1:, None], scale=0.0)
    out.edge_spatial.data[:] = 60.0
    out.free_spatial.data[:] = -60.0
    from lanegoal import tensor as T
    out.spatial_logp = T.segment_log_softmax(T.concat([out.edge_spatial, out.free_spatial], axis=0),
                                             np.array([0, 0]), 1)
    perfect = total_loss(out, BatchTargets(np.array([1.0, 0.0]), g)).total
    out, tg = _random_case(np.random.default_rng(1), [3, 2, 1], 2)
    lb = total_loss(out, tg)
    lb.tensor.backward()
    G = len(out.owner)
    unused = tg.spatial == 0
    zero_grad = not out.edge_traj.grad[unused[:G]].any() and not out.free_traj.grad[unused[G:]].any()
    ok = arithmetic and perfect < 1e-11 and zero_grad
    verdict(6, "loss semantics", ok,
            f"(fixtures {'ok' if arithmetic else 'bad'}, perfect loss {perfect:.1e}, "
            f"zero-target gradient {'zero' if zero_grad else 'nonzero'})")


# -- 7 ---------------------------------------------------------------------

def test_criterion_07_metric_suite(verdict):
    model = GoalGraphNet(ModelConfig(temporal_modes=2, **TINY))
    scenes = [s for s in dataio.gen_scenes("mixed", 150, seed=70_000) if metrics.eval_filter(s.target)]
    feats = [build_features(s.map, s.target, s.actors, seed=s.seed) for s in scenes]
    monotone, bounded = True, True
    for sc, (trajs, probs, _) in zip(scenes, predict_samples(model, feats)):
        t = sc.target
        sm = metrics.sample_metrics(trajs, probs, t.future, t.centroid, t.heading)
        seq = [sm.sel[s]["ADE"] for s in metrics.SELECTIONS]
        monotone &= all(a >= b - 1e-12 for a, b in zip(seq, seq[1:]))
        bounded &= sm.eade >= sm.sel["min_*"]["ADE"] - 1e-12
    th = np.linspace(0.05, 1.2, 12)
    gt = np.stack([30 * np.sin(th), 30 - 30 * np.cos(th)], axis=1)
    samples, arcs = dense_samples(metrics.reference_path(gt))
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        pred = gt + rng.normal(scale=0.8, size=(12, 2))
        pred[0], pred[-1] = gt[0] + [0.3, 0.5], gt[-1] + [-0.4, -0.2]
        ac = metrics.along_cross_error(pred, gt)
        for i in range(12):
            d, s, _, _ = nearest_on_samples(samples, arcs, pred[i])
            _, s_gt, _, _ = nearest_on_samples(samples, arcs, gt[i])
            worst = max(worst, abs(ac.cte[i] - d), abs(ac.ate[i] - abs(s - s_gt)))
    line = np.stack([np.arange(1, 13) * 2.0, np.zeros(12)], axis=1)
    st = metrics.along_cross_error(line + [0.0, 0.4], line)
    straight_ok = not st.ate.any() and np.max(np.abs(st.cte - 0.4)) < 1e-12
    ok = monotone and bounded and worst < 1e-3 and straight_ok and len(scenes) > 100
    verdict(7, "metric suite", ok,
            f"({len(scenes)} samples, monotone {monotone}, E[ADE] bound {bounded}, "
            f"oracle err {worst:.1e} m, straight {'exact' if straight_ok else 'off'})")


# -- 8 ---------------------------------------------------------------------

def test_criterion_08_end_to_end_learning(verdict):
    t0 = time.perf_counter()
    scenes = dataio.gen_scenes("mixed", 2500, seed=0)
    train_scenes = [s for s in scenes if dataio.split_of(s.seed) == "train"]
    heldout = [s for s in scenes if dataio.split_of(s.seed) != "train"]
    samples = trainer.prepare_samples(train_scenes)
    run = RunConfig(model=ModelConfig(temporal_modes=1))
    model, _, _ = trainer.train_model(samples, run)
    elapsed = time.perf_counter() - t0
    res = trainer.evaluate(model, heldout)
    gain = 1.0 - res.min1_ade_model / res.min1_ade_baseline
    ok = (len(train_scenes) == 2000 and len(heldout) == 500 and elapsed <= 1800
          and res.goal_accuracy >= 0.90 and gain >= 0.30)
    verdict(8, "end to end learning", ok,
            f"(goal accuracy {res.goal_accuracy:.3f} on {res.goal_samples}, min_1 ADE {res.min1_ade_model:.3f} "
            f"vs kinematic {res.min1_ade_baseline:.3f} = {gain:.1%} better, {elapsed / 60:.1f} min)")


# -- 9 ---------------------------------------------------------------------

def test_criterion_09_map_adaptivity(verdict):
    scenes = [s for s in dataio.gen_scenes("mixed", 500, seed=90_000) if metrics.eval_filter(s.target)]
    counts = np.array([len(propose_goal_paths(s.map, s.target.centroid)) for s in scenes])
    spans = {1, 3, 4} <= set(counts.tolist())
    valid = True
    for M in (1, 2):
        model = GoalGraphNet(ModelConfig(temporal_modes=M, **TINY))
        m = dataio.gen_map("n_way4", 1)
        hist = np.stack([500 + F.HISTORY_T * 6.0, np.full(20, 500.0)], axis=1)
        actor = F.ActorState("far", (500.0, 500.0), 0.0, (6.0, 0.0), (0.0, 0.0), hist)
        sf = build_features(m, actor)
        trajs, probs, _ = predict_samples(model, [sf])[0]
        valid &= (sf.num_goals == 0 and trajs.shape == (M, 12, 2) and np.all(np.isfinite(trajs))
                  and abs(probs.sum() - 1.0) < 1e-12)
    ok = counts.std() > 0 and spans and valid
    verdict(9, "map adaptivity", ok,
            f"(N mean {counts.mean():.2f} std {counts.std():.2f}, values {sorted(set(counts.tolist()))}, "
            f"off-map modes {'ok' if valid else 'bad'})")


# -- 10 --------------------------------------------------------------------

def _pipeline(root, capsys):
    root.mkdir()
    data = root / "data.jsonl"
    codes = [main(["gen-data", "--count", "30", "--out", str(data), "--seed", "5"])]
    cfg = root / "run.ini"
    cfg.write_text(f"""[model]
temporal_modes = 2
history_hidden = 8
state_hidden = 8
cnn_channels = 4, 4
graph_hidden = 8
head_hidden = 8

[train]
epochs = 2
batch_size = 8
seed = 3

[data]
train = {data}
train_split = train
eval = {data}
eval_split = heldout

[output]
checkpoint = ckpt.json
loss_csv = loss.csv
report_dir = report
""")
    codes.append(main(["train", "--config", str(cfg)]))
    codes.append(main(["eval", "--config", str(cfg)]))
    codes.append(main(["predict", "--scene", str(data), "--index", "2", "--checkpoint", str(root / "ckpt.json"),
                       "--svg", str(root / "scene.svg")]))
    capsys.readouterr()
    files = ["ckpt.json", "loss.csv", "report/report.json", "report/report.txt", "report/curves.csv",
             "report/curves.svg", "scene.svg", "data.jsonl"]
    return codes, {f: (root / f).read_bytes() for f in files}


def test_criterion_10_determinism(tmp_path, capsys, verdict):
    codes_a, a = _pipeline(tmp_path / "a", capsys)
    codes_b, b = _pipeline(tmp_path / "b", capsys)
    differing = [f for f in a if a[f] != b[f]]
    ok = codes_a == codes_b == [0, 0, 0, 0] and not differing
    report = json.loads(a["report/report.json"])
    verdict(10, "determinism", ok,
            f"({len(a)} artifacts compared, differing: {differing or 'none'}, "
            f"eval samples {report['slices']['all']['model']['count']})")
