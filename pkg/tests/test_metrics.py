from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanegoal import features as F
from lanegoal import metrics as Mx

from oracles import dense_samples, nearest_on_samples, subset_min_k

T12 = np.arange(1, 13)


def line(offset=(0.0, 0.0), speed=2.0):
    return np.stack([T12 * speed, np.zeros(12)], axis=1) + np.asarray(offset)


def actor_with_future(future, heading=0.0, **kw):
    hist = np.zeros((20, 2))
    return F.ActorState("a", (0.0, 0.0), heading, (1.0, 0.0), (0.0, 0.0), hist, future=future, **kw)


def test_ade_fde_examples():
    gt = line()
    assert Mx.ade(gt, gt) == 0.0 and Mx.fde(gt, gt) == 0.0
    assert Mx.ade(gt + [0, 2.0], gt) == pytest.approx(2.0, abs=1e-12)
    assert Mx.fde(gt + [0, 2.0], gt) == pytest.approx(2.0, abs=1e-12)
    grow = gt + np.stack([np.zeros(12), 0.25 * T12], axis=1)
    assert Mx.ade(grow, gt) == pytest.approx(1.625, abs=1e-12)
    assert Mx.fde(grow, gt) == pytest.approx(3.0, abs=1e-12)


def test_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        Mx.ade(line()[:11], line())


def test_min_k_examples():
    gt = line()
    trajs = np.stack([gt + [0, 3.0], gt + [0, 1.0]])
    probs = np.array([0.9, 0.1])
    assert Mx.ade(trajs[Mx.min_k_select(trajs, probs, gt, 1)], gt) == pytest.approx(3.0)
    assert Mx.ade(trajs[Mx.min_k_select(trajs, probs, gt, 2)], gt) == pytest.approx(1.0)
    assert Mx.min_k_select(trajs[:1], [1.0], gt, 5) == 0
    with pytest.raises(ValueError):
        Mx.min_k_select(trajs, probs, gt, 0)


def test_min_k_ties_broken_by_index():
    gt = line()
    trajs = np.stack([gt + [0, 3.0], gt + [0, 1.0], gt])
    assert Mx.min_k_select(trajs, [0.4, 0.4, 0.2], gt, 1) == 0
    assert Mx.min_k_select(trajs, [0.2, 0.4, 0.4], gt, 1) == 1


def test_min_k_matches_subset_oracle():
    rng = np.random.default_rng(0)
    gt = line()
    for _ in range(300):
        K = int(rng.integers(1, 8))
        trajs = gt + rng.normal(scale=2.0, size=(K, 12, 2))
        # coarse probabilities so ties actually occur
        probs = rng.integers(1, 4, size=K).astype(float)
        probs /= probs.sum()
        ades = Mx.ade_many(trajs, gt)
        for k in range(1, K + 2):
            assert Mx.min_k_select(trajs, probs, gt, k) == subset_min_k(ades, probs, k)


def test_expected_ade_examples_and_direct_sum():
    gt = line()
    assert Mx.expected_ade(np.stack([gt + [0, 1.0]]), [1.0], gt) == pytest.approx(1.0)
    two = np.stack([gt + [0, 1.0], gt + [0, 3.0]])
    assert Mx.expected_ade(two, [0.5, 0.5], gt) == pytest.approx(2.0, abs=1e-12)
    rng = np.random.default_rng(1)
    for _ in range(50):
        K = int(rng.integers(1, 7))
        trajs = gt + rng.normal(size=(K, 12, 2))
        p = rng.dirichlet(np.ones(K))
        direct = 0.0
        for k in range(K):
            direct += p[k] * sum(np.hypot(*(trajs[k, t] - gt[t])) for t in range(12)) / 12
        assert abs(Mx.expected_ade(trajs, p, gt) - direct) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_min_k_monotone_and_expected_bounds(K, seed):
    rng = np.random.default_rng(seed)
    gt = line(speed=float(rng.uniform(0.5, 3)))
    trajs = gt + rng.normal(scale=2.0, size=(K, 12, 2))
    probs = rng.dirichlet(np.ones(K))
    sm = Mx.sample_metrics(trajs, probs, gt, origin=(0, 0), heading=0.0)
    seq = [sm.sel[s]["ADE"] for s in Mx.SELECTIONS]
    assert all(a >= b - 1e-12 for a, b in zip(seq, seq[1:]))
    assert sm.eade >= sm.sel["min_*"]["ADE"] - 1e-12
    for s in Mx.SELECTIONS:
        assert all(v >= 0 for v in sm.sel[s].values())


def test_straight_along_cross_exact():
    gt = line()
    zero = Mx.along_cross_error(gt, gt)
    assert not zero.ate.any() and not zero.cte.any()
    off = Mx.along_cross_error(gt + [0.0, 0.4], gt)
    np.testing.assert_array_equal(off.ate, np.zeros(12))
    np.testing.assert_allclose(off.cte, 0.4, rtol=0, atol=1e-12)
    ahead = Mx.along_cross_error(gt + [0.5, 0.0], gt)
    np.testing.assert_allclose(ahead.ate[:-1], 0.5, atol=1e-12)


def test_curved_along_cross_matches_dense_oracle():
    rng = np.random.default_rng(2)
    th = np.linspace(0.05, 1.2, 12)
    gt = np.stack([30 * np.sin(th), 30 - 30 * np.cos(th)], axis=1)
    ref = Mx.reference_path(gt)
    samples, arcs = dense_samples(ref)
    for _ in range(20):
        pred = gt + rng.normal(scale=0.8, size=(12, 2))
        pred[0] = gt[0] + [0.3, 0.5]       # keep the first point inside the path span
        pred[-1] = gt[-1] + [-0.4, -0.2]
        ac = Mx.along_cross_error(pred, gt)
        for t in range(12):
            d, s_hat, _, _ = nearest_on_samples(samples, arcs, pred[t])
            _, s_gt, _, _ = nearest_on_samples(samples, arcs, gt[t])
            assert abs(ac.cte[t] - d) < 1e-3
            assert abs(ac.ate[t] - abs(s_hat - s_gt)) < 1e-3


def test_reference_path_spacing():
    th = np.linspace(0.05, 1.2, 12)
    gt = np.stack([30 * np.sin(th), 30 - 30 * np.cos(th)], axis=1)
    d = np.linalg.norm(np.diff(Mx.reference_path(gt), axis=0), axis=1)
    assert np.all(d <= 0.1 + 1e-9)


def test_stationary_ground_truth_uses_heading():
    gt = np.zeros((12, 2))
    ac = Mx.along_cross_error(gt + [0.0, 0.3], gt, origin=(0, 0), heading=0.0)
    np.testing.assert_allclose(ac.cte, 0.3, atol=1e-12)
    with pytest.raises(ValueError):
        Mx.reference_path(gt)


def test_turning_filter_fixtures():
    assert not Mx.turning_filter(actor_with_future(line()))
    quarter = np.stack([np.r_[T12[:6] * 2.0, np.full(6, 12.0)], np.r_[np.zeros(6), T12[:6] * 2.0]], axis=1)
    assert Mx.turning_filter(actor_with_future(quarter))

    def arc_with_final_chord(deg):
        # on a circle the last chord points along the mean of its end tangents
        step = np.radians(deg) / 11.5
        phi = np.arange(0, 13) * step
        R = 200.0
        pts = np.stack([R * np.sin(phi), R - R * np.cos(phi)], axis=1)
        return pts[1:]

    gentle = arc_with_final_chord(9.9)
    d = gentle[-1] - gentle[-2]
    assert np.degrees(np.arctan2(d[1], d[0])) == pytest.approx(9.9, abs=1e-9)
    assert not Mx.turning_filter(actor_with_future(gentle))
    assert Mx.turning_filter(actor_with_future(arc_with_final_chord(10.1)))
    # wrap-around: heading near +180 and final direction near -180
    back = np.stack([-T12 * 2.0, -T12 * 0.01], axis=1)
    assert not Mx.turning_filter(actor_with_future(back, heading=np.pi))


def test_eval_and_train_filters():
    moving = actor_with_future(np.tile([1.0, 0.0], (12, 1)))
    short = actor_with_future(np.tile([0.99, 0.0], (12, 1)))
    assert Mx.eval_filter(moving)
    assert not Mx.eval_filter(short)
    assert Mx.train_filter(short)
    assert not Mx.train_filter(actor_with_future(line(), is_parked=True))
    assert not Mx.train_filter(actor_with_future(line(), is_ego=True))
    no_future = F.ActorState("a", (0, 0), 0.0, (0, 0), (0, 0), np.zeros((20, 2)))
    assert not Mx.train_filter(no_future)


def test_aggregate_and_table():
    gt = line()
    rng = np.random.default_rng(3)
    samples = [Mx.sample_metrics(gt + rng.normal(size=(3, 12, 2)), [0.5, 0.3, 0.2], gt) for _ in range(4)]
    agg = Mx.aggregate(samples)
    assert agg["count"] == 4
    assert len(agg["ATE_curve"]["min_1"]) == 12
    rep = Mx.EvalReport({"all": {"model": agg}})
    text = rep.table()
    assert "[all] samples=4" in text and "model" in text
    assert Mx.aggregate([])["count"] == 0
