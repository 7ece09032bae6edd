"""Independent reference implementations used by the test-suite.

These deliberately avoid the package's geometry code: polylines are sampled
densely and nearest samples are found by brute force.
"""
from __future__ import annotations

import itertools

import numpy as np

DENSE_STEP = 1e-4


def dense_samples(polyline, step=DENSE_STEP):
    """Points every ``step`` metres along ``polyline`` plus their arclengths."""
    V = np.asarray(polyline, dtype=np.float64)
    pts, arcs = [], []
    s0 = 0.0
    for a, b in zip(V[:-1], V[1:]):
        length = float(np.hypot(*(b - a)))
        n = max(int(np.ceil(length / step)), 1)
        u = np.arange(n) / n
        pts.append(a + u[:, None] * (b - a))
        arcs.append(s0 + u * length)
        s0 += length
    pts.append(V[-1:])
    arcs.append([s0])
    return np.vstack(pts), np.concatenate(arcs)


def nearest_on_samples(samples, arcs, p):
    """(distance, arclength, index, all distances) of the closest dense sample."""
    d = np.hypot(samples[:, 0] - p[0], samples[:, 1] - p[1])
    i = int(np.argmin(d))
    return float(d[i]), float(arcs[i]), i, d


def brute_force_sequences(successors: dict, lengths: dict, root: str, start_s: float, limit: float = 80.0):
    """Every root-to-leaf lane sequence by breadth-first expansion.

    A branch ends when its covered length reaches ``limit``, when the last lane
    has no successors, or when every successor was already visited on it.
    """
    out = []
    queue = [((root,), lengths[root] - start_s)]
    while queue:
        seq, covered = queue.pop(0)
        nxt = [] if covered >= limit else [s for s in successors.get(seq[-1], ()) if s not in seq]
        if not nxt:
            out.append(seq)
        for s in nxt:
            queue.append((seq + (s,), covered + lengths[s]))
    return sorted(out)


def subset_min_k(ades, probs, k):
    """Exhaustive oracle: among all size-k subsets, find the one that is the
    top-k by (probability desc, index asc); return its lowest-ADE member."""
    K = len(probs)
    k = min(k, K)
    best_subset = None
    for sub in itertools.combinations(range(K), k):
        rest = [j for j in range(K) if j not in sub]
        ok = all((probs[i] > probs[j]) or (probs[i] == probs[j] and i < j) for i in sub for j in rest)
        if ok:
            best_subset = sub
            break
    assert best_subset is not None
    return min(best_subset, key=lambda i: (ades[i], i))


def direct_cross_entropy(target, predicted, floor=1e-12):
    total = 0.0
    for p, q in zip(target, predicted):
        total -= p * np.log(max(q, floor))
    return total


def relative_error(analytic, numeric, floor=1e-7):
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n) / np.maximum(denom, floor)
    return float(err.max()) if err.size else 0.0


def central_difference(f, arr, index, eps=1e-5):
    """Central difference of scalar ``f()`` with respect to ``arr[index]``, written
    independently of the package helper."""
    old = float(arr[index])
    arr[index] = old + eps
    fp = float(f())
    arr[index] = old - eps
    fm = float(f())
    arr[index] = old
    return (fp - fm) / (2.0 * eps)
