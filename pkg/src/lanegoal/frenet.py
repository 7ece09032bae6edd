"""Path-relative (along-track / cross-track) coordinates on 2D polylines.

Vertices are 0-indexed, so vertex ``k`` of a path sampled every ``δ`` metres
sits at arclength ``k·δ``. Cross-track is positive to the left of the travel
direction (segment direction rotated by +90 degrees).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# distance slack used when two segments tie for the closest point
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class PathProjection:
    segment_index: int
    closest_point: np.ndarray
    along: float
    cross: float


@dataclass(frozen=True)
class CartesianTrajectory:
    t: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        if len(self.t) != len(self.xy):
            raise ValueError(f"{len(self.t)} timestamps for {len(self.xy)} waypoints")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")


@dataclass(frozen=True)
class PathFrameTrajectory:
    t: np.ndarray
    ac: np.ndarray
    reference: object = None

    @property
    def along(self) -> np.ndarray:
        return self.ac[:, 0]

    @property
    def cross(self) -> np.ndarray:
        return self.ac[:, 1]


def as_points(path) -> np.ndarray:
    pts = getattr(path, "points", path)
    return np.asarray(pts, dtype=np.float64)


def _xy(traj) -> np.ndarray:
    xy = getattr(traj, "xy", traj)
    return np.atleast_2d(np.asarray(xy, dtype=np.float64))


def vertex_arclengths(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def left_normals(points: np.ndarray) -> np.ndarray:
    d = np.diff(points, axis=0)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return np.stack([-d[:, 1], d[:, 0]], axis=1)


def project_points(points, polyline):
    """Vectorised projection of ``points`` (P, 2) onto ``polyline`` (L, 2).

    Returns ``(seg, t_raw, closest, along, cross)`` where ``t_raw`` is the
    unclamped segment parameter of the chosen segment. Points past the final
    vertex are extrapolated along the last segment; points before the first
    vertex are clamped to it.
    """
    P = _xy(points)
    V = as_points(polyline)
    if len(V) < 2:
        raise ValueError("polyline needs at least 2 points")
    A = V[:-1]
    D = V[1:] - V[:-1]
    seg_len2 = np.einsum("ij,ij->i", D, D)
    rel = P[:, None, :] - A[None, :, :]
    t_raw = np.einsum("psk,sk->ps", rel, D) / seg_len2
    t = np.clip(t_raw, 0.0, 1.0)
    cand = A[None] + t[..., None] * D[None]
    dist2 = np.einsum("psk,psk->ps", P[:, None, :] - cand, P[:, None, :] - cand)
    dmin = dist2.min(axis=1, keepdims=True)
    # lowest segment index among (near-)ties
    seg = np.argmax(dist2 <= dmin + _TIE_EPS, axis=1)

    rows = np.arange(len(P))
    last = len(A) - 1
    t_sel = t[rows, seg]
    t_raw_sel = t_raw[rows, seg]
    beyond = (seg == last) & (t_raw_sel > 1.0)
    t_sel = np.where(beyond, t_raw_sel, t_sel)

    closest = A[seg] + t_sel[:, None] * D[seg]
    cum = vertex_arclengths(V)
    along = cum[seg] + np.linalg.norm(closest - A[seg], axis=1)
    normals = left_normals(V)
    off = P - closest
    cross = np.einsum("pk,pk->p", off, normals[seg])
    # at a clamped vertex the offset is not perpendicular; use the signed distance
    at_vertex = ~beyond & ((t_raw_sel < 0.0) | (t_raw_sel > 1.0))
    if np.any(at_vertex):
        nxt = normals[np.minimum(seg + 1, last)]
        side = np.where(cross != 0.0, cross, np.einsum("pk,pk->p", off, nxt))
        dist = np.linalg.norm(off, axis=1)
        cross = np.where(at_vertex, np.where(side < 0.0, -dist, dist), cross)
    return seg, t_raw_sel, closest, along, cross


def closest_point_on_path(path, p) -> PathProjection:
    seg, _, closest, along, cross = project_points(np.asarray(p, dtype=np.float64)[None], path)
    return PathProjection(int(seg[0]), closest[0], float(along[0]), float(cross[0]))


def project(path, traj) -> PathFrameTrajectory:
    """Map a Cartesian trajectory into the (along, cross) frame of ``path``."""
    xy = _xy(traj)
    _, _, _, along, cross = project_points(xy, path)
    t = getattr(traj, "t", None)
    if t is None:
        t = np.arange(len(xy), dtype=np.float64)
    return PathFrameTrajectory(np.asarray(t, dtype=np.float64), np.stack([along, cross], axis=1), path)


def unproject_points(path, ac) -> np.ndarray:
    ac = np.atleast_2d(np.asarray(ac, dtype=np.float64))
    a, c = ac[:, 0], ac[:, 1]
    if np.any(a < 0):
        raise ValueError(f"negative along-track value {a.min():.6g}")
    V = as_points(path)
    cum = vertex_arclengths(V)
    seg = np.clip(np.searchsorted(cum, a, side="left") - 1, 0, len(V) - 2)
    D = V[1:] - V[:-1]
    u = D / np.linalg.norm(D, axis=1, keepdims=True)
    n = np.stack([-u[:, 1], u[:, 0]], axis=1)
    base = V[seg] + (a - cum[seg])[:, None] * u[seg]
    return base + c[:, None] * n[seg]


def unproject(path, traj) -> CartesianTrajectory:
    ac = getattr(traj, "ac", traj)
    xy = unproject_points(path, ac)
    t = getattr(traj, "t", None)
    if t is None:
        t = np.arange(len(xy), dtype=np.float64)
    return CartesianTrajectory(np.asarray(t, dtype=np.float64), xy)


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Resample at exact arclength multiples of ``spacing`` (linear interpolation)."""
    P = np.asarray(points, dtype=np.float64)
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if len(P) < 2:
        raise ValueError("need at least 2 points")
    cum = vertex_arclengths(P)
    total = cum[-1]
    if total <= 0:
        raise ValueError("degenerate polyline of zero length")
    n = int(np.floor(total / spacing + 1e-12))
    s = np.arange(n + 1) * spacing
    s = s[s <= total]
    out = np.stack([np.interp(s, cum, P[:, 0]), np.interp(s, cum, P[:, 1])], axis=1)
    if np.linalg.norm(out[-1] - P[-1]) > 1e-9:
        out = np.vstack([out, P[-1]])
    return out


def chord_resample(points, spacing: float, max_chords: int | None = None) -> np.ndarray:
    """Walk ``points`` placing each new sample exactly ``spacing`` away (Euclidean)
    from the previous one, every sample lying on the source polyline.

    Stops after ``max_chords`` chords, or at the polyline end where the final
    (shorter) chord reaches the last source point.
    """
    P = np.asarray(points, dtype=np.float64)
    out = [P[0].copy()]
    cur = P[0].copy()
    seg, t0 = 0, 0.0
    r2 = spacing * spacing
    while max_chords is None or len(out) - 1 < max_chords:
        found = False
        while seg < len(P) - 1:
            A, B = P[seg], P[seg + 1]
            d = B - A
            f = A - cur
            qa = d @ d
            if qa == 0.0:
                seg, t0 = seg + 1, 0.0
                continue
            qb = 2.0 * (f @ d)
            qc = f @ f - r2
            disc = qb * qb - 4.0 * qa * qc
            if disc >= 0.0:
                root = (-qb + np.sqrt(disc)) / (2.0 * qa)
                if t0 <= root <= 1.0:
                    cur = A + root * d
                    t0 = root
                    found = True
                    break
            seg, t0 = seg + 1, 0.0
        if not found:
            if np.linalg.norm(P[-1] - out[-1]) > 1e-9:
                out.append(P[-1].copy())
            break
        out.append(cur.copy())
    return np.asarray(out)


def polyline_length(points) -> float:
    return float(vertex_arclengths(as_points(points))[-1])
