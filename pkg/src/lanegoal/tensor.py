"""A small reverse-mode autodiff core over float64 numpy arrays.

Only the operations the prediction model needs are provided. Every op records
its parents plus a closure mapping the output gradient to one gradient per
parent; :meth:`Tensor.backward` replays them in reverse topological order.
"""
from __future__ import annotations

import base64
import json

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, True, parents, backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(x, y):
    x, y = tensor(x), tensor(y)
    try:
        out = x.data + y.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {x.shape} and {y.shape}") from None
    return _make(out, (x, y), lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(x, y):
    x, y = tensor(x), tensor(y)
    try:
        out = x.data - y.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {x.shape} and {y.shape}") from None
    return _make(out, (x, y), lambda g: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)))


def mul(x, y):
    x, y = tensor(x), tensor(y)
    try:
        out = x.data * y.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {x.shape} and {y.shape}") from None
    return _make(out, (x, y), lambda g: (_unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)))


def matmul(x, w):
    """``x`` (..., k) times ``w`` (k, n)."""
    x, w = tensor(x), tensor(w)
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {x.shape} and {w.shape}")
    out = x.data @ w.data

    def bw(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return _make(out, (x, w), bw)


def linear(x, w, b):
    return add(matmul(x, w), b)


def relu(x):
    x = tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x):
    x = tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def absolute(x):
    x = tensor(x)
    s = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * s,))


def maximum(x, floor: float):
    """Elementwise max with a constant; no gradient where clamped."""
    x = tensor(x)
    mask = x.data >= floor
    return _make(np.where(mask, x.data, floor), (x,), lambda g: (g * mask,))


def reshape(x, shape):
    x = tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, idx):
    x = tensor(x)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int)) or i is Ellipsis for i in parts)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), bw)


def take_rows(x, index):
    """Gather rows ``x[index]`` with scatter-add backward."""
    x = tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), bw)


def tsum(x, axis=None):
    x = tensor(x)
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), bw)


def mean(x, axis=None):
    x = tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def concat(xs, axis=-1):
    xs = [tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(x.shape) for x in xs)) from None
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, tuple(xs), lambda g: tuple(np.split(g, sizes, axis=axis)))


def log_softmax(x, axis=-1):
    x = tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(x, axis=-1):
    x = tensor(x)
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def segment_mean(x, segment_ids, num_segments: int):
    """Mean of rows of ``x`` per segment; empty segments give zero rows."""
    x = tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(DTYPE)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, seg, x.data)
    out *= inv.reshape((-1,) + (1,) * (x.data.ndim - 1))

    def bw(g):
        scale = inv[seg].reshape((-1,) + (1,) * (x.data.ndim - 1))
        return (g[seg] * scale,)

    return _make(out, (x,), bw)


def segment_log_softmax(x, segment_ids, num_segments: int):
    """Log-softmax of a 1-D ``x`` within each segment."""
    x = tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    mx = np.full(num_segments, -np.inf)
    np.maximum.at(mx, seg, x.data)
    z = x.data - mx[seg]
    tot = np.zeros(num_segments)
    np.add.at(tot, seg, np.exp(z))
    y = z - np.log(tot)[seg]
    p = np.exp(y)

    def bw(g):
        gs = np.zeros(num_segments)
        np.add.at(gs, seg, g)
        return (g - p * gs[seg],)

    return _make(y, (x,), bw)


def conv2d_k31(x, w, b):
    """'Same' convolution with a (3, 1) kernel along axis 1.

    ``x`` is (B, H, W, Cin) channels-last, ``w`` is (3*Cin, Cout), ``b`` (Cout,).
    """
    x, w, b = tensor(x), tensor(w), tensor(b)
    B, H, W, C = x.shape
    if w.shape[0] != 3 * C:
        raise ShapeError(f"conv2d_k31: input {x.shape} does not match kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (1, 1), (0, 0), (0, 0)))
    cols = np.concatenate([xp[:, 0:H], xp[:, 1:H + 1], xp[:, 2:H + 2]], axis=-1)
    out = cols @ w.data + b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gw = cols.reshape(-1, 3 * C).T @ g2
        gb = g2.sum(axis=0)
        gc = (g @ w.data.T)
        gxp = np.zeros_like(xp)
        gxp[:, 0:H] += gc[..., 0:C]
        gxp[:, 1:H + 1] += gc[..., C:2 * C]
        gxp[:, 2:H + 2] += gc[..., 2 * C:3 * C]
        return gxp[:, 1:H + 1], gw, gb

    return _make(out, (x, w, b), bw)


def maxpool2d(x, kh: int, kw: int):
    """Non-overlapping max pooling over axes 1 and 2 of (B, H, W, C)."""
    x = tensor(x)
    B, H, W, C = x.shape
    if H % kh or W % kw:
        raise ShapeError(f"maxpool2d: input {x.shape} not divisible by window ({kh}, {kw})")
    Ho, Wo = H // kh, W // kw
    win = x.data.reshape(B, Ho, kh, Wo, kw, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, Ho, Wo, kh * kw, C)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def bw(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        gx = gw.reshape(B, Ho, Wo, kh, kw, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)
        return (gx,)

    return _make(out, (x,), bw)


def recurrent_step(x, h, p):
    """One gated recurrent (GRU) step. ``p`` maps names to parameters:
    ``wx`` (Din, 3H), ``wh`` (H, 3H), ``b`` (3H,)."""
    H = h.shape[-1]
    gx = matmul(x, p["wx"]) + p["b"]
    gh = matmul(h, p["wh"])
    z = sigmoid(gx[:, 0:H] + gh[:, 0:H])
    r = sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
    n = tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
    return (1.0 - z) * n + z * h


def l1_loss(pred, target, weights=None):
    """Sum of absolute differences, optionally weighted elementwise."""
    d = absolute(sub(pred, target))
    if weights is not None:
        d = mul(d, weights)
    return tsum(d)


def weighted_nll(log_probs, target_probs):
    """``-sum(target * log_probs)``; targets are constants."""
    return mul(tsum(mul(log_probs, np.asarray(target_probs, dtype=DTYPE))), -1.0)


class Adam:
    """Adam with bias correction; state is plain arrays so it can be checkpointed."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        state = {"t": self.t, "m": self.m, "v": self.v}
        new_vals, state = adam_step([p.data for p in self.params], grads, state,
                                    self.lr, self.beta1, self.beta2, self.eps)
        for p, val in zip(self.params, new_vals):
            p.data = val
        self.t, self.m, self.v = state["t"], state["m"], state["v"]


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    t = state["t"] + 1
    out, ms, vs = [], [], []
    for x, g, m, v in zip(params, grads, state["m"], state["v"]):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        out.append(x - lr * mhat / (np.sqrt(vhat) + eps))
        ms.append(m)
        vs.append(v)
    return out, {"t": t, "m": ms, "v": vs}


def numerical_grad(f, arr: np.ndarray, index, eps=1e-5) -> float:
    """Central difference of scalar ``f()`` with respect to ``arr[index]``."""
    old = arr[index]
    arr[index] = old + eps
    fp = float(f())
    arr[index] = old - eps
    fm = float(f())
    arr[index] = old
    return (fp - fm) / (2.0 * eps)


# --- checkpoint blobs ------------------------------------------------------
# {"format": "lanegoal-arrays", "version": 1, "meta": {...},
#  "arrays": {name: {"shape": [...], "data": base64(float64 little-endian)}}}

BLOB_FORMAT = "lanegoal-arrays"
BLOB_VERSION = 1


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(DTYPE).reshape(d["shape"])


def dumps_arrays(arrays: dict, meta: dict | None = None) -> str:
    blob = {
        "format": BLOB_FORMAT,
        "version": BLOB_VERSION,
        "meta": meta or {},
        "arrays": {k: encode_array(arrays[k]) for k in sorted(arrays)},
    }
    return json.dumps(blob, sort_keys=True, indent=1)


def loads_arrays(text: str):
    blob = json.loads(text)
    if blob.get("format") != BLOB_FORMAT:
        raise ValueError("not a lanegoal array blob")
    if blob.get("version") != BLOB_VERSION:
        raise ValueError(f"unsupported blob version {blob.get('version')!r} (expected {BLOB_VERSION})")
    return {k: decode_array(v) for k, v in blob["arrays"].items()}, blob.get("meta", {})
