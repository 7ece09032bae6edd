"""Goal-conditioned graph network.

One actor node and N goal nodes per sample; each goal node feeds the actor node
through an edge carrying the path-frame kinematic rollout. Two rounds of
edge update -> mean aggregation -> actor update, then per-edge heads emit the
goal-based modes and the actor-node head emits the goal-free mode.

Batches of samples with different N are stored flat: goals of all samples are
stacked and ``owner[g]`` says which sample goal ``g`` belongs to.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import features as F
from . import tensor as T

STATE_SCALE = np.array([0.1, 0.5, 0.5, 2.0])
HISTORY_SCALE = 0.1
ALONG_SCALE = 0.1
RASTER_SCALE = np.array([10.0, 1.0, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0])
# trajectory heads regress offsets from the kinematic rollout in these units
ALONG_OUT_SCALE = 5.0
CROSS_OUT_SCALE = 1.0

N_OUT = F.FUTURE_STEPS


@dataclass
class ModelConfig:
    temporal_modes: int = 1
    history_hidden: int = 64
    state_hidden: int = 32
    cnn_channels: tuple = (16, 32, 32)
    pool: tuple = (8, 4)
    graph_hidden: int = 64
    head_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        self.cnn_channels = tuple(int(c) for c in self.cnn_channels)
        self.pool = tuple(int(p) for p in self.pool)
        if self.temporal_modes < 1:
            raise ValueError("temporal_modes must be >= 1")
        if F.RASTER_LENGTH % self.pool[0] or F.RASTER_WIDTH % self.pool[1]:
            raise ValueError(f"pool {self.pool} must divide the raster shape")

    @property
    def actor_dim(self) -> int:
        return self.history_hidden + self.state_hidden

    @property
    def goal_dim(self) -> int:
        return (F.RASTER_LENGTH // self.pool[0]) * (F.RASTER_WIDTH // self.pool[1]) * self.cnn_channels[-1]

    @property
    def edge_dim(self) -> int:
        return 2 * (F.FUTURE_STEPS + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        d["pool"] = list(self.pool)
        return d


@dataclass
class Batch:
    """Flat numpy inputs for B samples with G goals in total."""
    history: np.ndarray          # (B, 20, 2) actor-centric
    state: np.ndarray            # (B, 4)
    rasters: np.ndarray          # (G, 80, 4, 8)
    rollouts: np.ndarray         # (G, 13, 2) path frame
    free_rollouts: np.ndarray    # (B, 13, 2) actor-centric
    owner: np.ndarray            # (G,)

    @property
    def size(self) -> int:
        return len(self.history)

    @property
    def num_goals(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.size)


@dataclass
class GraphInputs:
    actor: T.Tensor      # (B, actor_dim)
    goals: T.Tensor      # (G, goal_dim)
    edges: T.Tensor      # (G, 26)
    owner: np.ndarray
    batch: Batch


@dataclass
class Output:
    edge_spatial: T.Tensor     # (G,)
    edge_temporal: T.Tensor    # (G, M)
    edge_traj: T.Tensor        # (G, M, 12, 2) path frame
    free_spatial: T.Tensor     # (B,)
    free_temporal: T.Tensor    # (B, M)
    free_traj: T.Tensor        # (B, M, 12, 2) actor-centric
    spatial_logp: T.Tensor     # (G + B,) rows: goals then goal-free per sample
    temporal_logp: T.Tensor    # (G + B, M)
    owner: np.ndarray
    size: int

    @property
    def row_owner(self) -> np.ndarray:
        return np.concatenate([self.owner, np.arange(self.size)])

    def sample_rows(self, b: int) -> np.ndarray:
        """Rows of the spatial arrays for sample ``b`` in mode order (goals, free)."""
        return np.append(np.flatnonzero(self.owner == b), len(self.owner) + b)


@dataclass
class Prediction:
    goal_trajectories: np.ndarray   # (N, M, 12, 2) path frame
    free_trajectories: np.ndarray   # (M, 12, 2) actor-centric
    spatial_scores: np.ndarray      # (N + 1,)
    temporal_scores: np.ndarray     # (N + 1, M)
    joint_probs: np.ndarray         # (K,)

    @property
    def num_goals(self) -> int:
        return len(self.goal_trajectories)

    @property
    def num_modes(self) -> int:
        return len(self.joint_probs)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class GoalGraphNet:
    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self.params = self._init_params()

    # --- parameters -------------------------------------------------------
    def _param_shapes(self) -> list:
        c = self.config
        M, H = c.temporal_modes, c.history_hidden
        shapes = [
            ("hist.wx", (2, 3 * H), H),
            ("hist.wh", (H, 3 * H), H),
            ("hist.b", (3 * H,), None),
            ("state.w", (4, c.state_hidden), 4),
            ("state.b", (c.state_hidden,), None),
        ]
        cin = len(F.RASTER_CHANNELS)
        for i, cout in enumerate(c.cnn_channels):
            shapes += [(f"cnn{i}.w", (3 * cin, cout), 3 * cin), (f"cnn{i}.b", (cout,), None)]
            cin = cout
        gh = c.graph_hidden
        actor_in = c.actor_dim
        edge_in = c.edge_dim
        for layer in (1, 2):
            e_in = actor_in + edge_in + c.goal_dim
            shapes += [
                (f"edge{layer}.w0", (e_in, gh), e_in), (f"edge{layer}.b0", (gh,), None),
                (f"edge{layer}.w1", (gh, gh), gh), (f"edge{layer}.b1", (gh,), None),
            ]
            a_in = actor_in + gh
            shapes += [
                (f"actor{layer}.w0", (a_in, gh), a_in), (f"actor{layer}.b0", (gh,), None),
                (f"actor{layer}.w1", (gh, gh), gh), (f"actor{layer}.b1", (gh,), None),
            ]
            actor_in, edge_in = gh, gh
        n_out = 1 + M + M * N_OUT * 2
        for head in ("edge_head", "node_head"):
            shapes += [
                (f"{head}.w0", (gh, c.head_hidden), gh), (f"{head}.b0", (c.head_hidden,), None),
                (f"{head}.w1", (c.head_hidden, n_out), c.head_hidden), (f"{head}.b1", (n_out,), None),
            ]
        return shapes

    def _init_params(self) -> dict:
        rng = np.random.default_rng(self.config.seed)
        params = {}
        for name, shape, fan_in in self._param_shapes():
            if fan_in is None:
                data = np.zeros(shape)
            else:
                data = _uniform(rng, shape, fan_in)
            params[name] = T.Parameter(data, name=name)
        return params

    def parameters(self) -> list:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_arrays(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_arrays(self, arrays: dict) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise ValueError(f"checkpoint is missing parameter {k}")
            if arrays[k].shape != p.data.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {arrays[k].shape} != model shape {p.data.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    # --- building blocks --------------------------------------------------
    def _mlp2(self, prefix, x):
        p = self.params
        h = T.relu(T.linear(x, p[prefix + ".w0"], p[prefix + ".b0"]))
        return T.relu(T.linear(h, p[prefix + ".w1"], p[prefix + ".b1"]))

    def _head(self, prefix, x):
        p = self.params
        h = T.relu(T.linear(x, p[prefix + ".w0"], p[prefix + ".b0"]))
        return T.linear(h, p[prefix + ".w1"], p[prefix + ".b1"])

    def encode_batch(self, batch: Batch) -> GraphInputs:
        p = self.params
        B = batch.size
        hist = batch.history * HISTORY_SCALE
        gru = {"wx": p["hist.wx"], "wh": p["hist.wh"], "b": p["hist.b"]}
        h = T.Tensor(np.zeros((B, self.config.history_hidden)))
        for t in range(hist.shape[1]):
            h = T.recurrent_step(T.Tensor(hist[:, t]), h, gru)
        s = T.relu(T.linear(T.Tensor(batch.state * STATE_SCALE), p["state.w"], p["state.b"]))
        actor = T.concat([h, s], axis=1)

        G = len(batch.owner)
        x = T.Tensor(batch.rasters.reshape(G, F.RASTER_LENGTH, F.RASTER_WIDTH, len(F.RASTER_CHANNELS)) * RASTER_SCALE)
        for i in range(len(self.config.cnn_channels)):
            x = T.relu(T.conv2d_k31(x, p[f"cnn{i}.w"], p[f"cnn{i}.b"]))
        x = T.maxpool2d(x, *self.config.pool)
        goals = x.reshape(G, self.config.goal_dim)
        edges = T.Tensor(_scale_rollout(batch.rollouts).reshape(G, 2 * batch.rollouts.shape[1]))
        return GraphInputs(actor, goals, edges, batch.owner, batch)

    def graph_forward_batch(self, gi: GraphInputs) -> Output:
        M = self.config.temporal_modes
        B, G = gi.batch.size, len(gi.owner)
        a, e, g = gi.actor, gi.edges, gi.goals
        for layer in (1, 2):
            a_per_edge = T.take_rows(a, gi.owner)
            e = self._mlp2(f"edge{layer}", T.concat([a_per_edge, e, g], axis=1))
            e_bar = T.segment_mean(e, gi.owner, B)
            a = self._mlp2(f"actor{layer}", T.concat([a, e_bar], axis=1))

        eo = self._head("edge_head", e)
        no = self._head("node_head", a)
        edge_traj = _decode_traj(eo[:, 1 + M:].reshape(G, M, N_OUT, 2), gi.batch.rollouts, residual_cross=False)
        free_traj = _decode_traj(no[:, 1 + M:].reshape(B, M, N_OUT, 2), gi.batch.free_rollouts, residual_cross=True)
        edge_spatial = eo[:, 0]
        free_spatial = no[:, 0]
        edge_temporal = eo[:, 1:1 + M]
        free_temporal = no[:, 1:1 + M]
        row_owner = np.concatenate([gi.owner, np.arange(B)])
        spatial_logp = T.segment_log_softmax(T.concat([edge_spatial, free_spatial], axis=0), row_owner, B)
        temporal_logp = T.log_softmax(T.concat([edge_temporal, free_temporal], axis=0), axis=1)
        return Output(edge_spatial, edge_temporal, edge_traj, free_spatial, free_temporal, free_traj,
                      spatial_logp, temporal_logp, gi.owner, B)

    def forward(self, batch: Batch) -> Output:
        return self.graph_forward_batch(self.encode_batch(batch))

    # --- single-sample convenience ---------------------------------------
    def encode(self, actor: F.ActorState, rasters, rollouts) -> GraphInputs:
        if len(rasters) != len(rollouts):
            raise ValueError(f"{len(rasters)} rasters but {len(rollouts)} rollouts")
        return self.encode_batch(single_batch(actor, rasters, rollouts))

    def graph_forward(self, gi: GraphInputs) -> Prediction:
        return unpack(self.graph_forward_batch(gi))[0]

    def predict_batch(self, batch: Batch) -> list:
        return unpack(self.forward(batch))


def _scale_rollout(r: np.ndarray) -> np.ndarray:
    return r * np.array([ALONG_SCALE, 1.0])


def _decode_traj(raw: T.Tensor, rollouts: np.ndarray, residual_cross: bool) -> T.Tensor:
    """Offsets -> trajectories anchored on the rollout (waypoints t = 0.5..6 s)."""
    base = rollouts[:, None, 1:, :].copy()
    if not residual_cross:
        base[..., 1] = 0.0
    scale = np.array([ALONG_OUT_SCALE, CROSS_OUT_SCALE])
    return T.add(T.mul(raw, scale), base)


def single_batch(actor: F.ActorState, rasters, rollouts) -> Batch:
    n = len(rasters)
    return Batch(
        history=F.actor_history_features(actor)[None],
        state=F.state_vector(actor)[None],
        rasters=np.asarray(rasters, dtype=np.float64).reshape(n, F.RASTER_LENGTH, F.RASTER_WIDTH, len(F.RASTER_CHANNELS)),
        rollouts=np.asarray(rollouts, dtype=np.float64).reshape(n, F.FUTURE_STEPS + 1, 2),
        free_rollouts=F.free_rollout(actor)[None],
        owner=np.zeros(n, dtype=np.int64),
    )


def joint_log_probs(out: Output) -> np.ndarray:
    """(G + B, M) array of log joint probabilities."""
    return out.spatial_logp.data[:, None] + out.temporal_logp.data


def unpack(out: Output) -> list:
    sp = out.spatial_logp.data
    tp = out.temporal_logp.data
    spatial_scores = np.concatenate([out.edge_spatial.data, out.free_spatial.data])
    temporal_scores = np.concatenate([out.edge_temporal.data, out.free_temporal.data])
    preds = []
    for b in range(out.size):
        rows = out.sample_rows(b)
        goal_rows = rows[:-1]
        p_sp = np.exp(sp[rows])
        p_tp = np.exp(tp[rows])
        joint = (p_sp[:, None] * p_tp).ravel()
        preds.append(Prediction(
            goal_trajectories=out.edge_traj.data[goal_rows],
            free_trajectories=out.free_traj.data[b],
            spatial_scores=spatial_scores[rows],
            temporal_scores=temporal_scores[rows],
            joint_probs=joint,
        ))
    return preds
