"""Patient population graphs and the two graph networks.

PHGN: fully connected projection -> kNN hypergraph on the latent rows -> two hypergraph
convolutions (ELU, row L2 normalisation, residual) -> two fully connected layers.

LPNL: MLP projection -> learned soft adjacency sigmoid((t - d_ij) / tau) -> two graph
convolutions with ReLU over the input features -> fully connected head.

Both return one raw score per patient: a logit for classification, a log-risk for survival.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from . import autodiff as ad
from .autodiff import Tensor

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Structures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Hypergraph:
    n_nodes: int
    hyperedges: tuple[tuple[int, ...], ...]
    edge_weights: tuple[float, ...] = ()

    def __post_init__(self):
        edges = tuple(tuple(int(v) for v in e) for e in self.hyperedges)
        weights = tuple(float(w) for w in self.edge_weights) or (1.0,) * len(edges)
        if len(weights) != len(edges):
            raise ValueError("one weight per hyperedge required")
        for e in edges:
            if not e:
                raise ValueError("hyperedges must be non-empty")
            if min(e) < 0 or max(e) >= self.n_nodes:
                raise ValueError(f"hyperedge {e} references a node outside [0, {self.n_nodes})")
        if any(w <= 0 for w in weights):
            raise ValueError("hyperedge weights must be positive")
        object.__setattr__(self, "hyperedges", edges)
        object.__setattr__(self, "edge_weights", weights)

    def incidence(self) -> np.ndarray:
        H = np.zeros((self.n_nodes, len(self.hyperedges)))
        for e, members in enumerate(self.hyperedges):
            H[list(members), e] = 1.0
        return H


@dataclass(frozen=True)
class NetworkConfig:
    latent_dim: int = 32
    hidden_dims: tuple[int, ...] = (32, 32)
    head_dim: int = 32
    mlp_dim: int = 32  # LPNL projection hidden width
    k_neighbors: int = 5
    soft_threshold_init: float = 1.0
    temperature: float = 1.0
    head: str = "classification"
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.latent_dim, self.head_dim, self.mlp_dim, *self.hidden_dims)
        if any(d < 1 for d in dims):
            raise ValueError("all layer widths must be >= 1")
        if len(self.hidden_dims) != 2:
            raise ValueError("exactly two convolution layers are supported")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.head not in ("classification", "survival"):
            raise ValueError(f"unknown head {self.head!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def check_residual(self):
        if len(set(self.hidden_dims)) != 1:
            raise ValueError(f"residual connections need equal hidden widths, got {self.hidden_dims}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkConfig":
        d = dict(d)
        if "hidden_dims" in d:
            d["hidden_dims"] = tuple(d["hidden_dims"])
        return cls(**d)


# --------------------------------------------------------------------------
# Graph construction and layers
# --------------------------------------------------------------------------


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def latent_project(X, weights: Mapping[str, Tensor], kind: str = "phgn") -> Tensor:
    """PHGN: relu(X W + b). LPNL: relu(relu(X W1 + b1) W2 + b2)."""
    X = ad.as_tensor(X)
    if kind == "phgn":
        return ad.relu(X @ weights["proj_w"] + weights["proj_b"])
    if kind == "lpnl":
        h = ad.relu(X @ weights["proj_w1"] + weights["proj_b1"])
        return ad.relu(h @ weights["proj_w2"] + weights["proj_b2"])
    raise ValueError(f"unknown projection kind {kind!r}")


def build_knn_hypergraph(latent, k: int) -> Hypergraph:
    """Hyperedge i = {i} plus the k rows nearest to row i; distance ties go to the lower index."""
    Z = _value(latent)
    n = Z.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of nodes ({n})")
    if k < 1:
        raise ValueError("k must be >= 1")
    d = cdist(Z, Z, "sqeuclidean")
    np.fill_diagonal(d, np.inf)
    kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
    rows, cols = np.nonzero(d <= kth)
    order = np.lexsort((cols, d[rows, cols], rows))
    rows, cols = rows[order], cols[order]
    starts = np.searchsorted(rows, np.arange(n))
    nearest = cols[starts[:, None] + np.arange(k)]
    return Hypergraph(n, tuple((i, *nearest[i].tolist()) for i in range(n)))


def hypergraph_operator(hg: Hypergraph) -> np.ndarray:
    """Dense n x n propagation matrix Dv^-1/2 H W De^-1 H^T Dv^-1/2."""
    n = hg.n_nodes
    sizes = np.array([len(e) for e in hg.hyperedges])
    rows = np.fromiter((v for e in hg.hyperedges for v in e), dtype=np.int64, count=sizes.sum())
    cols = np.repeat(np.arange(sizes.size), sizes)
    H = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, sizes.size))
    w = np.asarray(hg.edge_weights)
    degree = np.asarray(H @ w).reshape(-1)
    P = (H @ sparse.diags(w / sizes) @ H.T).toarray()
    isolated = np.flatnonzero(degree == 0)
    if isolated.size:
        raise ValueError(f"node {isolated[0]} has no hyperedge")
    s = 1.0 / np.sqrt(degree)
    return P * s[:, None] * s[None, :]


def hypergraph_convolution(hg, X, theta) -> Tensor:
    """X' = Dv^-1/2 H W De^-1 H^T Dv^-1/2 X Theta. `hg` may be a precomputed operator."""
    P = hg if isinstance(hg, np.ndarray) else hypergraph_operator(hg)
    X = ad.as_tensor(X)
    if P.shape[0] != X.shape[0]:
        raise ValueError(f"hypergraph has {P.shape[0]} nodes, features have {X.shape[0]} rows")
    return ad.matmul(Tensor(P), X) @ theta


def build_soft_adjacency(latent, threshold, temperature: float = 1.0) -> Tensor:
    """a_ij = sigmoid((t - ||z_i - z_j||) / tau) off the diagonal, a_ii = 1."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    d = ad.pairwise_distance(latent)
    n = d.shape[0]
    a = ad.sigmoid((ad.as_tensor(threshold) - d) * (1.0 / temperature))
    eye = np.eye(n)
    return a * (1.0 - eye) + eye


def graph_convolution(A, X, theta) -> Tensor:
    """X' = D^-1/2 A D^-1/2 X Theta with D the row sums of A."""
    A = ad.as_tensor(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    deg = ad.sum_rows(A)
    zero = np.flatnonzero(deg.value[:, 0] <= 0)
    if zero.size:
        raise ValueError(f"node {zero[0]} has zero degree")
    dinv = ad.power(deg, -0.5)
    A_norm = dinv * A * ad.transpose(dinv)
    return A_norm @ ad.as_tensor(X) @ theta


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(cols: int) -> Tensor:
    return Tensor(np.zeros((1, cols)), requires_grad=True)


def init_params(kind: str, n_features: int, cfg: NetworkConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    h1, h2 = cfg.hidden_dims
    if kind == "phgn":
        cfg.check_residual()
        return {
            "proj_w": _glorot(rng, n_features, cfg.latent_dim),
            "proj_b": _zeros(cfg.latent_dim),
            "conv1": _glorot(rng, cfg.latent_dim, h1),
            "conv2": _glorot(rng, h1, h2),
            "fc1_w": _glorot(rng, h2, cfg.head_dim),
            "fc1_b": _zeros(cfg.head_dim),
            "fc2_w": _glorot(rng, cfg.head_dim, 1),
            "fc2_b": _zeros(1),
        }
    if kind == "lpnl":
        return {
            "proj_w1": _glorot(rng, n_features, cfg.mlp_dim),
            "proj_b1": _zeros(cfg.mlp_dim),
            "proj_w2": _glorot(rng, cfg.mlp_dim, cfg.latent_dim),
            "proj_b2": _zeros(cfg.latent_dim),
            "threshold": Tensor([[cfg.soft_threshold_init]], requires_grad=True),
            "conv1": _glorot(rng, n_features, h1),
            "conv2": _glorot(rng, h1, h2),
            "fc1_w": _glorot(rng, h2, cfg.head_dim),
            "fc1_b": _zeros(cfg.head_dim),
            "fc2_w": _glorot(rng, cfg.head_dim, 1),
            "fc2_b": _zeros(1),
        }
    raise ValueError(f"unknown network kind {kind!r}")


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate == 0:
        return x
    keep = (rng.uniform(size=x.shape) >= rate) / (1.0 - rate)
    return x * keep


def _head(h: Tensor, params, cfg: NetworkConfig, rng) -> Tensor:
    z = ad.relu(h @ params["fc1_w"] + params["fc1_b"])
    z = _dropout(z, cfg.dropout_rate, rng)
    return z @ params["fc2_w"] + params["fc2_b"]


# --------------------------------------------------------------------------
# Forwards
# --------------------------------------------------------------------------


def phgn_forward(X, cfg: NetworkConfig, params: Mapping[str, Tensor], rng: np.random.Generator | None = None) -> Tensor:
    """Scores (n x 1). Pass `rng` to enable dropout (training mode)."""
    cfg.check_residual()
    latent = latent_project(X, params, "phgn")
    # neighbour selection is structural: no gradient flows through the choice of hyperedges
    hg = build_knn_hypergraph(latent.value, cfg.k_neighbors)
    P = hypergraph_operator(hg)
    h1 = ad.row_l2_normalize(ad.elu(hypergraph_convolution(P, latent, params["conv1"])))
    h2 = ad.row_l2_normalize(ad.elu(hypergraph_convolution(P, h1, params["conv2"])))
    h = h1 + h2
    return _head(h, params, cfg, rng)


def lpnl_forward(X, cfg: NetworkConfig, params: Mapping[str, Tensor], rng: np.random.Generator | None = None) -> Tensor:
    X = ad.as_tensor(X)
    latent = latent_project(X, params, "lpnl")
    A = build_soft_adjacency(latent, params["threshold"], cfg.temperature)
    h = ad.relu(graph_convolution(A, X, params["conv1"]))
    h = ad.relu(graph_convolution(A, h, params["conv2"]))
    return _head(h, params, cfg, rng)


FORWARDS = {"phgn": phgn_forward, "lpnl": lpnl_forward}


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def bce_loss(scores, labels) -> Tensor:
    """Mean binary cross-entropy on logits: softplus(-s) for y=1, softplus(s) for y=0."""
    scores = ad.as_tensor(scores)
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if y.shape[0] != scores.shape[0]:
        raise ValueError("scores and labels lengths differ")
    sign = 1.0 - 2.0 * y
    return ad.reduce_mean(ad.softplus(scores * sign))


def cox_partial_loss(
    risks, times, events, l2_lambda: float = 0.0, params: Mapping[str, Tensor] | None = None
) -> Tensor:
    """-(1/N_E) sum_{i: E_i=1} [h_i - log sum_{j: T_j >= T_i} exp(h_j)] + l2_lambda ||params||^2."""
    risks = ad.as_tensor(risks)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events).astype(bool).reshape(-1)
    n = risks.shape[0]
    if times.shape[0] != n or events.shape[0] != n:
        raise ValueError("risks, times and events lengths differ")
    ev = np.flatnonzero(events)
    if ev.size == 0:
        raise ValueError("no events")
    risk_set = times[None, :] >= times[ev][:, None]  # n_events x n
    select = np.zeros((ev.size, n))
    select[np.arange(ev.size), ev] = 1.0
    h_event = Tensor(select) @ risks
    h_rows = Tensor(np.ones((ev.size, 1))) @ ad.transpose(risks)
    lse = ad.logsumexp_rows(h_rows, mask=risk_set)
    loss = ad.reduce_mean(lse - h_event)
    if l2_lambda and params:
        for p in params.values():
            loss = loss + l2_lambda * ad.reduce_sum(p * p)
    return loss


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    best_epoch: int = 0


@dataclass(frozen=True)
class Targets:
    """Classification labels, or survival times and events."""

    labels: np.ndarray | None = None
    times: np.ndarray | None = None
    events: np.ndarray | None = None

    def subset(self, idx) -> "Targets":
        pick = lambda a: None if a is None else a[idx]
        return Targets(pick(self.labels), pick(self.times), pick(self.events))


def network_loss(kind, X, targets: Targets, cfg: NetworkConfig, params, l2_lambda=0.0, rng=None) -> Tensor:
    scores = FORWARDS[kind](X, cfg, params, rng)
    if cfg.head == "classification":
        return bce_loss(scores, targets.labels)
    return cox_partial_loss(scores, targets.times, targets.events, l2_lambda, params)


def predict_scores(kind: str, X, cfg: NetworkConfig, params) -> np.ndarray:
    return FORWARDS[kind](X, cfg, params).value[:, 0].copy()


def _batches(n: int, batch_size: int | None, rng: np.random.Generator) -> list[np.ndarray]:
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    out = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    # a trailing sliver cannot host a graph; fold it into the previous batch
    if len(out) > 1 and out[-1].size < max(2, batch_size // 4):
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def train_network(
    kind: str,
    X_train: np.ndarray,
    y_train: Targets,
    cfg: NetworkConfig,
    *,
    learning_rate: float = 1e-3,
    weight_decay: float = 0.0,
    epochs: int = 300,
    l2_lambda: float = 0.0,
    batch_size: int | None = None,
    X_val: np.ndarray | None = None,
    y_val: Targets | None = None,
    patience: int = 30,
    seed: int = 0,
) -> TrainResult:
    """Adam training; keeps the parameters with the lowest validation loss when
    validation data is given (early stopping with `patience`), else the final ones.
    """
    rng = np.random.default_rng(seed)
    params = init_params(kind, X_train.shape[1], cfg, rng)
    state = ad.AdamState(learning_rate=learning_rate, weight_decay=weight_decay)
    result = TrainResult(params=params)
    best = np.inf
    best_params = ad.clone_params(params)
    stale = 0
    for epoch in range(epochs):
        epoch_loss = 0.0
        for idx in _batches(X_train.shape[0], batch_size, rng):
            sub = y_train.subset(idx)
            if cfg.head == "survival" and not np.any(sub.events):
                continue
            loss = network_loss(kind, X_train[idx], sub, cfg, params, l2_lambda, rng)
            ad.backward(loss)
            ad.adam_step(params, state)
            epoch_loss += float(loss.value[0, 0]) * idx.size
        result.history.append(epoch_loss / X_train.shape[0])
        if X_val is None:
            continue
        val = float(network_loss(kind, X_val, y_val, cfg, params).value[0, 0])
        result.val_history.append(val)
        if val < best:
            best = val
            best_params = ad.clone_params(params)
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    result.params = best_params if X_val is not None else params
    return result
