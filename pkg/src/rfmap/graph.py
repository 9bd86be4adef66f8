"""k-NN spatial graphs and the mean-aggregation refinement network."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import ndiff
from .ndiff import Activation, DenseLayer, ParamSet, Tensor
from .validation import check_coords

log = logging.getLogger(__name__)

GNN_HIDDEN = 128
GNN_LAYERS = 4


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    """Undirected k-NN graph; ``neighbors[v]`` is sorted by node index."""

    coords: np.ndarray
    neighbors: tuple
    k: int

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    def edges(self) -> np.ndarray:
        """Each undirected edge once as ``(src, dst)`` with ``src < dst``."""
        pairs = [(v, u) for v, nb in enumerate(self.neighbors) for u in nb if v < u]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors])

    def mean_operator(self) -> sp.csr_matrix:
        """Row-normalised adjacency; isolated rows stay zero.

        Within a row, entries are stored in coordinate order rather than
        index order. The sparse product accumulates in storage order, so
        relabelling the nodes permutes the aggregate rows bit for bit.
        """
        deg = self.degrees()
        cols = []
        for nb in self.neighbors:
            nb = np.asarray(nb, dtype=np.int64)
            cols.append(nb[np.lexsort((self.coords[nb, 1], self.coords[nb, 0]))])
        indices = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
        with np.errstate(divide="ignore"):
            vals = np.repeat(np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0), deg)
        op = sp.csr_matrix((vals, indices, indptr), shape=(self.n_nodes, self.n_nodes))
        op.has_sorted_indices = False
        return op

    def __eq__(self, other):
        if not isinstance(other, SpatialGraph):
            return NotImplemented
        return (self.k == other.k and np.array_equal(self.coords, other.coords)
                and all(np.array_equal(a, b) for a, b in zip(self.neighbors, other.neighbors)))


def _sorted_neighbors(coords: np.ndarray, v: int, candidates: np.ndarray, k: int) -> np.ndarray:
    candidates = candidates[candidates != v]
    d = np.sqrt(((coords[candidates] - coords[v]) ** 2).sum(axis=1))
    order = np.lexsort((candidates, d))
    return candidates[order[:k]]


def _validate_knn(coords, k: int) -> np.ndarray:
    coords = check_coords(coords)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if len(coords) <= k:
        raise ValueError(f"need more than k={k} points, got {len(coords)}")
    if len(np.unique(coords, axis=0)) != len(coords):
        raise ValueError("duplicate coordinates")
    return coords


def _symmetrize(directed: Sequence[np.ndarray], n: int) -> tuple:
    sets = [set(map(int, nb)) for nb in directed]
    for v, nb in enumerate(directed):
        for u in nb:
            sets[int(u)].add(v)
    return tuple(np.array(sorted(s), dtype=np.int64) for s in sets)


def build_knn(coords, k: int = 8, workers: int = 1) -> SpatialGraph:
    """Union-symmetrised k-nearest-neighbour graph.

    Ties at the k-th distance are broken by node index. A kd-tree finds the
    k-th distance; every point within it is then ranked exactly.
    """
    coords = _validate_knn(coords, k)
    tree = cKDTree(coords)
    dist, _ = tree.query(coords, k=k + 1, workers=workers)
    radius = dist[:, -1] * (1.0 + 1e-9) + 1e-12
    balls = tree.query_ball_point(coords, radius, workers=workers)
    directed = [_sorted_neighbors(coords, v, np.asarray(b, dtype=np.int64), k)
                for v, b in enumerate(balls)]
    return SpatialGraph(coords, _symmetrize(directed, len(coords)), k)


def build_knn_bruteforce(coords, k: int = 8) -> SpatialGraph:
    """Quadratic reference construction."""
    coords = _validate_knn(coords, k)
    n = len(coords)
    everyone = np.arange(n)
    directed = [_sorted_neighbors(coords, v, everyone, k) for v in range(n)]
    return SpatialGraph(coords, _symmetrize(directed, n), k)


def write_edge_list(graph: SpatialGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "dist_m"])
        for a, b in graph.edges():
            w.writerow([int(a), int(b), repr(float(np.hypot(*(graph.coords[a] - graph.coords[b]))))])


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------


def gnn_widths(L: int, hidden: int = GNN_HIDDEN, n_layers: int = GNN_LAYERS,
               n_kinds: int = 4) -> list[int]:
    n_out = n_kinds * L
    return [2 + n_out] + [hidden] * (n_layers - 1) + [n_out]


def init_gnn_params(L: int, rng: np.random.Generator, hidden: int = GNN_HIDDEN,
                    n_layers: int = GNN_LAYERS, pass_through: bool = True,
                    n_kinds: int = 4) -> ParamSet:
    """Glorot-initialised layers.

    With ``pass_through`` the skip projections start as selectors that carry
    the ``y0`` block through the first ``4L`` hidden channels to the output,
    and the weights writing into that lane (and the last layer) start at
    zero, so an untrained network returns ``y0`` exactly.
    """
    widths = gnn_widths(L, hidden, n_layers, n_kinds)
    params = ParamSet()
    n_out = n_kinds * L
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = Activation.IDENTITY if i == n_layers - 1 else Activation.RELU
        params.layers[f"sage{i}"] = DenseLayer.glorot(a, b, rng, act)
        limit = math.sqrt(6.0 / (a + b))
        params.aux[f"sage{i}_neigh"] = rng.uniform(-limit, limit, size=(b, a))
        if a != b:
            proj = np.zeros((b, a))
            if pass_through:
                src = np.arange(n_out) + (2 if i == 0 else 0)
                proj[np.arange(n_out), src] = 1.0
            else:
                proj[...] = rng.uniform(-limit, limit, size=(b, a))
            params.aux[f"sage{i}_skip"] = proj
        if pass_through:
            rows = slice(None) if i == n_layers - 1 else slice(0, n_out)
            layer = params.layers[f"sage{i}"]
            layer.weights[rows] = 0.0
            params.aux[f"sage{i}_neigh"][rows] = 0.0
    return params


def sage_layer(h, mean_op, w_self, bias, w_neigh, skip=None,
               activation=Activation.RELU, dropout: float = 0.0, rng=None,
               training: bool = False) -> Tensor:
    """``act(W_self h_v + W_neigh mean(h_u) + b) + skip(h_v)``.

    ``skip`` is None for the identity (equal widths) or a projection matrix.
    Dropout, when training, hits the message branch only.
    """
    h, w_self, bias, w_neigh = (ndiff._as_tensor(t) for t in (h, w_self, bias, w_neigh))
    if h.shape[-1] != w_self.shape[1] or w_neigh.shape != w_self.shape:
        raise ndiff.ShapeError(
            f"features of width {h.shape[-1]} do not fit layer {w_self.shape}/{w_neigh.shape}")
    agg = ndiff.sparse_matmul(mean_op, h)
    pre = h @ w_self.T + agg @ w_neigh.T + bias
    out = ndiff.dropout(ndiff._ACTIVATIONS[Activation(activation)](pre), dropout, rng, training)
    if skip is None:
        if w_self.shape[0] != w_self.shape[1]:
            raise ndiff.ShapeError("identity skip needs equal input and output widths")
        return out + h
    skip = ndiff._as_tensor(skip)
    return out + h @ skip.T


def _gnn_graph(params: ParamSet, leaves: dict, x: Tensor, mean_op, dropout: float,
               rng, training: bool) -> Tensor:
    names = list(params.layers)
    h = x
    for i, name in enumerate(names):
        hidden = i < len(names) - 1
        h = sage_layer(h, mean_op, leaves[f"{name}.weights"], leaves[f"{name}.bias"],
                       leaves[f"aux.{name}_neigh"], leaves.get(f"aux.{name}_skip"),
                       params.layers[name].activation, dropout if hidden else 0.0, rng,
                       training)
    return h


def _features(coords_norm, y0, graph: SpatialGraph) -> np.ndarray:
    coords_norm = np.asarray(coords_norm, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64).reshape(len(y0), -1)
    if len(coords_norm) != len(y0) or len(y0) != graph.n_nodes:
        raise ndiff.ShapeError(
            f"{len(coords_norm)} coordinates, {len(y0)} feature rows, {graph.n_nodes} graph nodes")
    return np.concatenate([coords_norm, y0], axis=1)


def gnn_forward(params: ParamSet, coords_norm, y0, graph: SpatialGraph,
                mean_op=None) -> np.ndarray:
    """Refined ``(N, 4L)`` block in normalised space (inference mode)."""
    x = _features(coords_norm, y0, graph)
    op = graph.mean_operator() if mean_op is None else mean_op
    leaves = {n: Tensor(a) for n, a in params.arrays()}
    return _gnn_graph(params, leaves, Tensor(x), op, 0.0, None, False).data


def gnn_loss(params: ParamSet, coords_norm, y0, target, mask, graph: SpatialGraph,
             nodes=None, azimuth_scale: Optional[float] = None, mean_op=None,
             dropout: float = 0.0, rng=None, training: bool = False, azimuth_index: int = 3):
    """Masked MSE over ``nodes`` (all nodes when None); returns ``(loss, flat_grad)``.

    ``target`` is ``(N, L, K)`` in normalised space and ``mask`` ``(N, L)``;
    azimuth differences in column ``azimuth_index`` are wrapped when
    ``azimuth_scale`` is given.
    """
    from .pinn import loss_supervised

    x = _features(coords_norm, y0, graph)
    op = graph.mean_operator() if mean_op is None else mean_op
    leaves = params.tensors()
    out = _gnn_graph(params, leaves, Tensor(x), op, dropout, rng, training)
    nodes = np.arange(graph.n_nodes) if nodes is None else np.asarray(nodes)
    target = np.asarray(target, dtype=np.float64)
    pred = out[nodes].reshape(len(nodes), target.shape[1], target.shape[2])
    loss = loss_supervised(pred, target[nodes], np.asarray(mask)[nodes], azimuth_scale,
                           azimuth_index if azimuth_scale is not None else None)
    loss.backward()
    return float(loss.data), ndiff.Graph(params, leaves, out).gradients()


@dataclass
class GnnConfig:
    epochs: int = 800
    lr: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 0.1
    patience: int = 60
    k: int = 8

    def to_dict(self) -> dict:
        return asdict(self)


GNN_HISTORY_FIELDS = ("epoch", "loss_train", "val_mse", "lr")


def train_gnn(coords_norm, y0, target, mask, graph: SpatialGraph, train_nodes, val_nodes,
              config: GnnConfig, rng: np.random.Generator,
              azimuth_scale: Optional[float] = None, params: ParamSet | None = None,
              azimuth_index: int = 3):
    """Full-graph Adam with cosine annealing; early stop on validation-node MSE.

    Returns ``(best_params, history)``.
    """
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    if len(train_nodes) == 0:
        raise ValueError("empty training split")
    val_nodes = np.asarray(val_nodes if val_nodes is not None and len(val_nodes) else train_nodes,
                           dtype=np.int64)
    _, L, n_kinds = np.asarray(target).shape
    az = azimuth_index if azimuth_scale is not None else None
    init_rng, loop_rng = rng.spawn(2)
    if params is None:
        params = init_gnn_params(L, init_rng, n_kinds=n_kinds)
    op = graph.mean_operator()
    state = ndiff.OptimizerState.for_params(params, base_lr=config.lr,
                                            weight_decay=config.weight_decay,
                                            total_steps=config.epochs)
    from .pinn import loss_supervised

    def val_mse(p):
        out = gnn_forward(p, coords_norm, y0, graph, op)[val_nodes]
        return float(loss_supervised(out.reshape(len(val_nodes), L, -1),
                                     np.asarray(target)[val_nodes], np.asarray(mask)[val_nodes],
                                     azimuth_scale, az).data)

    best, best_val, since = params.copy(), val_mse(params), 0
    history = []
    for epoch in range(config.epochs):
        lr = state.lr
        loss, grads = gnn_loss(params, coords_norm, y0, target, mask, graph, train_nodes,
                               azimuth_scale, op, config.dropout, loop_rng, True,
                               azimuth_index)
        if not math.isfinite(loss):
            raise ndiff.TrainingDivergence(f"graph loss diverged at epoch {epoch}")
        ndiff.adam_step(state, params, grads)
        state.advance_schedule()
        v = val_mse(params)
        if not math.isfinite(v):
            raise ndiff.TrainingDivergence(f"graph validation loss diverged at epoch {epoch}")
        history.append({"epoch": epoch, "loss_train": loss, "val_mse": v, "lr": lr})
        if v < best_val:
            best, best_val, since = params.copy(), v, 0
        else:
            since += 1
            if since >= config.patience:
                log.info("graph stage early stop at epoch %d (best val %.5f)", epoch, best_val)
                break
    return best, history


def refine_full(params: ParamSet, coords, coords_norm, y0, k: int = 8, workers: int = 1):
    """Build the graph over every point and run one refinement pass.

    Returns ``(refined, graph)``; output stays in normalised space.
    """
    graph = build_knn(coords, k, workers)
    return gnn_forward(params, coords_norm, y0, graph), graph


class GraphRefiner(BaseEstimator, RegressorMixin):
    """Refine first-stage predictions by message passing over a k-NN graph.

    All parameter blocks are in normalised space: ``y0`` and targets are
    ``(N, L, K)``, ``mask`` ``(N, L)`` flags present paths. Set
    ``azimuth_index`` to None when no column holds azimuths. Graphs are built
    from physical coordinates.
    """

    def __init__(self, k: int = 8, epochs: int = 800, lr: float = 1e-3,
                 weight_decay: float = 1e-5, dropout: float = 0.1, patience: int = 60,
                 azimuth_scale: float | None = None, azimuth_index: int | None = 3,
                 pass_through: bool = True, random_state=None):
        self.k = k
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.patience = patience
        self.azimuth_scale = azimuth_scale
        self.azimuth_index = azimuth_index
        self.pass_through = pass_through
        self.random_state = random_state

    def fit(self, X, X_norm, y0, target, mask, train_nodes, val_nodes=None):
        X = check_coords(X)
        target = np.asarray(target, dtype=np.float64)
        if target.ndim != 3:
            raise ndiff.ShapeError(f"targets must be (N, L, K), got {target.shape}")
        _, L, n_kinds = target.shape
        rng = np.random.default_rng(self.random_state)
        init_rng, train_rng = rng.spawn(2)
        self.graph_ = build_knn(X, self.k)
        config = GnnConfig(self.epochs, self.lr, self.weight_decay, self.dropout,
                           self.patience, self.k)
        params = init_gnn_params(L, init_rng, pass_through=self.pass_through, n_kinds=n_kinds)
        az_scale = self.azimuth_scale if self.azimuth_index is not None else None
        self.params_, self.history_ = train_gnn(
            X_norm, y0, target, mask, self.graph_, train_nodes, val_nodes, config,
            train_rng, az_scale, params, self.azimuth_index if self.azimuth_index is not None else 3)
        self.L_ = L
        return self

    def predict(self, X, X_norm, y0) -> np.ndarray:
        check_is_fitted(self, "params_")
        refined, self.full_graph_ = refine_full(self.params_, check_coords(X), X_norm, y0, self.k)
        return refined
