"""Two-stage mapper: physics-informed regressor followed by graph refinement."""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .geoscene import PathType, Scene
from .graph import GraphRefiner
from .pinn import LossWeights, PinnRegressor
from .validation import MultipathScaler, check_coords, check_targets

log = logging.getLogger(__name__)

# Children of SeedSequence(master), in this order. Adding a stage appends
# to the list so existing stages keep their streams.
STAGES = ("pipeline", "gnn_only", "separate_power", "separate_delay", "separate_elevation",
          "separate_azimuth")


def stage_seeds(master: int) -> dict[str, int]:
    """Independent 64-bit seeds for each stage, derived from one master seed."""
    children = np.random.SeedSequence(master).spawn(len(STAGES))
    return {name: int(c.generate_state(1, dtype=np.uint64)[0]) for name, c in zip(STAGES, children)}


def _spawn_ints(seed, n: int) -> list[int]:
    return [int(c.generate_state(1, dtype=np.uint64)[0])
            for c in np.random.SeedSequence(seed).spawn(n)]


def _normalized_targets(scaler: MultipathScaler, Y: np.ndarray, L: int, kinds):
    v = np.asarray(Y, dtype=np.float64).reshape(len(Y), L, 4)
    mask = ~np.isnan(v[..., 0])
    return np.nan_to_num(scaler.transform_params(v))[..., list(kinds)], mask


class PinnGnnMapper(BaseEstimator, RegressorMixin):
    """Sparse samples in, dense multipath map out.

    ``fit`` normalises with training statistics, trains the physics-informed
    regressor, then trains the refinement network on the graph of known
    points (train + validation) using the regressor's predictions there.
    ``predict`` runs the regressor on the query points, builds the graph
    over them and refines. Targets are ``(N, 4L)`` physical, NaN where absent.
    """

    def __init__(self, scene: Scene | None = None, L: int = 3, kinds=(0, 1, 2, 3),
                 pinn_epochs: int = 300, gnn_epochs: int = 800, lr: float = 1e-3,
                 weight_decay: float = 1e-5, dropout: float = 0.1, batch_size: int = 256,
                 pinn_patience: int = 30, gnn_patience: int = 60, k: int = 8,
                 augment_rounds: int = 5, jitter_sigma: float = 0.1,
                 loss_weights: LossWeights | None = None, consistency: bool = True,
                 type_blending: bool = True, theory_residual: bool = True, n_colloc: int = 0,
                 refine: bool = True, random_state: int | None = None):
        self.scene = scene
        self.L = L
        self.kinds = kinds
        self.pinn_epochs = pinn_epochs
        self.gnn_epochs = gnn_epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.batch_size = batch_size
        self.pinn_patience = pinn_patience
        self.gnn_patience = gnn_patience
        self.k = k
        self.augment_rounds = augment_rounds
        self.jitter_sigma = jitter_sigma
        self.loss_weights = loss_weights
        self.consistency = consistency
        self.type_blending = type_blending
        self.theory_residual = theory_residual
        self.n_colloc = n_colloc
        self.refine = refine
        self.random_state = random_state

    def fit(self, X, Y, X_val=None, Y_val=None, X_colloc=None):
        X = check_coords(X)
        Y = check_targets(Y, len(X), self.L)
        kinds = tuple(self.kinds)
        pinn_seed, gnn_seed = _spawn_ints(self.random_state, 2)
        scaler = MultipathScaler().fit(X, Y)
        self.pinn_ = PinnRegressor(
            scene=self.scene, L=self.L, kinds=kinds, epochs=self.pinn_epochs, lr=self.lr,
            weight_decay=self.weight_decay, dropout=self.dropout, batch_size=self.batch_size,
            patience=self.pinn_patience, augment_rounds=self.augment_rounds,
            jitter_sigma=self.jitter_sigma, loss_weights=self.loss_weights,
            consistency=self.consistency, scaler=scaler, n_colloc=self.n_colloc,
            theory_residual=self.theory_residual, type_blending=self.type_blending,
            random_state=pinn_seed,
        ).fit(X, Y, X_val, Y_val, X_colloc)
        self.scaler_ = scaler
        self.gnn_ = None
        if self.refine:
            has_val = X_val is not None and len(X_val) > 0
            Xk = np.vstack([X, check_coords(X_val)]) if has_val else X
            Yk = np.vstack([Y, check_targets(Y_val, len(X_val), self.L)]) if has_val else Y
            target, mask = _normalized_targets(scaler, Yk, self.L, kinds)
            y0 = self.pinn_.predict_normalized(Xk).params
            train_nodes = np.arange(len(X))
            val_nodes = np.arange(len(X), len(Xk))
            self.gnn_ = GraphRefiner(
                k=self.k, epochs=self.gnn_epochs, lr=self.lr, weight_decay=self.weight_decay,
                dropout=self.dropout, patience=self.gnn_patience,
                azimuth_scale=float(scaler.param_scale[3]),
                azimuth_index=kinds.index(3) if 3 in kinds else None, random_state=gnn_seed,
            ).fit(Xk, scaler.transform_coords(Xk), y0.reshape(len(Xk), -1), target, mask,
                  train_nodes, val_nodes)
        return self

    @property
    def history_(self) -> dict:
        check_is_fitted(self, "pinn_")
        return {"pinn": self.pinn_.history_,
                "gnn": self.gnn_.history_ if self.gnn_ is not None else []}

    def predict_pinn_normalized(self, X) -> np.ndarray:
        check_is_fitted(self, "pinn_")
        return self.pinn_.predict_normalized(check_coords(X)).params

    def predict_normalized(self, X) -> np.ndarray:
        """``(N, L, K)`` refined block in normalised space."""
        X = check_coords(X)
        y0 = self.predict_pinn_normalized(X)
        if self.gnn_ is None:
            return y0
        refined = self.gnn_.predict(X, self.scaler_.transform_coords(X), y0.reshape(len(X), -1))
        return refined.reshape(y0.shape)

    def _to_physical(self, block: np.ndarray) -> np.ndarray:
        full = np.full(block.shape[:2] + (4,), np.nan)
        full[..., list(self.kinds)] = block
        return self.scaler_.inverse_params(full).reshape(len(block), -1)

    def predict(self, X) -> np.ndarray:
        return self._to_physical(self.predict_normalized(X))

    def predict_pinn(self, X) -> np.ndarray:
        return self._to_physical(self.predict_pinn_normalized(X))

    def predict_types(self, X) -> np.ndarray:
        """Most likely path type per predicted path, ``(N, L)`` of PathType codes."""
        probs = self.pinn_.predict_normalized(check_coords(X)).type_probs
        return np.argmax(probs, axis=-1).astype(np.int64) + int(PathType.LOS)
