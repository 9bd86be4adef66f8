"""Gradient checks of the two training losses on small random problems."""
from __future__ import annotations

import numpy as np

from . import ndiff
from .geoscene import Scene, synthesize_scene, trace_all
from .graph import build_knn, gnn_loss, init_gnn_params
from .pinn import LossWeights, composite_loss, init_pinn_params, make_batch
from .validation import MultipathScaler


def random_records(scene: Scene, n: int, L: int, rng: np.random.Generator):
    """Coordinates drawn uniformly in the scene and their traced targets ``(n, 4L)``."""
    xmin, ymin, xmax, ymax = scene.bounds
    coords = np.column_stack([rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n)])
    Y = np.full((n, L, 4), np.nan)
    for i, xy in enumerate(coords):
        for l, p in enumerate(trace_all(scene, xy, L).paths):
            if p.valid:
                Y[i, l] = p.as_tuple()
    return coords, Y.reshape(n, -1)


def pinn_gradient_check(seed: int, L: int = 3, batch: int = 8, n_samples: int = 64,
                        tolerance: float = 1e-4) -> ndiff.GradCheckReport:
    """Full composite loss, every physics term on, dropout off."""
    rng = np.random.default_rng(seed)
    scene = synthesize_scene(seed)
    coords, Y = random_records(scene, batch, L, rng)
    scaler = MultipathScaler().fit(coords, Y)
    kinds = (0, 1, 2, 3)
    b = make_batch(coords, Y, scene, scaler, kinds)
    params = init_pinn_params(L, rng)
    weights = LossWeights()

    def loss_fn(p):
        total, _, grads = composite_loss(p, b, scaler, weights, 10, 20, L, kinds)
        return total, grads

    return ndiff.grad_check(loss_fn, params, tolerance, n_samples, rng=rng)


def gnn_gradient_check(seed: int, L: int = 3, batch: int = 8, n_samples: int = 64,
                       tolerance: float = 1e-4, k: int = 3) -> ndiff.GradCheckReport:
    """Masked refinement loss on a random graph with random features."""
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 10.0, size=(batch, 2))
    graph = build_knn(coords, k)
    y0 = rng.normal(size=(batch, 4 * L))
    target = rng.normal(size=(batch, L, 4))
    mask = rng.random((batch, L)) < 0.8
    params = init_gnn_params(L, rng, pass_through=False)
    coords_norm = (coords - coords.mean(axis=0)) / coords.std(axis=0)

    def loss_fn(p):
        return gnn_loss(p, coords_norm, y0, target, mask, graph, azimuth_scale=90.0)

    return ndiff.grad_check(loss_fn, params, tolerance, n_samples, rng=rng)
