"""Comparison methods, all evaluated on the same unknown points and layout."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from .geoscene import Dataset, SplitSpec
from .graph import GraphRefiner
from .kriging import MultipathKriging
from .validation import MultipathScaler

if TYPE_CHECKING:
    from .config import RunConfig
    from .pipeline import PinnGnnMapper

log = logging.getLogger(__name__)

METHODS = ("kriging", "separate", "gnn_only", "pinn_only", "proposed")
KIND_STAGES = ("separate_power", "separate_delay", "separate_elevation", "separate_azimuth")


@dataclass
class BaselineResult:
    method: str
    predictions: np.ndarray  # (N_unknown, 4L), physical units
    seconds: float
    model: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.predictions.ndim != 2 or self.predictions.shape[1] % 4:
            raise ValueError(f"predictions must be (N, 4L), got {self.predictions.shape}")


def known_points(dataset: Dataset, split: SplitSpec):
    """Labelled training and validation blocks ``(Xt, Yt, Xv, Yv)``."""
    Y = dataset.Y
    return (dataset.coords[split.train], Y[split.train],
            dataset.coords[split.val], Y[split.val])


def make_mapper(config: "RunConfig", scene, seed: int, **overrides) -> "PinnGnnMapper":
    from .pipeline import PinnGnnMapper

    p, g = config.pinn, config.gnn
    kw = dict(scene=scene, L=config.L, pinn_epochs=p.epochs, gnn_epochs=g.epochs, lr=p.lr,
              weight_decay=p.weight_decay, dropout=p.dropout, batch_size=p.batch_size,
              pinn_patience=p.patience, gnn_patience=g.patience, k=g.k,
              augment_rounds=p.augment_rounds, jitter_sigma=p.jitter_sigma,
              loss_weights=config.loss_weights, theory_residual=p.theory_residual,
              n_colloc=p.n_colloc, random_state=seed)
    kw.update(overrides)
    return PinnGnnMapper(**kw)


def fit_mapper(mapper: "PinnGnnMapper", dataset: Dataset, split: SplitSpec) -> "PinnGnnMapper":
    Xt, Yt, Xv, Yv = known_points(dataset, split)
    colloc = dataset.coords if mapper.n_colloc > 0 else None
    return mapper.fit(Xt, Yt, Xv, Yv, X_colloc=colloc)


def run_proposed(dataset: Dataset, split: SplitSpec, config: "RunConfig",
                 mapper: Optional["PinnGnnMapper"] = None) -> BaselineResult:
    """The full pipeline; pass an already fitted ``mapper`` to reuse it."""
    from .pipeline import stage_seeds

    t0 = time.perf_counter()
    if mapper is None:
        mapper = make_mapper(config, dataset.scene, stage_seeds(config.seed)["pipeline"])
        fit_mapper(mapper, dataset, split)
    pred = mapper.predict(dataset.coords)[split.unknown]
    return BaselineResult("proposed", pred, time.perf_counter() - t0, mapper)


def run_pinn_only(dataset: Dataset, split: SplitSpec, config: "RunConfig",
                  mapper: Optional["PinnGnnMapper"] = None) -> BaselineResult:
    """First stage alone. With the same seed this is the pipeline's intermediate output."""
    from .pipeline import stage_seeds

    t0 = time.perf_counter()
    if mapper is None:
        mapper = make_mapper(config, dataset.scene, stage_seeds(config.seed)["pipeline"],
                             refine=False)
        fit_mapper(mapper, dataset, split)
    pred = mapper.predict_pinn(dataset.coords[split.unknown])
    return BaselineResult("pinn_only", pred, time.perf_counter() - t0, mapper)


def run_gnn_only(dataset: Dataset, split: SplitSpec, config: "RunConfig") -> BaselineResult:
    """Graph network on coordinates plus all-zero parameter features."""
    from .pipeline import _normalized_targets, stage_seeds

    t0 = time.perf_counter()
    L, g = config.L, config.gnn
    Xt, Yt, Xv, Yv = known_points(dataset, split)
    scaler = MultipathScaler().fit(Xt, Yt)
    Xk, Yk = np.vstack([Xt, Xv]), np.vstack([Yt, Yv])
    target, mask = _normalized_targets(scaler, Yk, L, range(4))
    refiner = GraphRefiner(k=g.k, epochs=g.epochs, lr=g.lr, weight_decay=g.weight_decay,
                           dropout=g.dropout, patience=g.patience,
                           azimuth_scale=float(scaler.param_scale[3]),
                           random_state=stage_seeds(config.seed)["gnn_only"])
    refiner.fit(Xk, scaler.transform_coords(Xk), np.zeros((len(Xk), 4 * L)), target, mask,
                np.arange(len(Xt)), np.arange(len(Xt), len(Xk)))
    C = dataset.coords
    out = refiner.predict(C, scaler.transform_coords(C), np.zeros((len(C), 4 * L)))
    pred = scaler.inverse_params(out.reshape(len(C), L, 4)).reshape(len(C), -1)[split.unknown]
    return BaselineResult("gnn_only", pred, time.perf_counter() - t0, refiner)


def run_separate(dataset: Dataset, split: SplitSpec, config: "RunConfig") -> BaselineResult:
    """One two-stage pipeline per parameter kind, each with its own physics term only."""
    from .pipeline import stage_seeds

    t0 = time.perf_counter()
    seeds = stage_seeds(config.seed)
    L = config.L
    out = np.empty((len(split.unknown), L, 4))
    models = []
    for kind, stage in enumerate(KIND_STAGES):
        mapper = make_mapper(config, dataset.scene, seeds[stage], kinds=(kind,),
                             consistency=False, type_blending=False)
        fit_mapper(mapper, dataset, split)
        pred = mapper.predict(dataset.coords)[split.unknown].reshape(-1, L, 4)
        out[..., kind] = pred[..., kind]
        models.append(mapper)
    return BaselineResult("separate", out.reshape(len(out), -1), time.perf_counter() - t0, models)


def run_kriging(dataset: Dataset, split: SplitSpec, config: "RunConfig") -> BaselineResult:
    """Ordinary kriging per path parameter from the labelled known points."""
    t0 = time.perf_counter()
    Xt, Yt, Xv, Yv = known_points(dataset, split)
    scaler = MultipathScaler().fit(Xt, Yt)
    model = MultipathKriging(L=config.L, scaler=scaler).fit(np.vstack([Xt, Xv]), np.vstack([Yt, Yv]))
    pred = model.predict(dataset.coords[split.unknown])
    return BaselineResult("kriging", pred, time.perf_counter() - t0, model)


RUNNERS = {"kriging": run_kriging, "separate": run_separate, "gnn_only": run_gnn_only,
           "pinn_only": run_pinn_only, "proposed": run_proposed}


def run_methods(dataset: Dataset, split: SplitSpec, config: "RunConfig",
                methods=METHODS) -> dict[str, BaselineResult]:
    """Run the requested methods; the proposed pipeline's first stage doubles as PINN_only."""
    unknown = [m for m in methods if m not in RUNNERS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}")
    results: dict[str, BaselineResult] = {}
    order = sorted(methods, key=lambda m: m == "pinn_only")
    for name in order:
        if name == "pinn_only" and "proposed" in results:
            results[name] = run_pinn_only(dataset, split, config, results["proposed"].model)
        else:
            results[name] = RUNNERS[name](dataset, split, config)
        log.info("%s finished in %.1f s", name, results[name].seconds)
    return {name: results[name] for name in methods}
