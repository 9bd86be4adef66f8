"""Physics-informed multipath predictor.

Coordinates go through an environment encoder (16-d features plus
per-path reflection factors), a residual main network producing the
``L x 4`` parameter block, and a path-type classifier. Training combines
the supervised error with power/delay/angle/consistency penalties derived
from free-space propagation and a path-type cross-entropy.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import ndiff
from .geoscene import SPEED_OF_LIGHT, PathType, Scene
from .ndiff import Tensor
from .validation import MultipathScaler, check_coords, check_targets, wrap_degrees

log = logging.getLogger(__name__)

N_TYPES = 4
POWER_CAP_DB = (0.0, 10.0 * math.log10(0.7), 10.0 * math.log10(0.3), 10.0 * math.log10(0.1))
DELAY_FLOOR = (1.0, 1.2, 1.4, 1.6)
LABEL_EDGES = (1.1, 1.4, 1.6)
# (elevation, azimuth) tolerances in degrees per type, scaled by r_l
ANGLE_TOLERANCE = ((45.0, 90.0), (45.0, 90.0), (90.0, 180.0), (90.0, 180.0))
LOG_FLOOR = 1e-12


@dataclass
class TheoryLos:
    power_dbm: np.ndarray
    delay_ns: np.ndarray
    elevation_deg: np.ndarray
    azimuth_deg: np.ndarray
    distance_m: np.ndarray


def _los_row(tx, x: float, y: float, rx_height: float, f_c: float):
    # scalar math keeps the result bit-identical to the ray tracer's rounding
    dx, dy, dz = tx[0] - x, tx[1] - y, tx[2] - rx_height
    d = math.dist(tx, (x, y, rx_height))
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d == 0:
        raise ValueError("receiver coincides with the transmitter")
    path_loss = (20.0 * math.log10(d) + 20.0 * math.log10(f_c)
                 + 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT))
    return (path_loss, d / SPEED_OF_LIGHT * 1e9,
            math.degrees(math.acos(max(-1.0, min(1.0, dz / r)))),
            math.degrees(math.atan2(dy, dx)), d)


def theory_los(scene: Scene, coords) -> TheoryLos:
    """Free-space line-of-sight quantities at receiver coordinates."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    xmin, ymin, xmax, ymax = scene.bounds
    if np.any((coords[:, 0] < xmin) | (coords[:, 0] > xmax)
              | (coords[:, 1] < ymin) | (coords[:, 1] > ymax)):
        raise ValueError("coordinates outside the scene bounds")
    tx = tuple(float(v) for v in scene.tx)
    rows = np.array([_los_row(tx, x, y, scene.rx_height, scene.f_c)
                     for x, y in coords.tolist()]).reshape(-1, 5)
    return TheoryLos(
        power_dbm=scene.tx_power - rows[:, 0],
        delay_ns=rows[:, 1],
        elevation_deg=rows[:, 2],
        azimuth_deg=rows[:, 3],
        distance_m=rows[:, 4],
    )


def theory_base(theory: TheoryLos, scaler: MultipathScaler, L: int,
                kinds: Sequence[int] = (0, 1, 2, 3)) -> np.ndarray:
    """Normalised LoS quantities repeated over the L paths, shape ``(B, L, K)``."""
    phys = np.column_stack([theory.power_dbm, theory.delay_ns, theory.elevation_deg,
                            theory.azimuth_deg])
    norm = scaler.transform_params(phys)[:, list(kinds)]
    return np.repeat(norm[:, None, :], L, axis=1)


# --------------------------------------------------------------------------
# Parameters and forward pass
# --------------------------------------------------------------------------


def init_pinn_params(L: int, rng: np.random.Generator, n_kinds: int = 4,
                     width: int = 256, env_dim: int = 16) -> ndiff.ParamSet:
    R, I, S = ndiff.Activation.RELU, ndiff.Activation.IDENTITY, ndiff.Activation.SIGMOID
    g = ndiff.DenseLayer.glorot
    layers = {
        "enc1": g(2, 32, rng, R),
        "enc2": g(32, 32, rng, R),
        "enc3": g(32, env_dim, rng, I),
        "embed": g(2, width, rng, R),
        "hid1": g(width + env_dim, width, rng, R),
        "hid2": g(width, width, rng, R),
        "hid3": g(width, width, rng, R),
        "out": g(width, n_kinds * L, rng, I),
        "cls": g(width + env_dim, N_TYPES * L, rng, I),
        "refl": g(env_dim, L, rng, S),
    }
    return ndiff.ParamSet(layers)


@dataclass
class PinnOutput:
    params: np.ndarray  # (B, L, K) normalised
    type_probs: np.ndarray  # (B, L, 4)
    refl_factors: np.ndarray  # (B, L)


def _forward_graph(params: ndiff.ParamSet, leaves, x: Tensor, L: int, dropout: float,
                   rng, training: bool, base: Optional[np.ndarray] = None):
    def layer(name, h):
        return ndiff.apply_layer((leaves[f"{name}.weights"], leaves[f"{name}.bias"]),
                                 params.layers[name].activation, h)

    def drop(h):
        return ndiff.dropout(h, dropout, rng, training)

    f = layer("enc3", drop(layer("enc2", drop(layer("enc1", x)))))
    h0 = layer("embed", x)
    h = h0 + drop(layer("hid1", ndiff.concat([h0, f])))
    h = h + drop(layer("hid2", h))
    h = h + drop(layer("hid3", h))
    B = x.shape[0]
    out = layer("out", h).reshape(B, L, -1)
    if base is not None:
        out = out + base
    probs = ndiff.softmax(layer("cls", ndiff.concat([h, f])).reshape(B, L, N_TYPES), axis=-1)
    refl = layer("refl", f)
    return out, probs, refl


def pinn_forward(params: ndiff.ParamSet, coords_norm, L: int, training: bool = False,
                 dropout: float = 0.0, rng: np.random.Generator | None = None,
                 base: Optional[np.ndarray] = None) -> PinnOutput:
    """Inference pass. ``base`` is the optional ``(B, L, K)`` normalised
    free-space block the output head is added to (see :func:`theory_base`)."""
    x = np.atleast_2d(np.asarray(coords_norm, dtype=np.float64))
    if x.shape[1] != 2:
        raise ndiff.ShapeError(f"expected (B, 2) coordinates, got {x.shape}")
    out, probs, refl = _forward_graph(params, {n: Tensor(a) for n, a in params.arrays()},
                                      Tensor(x), L, dropout, rng, training, base)
    return PinnOutput(out.data, probs.data, refl.data)


# --------------------------------------------------------------------------
# Loss terms. Inputs may be arrays or Tensors; every term returns a Tensor.
# Physics terms return one value per sample; the composite averages them.
# --------------------------------------------------------------------------


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _mask(mask, shape) -> np.ndarray:
    return np.ones(shape) if mask is None else np.asarray(mask, dtype=np.float64)


def loss_supervised(pred, true, mask, azimuth_scale: Optional[float] = None,
                    azimuth_index: Optional[int] = None) -> Tensor:
    """Mean over samples of the masked squared error (normalised space).

    ``pred``/``true`` are ``(B, L, K)``; when ``azimuth_scale`` is given the
    azimuth column difference is wrapped to ``[-180, 180)`` degrees first.
    """
    pred, true = _t(pred), np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ndiff.ShapeError(f"prediction {pred.shape} and target {true.shape} differ")
    B = pred.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    m = _mask(mask, pred.shape[:2])[..., None]
    diff = pred - np.nan_to_num(true)
    if azimuth_scale is not None and azimuth_index is not None:
        k = azimuth_index
        deg = diff.data[..., k] * azimuth_scale
        shift = np.zeros(pred.shape)
        shift[..., k] = (wrap_degrees(deg) - deg) / azimuth_scale
        diff = diff + shift
    return ((diff * diff) * m).sum() / float(B)


def loss_power(power_pred, power_theory, type_probs, mask=None,
               weights: Sequence[float] = (1.0, 0.5, 0.3, 0.2), unit: float = 1.0) -> Tensor:
    """Per-sample power penalty in (dB / unit)^2.

    The LoS term is symmetric; NLoS terms are one-sided hinges against caps
    at 0.7/0.3/0.1 of the LoS free-space power.
    """
    p = _t(power_pred)
    probs = _t(type_probs)
    m = _mask(mask, p.shape)
    pth = np.asarray(power_theory, dtype=np.float64)[:, None]
    total = None
    for k in range(N_TYPES):
        if k == PathType.LOS:
            d = (p - pth) / unit
            term = d * d
        else:
            h = ndiff.relu(p - (pth + POWER_CAP_DB[k])) / unit
            term = h * h
        contrib = term * probs[..., k] * (weights[k] * m)
        total = contrib if total is None else total + contrib
    return total.sum(axis=1)


def loss_delay(delay_pred, delay_theory, type_probs, mask=None,
               weights: Sequence[float] = (1.0, 0.5, 0.3, 0.2)) -> Tensor:
    """Per-sample delay penalty, in the squared units of the delays passed in."""
    tau = _t(delay_pred)
    probs = _t(type_probs)
    m = _mask(mask, tau.shape)
    tth = np.asarray(delay_theory, dtype=np.float64)[:, None]
    total = None
    for k in range(N_TYPES):
        h = ndiff.relu(DELAY_FLOOR[k] * tth - tau)
        term = h * h
        if k == PathType.LOS:
            d = tau - tth
            term = term + d * d
        contrib = term * probs[..., k] * (weights[k] * m)
        total = contrib if total is None else total + contrib
    return total.sum(axis=1)


def wrap_tensor(deg: Tensor) -> Tensor:
    """Canonicalise angles to [-180, 180); the shift is piecewise constant."""
    shift = wrap_degrees(deg.data) - deg.data
    return deg + shift


def angle_errors(theta_pred, phi_pred, theta_theory, phi_theory, refl_factor,
                 tolerance=(45.0, 90.0)):
    """Angular deviations from the LoS direction.

    Returns ``(d_theta, d_phi, e_los, e_refl)`` with ``e_refl`` the hinge
    error against ``tolerance`` scaled by the reflection factor. Either
    angle may be None, in which case it contributes nothing.
    """
    r = _t(refl_factor)
    d_theta = d_phi = None
    if theta_pred is not None:
        d_theta = ndiff.absolute(_t(theta_pred) - np.asarray(theta_theory, dtype=np.float64))
    if phi_pred is not None:
        a = ndiff.absolute(wrap_tensor(_t(phi_pred) - np.asarray(phi_theory, dtype=np.float64)))
        d_phi = ndiff.minimum(a, 360.0 - a)
    e_los = e_refl = None
    for d, tol in ((d_theta, tolerance[0]), (d_phi, tolerance[1])):
        if d is None:
            continue
        h = ndiff.relu(d - r * tol)
        e_los = d if e_los is None else e_los + d
        e_refl = h * h if e_refl is None else e_refl + h * h
    return d_theta, d_phi, e_los, e_refl


def loss_angle(theta_pred, phi_pred, theta_theory, phi_theory, refl_factors, type_probs,
               mask=None, weights: Sequence[float] = (1.0, 0.5, 0.1, 0.1),
               unit: float = 1.0) -> Tensor:
    """Per-sample angular penalty; LoS error is linear, NLoS errors are squared hinges."""
    probs = _t(type_probs)
    r = _t(refl_factors)
    th = None if theta_theory is None else np.asarray(theta_theory, dtype=np.float64)[:, None]
    ph = None if phi_theory is None else np.asarray(phi_theory, dtype=np.float64)[:, None]
    d_theta, d_phi, e_los, _ = angle_errors(theta_pred, phi_pred, th, ph, r)
    m = _mask(mask, e_los.shape)
    total = e_los / unit * probs[..., 0] * (weights[0] * m)
    for k in range(1, N_TYPES):
        e = None
        for d, tol in zip((d_theta, d_phi), ANGLE_TOLERANCE[k]):
            if d is None:
                continue
            h = ndiff.relu(d - r * tol)
            e = h * h if e is None else e + h * h
        total = total + e / (unit * unit) * probs[..., k] * (weights[k] * m)
    return total.sum(axis=1)


def los_probability(first_delay, delay_theory) -> Tensor:
    """Soft LoS existence from the earliest delay: sigmoid(10 (0.1 - rel. excess))."""
    tth = np.asarray(delay_theory, dtype=np.float64)
    rel = ndiff.absolute(_t(first_delay) - tth) / tth
    return ndiff.sigmoid(10.0 * (0.1 - rel))


def loss_consistency(power_pred, delay_pred, delay_theory, type_probs, mask=None,
                     power_unit: float = 1.0) -> Tensor:
    """Per-sample consistency: power non-increasing with delay plus LoS-existence BCE."""
    p, tau, probs = _t(power_pred), _t(delay_pred), _t(type_probs)
    B, L = p.shape
    m = _mask(mask, (B, L)) > 0
    key = np.where(m, tau.data, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    m_sorted = np.take_along_axis(m, order, axis=1)
    p_sorted = ndiff.take_along(p, order, axis=1)
    t_sorted = ndiff.take_along(tau, order, axis=1)
    if L > 1:
        pair = (m_sorted[:, 1:] & m_sorted[:, :-1]).astype(np.float64)
        mono = (ndiff.relu(p_sorted[:, 1:] - p_sorted[:, :-1]) * pair).sum(axis=1) / power_unit
    else:
        mono = Tensor(np.zeros(B))
    has_any = m.any(axis=1).astype(np.float64)
    p_los = los_probability(t_sorted[:, 0], delay_theory)
    strongest = np.argmax(np.where(m, p.data, -np.inf), axis=1)
    q = ndiff.take_along(probs[..., int(PathType.LOS)], strongest[:, None], axis=1)[:, 0]
    bce = -(p_los * ndiff.log(q + LOG_FLOOR) + (1.0 - p_los) * ndiff.log(1.0 - q + LOG_FLOOR))
    return (mono + bce) * has_any


def label_path_types(delays, delay_theory, valid) -> np.ndarray:
    """One-hot path-type labels from the delay ratio to the LoS delay."""
    delays = np.asarray(delays, dtype=np.float64)
    rho = delays / np.asarray(delay_theory, dtype=np.float64)[:, None]
    idx = np.digitize(rho, LABEL_EDGES)
    labels = np.eye(N_TYPES)[idx]
    labels[~np.asarray(valid, dtype=bool)] = 0.0
    return labels


def loss_type(type_probs, labels) -> Tensor:
    probs = _t(type_probs)
    y = np.asarray(labels, dtype=np.float64)
    B = probs.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    return -(ndiff.log(probs + LOG_FLOOR) * y).sum() / float(B)


# --------------------------------------------------------------------------
# Composite loss
# --------------------------------------------------------------------------


@dataclass
class LossWeights:
    power: float = 1.0
    delay: float = 1.0
    angle: float = 0.01
    consist: float = 0.1
    phy_start: float = 0.05
    phy_end: float = 0.5
    type_start: float = 0.05
    type_end: float = 0.3
    w_power: tuple = (1.0, 0.5, 0.3, 0.2)
    w_delay: tuple = (1.0, 0.5, 0.3, 0.2)
    w_angle: tuple = (1.0, 0.5, 0.1, 0.1)

    def __post_init__(self):
        self.w_power, self.w_delay, self.w_angle = map(tuple, (self.w_power, self.w_delay, self.w_angle))
        vals = [self.power, self.delay, self.angle, self.consist, self.phy_start, self.phy_end,
                self.type_start, self.type_end, *self.w_power, *self.w_delay, *self.w_angle]
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")

    @staticmethod
    def _ramp(start: float, end: float, epoch: int, total_epochs: int) -> float:
        if total_epochs <= 1:
            return end
        frac = min(max(epoch, 0), total_epochs - 1) / (total_epochs - 1)
        return start + (end - start) * frac

    def lambda_phy(self, epoch: int, total_epochs: int) -> float:
        return self._ramp(self.phy_start, self.phy_end, epoch, total_epochs)

    def lambda_type(self, epoch: int, total_epochs: int) -> float:
        return self._ramp(self.type_start, self.type_end, epoch, total_epochs)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class Batch:
    """Everything the composite loss needs for one set of samples."""

    coords_norm: np.ndarray  # (B, 2)
    target_norm: np.ndarray  # (B, L, K), zeros where invalid
    mask: np.ndarray  # (B, L) bool
    labels: np.ndarray  # (B, L, 4)
    theory: TheoryLos
    labeled: Optional[np.ndarray] = None  # (B,) bool; None means every row
    base: Optional[np.ndarray] = None  # (B, L, K) residual base

    def __len__(self) -> int:
        return len(self.coords_norm)


KIND_INDEX = {"power": 0, "delay": 1, "elevation": 2, "azimuth": 3}


def composite_loss(params: ndiff.ParamSet, batch: Batch, scaler: MultipathScaler,
                   weights: LossWeights, epoch: int, total_epochs: int, L: int,
                   kinds: Sequence[int] = (0, 1, 2, 3), consistency: bool = True,
                   dropout: float = 0.0, rng=None, training: bool = False,
                   blend: bool = True):
    """Total loss, per-term values and the flat gradient.

    Physics terms are evaluated in physical units, rescaled to be
    dimensionless: power by the power normalisation scale, delays by the
    LoS delay and angles in radians. With ``blend`` off, per-type terms are
    weighted by the hard heuristic labels instead of classifier output.
    """
    if epoch > total_epochs:
        raise ValueError("epoch exceeds total_epochs")
    kinds = tuple(kinds)
    leaves = params.tensors()
    out, probs, refl = _forward_graph(params, leaves, Tensor(batch.coords_norm), L,
                                      dropout, rng, training, batch.base)
    az_col = kinds.index(3) if 3 in kinds else None
    if batch.labeled is None or batch.labeled.all():
        out_l, probs_l, lab = out, probs, slice(None)
    else:
        lab = np.flatnonzero(batch.labeled)
        out_l, probs_l = out[lab], probs[lab]
    sup = loss_supervised(out_l, batch.target_norm[lab], batch.mask[lab],
                          scaler.param_scale[3] if az_col is not None else None, az_col)

    phys = {}
    for j, k in enumerate(kinds):
        phys[k] = out[..., j] * scaler.param_scale[k] + scaler.param_mean[k]
    th = batch.theory
    m = batch.mask
    B = out.shape[0]
    type_w = probs if blend else Tensor(batch.labels)
    terms = {}
    if 0 in phys:
        terms["power"] = loss_power(phys[0], th.power_dbm, type_w, m, weights.w_power,
                                    unit=scaler.param_scale[0])
    if 1 in phys:
        terms["delay"] = loss_delay(phys[1] / th.delay_ns[:, None], np.ones(B), type_w, m,
                                    weights.w_delay)
    if 2 in phys or 3 in phys:
        terms["angle"] = loss_angle(phys.get(2), phys.get(3), th.elevation_deg, th.azimuth_deg,
                                    refl, type_w, m, weights.w_angle, unit=180.0 / math.pi)
    if consistency and blend and 0 in phys and 1 in phys:
        terms["consist"] = loss_consistency(phys[0], phys[1] / th.delay_ns[:, None], np.ones(B),
                                            probs, m, power_unit=scaler.param_scale[0])
    lam = {"power": weights.power, "delay": weights.delay, "angle": weights.angle,
           "consist": weights.consist}
    phy = None
    for name, t in terms.items():
        c = t * lam[name]
        phy = c if phy is None else phy + c
    lam_phy = weights.lambda_phy(epoch, total_epochs)
    lam_type = weights.lambda_type(epoch, total_epochs)
    typ = loss_type(probs_l, batch.labels[lab])
    total = sup + lam_type * typ
    if phy is not None:
        total = total + lam_phy * phy.mean()
    values = {"sup": float(sup.data), "type": float(typ.data),
              **{name: float(t.data.mean()) for name, t in terms.items()}}
    for name, v in values.items():
        if not math.isfinite(v):
            raise ndiff.TrainingDivergence(f"loss term '{name}' is not finite")
    total.backward()
    grads = ndiff.Graph(params, leaves, total).gradients()
    return float(total.data), values, grads


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 0.1
    batch_size: int = 256
    patience: int = 30
    augment_rounds: int = 5
    jitter_sigma: float = 0.1


HISTORY_FIELDS = ("epoch", "loss_total", "loss_sup", "loss_power", "loss_delay", "loss_angle",
                  "loss_consist", "loss_type", "lr", "lambda_phy", "lambda_type", "val_sup")


def make_batch(coords: np.ndarray, Y: np.ndarray, scene: Scene, scaler: MultipathScaler,
               kinds: Sequence[int], residual: bool = True) -> Batch:
    """Batch from physical coordinates and an ``(N, 4L)`` target with NaN where invalid."""
    N = len(coords)
    L = Y.shape[1] // 4
    values = Y.reshape(N, L, 4)
    mask = ~np.isnan(values[..., 1])
    theory = theory_los(scene, coords)
    labels = label_path_types(np.nan_to_num(values[..., 1], nan=1.0), theory.delay_ns, mask)
    target = np.nan_to_num(scaler.transform_params(values))[..., list(kinds)]
    base = theory_base(theory, scaler, L, kinds) if residual else None
    return Batch(scaler.transform_coords(coords), target, mask, labels, theory, None, base)


def _subset(batch: Batch, idx) -> Batch:
    th = batch.theory
    return Batch(batch.coords_norm[idx], batch.target_norm[idx], batch.mask[idx],
                 batch.labels[idx],
                 TheoryLos(th.power_dbm[idx], th.delay_ns[idx], th.elevation_deg[idx],
                           th.azimuth_deg[idx], th.distance_m[idx]),
                 None if batch.labeled is None else batch.labeled[idx],
                 None if batch.base is None else batch.base[idx])


def collocation_batch(coords: np.ndarray, scene: Scene, scaler: MultipathScaler, L: int,
                      kinds: Sequence[int], residual: bool = True) -> Batch:
    """Unlabelled rows: physics terms apply to every path, supervision to none."""
    n = len(coords)
    theory = theory_los(scene, coords)
    base = theory_base(theory, scaler, L, kinds) if residual else None
    return Batch(scaler.transform_coords(coords), np.zeros((n, L, len(kinds))),
                 np.ones((n, L), dtype=bool), np.zeros((n, L, N_TYPES)),
                 theory, np.zeros(n, dtype=bool), base)


def _join(a: Batch, b: Batch) -> Batch:
    ta, tb = a.theory, b.theory
    lab = lambda x: np.ones(len(x), dtype=bool) if x.labeled is None else x.labeled
    return Batch(
        np.concatenate([a.coords_norm, b.coords_norm]),
        np.concatenate([a.target_norm, b.target_norm]),
        np.concatenate([a.mask, b.mask]),
        np.concatenate([a.labels, b.labels]),
        TheoryLos(*(np.concatenate([getattr(ta, f), getattr(tb, f)])
                    for f in ("power_dbm", "delay_ns", "elevation_deg", "azimuth_deg", "distance_m"))),
        np.concatenate([lab(a), lab(b)]),
        None if a.base is None else np.concatenate([a.base, b.base]),
    )


def validation_loss(params, batch: Batch, scaler: MultipathScaler, L: int, kinds) -> float:
    out = pinn_forward(params, batch.coords_norm, L, base=batch.base).params
    az = kinds.index(3) if 3 in kinds else None
    return float(loss_supervised(out, batch.target_norm, batch.mask,
                                 scaler.param_scale[3] if az is not None else None, az).data)


def train_pinn(train: Batch, val: Optional[Batch], scaler: MultipathScaler, L: int,
               config: TrainConfig, weights: LossWeights, rng: np.random.Generator,
               kinds: Sequence[int] = (0, 1, 2, 3), consistency: bool = True,
               params: ndiff.ParamSet | None = None, colloc: Batch | None = None,
               n_colloc: int = 0, blend: bool = True):
    """Mini-batch Adam with cosine annealing and early stopping on validation error.

    Returns ``(best_params, history)`` where history is a list of dicts
    keyed by ``HISTORY_FIELDS``.
    """
    kinds = tuple(kinds)
    if len(train.coords_norm) == 0:
        raise ValueError("empty training set")
    init_rng, loop_rng = rng.spawn(2)
    if params is None:
        params = init_pinn_params(L, init_rng, n_kinds=len(kinds))
    state = ndiff.OptimizerState.for_params(params, base_lr=config.lr,
                                            weight_decay=config.weight_decay,
                                            total_steps=config.epochs)
    best = params.copy()
    best_val, since_best = math.inf, 0
    history = []
    n = len(train.coords_norm)
    for epoch in range(config.epochs):
        sums: dict[str, float] = {}
        total_sum = 0.0
        lr = state.lr
        for idx in ndiff.iter_batches(n, config.batch_size, loop_rng):
            batch = _subset(train, idx)
            if colloc is not None and n_colloc > 0:
                pick = loop_rng.choice(len(colloc), size=min(n_colloc, len(colloc)), replace=False)
                batch = _join(batch, _subset(colloc, pick))
            total, values, grads = composite_loss(
                params, batch, scaler, weights, epoch, config.epochs, L, kinds,
                consistency, config.dropout, loop_rng, training=True, blend=blend)
            ndiff.adam_step(state, params, grads)
            w = len(idx) / n
            total_sum += w * total
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + w * v
        state.advance_schedule()
        val_sup = validation_loss(params, val if val is not None else train, scaler, L, kinds)
        if not math.isfinite(val_sup):
            raise ndiff.TrainingDivergence(f"validation loss diverged at epoch {epoch}")
        history.append({
            "epoch": epoch, "loss_total": total_sum, "loss_sup": sums.get("sup", 0.0),
            "loss_power": sums.get("power", 0.0), "loss_delay": sums.get("delay", 0.0),
            "loss_angle": sums.get("angle", 0.0), "loss_consist": sums.get("consist", 0.0),
            "loss_type": sums.get("type", 0.0), "lr": lr,
            "lambda_phy": weights.lambda_phy(epoch, config.epochs),
            "lambda_type": weights.lambda_type(epoch, config.epochs), "val_sup": val_sup,
        })
        if val_sup < best_val:
            best_val, since_best = val_sup, 0
            best = params.copy()
        else:
            since_best += 1
            if since_best >= config.patience:
                log.info("early stop at epoch %d (best val %.5f)", epoch, best_val)
                break
    return best, history


class PinnRegressor(BaseEstimator, RegressorMixin):
    """Coordinates -> multipath parameters, trained with physics penalties.

    ``fit(X, Y)`` takes physical receiver coordinates ``(N, 2)`` and targets
    ``(N, 4L)`` laid out path-major as (power dBm, delay ns, elevation deg,
    azimuth deg), with NaN marking absent paths.
    """

    def __init__(self, scene: Scene | None = None, L: int = 5, kinds=(0, 1, 2, 3), epochs: int = 300,
                 lr: float = 1e-3, weight_decay: float = 1e-5, dropout: float = 0.1,
                 batch_size: int = 256, patience: int = 30, augment_rounds: int = 5,
                 jitter_sigma: float = 0.1, loss_weights: LossWeights | None = None,
                 consistency: bool = True, scaler: MultipathScaler | None = None,
                 n_colloc: int = 0, theory_residual: bool = True, type_blending: bool = True,
                 random_state: int | None = None):
        self.scene = scene
        self.L = L
        self.kinds = kinds
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.batch_size = batch_size
        self.patience = patience
        self.augment_rounds = augment_rounds
        self.jitter_sigma = jitter_sigma
        self.loss_weights = loss_weights
        self.consistency = consistency
        self.scaler = scaler
        self.n_colloc = n_colloc
        self.theory_residual = theory_residual
        self.type_blending = type_blending
        self.random_state = random_state

    def fit(self, X, Y, X_val=None, Y_val=None, X_colloc=None):
        """Fit on labelled ``(X, Y)``; ``X_colloc`` are unlabelled coordinates
        where only the physics terms apply."""
        from .geoscene import augment

        if self.scene is None:
            raise ValueError("PinnRegressor needs a scene for the physics terms")
        X = check_coords(X)
        Y = check_targets(Y, len(X), self.L)
        kinds = tuple(self.kinds)
        scaler = self.scaler if self.scaler is not None else MultipathScaler().fit(X, Y)
        rng = np.random.default_rng(self.random_state)
        aug_rng, train_rng = rng.spawn(2)
        Xa, Ya = augment(X, Y, self.augment_rounds, self.jitter_sigma, aug_rng)
        xmin, ymin, xmax, ymax = self.scene.bounds
        Xa[:, 0] = np.clip(Xa[:, 0], xmin, xmax)
        Xa[:, 1] = np.clip(Xa[:, 1], ymin, ymax)
        res = self.theory_residual
        train = make_batch(Xa, Ya, self.scene, scaler, kinds, res)
        val = None
        if X_val is not None and len(X_val):
            val = make_batch(check_coords(X_val), check_targets(Y_val, len(X_val), self.L),
                             self.scene, scaler, kinds, res)
        config = TrainConfig(self.epochs, self.lr, self.weight_decay, self.dropout,
                             self.batch_size, self.patience)
        weights = self.loss_weights if self.loss_weights is not None else LossWeights()
        colloc = None
        if X_colloc is not None and self.n_colloc > 0:
            colloc = collocation_batch(check_coords(X_colloc), self.scene, scaler, self.L,
                                       kinds, res)
        self.params_, self.history_ = train_pinn(train, val, scaler, self.L, config, weights,
                                                 train_rng, kinds, self.consistency,
                                                 colloc=colloc, n_colloc=self.n_colloc,
                                                 blend=self.type_blending)
        self.scaler_ = scaler
        return self

    def base(self, X) -> Optional[np.ndarray]:
        """Residual base at ``X``, or None when the head predicts directly."""
        if not self.theory_residual:
            return None
        return theory_base(theory_los(self.scene, X), self.scaler_, self.L, tuple(self.kinds))

    def predict_normalized(self, X) -> PinnOutput:
        X = check_coords(X)
        return pinn_forward(self.params_, self.scaler_.transform_coords(X), self.L,
                            base=self.base(X))

    def predict(self, X) -> np.ndarray:
        """Physical ``(N, 4L)`` predictions; unmodelled kinds are NaN."""
        out = self.predict_normalized(X).params
        full = np.full(out.shape[:2] + (4,), np.nan)
        full[..., list(self.kinds)] = out
        return self.scaler_.inverse_params(full).reshape(len(out), -1)
