"""Error metrics, error CDFs, heatmap export and channel reconstruction."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .geoscene import PARAM_KINDS, SPEED_OF_LIGHT
from .validation import MultipathScaler, wrap_degrees

log = logging.getLogger(__name__)

NORMALIZATION_NOTE = (
    "errors are computed in the z-scored parameter space fitted on the training "
    "points; azimuth differences are wrapped to [-180, 180) degrees before scaling; "
    "NMSE divides by the squared norm of the normalised truth over the same entries"
)


class UndefinedMetric(ValueError):
    pass


@dataclass
class ErrorSummary:
    mse: float
    rmse: float
    nmse: Optional[float]
    count: int


@dataclass
class Metrics:
    mse: float
    rmse: float
    nmse: float
    count: int
    per_parameter: dict = field(default_factory=dict)
    per_path: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "normalization": NORMALIZATION_NOTE,
            "overall": {"mse": self.mse, "rmse": self.rmse, "nmse": self.nmse,
                        "count": self.count},
            "per_parameter": {k: asdict(v) for k, v in self.per_parameter.items()},
            "per_path": [asdict(v) for v in self.per_path],
        }


def _summary(err2: np.ndarray, ref2: np.ndarray) -> ErrorSummary:
    if err2.size == 0:
        return ErrorSummary(math.nan, math.nan, None, 0)
    mse = float(err2.mean())
    den = float(ref2.sum())
    return ErrorSummary(mse, math.sqrt(mse), float(err2.sum()) / den if den > 0 else None,
                        int(err2.size))


def normalized_errors(pred, truth, scaler: MultipathScaler | None = None):
    """Per-entry normalised errors and normalised truth, both ``(N, L, 4)``.

    With a scaler, inputs are physical ``(N, 4L)``; without one they are
    taken to be normalised already (azimuth is then not wrapped).
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    p = pred.reshape(len(pred), -1, 4)
    t = truth.reshape(len(truth), -1, 4)
    if scaler is None:
        return p - t, t
    diff = p - t
    diff[..., 3] = wrap_degrees(diff[..., 3])
    return diff / scaler.param_scale, scaler.transform_params(t)


def compute_metrics(pred, truth, scaler: MultipathScaler | None = None, mask=None) -> Metrics:
    """MSE, RMSE and NMSE over present paths.

    ``mask`` ``(N, L)`` defaults to the paths present in ``truth``. Predicted
    values on those entries must be finite.
    """
    err, ref = normalized_errors(pred, truth, scaler)
    if mask is None:
        mask = ~np.isnan(ref).any(axis=2)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise UndefinedMetric("no valid entries to evaluate")
    if not np.all(np.isfinite(err[mask])):
        raise ValueError("predictions are not finite on valid entries")
    e2, r2 = err ** 2, np.nan_to_num(ref) ** 2
    overall = _summary(e2[mask], r2[mask])
    if overall.nmse is None:
        raise UndefinedMetric("truth has zero norm; NMSE is undefined")
    per_param = {name: _summary(e2[..., k][mask], r2[..., k][mask])
                 for k, name in enumerate(PARAM_KINDS)}
    per_path = [_summary(e2[:, l][mask[:, l]], r2[:, l][mask[:, l]])
                for l in range(mask.shape[1])]
    return Metrics(overall.mse, overall.rmse, overall.nmse, overall.count, per_param, per_path)


def write_metrics(path, metrics: Metrics, **extra) -> None:
    blob = {**metrics.to_dict(), **extra}
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# Error CDF
# --------------------------------------------------------------------------


def error_cdf(pred, truth, kind: int, path: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted absolute errors in physical units and cumulative fractions ``i/n``.

    ``path`` is zero-based. Azimuth errors use the shorter way round.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(len(pred), -1, 4)[:, path, kind]
    t = np.asarray(truth, dtype=np.float64).reshape(len(truth), -1, 4)[:, path, kind]
    ok = ~np.isnan(t)
    diff = p[ok] - t[ok]
    if kind == 3:
        diff = wrap_degrees(diff)
    err = np.sort(np.abs(diff))
    if err.size == 0:
        raise ValueError("no valid entries for the error CDF")
    return err, np.arange(1, err.size + 1) / err.size


def write_cdf(path, errors, fractions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["error", "cdf"])
        for e, f in zip(errors, fractions):
            w.writerow([repr(float(e)), repr(float(f))])


# --------------------------------------------------------------------------
# Physical layer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform planar array of ``M x N`` elements."""

    M: int = 4
    N: int = 4
    d_x: float = 0.5 * SPEED_OF_LIGHT / 3.5e9
    d_y: float = 0.5 * SPEED_OF_LIGHT / 3.5e9
    f_c: float = 3.5e9

    def __post_init__(self):
        if self.M < 1 or self.N < 1 or self.d_x <= 0 or self.d_y <= 0 or self.f_c <= 0:
            raise ValueError(f"invalid array configuration {self}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c


def steering_vector(array: ArrayConfig, theta_deg: float, phi_deg: float) -> np.ndarray:
    """Array response, row-major over ``(m, n)``."""
    if not 0.0 <= theta_deg <= 180.0:
        raise ValueError(f"elevation {theta_deg} outside [0, 180]")
    th, ph = math.radians(theta_deg), math.radians(phi_deg)
    m, n = np.meshgrid(np.arange(array.M), np.arange(array.N), indexing="ij")
    k = 2.0 * math.pi / array.wavelength
    phase = k * (m * array.d_x * math.sin(th) * math.cos(ph)
                 + n * array.d_y * math.sin(th) * math.sin(ph))
    return np.exp(-1j * phase).ravel()


def dbm_to_watts(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=np.float64) - 30.0) / 10.0)


@dataclass(frozen=True)
class CirTap:
    delay_ns: float
    magnitude: float
    phase: float
    path: int


@dataclass(frozen=True)
class CirProfile:
    taps: tuple

    @property
    def empty(self) -> bool:
        return not self.taps

    def first(self) -> CirTap:
        if self.empty:
            raise ValueError("empty impulse response")
        return self.taps[0]


def reconstruct_cir(paths, f_c: float) -> CirProfile:
    """Impulse-response taps from one location's ``(L, 4)`` (or ``4L``) parameters.

    Rows with NaN power are skipped; an all-invalid input yields an empty
    profile and a warning.
    """
    v = np.asarray(paths, dtype=np.float64).reshape(-1, 4)
    taps = []
    for l, (p, tau, _, _) in enumerate(v):
        if np.isnan(p) or np.isnan(tau):
            continue
        phase = float(np.mod(-2.0 * math.pi * f_c * tau * 1e-9, 2.0 * math.pi))
        taps.append(CirTap(float(tau), float(math.sqrt(dbm_to_watts(p))), phase, l))
    if not taps:
        log.warning("no valid path; impulse response is empty")
    taps.sort(key=lambda t: (t.delay_ns, t.path))
    return CirProfile(tuple(taps))


def write_cir(path, profiles: dict) -> None:
    """Tap lists for several methods: ``method,path,delay_ns,magnitude,phase``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "path", "delay_ns", "magnitude", "phase"])
        for method, prof in profiles.items():
            for t in prof.taps:
                w.writerow([method, t.path + 1, repr(t.delay_ns), repr(t.magnitude), repr(t.phase)])


# --------------------------------------------------------------------------
# Heatmaps
# --------------------------------------------------------------------------


def grid_shape(coords) -> tuple[int, int]:
    """``(nx, ny)`` when ``coords`` is a complete regular grid, else ValueError."""
    coords = np.asarray(coords, dtype=np.float64)
    xs, ys = np.unique(coords[:, 0]), np.unique(coords[:, 1])
    regular = all(len(a) < 3 or np.allclose(np.diff(a), np.diff(a)[0]) for a in (xs, ys))
    full = len(coords) == len(xs) * len(ys) and len(np.unique(coords, axis=0)) == len(coords)
    if not (regular and full):
        raise ValueError("coordinates do not form a regular grid; use write_scatter instead")
    return len(xs), len(ys)


def export_heatmap(coords, values, kind: int, path: int, out) -> None:
    """``x,y,value`` for one parameter of one (zero-based) path on a grid."""
    grid_shape(coords)
    write_scatter(coords, values, kind, path, out)


def write_scatter(coords, values, kind: int, path: int, out) -> None:
    v = np.asarray(values, dtype=np.float64).reshape(len(values), -1, 4)[:, path, kind]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        for (x, y), z in zip(np.asarray(coords, dtype=np.float64), v):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z))])
