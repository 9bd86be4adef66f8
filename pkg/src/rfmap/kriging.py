"""Ordinary kriging with an exponential variogram."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spl
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist, pdist, squareform
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .validation import check_coords

log = logging.getLogger(__name__)


class SingularKrigingSystem(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class VariogramModel:
    """Exponential model ``nugget + (sill - nugget) (1 - exp(-3 h / range))``."""

    nugget: float
    sill: float
    range: float
    kind: str = "exponential"
    degenerate: bool = False

    def __post_init__(self):
        if self.nugget < 0 or self.sill < self.nugget or self.range <= 0:
            raise ValueError(f"invalid variogram parameters {self}")

    def __call__(self, h):
        h = np.asarray(h, dtype=np.float64)
        return self.nugget + (self.sill - self.nugget) * (1.0 - np.exp(-3.0 * h / self.range))


def empirical_variogram(coords, values, n_bins: int = 15, max_lag: float | None = None):
    """Binned semivariance ``0.5 (z_i - z_j)^2`` against pair distance."""
    d = pdist(coords)
    g = 0.5 * pdist(np.asarray(values, dtype=np.float64)[:, None], "sqeuclidean")
    max_lag = 0.5 * d.max() if max_lag is None else max_lag
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    which = np.digitize(d, edges) - 1
    lags, gammas = [], []
    for b in range(n_bins):
        sel = which == b
        if sel.any():
            lags.append(d[sel].mean())
            gammas.append(g[sel].mean())
    return np.array(lags), np.array(gammas)


def kriging_fit(coords, values, n_bins: int = 15) -> VariogramModel:
    coords = check_coords(coords)
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 10:
        raise ValueError("kriging needs at least 10 known points")
    spread = float(np.var(values))
    max_d = float(pdist(coords).max())
    if np.all(values == values[0]):
        log.warning("constant field; using a pure-nugget variogram")
        return VariogramModel(1.0, 1.0, max_d, degenerate=True)
    lags, gammas = empirical_variogram(coords, values, n_bins)

    def resid(theta):
        nugget, psill, rng = theta
        return nugget + psill * (1.0 - np.exp(-3.0 * lags / rng)) - gammas

    x0 = [0.0, spread, 0.5 * max_d]
    lo = [0.0, 0.0, 1e-3 * max_d]
    hi = [spread, 4.0 * spread, 2.0 * max_d]
    fit = least_squares(resid, x0, bounds=(lo, hi))
    nugget, psill, rng = map(float, fit.x)
    return VariogramModel(nugget, nugget + psill, rng)


class OrdinaryKriging(BaseEstimator, RegressorMixin):
    """Ordinary kriging (unknown constant mean, Lagrange-constrained weights).

    The kriging matrix is factorised once at fit time; every query then
    solves against that factorisation, which is equivalent to solving the
    per-query system.
    """

    def __init__(self, variogram: VariogramModel | None = None, n_bins: int = 15):
        self.variogram = variogram
        self.n_bins = n_bins

    def fit(self, X, z):
        X = check_coords(X)
        z = np.asarray(z, dtype=np.float64).ravel()
        if len(z) != len(X):
            raise ValueError("coordinates and values differ in length")
        self.model_ = self.variogram if self.variogram is not None else kriging_fit(X, z, self.n_bins)
        n = len(X)
        A = np.ones((n + 1, n + 1))
        A[:n, :n] = self.model_(squareform(pdist(X)))
        np.fill_diagonal(A[:n, :n], 0.0)
        A[n, n] = 0.0
        self.lu_ = self._factor(A)
        self.X_, self.z_ = X, z
        return self

    @staticmethod
    def _factor(A):
        n = A.shape[0] - 1
        for jitter in (0.0, 1e-10):
            B = A.copy()
            B[np.arange(n), np.arange(n)] += jitter
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", spl.LinAlgWarning)
                lu, piv = spl.lu_factor(B, check_finite=False)
            if np.all(np.abs(np.diag(lu)) > 1e-14 * max(1.0, np.abs(B).max())):
                return lu, piv
        raise SingularKrigingSystem("kriging matrix is singular even with diagonal jitter")

    def weights(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Kriging weights ``(Q, n)`` and Lagrange multipliers ``(Q,)``."""
        check_is_fitted(self, "lu_")
        Xq = check_coords(Xq)
        n = len(self.X_)
        rhs = np.ones((n + 1, len(Xq)))
        D = cdist(self.X_, Xq)
        rhs[:n] = self.model_(D)
        rhs[:n][D == 0.0] = 0.0
        sol = spl.lu_solve(self.lu_, rhs, check_finite=False)
        return sol[:n].T, sol[n]

    def predict(self, Xq, return_variance: bool = False):
        w, mu = self.weights(Xq)
        pred = w @ self.z_
        if not return_variance:
            return pred
        D = cdist(check_coords(Xq), self.X_)
        g0 = self.model_(D)
        g0[D == 0.0] = 0.0
        var = np.einsum("qn,qn->q", w, g0) + mu
        return pred, var


def kriging_predict(model: VariogramModel, coords, values, query):
    """Functional form: ordinary-kriging values and variances at ``query``."""
    return OrdinaryKriging(model).fit(coords, values).predict(query, return_variance=True)


class MultipathKriging(BaseEstimator, RegressorMixin):
    """Independent ordinary kriging per path parameter.

    Each path is kriged from the known points where it exists. Azimuth is
    interpolated as (sin, cos) and recombined with ``atan2``. Values are
    kriged in the scaler's normalised space.
    """

    def __init__(self, L: int = 5, scaler=None, n_bins: int = 15):
        self.L = L
        self.scaler = scaler
        self.n_bins = n_bins

    def fit(self, X, Y):
        from .validation import MultipathScaler, check_targets

        X = check_coords(X)
        Y = check_targets(Y, len(X), self.L)
        self.scaler_ = self.scaler if self.scaler is not None else MultipathScaler().fit(X, Y)
        v = Y.reshape(len(X), self.L, 4)
        z = self.scaler_.transform_params(v)
        self.models_ = []
        for l in range(self.L):
            ok = ~np.isnan(v[:, l, 0])
            fields = [z[ok, l, 0], z[ok, l, 1], z[ok, l, 2],
                      np.sin(np.radians(v[ok, l, 3])), np.cos(np.radians(v[ok, l, 3]))]
            self.models_.append([OrdinaryKriging(n_bins=self.n_bins).fit(X[ok], f) for f in fields])
        return self

    def predict(self, Xq):
        check_is_fitted(self, "models_")
        Xq = check_coords(Xq)
        out = np.empty((len(Xq), self.L, 4))
        for l, models in enumerate(self.models_):
            p, tau, theta, s, c = (m.predict(Xq) for m in models)
            out[:, l, 0], out[:, l, 1], out[:, l, 2] = p, tau, theta
            out[:, l, 3] = (np.degrees(np.arctan2(s, c)) - self.scaler_.param_mean[3]) / self.scaler_.param_scale[3]
        return self.scaler_.inverse_params(out).reshape(len(Xq), -1)
