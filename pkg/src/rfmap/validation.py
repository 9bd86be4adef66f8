"""Input validation helpers and the feature-level scaler shared by all estimators."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


def wrap_degrees(a):
    """Map angles in degrees to [-180, 180)."""
    return np.mod(np.asarray(a, dtype=np.float64) + 180.0, 360.0) - 180.0


def check_coords(X) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 2:
        raise ValueError(f"coordinates must have shape (n, 2), got {X.shape}")
    return X


def check_targets(Y, n: int, L: int) -> np.ndarray:
    """Validate an ``(n, 4L)`` target matrix; NaN marks absent paths."""
    Y = check_array(Y, dtype=np.float64, ensure_2d=True, ensure_all_finite="allow-nan")
    if Y.shape != (n, 4 * L):
        raise ValueError(f"targets must have shape ({n}, {4 * L}), got {Y.shape}")
    block = Y.reshape(n, L, 4)
    partial = np.isnan(block).any(axis=2) & ~np.isnan(block).all(axis=2)
    if partial.any():
        raise ValueError("a path must be entirely present or entirely NaN")
    return Y


class MultipathScaler(TransformerMixin, BaseEstimator):
    """Z-score per feature kind: x, y and each of the four path parameters.

    Parameter statistics pool every present path. Azimuths are wrapped to
    [-180, 180) before scaling; :meth:`inverse_params` wraps them back and
    clips elevations to [0, 180].
    """

    def fit(self, X, Y=None):
        X = check_coords(X)
        self.coord_mean = X.mean(axis=0)
        self.coord_scale = _safe_scale(X.std(axis=0))
        if Y is not None:
            v = np.asarray(Y, dtype=np.float64).reshape(len(X), -1, 4).copy()
            v[..., 3] = wrap_degrees(v[..., 3])
            flat = v.reshape(-1, 4)
            flat = flat[~np.isnan(flat).any(axis=1)]
            if len(flat) == 0:
                raise ValueError("no valid paths to fit parameter statistics")
            self.param_mean = flat.mean(axis=0)
            self.param_scale = _safe_scale(flat.std(axis=0))
        return self

    def transform(self, X):
        return self.transform_coords(X)

    def transform_coords(self, X) -> np.ndarray:
        check_is_fitted(self, "coord_mean")
        return (np.asarray(X, dtype=np.float64) - self.coord_mean) / self.coord_scale

    def transform_params(self, values) -> np.ndarray:
        """``(..., 4)`` physical parameters -> normalised."""
        check_is_fitted(self, "param_mean")
        v = np.array(values, dtype=np.float64)
        v[..., 3] = wrap_degrees(v[..., 3])
        return (v - self.param_mean) / self.param_scale

    def inverse_params(self, values) -> np.ndarray:
        check_is_fitted(self, "param_mean")
        v = np.asarray(values, dtype=np.float64) * self.param_scale + self.param_mean
        v[..., 3] = wrap_degrees(v[..., 3])
        v[..., 2] = np.clip(v[..., 2], 0.0, 180.0)
        return v

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("coord_mean", "coord_scale", "param_mean", "param_scale")}

    @classmethod
    def from_dict(cls, d: dict) -> "MultipathScaler":
        s = cls()
        for k, v in d.items():
            setattr(s, k, np.asarray(v, dtype=np.float64))
        return s


def _safe_scale(s: np.ndarray) -> np.ndarray:
    return np.where(s > 0, s, 1.0)
