import numpy as np
import pytest
from scipy.spatial.distance import cdist

from rfmap.kriging import (MultipathKriging, OrdinaryKriging, SingularKrigingSystem,
                           VariogramModel, kriging_fit, kriging_predict)
from rfmap.validation import MultipathScaler


def brute_force_weights(model, X, q):
    """Ordinary kriging weights from one freshly assembled system per query."""
    n = len(X)
    A = np.ones((n + 1, n + 1))
    A[:n, :n] = model(cdist(X, X))
    np.fill_diagonal(A[:n, :n], 0.0)
    A[n, n] = 0.0
    b = np.ones(n + 1)
    b[:n] = model(cdist(X, q[None]))[:, 0]
    return np.linalg.solve(A, b)[:n]


@pytest.fixture
def field(rng):
    X = rng.uniform(0, 50, (60, 2))
    z = np.sin(X[:, 0] / 9) + 0.3 * np.cos(X[:, 1] / 5)
    return X, z


def test_exact_at_known_points_without_nugget(field):
    X, z = field
    ok = OrdinaryKriging(VariogramModel(0.0, 1.0, 20.0)).fit(X, z)
    pred, var = ok.predict(X, return_variance=True)
    assert np.abs(pred - z).max() < 1e-8
    assert np.abs(var).max() < 1e-8


def test_weights_sum_to_one(field, rng):
    X, z = field
    ok = OrdinaryKriging().fit(X, z)
    w, _ = ok.weights(rng.uniform(-10, 60, (500, 2)))
    assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-10


def test_weights_match_brute_force(field, rng):
    X, z = field
    model = kriging_fit(X, z)
    ok = OrdinaryKriging(model).fit(X, z)
    for q in rng.uniform(0, 50, (5, 2)):
        assert np.allclose(ok.weights(q[None])[0][0], brute_force_weights(model, X, q),
                           atol=1e-9)


def test_midpoint_of_two_points_splits_evenly():
    X = np.array([(0.0, 0.0), (4.0, 0.0)])
    ok = OrdinaryKriging(VariogramModel(0.0, 1.0, 3.0)).fit(X, [1.0, 3.0])
    w, _ = ok.weights([(2.0, 0.0)])
    assert np.allclose(w, [[0.5, 0.5]], atol=1e-12)
    assert ok.predict([(2.0, 0.0)])[0] == pytest.approx(2.0)


def test_linear_field_interpolates_within_one_percent():
    xs, ys = np.meshgrid(np.arange(0.0, 41.0, 5.0), np.arange(0.0, 41.0, 5.0))
    X = np.column_stack([xs.ravel(), ys.ravel()])
    z = X[:, 0].copy()
    rng = np.random.default_rng(2)
    q = rng.uniform(5, 35, (200, 2))
    ok = OrdinaryKriging().fit(X, z)
    err = np.abs(ok.predict(q) - q[:, 0])
    assert err.max() < 0.01 * (z.max() - z.min())
    w = np.array([brute_force_weights(ok.model_, X, p) for p in q[:5]])
    assert np.allclose(w @ z, ok.predict(q[:5]), atol=1e-9)


def test_constant_field_is_reproduced(rng):
    X = rng.uniform(0, 10, (20, 2))
    ok = OrdinaryKriging().fit(X, np.full(20, 4.2))
    assert ok.model_.degenerate
    assert np.allclose(ok.predict(rng.uniform(0, 10, (30, 2))), 4.2, atol=1e-12)


@pytest.mark.parametrize("seed", range(15))
def test_fitted_variogram_is_admissible(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 30, (40, 2))
    z = rng.normal(size=40) * rng.uniform(0.1, 10) + X[:, 0] * rng.normal()
    m = kriging_fit(X, z)
    assert m.sill >= m.nugget >= 0 and m.range > 0


def test_variogram_validation():
    with pytest.raises(ValueError):
        VariogramModel(2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        VariogramModel(0.0, 1.0, 0.0)
    assert VariogramModel(0.0, 2.0, 3.0)(0.0) == 0.0


def test_needs_ten_points(rng):
    with pytest.raises(ValueError):
        kriging_fit(rng.uniform(size=(9, 2)), rng.normal(size=9))


def test_duplicate_points_use_jitter(field):
    X, z = field
    X2 = np.vstack([X, X[:1]])
    z2 = np.append(z, z[0])
    ok = OrdinaryKriging(VariogramModel(0.0, 1.0, 20.0)).fit(X2, z2)
    assert ok.predict(X[:1])[0] == pytest.approx(z[0], abs=1e-6)


def test_hopeless_system_raises():
    with pytest.raises(SingularKrigingSystem):
        OrdinaryKriging._factor(np.zeros((4, 4)))


def test_functional_form(field):
    X, z = field
    model = kriging_fit(X, z)
    pred, var = kriging_predict(model, X, z, X[:3] + 0.5)
    assert pred.shape == var.shape == (3,)
    assert np.all(var >= -1e-12)


def test_multipath_kriging_wraps_azimuth(rng):
    X = rng.uniform(0, 10, (40, 2))
    Y = np.column_stack([rng.normal(-70, 3, 40), rng.uniform(30, 40, 40),
                         rng.uniform(80, 90, 40), np.where(rng.random(40) < 0.5, 178.0, -178.0)])
    scaler = MultipathScaler().fit(X, Y)
    model = MultipathKriging(L=1, scaler=scaler).fit(X, Y)
    pred = model.predict(rng.uniform(2, 8, (20, 2)))
    assert pred.shape == (20, 4)
    assert np.all(np.abs(pred[:, 3]) > 170.0)
