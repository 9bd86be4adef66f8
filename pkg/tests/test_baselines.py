import numpy as np
import pytest

from rfmap import baselines, geoscene
from rfmap.baselines import BaselineResult
from rfmap.config import GnnSection, PinnConfig, RunConfig, SceneConfig
from rfmap.graph import build_knn, gnn_forward, init_gnn_params
from rfmap.pipeline import PinnGnnMapper, stage_seeds


def small_config(**kw):
    return RunConfig(scene=SceneConfig(bounds=(0.0, 0.0, 24.0, 24.0)), rate=0.2,
                     pinn=PinnConfig(epochs=3, augment_rounds=1), gnn=GnnSection(epochs=3),
                     **kw)


@pytest.fixture(scope="module")
def small_run():
    cfg = small_config()
    s = cfg.scene
    scene = geoscene.synthesize_scene(s.seed, s.bounds, s.n_walls, s.n_scatterers)
    dataset = geoscene.generate_dataset(scene, cfg.grid_spacing, cfg.L)
    split = geoscene.sample_split(dataset, cfg.rate, cfg.seed)
    results = baselines.run_methods(dataset, split, cfg)
    return cfg, dataset, split, results


def test_every_method_shares_the_layout(small_run):
    cfg, dataset, split, results = small_run
    assert list(results) == list(baselines.METHODS)
    for res in results.values():
        assert res.predictions.shape == (len(split.unknown), 4 * cfg.L)
        assert np.all(np.isfinite(res.predictions))


def test_pinn_only_is_the_pipeline_intermediate(small_run):
    cfg, dataset, split, results = small_run
    mapper = results["proposed"].model
    assert results["pinn_only"].model is mapper
    inter = mapper.predict_pinn(dataset.coords)[split.unknown]
    assert np.array_equal(results["pinn_only"].predictions, inter)


def test_standalone_pinn_only_matches_reused_mapper(small_run):
    cfg, dataset, split, results = small_run
    alone = baselines.run_pinn_only(dataset, split, cfg)
    assert np.array_equal(alone.predictions, results["pinn_only"].predictions)
    assert alone.model.gnn_ is None


def test_separate_models_keep_to_their_own_term(small_run):
    _, _, _, results = small_run
    models = results["separate"].model
    assert [m.kinds for m in models] == [(0,), (1,), (2,), (3,)]
    power = models[0].pinn_.history_
    assert all(row["loss_delay"] == row["loss_angle"] == row["loss_consist"] == 0.0
               for row in power)
    assert any(row["loss_power"] > 0 for row in power)
    delay = models[1].pinn_.history_
    assert all(row["loss_power"] == row["loss_angle"] == 0.0 for row in delay)


def test_separate_assembles_the_columns(small_run):
    cfg, dataset, split, results = small_run
    models = results["separate"].model
    pred = results["separate"].predictions.reshape(-1, cfg.L, 4)
    for kind, m in enumerate(models):
        col = m.predict(dataset.coords)[split.unknown].reshape(-1, cfg.L, 4)[..., kind]
        assert np.array_equal(pred[..., kind], col)


def test_kriging_needs_no_training(small_run):
    cfg, dataset, split, _ = small_run
    res = baselines.run_kriging(dataset, split, cfg)
    assert res.predictions.shape == (len(split.unknown), 4 * cfg.L)


def test_gnn_only_with_zero_weights_outputs_zero():
    rng = np.random.default_rng(0)
    coords = rng.uniform(0, 10, (30, 2))
    p = init_gnn_params(3, rng)
    p.set_flat(np.zeros(p.size))
    out = gnn_forward(p, coords, np.zeros((30, 12)), build_knn(coords, 8))
    assert not out.any()


def test_gnn_only_sees_zero_parameter_features(small_run):
    _, _, _, results = small_run
    refiner = results["gnn_only"].model
    assert refiner.params_.layers["sage0"].weights.shape[1] == 2 + 12


def test_result_shape_is_checked():
    with pytest.raises(ValueError):
        BaselineResult("x", np.zeros((3, 5)), 0.0)


def test_unknown_method_rejected(small_run):
    cfg, dataset, split, _ = small_run
    with pytest.raises(ValueError):
        baselines.run_methods(dataset, split, cfg, ("kriging", "magic"))


def test_stage_seeds_are_stable_and_distinct():
    a, b = stage_seeds(0), stage_seeds(0)
    assert a == b
    assert len(set(a.values())) == len(a)
    assert stage_seeds(1)["pipeline"] != a["pipeline"]


def test_mapper_is_an_estimator():
    m = PinnGnnMapper(L=2, k=5, random_state=3)
    params = m.get_params()
    assert params["k"] == 5 and params["L"] == 2
    assert m.set_params(k=6).k == 6
