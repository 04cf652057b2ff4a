import numpy as np
import pytest

from looaudit.data import full_plan
from looaudit.errors import ConfigurationError
from looaudit.metrics import audit_deterministic
from looaudit.rules import LearningRule, table_dataset
from looaudit.scenarios import (
    balanced_dataset,
    disc_grid,
    grid_points,
    run_dp_bound_scenario,
    run_figure1_scenario,
    run_prop1_scenario,
    run_two_circles_scenario,
)


def test_prop1_claims():
    r = run_prop1_scenario()
    assert r.passed
    assert [c.observed for c in r.claims] == [0.0, 1.0, 1.0, 1.0, 1.0]


def test_prop1_flip_fractions_and_flat_curve():
    ds = table_dataset()
    rep = audit_deterministic(LearningRule("table-rule"), ds, full_plan(ds))
    assert rep.flip_fractions == {0: 1 / 3, 1: 1 / 3, 2: 2 / 3}
    assert all(v == 1.0 and n == 3 for _, v, n in rep.confidence_curve)


def test_two_circles_claims_and_witness():
    r = run_two_circles_scenario()
    assert r.passed
    w = r.metadata["dp_witness"]
    assert w["label_full"] != w["label_reduced"]
    probe = np.array(w["probe"])
    assert min(np.linalg.norm(probe), np.linalg.norm(probe - [3.0, 0.0])) >= 0.5


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_two_circles_other_seeds(seed):
    assert run_two_circles_scenario(seed=seed, grid_resolution=11).passed


def test_two_circles_rejects_tiny_samples():
    with pytest.raises(ConfigurationError):
        run_two_circles_scenario(n=3)


def test_disc_grid_strictly_inside():
    pts = disc_grid(np.array([3.0, 0.0]), 1.0, 25)
    assert len(pts) > 0
    assert np.all(np.linalg.norm(pts - [3.0, 0.0], axis=1) < 0.5)


def test_dp_bound_scenario_small():
    r = run_dp_bound_scenario(epsilon=1.0, trials=2000, seed=3)
    assert r.passed
    assert r.metadata["exact_luf"] == pytest.approx(0.5 - 0.5 * np.exp(-0.5))


def test_dp_bound_scenario_rejects_few_trials():
    with pytest.raises(ConfigurationError):
        run_dp_bound_scenario(trials=10)


def test_balanced_dataset_has_zero_signed_count():
    y = balanced_dataset(6).labels
    assert (y == 1).sum() == (y == 0).sum()
    with pytest.raises(ConfigurationError):
        balanced_dataset(5)


def test_grid_points_row_zero_is_top():
    g = grid_points(4).reshape(4, 4, 2)
    assert g[0, 0, 1] > g[-1, 0, 1]
    assert g[0, 0, 0] < g[0, -1, 0]
    assert g.min() > 0 and g.max() < 1
    b = grid_points(2, (-1.0, 1.0, 10.0, 20.0))
    assert b[:, 0].min() == -0.5 and b[:, 1].max() == 17.5


def test_figure1_small_run_rasters():
    r = run_figure1_scenario(n=30, layer_dims=(2, 16, 1), grid_resolution=20, epochs=20)
    assert set(r.rasters) == {"baseline", "variant", "difference"}
    assert r.rasters["baseline"].shape == (20, 20)
    np.testing.assert_allclose(r.rasters["variant"] - r.rasters["baseline"], r.rasters["difference"])
    assert 0 <= r.metadata["flipped_fraction"] <= 1


def test_figure1_rejects_non_planar_input():
    with pytest.raises(ConfigurationError):
        run_figure1_scenario(layer_dims=(3, 4, 1))
