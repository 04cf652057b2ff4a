import math

import numpy as np
import pytest

from looaudit import nn
from looaudit.data import Dataset, SyntheticSpec, full_plan, sample_synthetic
from looaudit.errors import ConfigurationError, UnsupportedModelError
from looaudit.models import (
    ConstantModel,
    KnnModel,
    MlpModel,
    SmoothingConfig,
    TableModel,
    model_from_bytes,
)
from looaudit.rng import Rng
from looaudit.rules import (
    LearningRule,
    adversarial_radius,
    pgd_attack,
    predict_noisy_majority,
    table_dataset,
    train,
)


def _mlp(dims, seed=0):
    return MlpModel(nn.init_params(dims, Rng(seed, 1)))


@pytest.mark.parametrize("norm", ["l2", "linf"])
def test_pgd_stays_in_ball(norm):
    g = np.random.default_rng(0)
    for trial in range(100):
        d = int(g.integers(1, 6))
        model = _mlp([d, 5, int(g.choice([1, 3]))], seed=trial)
        x = g.normal(size=(5, d))
        y = g.integers(0, model.num_classes, size=5)
        r = float(g.uniform(0.01, 2.0))
        xa = pgd_attack(model, x, y, norm, r, int(g.integers(1, 12)))
        dist = np.max(np.abs(xa - x), axis=1) if norm == "linf" else np.linalg.norm(xa - x, axis=1)
        assert np.all(dist <= r)


def test_pgd_radius_zero_is_identity():
    model = _mlp([3, 4, 1])
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert np.array_equal(pgd_attack(model, x, [0, 1, 0, 1], "l2", 0.0, 10), x)


def _linear(w, b):
    return MlpModel(nn.MlpParams([len(w), 1], [np.array([w], dtype=float)], [np.array([b], dtype=float)]))


def test_pgd_linf_on_linear_model_matches_sign_attack():
    g = np.random.default_rng(2)
    w = np.array([1.5, -0.5, 2.0])
    model = _linear(w, 0.3)
    x = g.normal(size=(20, 3))
    y = g.integers(0, 2, size=20)
    r = 0.2
    xa = pgd_attack(model, x, y, "linf", r, 10)
    # the loss gradient of a linear logit is (p - y) w: push along -sign(w) for y = 1
    closed = x + r * np.sign(w)[None, :] * np.where(y == 1, -1.0, 1.0)[:, None]
    for i in range(20):
        got = nn.loss_value(model.params, xa[i : i + 1], y[i : i + 1])
        want = nn.loss_value(model.params, closed[i : i + 1], y[i : i + 1])
        assert abs(got - want) <= 1e-9


def test_pgd_rejects_non_differentiable_models():
    knn = KnnModel(np.zeros((2, 1)), [0, 1], 2)
    with pytest.raises(UnsupportedModelError):
        pgd_attack(knn, np.zeros((1, 1)), [0], "l2", 0.1, 5)


def test_adversarial_radius_cases():
    x = np.array([[0.0], [1.0], [3.0]])
    assert adversarial_radius(x, [0, 0, 1]) == 2.0
    # duplicated point with both labels: fall back to a positive quantile
    x = np.array([[0.0], [0.0], [1.0], [2.0]])
    assert adversarial_radius(x, [0, 1, 1, 0]) > 0
    with pytest.raises(ConfigurationError):
        adversarial_radius(x, [0, 0, 0, 0])


@pytest.fixture(scope="module")
def small_blobs():
    return sample_synthetic(SyntheticSpec("gaussian-blobs", n=24, seed=3))


def test_adversarial_training_radius_zero_equals_standard(small_blobs):
    base = dict(hidden=(6,), epochs=4, batch_size=8, seed=2)
    std = train(LearningRule("standard-mlp", **base), small_blobs)
    adv = train(LearningRule("pgd-adversarial", adv_radius=0.0, **base), small_blobs)
    assert std.params.equal(adv.params)


def test_trades_radius_zero_equals_standard(small_blobs):
    base = dict(hidden=(6,), epochs=4, batch_size=8, seed=2)
    std = train(LearningRule("standard-mlp", **base), small_blobs)
    tr = train(LearningRule("trades", adv_radius=0.0, trades_beta=6.0, **base), small_blobs)
    assert std.params.equal(tr.params)


def test_adversarial_and_trades_training_are_deterministic(small_blobs):
    for kind in ("pgd-adversarial", "trades"):
        rule = LearningRule(kind, hidden=(6,), epochs=3, batch_size=8, adv_radius=0.3, seed=5)
        a, b = train(rule, small_blobs), train(rule, small_blobs)
        assert a.to_bytes() == b.to_bytes()


def test_linear_rule_has_no_hidden_layer(small_blobs):
    m = train(LearningRule("linear", epochs=2), small_blobs)
    assert tuple(m.params.layer_dims) == (2, 1)


def test_model_serialization_round_trip(small_blobs):
    models = [
        train(LearningRule("standard-mlp", hidden=(4,), epochs=1), small_blobs),
        KnnModel(small_blobs.features, small_blobs.labels, 2, k=3),
        ConstantModel(1, 3),
        TableModel(0b101),
        ConstantModel(0).with_smoothing(SmoothingConfig(0.2, 50, 7, "independent")),
    ]
    x = small_blobs.features
    for m in models:
        back = model_from_bytes(m.to_bytes())
        assert back.to_bytes() == m.to_bytes()
        assert np.array_equal(back.predict_proba(x), m.predict_proba(x))


def test_model_from_bytes_rejects_garbage():
    with pytest.raises(ValueError):
        model_from_bytes(b"NOPE")
    with pytest.raises(ValueError):
        model_from_bytes(ConstantModel(0).to_bytes() + b"x")


def test_knn_lowest_index_wins_ties():
    m = KnnModel(np.array([[1.0], [-1.0]]), [1, 0], 2)
    assert m.predict(np.array([[0.0]])).tolist() == [1]
    m3 = KnnModel(np.array([[0.0], [2.0], [-2.0], [5.0]]), [0, 1, 0, 1], 2, k=3)
    np.testing.assert_allclose(m3.predict_proba(np.array([[0.0]])), [[2 / 3, 1 / 3]])


def test_knn_matches_brute_force(small_blobs):
    g = np.random.default_rng(4)
    q = g.normal(size=(50, 2)) * 3
    m = KnnModel(small_blobs.features, small_blobs.labels, 2)
    for i, row in enumerate(q):
        j = min(range(len(small_blobs)), key=lambda t: (np.sum((small_blobs.features[t] - row) ** 2), t))
        assert m.predict(q[i : i + 1])[0] == small_blobs.labels[j]


def test_table_rule_lookup():
    ds = table_dataset()
    pts = ds.features
    assert train(LearningRule("table-rule"), ds).predict(pts).tolist() == [0, 0, 1]
    for removed, expect in ((0, [0, 0, 0]), (1, [0, 0, 0]), (2, [1, 1, 1])):
        view = ds.view([i for i in range(3) if i != removed])
        assert train(LearningRule("table-rule"), view).predict(pts).tolist() == expect


def test_table_rule_rejects_foreign_points():
    with pytest.raises(ConfigurationError):
        train(LearningRule("table-rule"), Dataset([[5.0, 5.0]], [0], 2))


def test_smoothing_constant_classifier_is_exact():
    cfg = SmoothingConfig(0.5, 300, 1)
    x = np.random.default_rng(0).normal(size=(10, 4))
    for label in (0, 1, 2):
        m = ConstantModel(label, 3).with_smoothing(cfg)
        assert np.array_equal(m.predict_proba(x), ConstantModel(label, 3).predict_proba(x))


def test_smoothing_frequencies_and_pairing():
    m = _linear([1.0], 0.0)
    x = np.array([[0.0], [3.0]])
    crn = m.with_smoothing(SmoothingConfig(1.0, 4000, 2))
    p = crn.predict_proba(x)
    assert abs(p[0, 1] - 0.5) < 0.03
    assert p[1, 1] > 0.99
    assert np.array_equal(p, crn.predict_proba(x))
    ind = m.with_smoothing(SmoothingConfig(1.0, 4000, 2, "independent"))
    assert abs(ind.predict_proba(x)[0, 1] - 0.5) < 0.03


def test_noisy_majority_flip_rate_matches_closed_form():
    eps = 0.5
    ds = Dataset(np.zeros((5, 1)), [1, 1, 1, 0, 0], 2)
    rng = Rng(0, 3)
    trials = 20_000
    ones = sum(predict_noisy_majority(ds.view(), eps, rng).label for _ in range(trials))
    # count = +1, P(1 + Lap(2/eps) > 0) = 1 - exp(-eps/2) / 2
    expect = 1 - 0.5 * math.exp(-eps / 2)
    assert abs(ones / trials - expect) < 4 * math.sqrt(expect * (1 - expect) / trials)


def test_noisy_majority_trials_draw_fresh_noise():
    ds = Dataset(np.zeros((4, 1)), [0, 1, 0, 1], 2)
    rule = LearningRule("noisy-majority", dp_epsilon=0.5)
    labels = {train(rule, ds, trial=t).label for t in range(40)}
    assert labels == {0, 1}
    assert train(rule, ds, trial=3).label == train(rule, ds, trial=3).label


def test_rule_validation():
    with pytest.raises(ConfigurationError):
        LearningRule("nope")
    with pytest.raises(ConfigurationError):
        LearningRule(hidden=(0,))
    with pytest.raises(ConfigurationError):
        LearningRule("noisy-majority", dp_epsilon=0)
