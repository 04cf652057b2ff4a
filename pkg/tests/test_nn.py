import numpy as np
import pytest

from helpers import max_relative_error, random_case
from looaudit import nn
from looaudit.data import SyntheticSpec, sample_synthetic
from looaudit.errors import DimensionError, NumericError, UnsupportedLossError
from looaudit.rng import Rng
from looaudit.rules import LearningRule, train


@pytest.mark.parametrize("seed", range(100, 130))
def test_gradients_match_central_differences(seed):
    assert max_relative_error(*random_case(seed)) <= 1e-5


def test_init_is_glorot_uniform_with_zero_biases():
    p = nn.init_params([5, 7, 1], Rng(0, 1))
    assert p.weights[0].shape == (7, 5) and p.weights[1].shape == (1, 7)
    assert np.all(np.abs(p.weights[0]) <= np.sqrt(6.0 / 12))
    assert all(np.all(b == 0) for b in p.biases)


def test_forward_shapes_and_probabilities():
    g = np.random.default_rng(0)
    x = g.normal(size=(6, 3))
    pb = nn.init_params([3, 4, 1], Rng(1))
    pm = nn.init_params([3, 4, 3], Rng(1))
    assert nn.forward(pb, x).shape == (6, 1)
    assert nn.forward(pm, x).shape == (6, 3)
    probs = nn.class_probabilities(pb, x)
    assert probs.shape == (6, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    np.testing.assert_allclose(nn.class_probabilities(pm, x).sum(axis=1), 1.0)


def test_sigmoid_and_softmax_are_stable_at_extremes():
    z = np.array([-1000.0, 0.0, 1000.0])
    s = nn.sigmoid(z)
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 0.5 and s[2] == 1.0
    np.testing.assert_allclose(nn.log_sigmoid(np.array([-800.0])), [-800.0])
    sm = nn.softmax(np.array([[1000.0, 0.0, -1000.0]]))
    assert np.all(np.isfinite(sm)) and sm[0, 0] == 1.0


def test_binary_cross_entropy_value():
    p = nn.MlpParams([1, 1], [np.array([[0.0]])], [np.array([0.0])])
    # sigmoid(0) = 0.5 -> loss ln 2 for either label
    assert nn.loss_value(p, np.array([[3.0], [4.0]]), np.array([0, 1])) == pytest.approx(np.log(2))


def test_cross_entropy_clip_bounds_the_loss():
    p = nn.MlpParams([1, 1], [np.array([[1.0]])], [np.array([0.0])])
    loss = nn.loss_value(p, np.array([[1e4]]), np.array([0]))
    assert loss == pytest.approx(-np.log(1e-12))


def test_zero_one_loss_value_and_no_gradient():
    p = nn.MlpParams([1, 1], [np.array([[1.0]])], [np.array([0.0])])
    x = np.array([[-1.0], [2.0], [3.0]])
    assert nn.loss_value(p, x, np.array([0, 0, 1]), nn.ZERO_ONE) == pytest.approx(1 / 3)
    with pytest.raises(UnsupportedLossError):
        nn.backward(p, x, np.array([0, 0, 1]), nn.ZERO_ONE)


def test_loss_output_mismatch_rejected():
    p = nn.init_params([2, 3], Rng(0))
    with pytest.raises(UnsupportedLossError):
        nn.loss_and_grad(p, np.zeros((1, 2)), np.array([0]), nn.BINARY_CROSS_ENTROPY)


def test_dimension_errors():
    p = nn.init_params([2, 1], Rng(0))
    with pytest.raises(DimensionError):
        nn.forward(p, np.zeros((3, 5)))
    with pytest.raises(DimensionError):
        nn.loss_and_grad(p, np.zeros((3, 2)), np.array([0, 1]))


def test_trades_kl_term_vanishes_when_adversary_equals_input():
    params, x, y, _, _, _ = random_case(3)
    kind = nn.BINARY_CROSS_ENTROPY if params.layer_dims[-1] == 1 else nn.SOFTMAX_CROSS_ENTROPY
    nat, g_nat = nn.loss_and_grad(params, x, y, kind)
    comp, g_comp = nn.loss_and_grad(params, x, y, nn.TRADES_COMPOSITE, x_adv=x, beta=5.0)
    assert comp == pytest.approx(nat, abs=1e-12)
    np.testing.assert_allclose(g_comp.flat(), g_nat.flat(), atol=1e-12)


def test_input_gradient_matches_central_differences():
    params = nn.init_params([3, 5, 2], Rng(4))
    g = np.random.default_rng(1)
    x = g.normal(size=(4, 3))
    y = np.array([0, 1, 1, 0])
    grad = nn.input_gradient(params, x, y)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            up, dn = x.copy(), x.copy()
            up[i, j] += h
            dn[i, j] -= h
            # summed loss = n * mean loss
            num = 4 * (nn.loss_value(params, up, y) - nn.loss_value(params, dn, y)) / (2 * h)
            assert grad[i, j] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_sgd_step_closed_form():
    p = nn.init_params([2, 2], Rng(0))
    g = p.with_flat(np.arange(p.flat().size, dtype=float))
    new, state = nn.optimizer_step(p, g, nn.OptimizerState("sgd", learning_rate=0.1))
    np.testing.assert_allclose(new.flat(), p.flat() - 0.1 * g.flat())
    assert state.step == 1


def test_adam_first_two_steps_closed_form():
    p = nn.init_params([2, 1], Rng(0))
    g1 = p.with_flat(np.array([0.5, -2.0, 1e-3]))
    g2 = p.with_flat(np.array([1.0, 1.0, -1.0]))
    lr, eps = 0.01, 1e-8
    s = nn.OptimizerState("adam", learning_rate=lr)
    p1, s = nn.optimizer_step(p, g1, s)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(p1.flat(), p.flat() - lr * g1.flat() / (np.abs(g1.flat()) + eps), rtol=1e-12)
    p2, s = nn.optimizer_step(p1, g2, s)
    m = 0.9 * 0.1 * g1.flat() + 0.1 * g2.flat()
    v = 0.999 * 0.001 * g1.flat() ** 2 + 0.001 * g2.flat() ** 2
    expect = p1.flat() - lr * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + eps)
    np.testing.assert_allclose(p2.flat(), expect, rtol=1e-12)
    assert s.step == 2


def test_optimizer_rejects_non_finite_gradient_naming_layer():
    p = nn.init_params([2, 3, 1], Rng(0))
    g = p.zeros_like()
    g.weights[1][0, 0] = np.nan
    with pytest.raises(NumericError) as info:
        nn.optimizer_step(p, g, nn.OptimizerState())
    assert info.value.layer == 1


def test_training_twice_gives_bit_identical_weights():
    ds = sample_synthetic(SyntheticSpec("gaussian-blobs", n=30, seed=2))
    rule = LearningRule("standard-mlp", hidden=(8, 4), epochs=5, batch_size=7, seed=11)
    a, b = train(rule, ds), train(rule, ds)
    assert a.params.equal(b.params)
    assert a.to_bytes() == b.to_bytes()
    c = train(rule.with_seed(12), ds)
    assert not a.params.equal(c.params)
