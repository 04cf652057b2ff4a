"""Shared test utilities: finite-difference gradient checks and random instances."""

import numpy as np

from looaudit import nn
from looaudit.rng import Rng

STEP = 1e-6
FLOOR = 1e-5


def random_case(seed: int):
    """A random MLP shape, batch, and loss kind (binary, softmax, or TRADES composite)."""
    g = np.random.default_rng(seed)
    d_in = int(g.integers(1, 6))
    hidden = [int(h) for h in g.integers(1, 7, size=int(g.integers(0, 4)))]
    out = int(g.choice([1, 2, 3, 4]))
    dims = [d_in] + hidden + [out]
    params = nn.init_params(dims, Rng(seed, 1))
    # nonzero biases so every parameter has a non-trivial gradient
    params = params.with_flat(params.flat() + 0.1 * g.normal(size=params.flat().size))
    n = int(g.integers(1, 9))
    x = g.normal(size=(n, d_in))
    y = g.integers(0, max(out, 2), size=n)
    kind = nn.BINARY_CROSS_ENTROPY if out == 1 else nn.SOFTMAX_CROSS_ENTROPY
    x_adv = None
    beta = 1.0
    if g.random() < 0.3:
        kind = nn.TRADES_COMPOSITE
        x_adv = x + 0.3 * g.normal(size=x.shape)
        beta = float(g.uniform(0.5, 6.0))
    return params, x, y, kind, x_adv, beta


def max_relative_error(params, x, y, kind, x_adv=None, beta=1.0) -> float:
    """Largest elementwise ``|a - b| / max(|a|, |b|, FLOOR)`` over all parameters."""
    _, grad = nn.loss_and_grad(params, x, y, kind, x_adv=x_adv, beta=beta)
    analytic = grad.flat()
    theta = params.flat()
    numeric = np.empty_like(theta)
    for j in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[j] += STEP
        dn[j] -= STEP
        f_up = nn.loss_value(params.with_flat(up), x, y, kind, x_adv=x_adv, beta=beta)
        f_dn = nn.loss_value(params.with_flat(dn), x, y, kind, x_adv=x_adv, beta=beta)
        numeric[j] = (f_up - f_dn) / (2 * STEP)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))
