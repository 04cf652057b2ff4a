"""Multilayer perceptrons in float64: init, forward, exact gradients, optimizers.

Every matrix product goes through :func:`looaudit.kernels.gemm`, whose
accumulation order is fixed, so a training run is reproducible bit for bit.
Hidden layers use ReLU; the output is a sigmoid when the last layer has width
one and a softmax otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError, UnsupportedLossError
from .kernels import gemm
from .rng import Rng

PROB_CLIP = 1e-12

BINARY_CROSS_ENTROPY = "binary-cross-entropy"
SOFTMAX_CROSS_ENTROPY = "softmax-cross-entropy"
ZERO_ONE = "zero-one"
TRADES_COMPOSITE = "trades-composite"
LOSS_KINDS = (BINARY_CROSS_ENTROPY, SOFTMAX_CROSS_ENTROPY, ZERO_ONE, TRADES_COMPOSITE)


@dataclass
class MlpParams:
    """Weights ``(out, in)`` and biases ``(out,)`` for each layer.

    Gradients reuse this class, so the same container is used for parameters,
    gradients, and Adam moments.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]):
                raise DimensionError(f"weights[{l}] has shape {w.shape}")
            if b.shape != (self.layer_dims[l + 1],):
                raise DimensionError(f"biases[{l}] has shape {b.shape}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def output_activation(self) -> str:
        return "sigmoid" if self.layer_dims[-1] == 1 else "softmax"

    @property
    def num_classes(self) -> int:
        return 2 if self.layer_dims[-1] == 1 else self.layer_dims[-1]

    def copy(self) -> MlpParams:
        return MlpParams(
            self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def zeros_like(self) -> MlpParams:
        return MlpParams(
            self.layer_dims,
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> MlpParams:
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(np.array(vec[pos : pos + w.size]).reshape(w.shape))
            pos += w.size
            biases.append(np.array(vec[pos : pos + b.size]))
            pos += b.size
        return MlpParams(self.layer_dims, weights, biases)

    def equal(self, other: MlpParams) -> bool:
        """Bit-level equality."""
        return self.layer_dims == other.layer_dims and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )


def init_params(layer_dims: Sequence[int], rng: Rng) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) != d or d <= 0 for d in dims):
        raise ConfigurationError(f"invalid layer_dims {dims!r}", key="layer_dims")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform((fan_out, fan_in), -a, a))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(dims), weights, biases)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    s = z - z.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise DimensionError(
            f"input has shape {x.shape}, expected (n, {params.layer_dims[0]})"
        )
    return x


def _forward_cache(params: MlpParams, x: np.ndarray):
    """Return (activations, pre-activations); activations[0] is the input."""
    acts, pres = [x], []
    a = x
    last = params.num_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = gemm(a, w.T) + b
        pres.append(z)
        a = np.maximum(z, 0.0) if l < last else z
        acts.append(a)
    return acts, pres


def logits(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = _check_input(params, x)
    return _forward_cache(params, x)[1][-1]


def forward(params: MlpParams, x_batch: np.ndarray) -> np.ndarray:
    """Output-layer probabilities: ``(n, 1)`` sigmoid or ``(n, k)`` softmax."""
    z = logits(params, x_batch)
    return sigmoid(z) if params.output_activation == "sigmoid" else softmax(z)


def class_probabilities(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Always ``(n, num_classes)``; binary models give ``[1 - p, p]``."""
    p = forward(params, x)
    if params.output_activation == "sigmoid":
        return np.hstack([1.0 - p, p])
    return p


def _onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _natural_loss_and_dz(params: MlpParams, z: np.ndarray, y: np.ndarray):
    """Mean cross-entropy at logits ``z`` and its gradient w.r.t. ``z``."""
    n = z.shape[0]
    if params.output_activation == "sigmoid":
        p = sigmoid(z[:, 0])
        t = y.astype(np.float64)
        pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
        loss = -np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))
        # the clipped loss is flat outside the clip window
        live = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
        dz = np.where(live, p - t, 0.0)[:, None] / n
    else:
        p = softmax(z)
        py = p[np.arange(n), y]
        loss = -np.mean(np.log(np.clip(py, PROB_CLIP, 1.0 - PROB_CLIP)))
        live = (py > PROB_CLIP) & (py < 1.0 - PROB_CLIP)
        dz = np.where(live[:, None], p - _onehot(y, z.shape[1]), 0.0) / n
    return float(loss), dz


def _kl_and_dz(params: MlpParams, z_clean: np.ndarray, z_adv: np.ndarray):
    """Mean KL(model(x) || model(x_adv)) and gradients w.r.t. both logit blocks."""
    n = z_clean.shape[0]
    if params.output_activation == "sigmoid":
        a, b = z_clean[:, 0], z_adv[:, 0]
        p, q = sigmoid(a), sigmoid(b)
        kl = p * (log_sigmoid(a) - log_sigmoid(b)) + (1.0 - p) * (log_sigmoid(-a) - log_sigmoid(-b))
        dz_clean = (p * (1.0 - p) * (a - b))[:, None] / n
        dz_adv = (q - p)[:, None] / n
        return float(np.mean(kl)), dz_clean, dz_adv
    lp, lq = log_softmax(z_clean), log_softmax(z_adv)
    p, q = np.exp(lp), np.exp(lq)
    kl_rows = np.sum(p * (lp - lq), axis=1)
    dz_clean = p * ((lp - lq) - kl_rows[:, None]) / n
    dz_adv = (q - p) / n
    return float(np.mean(kl_rows)), dz_clean, dz_adv


def _backprop(params: MlpParams, acts, pres, dz: np.ndarray, want_input: bool = False):
    grads = params.zeros_like()
    ones = np.ones((1, dz.shape[0]))
    for l in range(params.num_layers - 1, -1, -1):
        grads.weights[l] = gemm(dz.T, acts[l])
        grads.biases[l] = gemm(ones, dz)[0]
        if l > 0 or want_input:
            da = gemm(dz, params.weights[l])
            if l > 0:
                dz = da * (pres[l - 1] > 0.0)
    return (grads, da) if want_input else grads


def _default_loss(params: MlpParams) -> str:
    return BINARY_CROSS_ENTROPY if params.output_activation == "sigmoid" else SOFTMAX_CROSS_ENTROPY


def _check_loss(params: MlpParams, loss_kind: str) -> None:
    if loss_kind == ZERO_ONE:
        raise UnsupportedLossError("zero-one loss is evaluation-only and has no gradient")
    if loss_kind not in LOSS_KINDS:
        raise UnsupportedLossError(f"unknown loss {loss_kind!r}")
    if loss_kind == BINARY_CROSS_ENTROPY and params.output_activation != "sigmoid":
        raise UnsupportedLossError("binary cross-entropy needs a width-1 sigmoid output")
    if loss_kind == SOFTMAX_CROSS_ENTROPY and params.output_activation != "softmax":
        raise UnsupportedLossError("softmax cross-entropy needs a softmax output")


def loss_and_grad(
    params: MlpParams,
    x_batch: np.ndarray,
    y_batch: np.ndarray,
    loss_kind: str | None = None,
    *,
    x_adv: np.ndarray | None = None,
    beta: float = 1.0,
):
    """Mean batch loss and its exact gradient.

    For ``trades-composite`` the loss is the natural cross-entropy at
    ``x_batch`` plus ``beta`` times KL(model(x) || model(x_adv)); the gradient
    flows through both forward passes (``x_adv`` is treated as a constant input).
    """
    loss_kind = loss_kind or _default_loss(params)
    if loss_kind == TRADES_COMPOSITE:
        if x_adv is None:
            raise ConfigurationError("trades-composite loss needs x_adv", key="x_adv")
    else:
        _check_loss(params, loss_kind)
    x = _check_input(params, x_batch)
    y = np.asarray(y_batch, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise DimensionError(f"labels have shape {y.shape}, expected ({x.shape[0]},)")
    acts, pres = _forward_cache(params, x)
    loss, dz = _natural_loss_and_dz(params, pres[-1], y)
    if loss_kind != TRADES_COMPOSITE:
        return loss, _backprop(params, acts, pres, dz)
    xa = _check_input(params, x_adv)
    acts_a, pres_a = _forward_cache(params, xa)
    kl, dz_clean, dz_adv = _kl_and_dz(params, pres[-1], pres_a[-1])
    g = _backprop(params, acts, pres, dz + beta * dz_clean)
    ga = _backprop(params, acts_a, pres_a, beta * dz_adv)
    for l in range(g.num_layers):
        g.weights[l] = g.weights[l] + ga.weights[l]
        g.biases[l] = g.biases[l] + ga.biases[l]
    return loss + beta * kl, g


def loss_value(params, x_batch, y_batch, loss_kind=None, *, x_adv=None, beta=1.0) -> float:
    """Mean batch loss; also evaluates the (non-differentiable) zero-one loss."""
    loss_kind = loss_kind or _default_loss(params)
    if loss_kind == ZERO_ONE:
        probs = class_probabilities(params, x_batch)
        return float(np.mean(np.argmax(probs, axis=1) != np.asarray(y_batch)))
    x = _check_input(params, x_batch)
    y = np.asarray(y_batch, dtype=np.int64)
    z = _forward_cache(params, x)[1][-1]
    loss = _natural_loss_and_dz(params, z, y)[0]
    if loss_kind == TRADES_COMPOSITE:
        za = _forward_cache(params, _check_input(params, x_adv))[1][-1]
        loss += beta * _kl_and_dz(params, z, za)[0]
    return loss


def backward(params, x_batch, y_batch, loss_kind=None, *, x_adv=None, beta=1.0) -> MlpParams:
    """Exact gradient of the mean batch loss, shaped like ``params``."""
    return loss_and_grad(params, x_batch, y_batch, loss_kind, x_adv=x_adv, beta=beta)[1]


def input_gradient(params: MlpParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the summed cross-entropy w.r.t. each input row."""
    x = _check_input(params, x)
    acts, pres = _forward_cache(params, x)
    _, dz = _natural_loss_and_dz(params, pres[-1], np.asarray(y, dtype=np.int64))
    return _backprop(params, acts, pres, dz * x.shape[0], want_input=True)[1]


def kl_input_gradient(params: MlpParams, x_clean: np.ndarray, x_adv: np.ndarray):
    """Per-row KL(model(x_clean) || model(x_adv)) and its gradient w.r.t. ``x_adv``."""
    z_clean = logits(params, x_clean)
    xa = _check_input(params, x_adv)
    acts, pres = _forward_cache(params, xa)
    n = xa.shape[0]
    kl, _, dz_adv = _kl_and_dz(params, z_clean, pres[-1])
    return kl, _backprop(params, acts, pres, dz_adv * n, want_input=True)[1]


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: MlpParams | None = None
    v: MlpParams | None = None
    step: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}", key="optimizer")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be positive", key="learning_rate")


def optimizer_step(
    params: MlpParams, grads: MlpParams, state: OptimizerState
) -> tuple[MlpParams, OptimizerState]:
    """One SGD or bias-corrected Adam update; returns new params and state."""
    for l, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != params.weights[l].shape or gb.shape != params.biases[l].shape:
            raise DimensionError(f"gradient shape mismatch at layer {l}")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError("non-finite gradient", layer=l)
    lr = state.learning_rate
    step = state.step + 1
    if state.kind == "sgd":
        new = MlpParams(
            params.layer_dims,
            [w - lr * g for w, g in zip(params.weights, grads.weights)],
            [b - lr * g for b, g in zip(params.biases, grads.biases)],
        )
        return new, OptimizerState("sgd", lr, state.beta1, state.beta2, state.eps, step=step)

    b1, b2 = state.beta1, state.beta2
    m_old = state.m if state.m is not None else params.zeros_like()
    v_old = state.v if state.v is not None else params.zeros_like()
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), m_old.arrays(), v_old.arrays()):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)

    def pack(arrs):
        return MlpParams(params.layer_dims, arrs[0::2], arrs[1::2])

    return pack(new_p), OptimizerState(
        "adam", lr, b1, b2, state.eps, pack(new_m), pack(new_v), step
    )
