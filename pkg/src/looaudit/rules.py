"""Learning rules: seeded training, adversarial variants, reference rules."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import nn
from .data import Dataset, DatasetView
from .errors import ConfigurationError, NumericError, TrainingError, UnsupportedModelError
from .kernels import sq_dists
from .models import (
    TABLE_LABELS,
    TABLE_POINTS,
    ConstantModel,
    KnnModel,
    MlpModel,
    Model,
    SmoothingConfig,
    TableModel,
    smooth_predict,
)
from .rng import STREAM_ATTACK, STREAM_INIT, STREAM_NOISE, Rng, hash_ints, keyed_order

RULE_KINDS = (
    "standard-mlp",
    "linear",
    "pgd-adversarial",
    "trades",
    "knn",
    "table-rule",
    "noisy-majority",
    "constant",
)
MLP_KINDS = ("standard-mlp", "linear", "pgd-adversarial", "trades")
TRADES_START_SCALE = 1e-3


@dataclass(frozen=True)
class LearningRule:
    """Every hyperparameter that determines a trained model.

    Defaults follow the tabular setup: three hidden layers of 128, 64 and 16
    units, 100 epochs, batch size 32, Adam with learning rate 1e-3. When
    ``adv_step_size`` is ``None`` the PGD step is ``2.5 * radius / steps``.
    """

    kind: str = "standard-mlp"
    hidden: tuple[int, ...] = (128, 64, 16)
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    adv_norm: str = "l2"
    adv_radius: float = 0.0
    adv_steps: int = 10
    adv_step_size: float | None = None
    trades_beta: float = 1.0
    k: int = 1
    dp_epsilon: float = 1.0
    constant_class: int = 0
    seed: int = 0
    smoothing: SmoothingConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in RULE_KINDS:
            raise ConfigurationError(f"unknown rule kind {self.kind!r}", key="kind")
        if any(h <= 0 for h in self.hidden):
            raise ConfigurationError("hidden widths must be positive", key="hidden")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1", key="batch_size")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}", key="optimizer")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive", key="learning_rate")
        if self.adv_norm not in ("l2", "linf"):
            raise ConfigurationError("adv_norm must be 'l2' or 'linf'", key="adv_norm")
        if self.adv_radius < 0 or self.adv_steps < 0:
            raise ConfigurationError("adv_radius and adv_steps must be non-negative", key="adv_radius")
        if self.kind == "trades" and not self.trades_beta > 0:
            raise ConfigurationError("trades_beta must be positive", key="trades_beta")
        if self.k < 1:
            raise ConfigurationError("k must be at least 1", key="k")
        if self.kind == "noisy-majority" and not self.dp_epsilon > 0:
            raise ConfigurationError("dp_epsilon must be positive", key="dp_epsilon")

    @property
    def deterministic(self) -> bool:
        return self.kind != "noisy-majority"

    @property
    def step_size(self) -> float:
        if self.adv_step_size is not None:
            return self.adv_step_size
        return 2.5 * self.adv_radius / self.adv_steps if self.adv_steps else 0.0

    def layer_dims(self, num_features: int, num_classes: int) -> list[int]:
        out = 1 if num_classes == 2 else num_classes
        hidden = [] if self.kind == "linear" else list(self.hidden)
        return [num_features, *hidden, out]

    def dp_parameters(self) -> tuple[float, float] | None:
        return (self.dp_epsilon, 0.0) if self.kind == "noisy-majority" else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["smoothing"] = None if self.smoothing is None else self.smoothing.to_dict()
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> LearningRule:
        return replace(self, seed=int(seed))


# ---------------------------------------------------------------------------
# attacks


def _project(x_adv, x, norm, radius):
    """Project onto the ball; the returned point satisfies the bound as computed in floats."""
    if norm == "linf":
        out = np.clip(x_adv, x - radius, x + radius)
        # x + radius can round outward by half an ulp of x; step back toward x
        over = np.abs(out - x) > radius
        while np.any(over):
            out[over] = np.nextafter(out[over], x[over])
            over = np.abs(out - x) > radius
        return out
    delta = x_adv - x
    nd = np.sqrt(np.sum(delta * delta, axis=1, keepdims=True))
    factor = np.where(nd > radius, radius / np.where(nd > 0, nd, 1.0), 1.0)
    out = x + delta * factor
    # rounding in x + delta can land just outside; shrink harder until it fits
    shrink = 2.0**-52
    over = np.linalg.norm(out - x, axis=1) > radius
    while np.any(over):
        rows = over[:, None] & np.ones_like(out, dtype=bool)
        out = np.where(rows, x + delta * factor * (1.0 - shrink), out)
        shrink = min(2.0 * shrink, 1.0)
        over = np.linalg.norm(out - x, axis=1) > radius
    return out


def _ascend(grad_fn, x, x_start, norm, radius, steps, step_size):
    xa = x_start
    for _ in range(steps):
        g = grad_fn(xa)
        if norm == "linf":
            xa = xa + step_size * np.sign(g)
        else:
            gn = np.sqrt(np.sum(g * g, axis=1, keepdims=True))
            xa = xa + step_size * np.where(gn > 0, g / np.where(gn > 0, gn, 1.0), 0.0)
        xa = _project(xa, x, norm, radius)
    return xa


def _pgd_params(params, x, y, norm, radius, steps, step_size):
    x = np.asarray(x, dtype=np.float64)
    if radius == 0 or steps == 0:
        return x.copy()
    return _ascend(
        lambda xa: nn.input_gradient(params, xa, y), x, x.copy(), norm, radius, steps, step_size
    )


def pgd_attack(model: Model, x, y, norm: str, radius: float, steps: int, step_size: float | None = None):
    """Projected gradient ascent on the model's cross-entropy, no random start.

    After every step the iterate is projected back onto the ``norm`` ball of
    ``radius`` around ``x``. The final iterate is returned.
    """
    if not isinstance(model, MlpModel):
        raise UnsupportedModelError(f"PGD needs a differentiable model, got {type(model).__name__}")
    if norm not in ("l2", "linf"):
        raise ConfigurationError("norm must be 'l2' or 'linf'", key="norm")
    if radius < 0:
        raise ConfigurationError("radius must be non-negative", key="radius")
    if step_size is None:
        step_size = 2.5 * radius / steps if steps else 0.0
    return _pgd_params(model.params, x, np.asarray(y), norm, radius, steps, step_size)


def _trades_adversary(params, x, norm, radius, steps, step_size, rng: Rng):
    x = np.asarray(x, dtype=np.float64)
    if radius == 0 or steps == 0:
        return x.copy()
    # KL has zero gradient at x_adv = x, so start from a small perturbation
    start = _project(x + TRADES_START_SCALE * rng.normal(x.shape), x, norm, radius)
    return _ascend(
        lambda xa: nn.kl_input_gradient(params, x, xa)[1], x, start, norm, radius, steps, step_size
    )


def adversarial_radius(x, y, norm: str = "l2", sample_size: int = 2000, seed: int = 0) -> float:
    """Smallest cross-class distance in a sample of the data.

    When that distance is zero, returns instead a distance exceeded by at
    least 99% of the sampled cross-class pairs (their 1st percentile), or the
    smallest positive cross-class distance if that percentile is zero too.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) > sample_size:
        pick = np.sort(Rng(seed, STREAM_ATTACK).permutation(len(x))[:sample_size])
        x, y = x[pick], y[pick]
    if norm == "l2":
        dist = np.sqrt(sq_dists(x, x))
    else:
        dist = np.max(np.abs(x[:, None, :] - x[None, :, :]), axis=2)
    cross = dist[y[:, None] != y[None, :]]
    if cross.size == 0:
        raise ConfigurationError("need at least two classes to set a radius", key="adv_radius")
    best = float(cross.min())
    if best > 0:
        return best
    q = float(np.quantile(cross, 0.01, method="lower"))
    if q > 0:
        return q
    return float(cross[cross > 0].min()) if np.any(cross > 0) else 0.0


# ---------------------------------------------------------------------------
# training


def _train_mlp(rule: LearningRule, view: DatasetView, mode: str) -> MlpModel:
    x, y, ids = view.features, view.labels, view.point_ids
    n = len(y)
    if n == 0:
        raise ConfigurationError("cannot train on an empty dataset", key="dataset")
    dims = rule.layer_dims(view.num_features, view.num_classes)
    params = nn.init_params(dims, Rng(rule.seed, STREAM_INIT))
    state = nn.OptimizerState(rule.optimizer, rule.learning_rate)
    step_size = rule.step_size
    step = 0
    for epoch in range(rule.epochs):
        order = keyed_order(ids, rule.seed, epoch)
        for start in range(0, n, rule.batch_size):
            idx = order[start : start + rule.batch_size]
            xb, yb = x[idx], y[idx]
            if mode == "pgd":
                xb = _pgd_params(
                    params, xb, yb, rule.adv_norm, rule.adv_radius, rule.adv_steps, step_size
                )
                loss, grads = nn.loss_and_grad(params, xb, yb)
            elif mode == "trades":
                arng = Rng(hash_ints(rule.seed, epoch, step), STREAM_ATTACK)
                xa = _trades_adversary(
                    params, xb, rule.adv_norm, rule.adv_radius, rule.adv_steps, step_size, arng
                )
                loss, grads = nn.loss_and_grad(
                    params, xb, yb, nn.TRADES_COMPOSITE, x_adv=xa, beta=rule.trades_beta
                )
            else:
                loss, grads = nn.loss_and_grad(params, xb, yb)
            if not np.isfinite(loss):
                raise TrainingError("non-finite loss", epoch, step)
            try:
                params, state = nn.optimizer_step(params, grads, state)
            except NumericError as exc:
                raise TrainingError(str(exc), epoch, step) from exc
            step += 1
    return MlpModel(params)


def train_standard(rule: LearningRule, view: DatasetView) -> MlpModel:
    return _train_mlp(rule, view, "natural")


def train_adversarial(rule: LearningRule, view: DatasetView) -> MlpModel:
    """Adversarial training: every batch is replaced by its PGD iterate."""
    if rule.kind != "pgd-adversarial":
        raise ConfigurationError("train_adversarial needs kind 'pgd-adversarial'", key="kind")
    return _train_mlp(rule, view, "pgd")


def train_trades(rule: LearningRule, view: DatasetView) -> MlpModel:
    """Natural loss plus ``trades_beta`` times KL to the PGD-maximized neighbour."""
    if rule.kind != "trades":
        raise ConfigurationError("train_trades needs kind 'trades'", key="kind")
    return _train_mlp(rule, view, "trades")


def predict_noisy_majority(view, dp_epsilon: float, rng: Rng) -> ConstantModel:
    """Constant classifier on the sign of a Laplace-noised signed label count.

    The signed count (#label-1 minus #label-0) moves by at most 2 between
    neighbouring datasets, so noise of scale ``2 / dp_epsilon`` makes the rule
    ``(dp_epsilon, 0)``-differentially private.
    """
    if view.num_classes != 2:
        raise UnsupportedModelError("noisy-majority supports binary labels only")
    if not dp_epsilon > 0:
        raise ConfigurationError("dp_epsilon must be positive", key="dp_epsilon")
    y = np.asarray(view.labels)
    count = int(np.count_nonzero(y == 1)) - int(np.count_nonzero(y == 0))
    noisy = count + rng.laplace(scale=2.0 / dp_epsilon)
    return ConstantModel(1 if noisy > 0 else 0, 2)


def table_dataset() -> Dataset:
    """The three-point support ``{x1, x2, x3}`` with ids 0, 1, 2."""
    return Dataset(TABLE_POINTS, TABLE_LABELS, 2)


def table_rule(view) -> TableModel:
    """Look up the fixed classifier assigned to the subset of ``{x1, x2, x3}`` present."""
    x = np.asarray(view.features, dtype=np.float64)
    subset = 0
    for row in x:
        hit = np.flatnonzero(np.all(TABLE_POINTS == row, axis=1))
        if hit.size == 0:
            raise ConfigurationError(f"point {row.tolist()} is not one of x1, x2, x3", key="subset")
        subset |= 1 << int(hit[0])
    return TableModel(subset)


def train(rule: LearningRule, view, *, trial: int = 0) -> Model:
    """Train ``rule`` on ``view``.

    Deterministic kinds ignore ``trial``; ``noisy-majority`` draws its noise
    from a stream keyed by ``(seed, trial)`` and the view contents.
    """
    if isinstance(view, Dataset):
        view = view.view()
    if len(view) == 0 and rule.kind in MLP_KINDS + ("knn",):
        raise ConfigurationError("cannot train on an empty dataset", key="dataset")
    if rule.kind in ("standard-mlp", "linear"):
        model = train_standard(rule, view)
    elif rule.kind == "pgd-adversarial":
        model = train_adversarial(rule, view)
    elif rule.kind == "trades":
        model = train_trades(rule, view)
    elif rule.kind == "knn":
        model = KnnModel(view.features, view.labels, view.num_classes, rule.k)
    elif rule.kind == "table-rule":
        model = table_rule(view)
    elif rule.kind == "constant":
        model = ConstantModel(rule.constant_class, view.num_classes)
    else:
        ids = np.asarray(view.point_ids, dtype=np.int64)
        view_key = int.from_bytes(hashlib.blake2b(ids.tobytes(), digest_size=8).digest(), "little")
        rng = Rng(hash_ints(rule.seed, trial, view_key), STREAM_NOISE)
        model = predict_noisy_majority(view, rule.dp_epsilon, rng)
    if rule.smoothing is not None:
        model = model.with_smoothing(rule.smoothing)
    return model


__all__ = [
    "LearningRule",
    "SmoothingConfig",
    "adversarial_radius",
    "pgd_attack",
    "predict_noisy_majority",
    "smooth_predict",
    "table_dataset",
    "table_rule",
    "train",
    "train_adversarial",
    "train_standard",
    "train_trades",
]
