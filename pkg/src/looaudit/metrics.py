"""Leave-one-out unfairness, LOO-stability, DP bounds, and a brute-force oracle.

All reductions run over a fixed index order, so reports do not depend on how
the underlying trainings were scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, SplitPlan, full_plan, leave_one_out, train_view
from .errors import AuditError, ConfigurationError, OracleSizeError
from .models import Model, confidence
from .rules import LearningRule, train

BINARY_GRID = (0.0, 0.1, 0.2, 0.3, 0.4)
MULTICLASS_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
ORACLE_MAX_SIZE = 64


@dataclass(frozen=True)
class TrainTask:
    """One training job: ``tag`` is ``"baseline"`` or the removed id, seed, or rule index."""

    tag: object
    rule: LearningRule
    view: object
    trial: int = 0


def train_sequential(tasks: Sequence[TrainTask]) -> list[Model]:
    return [train(t.rule, t.view, trial=t.trial) for t in tasks]


TrainMany = Callable[[Sequence[TrainTask]], list]


@dataclass
class PredictionRecord:
    point_id: int
    probabilities: list[float]
    label: int
    confidence: float


@dataclass
class LufEstimate:
    point_id: int
    luf_value: float
    responsible_removed_id: int | None
    num_leave_out_models: int


@dataclass
class LufReport:
    """Per-point LUF over the evaluation set plus aggregate views.

    ``confidence_curve`` holds ``(threshold, expected LUF over points with
    confidence >= threshold, number of such points)``; the value is 0 when no
    point clears the threshold. ``flip_fractions`` maps each removed id (or
    seed, or rule index) to the mean per-point change it causes.
    """

    points: list[LufEstimate]
    records: list[PredictionRecord]
    expected_luf: float
    confidence_curve: list[tuple[float, float, int]]
    flip_fractions: dict[int, float]
    flip_histogram: list[dict]
    metadata: dict = field(default_factory=dict)
    std_error_bound: float | None = None

    @property
    def luf_values(self) -> np.ndarray:
        return np.array([p.luf_value for p in self.points])

    def point(self, point_id: int) -> LufEstimate:
        for p in self.points:
            if p.point_id == point_id:
                return p
        raise KeyError(point_id)

    def to_dict(self) -> dict:
        return {
            "expected_luf": self.expected_luf,
            "std_error_bound": self.std_error_bound,
            "confidence_curve": [
                {"threshold": c, "expected_luf": v, "num_points": n}
                for c, v, n in self.confidence_curve
            ],
            "flip_fractions": [
                {"removed_id": int(k), "fraction": v} for k, v in self.flip_fractions.items()
            ],
            "flip_histogram": self.flip_histogram,
            "points": [
                {
                    "point_id": p.point_id,
                    "luf_value": p.luf_value,
                    "responsible_removed_id": p.responsible_removed_id,
                    "num_leave_out_models": p.num_leave_out_models,
                    "label": r.label,
                    "confidence": r.confidence,
                    "probabilities": r.probabilities,
                }
                for p, r in zip(self.points, self.records)
            ],
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


@dataclass
class StabilityEstimate:
    loo_stability_rate: float
    per_point: dict[int, float]
    dp_bound: float | None = None

    def to_dict(self) -> dict:
        return {
            "loo_stability_rate": self.loo_stability_rate,
            "dp_bound": self.dp_bound,
            "per_point": [{"point_id": int(k), "loss_change": v} for k, v in self.per_point.items()],
        }


# ---------------------------------------------------------------------------
# shared reduction


def confidence_grid(num_classes: int) -> tuple[float, ...]:
    return BINARY_GRID if num_classes == 2 else MULTICLASS_GRID


def confidence_curve(conf: np.ndarray, luf: np.ndarray, grid: Sequence[float]):
    curve = []
    for c in grid:
        mask = conf >= c
        count = int(np.count_nonzero(mask))
        curve.append((float(c), float(np.mean(luf[mask])) if count else 0.0, count))
    return curve


def flip_histogram(fractions: Sequence[float], bins: int = 10) -> list[dict]:
    """Equal-width bins over ``[0, max fraction]``; counts how many removals land in each."""
    fr = np.asarray(list(fractions), dtype=np.float64)
    top = float(fr.max()) if fr.size and fr.max() > 0 else 1.0
    width = top / bins
    counts = np.zeros(bins, dtype=np.int64)
    for f in fr:
        counts[min(int(f / width), bins - 1)] += 1
    return [
        {"lower": j * width, "upper": (j + 1) * width, "count": int(counts[j])} for j in range(bins)
    ]


def _onehot_argmax(probs: np.ndarray) -> np.ndarray:
    out = np.zeros_like(probs)
    out[np.arange(len(probs)), np.argmax(probs, axis=1)] = 1.0
    return out


def _reduce(eval_ids, base_probs, base_freq, variants, metadata, std_error=None) -> LufReport:
    """Max over variants and classes of the change in class frequencies."""
    m = len(eval_ids)
    luf = np.zeros(m)
    resp: list[int | None] = [None] * m
    fractions: dict[int, float] = {}
    for tag, freq in variants:
        diff = np.max(np.abs(base_freq - freq), axis=1)
        fractions[int(tag)] = float(np.mean(diff)) if m else 0.0
        better = diff > luf
        luf = np.where(better, diff, luf)
        for j in np.flatnonzero(better):
            resp[j] = int(tag)
    conf = confidence(base_probs) if m else np.zeros(0)
    labels = np.argmax(base_probs, axis=1) if m else np.zeros(0, dtype=np.int64)
    k = base_probs.shape[1]
    points = [
        LufEstimate(int(eval_ids[j]), float(luf[j]), resp[j], len(variants)) for j in range(m)
    ]
    records = [
        PredictionRecord(
            int(eval_ids[j]), [float(v) for v in base_probs[j]], int(labels[j]), float(conf[j])
        )
        for j in range(m)
    ]
    return LufReport(
        points=points,
        records=records,
        expected_luf=float(np.mean(luf)) if m else 0.0,
        confidence_curve=confidence_curve(conf, luf, confidence_grid(k)),
        flip_fractions=fractions,
        flip_histogram=flip_histogram(list(fractions.values())),
        metadata=metadata,
        std_error_bound=std_error,
    )


def _eval_ids(dataset: Dataset, plan: SplitPlan, eval_ids) -> list[int]:
    if eval_ids is None or eval_ids == "all":
        return [int(i) for i in dataset.point_ids]
    if eval_ids == "test":
        return list(plan.test_ids)
    ids = [int(i) for i in eval_ids]
    if not ids:
        raise ConfigurationError("eval_ids must be nonempty", key="eval_ids")
    return ids


def _metadata(rule: LearningRule, plan: SplitPlan, **extra) -> dict:
    meta = {"rule": rule.to_dict(), "split": plan.to_dict()}
    meta.update(extra)
    return meta


def _run(tasks: list[TrainTask], train_many: TrainMany | None) -> list[Model]:
    runner = train_many or train_sequential
    try:
        return list(runner(tasks))
    except AuditError:
        raise
    except Exception as exc:
        tag = getattr(exc, "task_tag", None)
        raise AuditError(f"training failed: {exc}", None if tag in (None, "baseline") else tag) from exc


def variant_tasks(rule, dataset, plan, trial: int = 0) -> list[TrainTask]:
    tasks = [TrainTask("baseline", rule, train_view(dataset, plan), trial)]
    tasks += [
        TrainTask(int(i), rule, leave_one_out(dataset, plan, i), trial) for i in plan.leave_out_ids
    ]
    return tasks


# ---------------------------------------------------------------------------
# audits


def audit_deterministic(
    rule: LearningRule,
    dataset: Dataset,
    split_plan: SplitPlan,
    eval_ids=None,
    *,
    train_many: TrainMany | None = None,
    models: list[Model] | None = None,
) -> LufReport:
    """Train ``h_S`` and every ``h_{S \\ i}`` for ``i`` in ``O``; a point's LUF is 1
    when any variant's argmax differs from the baseline's."""
    ids = _eval_ids(dataset, split_plan, eval_ids)
    if models is None:
        models = _run(variant_tasks(rule, dataset, split_plan), train_many)
    x = dataset.features[dataset.positions(ids)]
    base_probs = models[0].predict_proba(x)
    base_freq = _onehot_argmax(base_probs)
    variants = [
        (i, _onehot_argmax(mdl.predict_proba(x)))
        for i, mdl in zip(split_plan.leave_out_ids, models[1:])
    ]
    return _reduce(ids, base_probs, base_freq, variants, _metadata(rule, split_plan, kind="luf"))


def audit_randomized(
    rule: LearningRule,
    dataset: Dataset,
    split_plan: SplitPlan,
    eval_ids=None,
    trials: int = 100,
    *,
    train_many: TrainMany | None = None,
) -> LufReport:
    """Monte Carlo LUF: class frequencies over ``trials`` independent trainings per dataset."""
    if trials < 2:
        raise ConfigurationError("trials must be at least 2", key="trials")
    ids = _eval_ids(dataset, split_plan, eval_ids)
    x = dataset.features[dataset.positions(ids)]
    n_var = 1 + len(split_plan.leave_out_ids)
    reps = 1 if rule.deterministic else trials
    tasks = []
    for t in range(reps):
        tasks += variant_tasks(rule, dataset, split_plan, trial=t)
    models = _run(tasks, train_many)
    freqs = [None] * n_var
    base_probs = None
    for t in range(reps):
        for v in range(n_var):
            probs = models[t * n_var + v].predict_proba(x)
            if t == 0 and v == 0:
                base_probs = probs
            hit = _onehot_argmax(probs)
            freqs[v] = hit if freqs[v] is None else freqs[v] + hit
    freqs = [f / reps for f in freqs]
    if not rule.deterministic:
        base_probs = freqs[0]
    variants = list(zip(split_plan.leave_out_ids, freqs[1:]))
    meta = _metadata(rule, split_plan, kind="luf-randomized", trials=trials)
    return _reduce(ids, base_probs, freqs[0], variants, meta, 1.0 / (2.0 * math.sqrt(trials)))


def dp_luf_bound(epsilon: float, delta: float) -> float:
    """Upper bound ``e^epsilon - 1 + delta`` on LUF for an (epsilon, delta)-DP rule."""
    if not (isinstance(epsilon, (int, float)) and epsilon > 0 and math.isfinite(epsilon)):
        raise ConfigurationError(f"epsilon must be positive and finite, got {epsilon!r}", key="epsilon")
    if not 0.0 <= delta <= 1.0:
        raise ConfigurationError(f"delta must lie in [0, 1], got {delta!r}", key="delta")
    return math.expm1(epsilon) + delta


def loo_stability(
    rule: LearningRule,
    dataset: Dataset,
    split_plan: SplitPlan,
    *,
    train_many: TrainMany | None = None,
    models: list[Model] | None = None,
) -> StabilityEstimate:
    """Mean over ``i`` in ``O`` of the change in ``z_i``'s own 0-1 loss when it is removed.

    The training set is the audited ``S``; no outer expectation over draws of
    ``S`` is taken.
    """
    if not split_plan.leave_out_ids:
        raise ConfigurationError("leave-out set is empty", key="o_size")
    if models is None:
        models = _run(variant_tasks(rule, dataset, split_plan), train_many)
    base = models[0]
    per_point = {}
    for i, mdl in zip(split_plan.leave_out_ids, models[1:]):
        pos = dataset.positions([i])
        xi, yi = dataset.features[pos], int(dataset.labels[pos][0])
        loss_s = float(base.predict(xi)[0] != yi)
        loss_i = float(mdl.predict(xi)[0] != yi)
        per_point[int(i)] = abs(loss_s - loss_i)
    dp = rule.dp_parameters()
    rate = float(np.mean(list(per_point.values())))
    return StabilityEstimate(rate, per_point, None if dp is None else dp_luf_bound(*dp))


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleResult:
    points: list[LufEstimate]
    probes: list[LufEstimate]


def luf_oracle(rule: LearningRule, dataset: Dataset, probes=None, max_size: int = ORACLE_MAX_SIZE) -> OracleResult:
    """Exact LUF by retraining on every leave-one-out copy of the whole dataset.

    Each ``S \\ i`` is built as a fresh array copy with row ``i`` deleted, and
    indicator differences are taken class by class. Probe rows are scored
    alongside the dataset points and reported under negative ids ``-1, -2, ...``.
    """
    if not rule.deterministic:
        raise ConfigurationError("the oracle needs a deterministic rule", key="kind")
    m = len(dataset)
    if m > max_size:
        raise OracleSizeError(f"dataset has {m} points; the oracle handles at most {max_size}")
    if m < 2:
        raise OracleSizeError("the oracle needs at least two points")
    pts = np.asarray(dataset.features)
    if probes is not None and len(probes):
        pts = np.vstack([pts, np.asarray(probes, dtype=np.float64)])
    k = dataset.num_classes
    base = train(rule, Dataset(dataset.features, dataset.labels, k, dataset.point_ids))
    base_label = base.predict(pts)
    luf = [0.0] * len(pts)
    resp: list[int | None] = [None] * len(pts)
    ids = list(dataset.point_ids)
    for i in range(m):
        reduced = Dataset(
            np.delete(dataset.features, i, axis=0),
            np.delete(dataset.labels, i),
            k,
            np.delete(dataset.point_ids, i),
        )
        label_i = train(rule, reduced).predict(pts)
        for j in range(len(pts)):
            for c in range(k):
                diff = abs(float(base_label[j] == c) - float(label_i[j] == c))
                if diff > luf[j]:
                    luf[j] = diff
                    resp[j] = int(ids[i])
    points = [LufEstimate(int(ids[j]), luf[j], resp[j], m) for j in range(m)]
    probe_est = [LufEstimate(-(j - m + 1), luf[j], resp[j], m) for j in range(m, len(pts))]
    return OracleResult(points, probe_est)


@dataclass
class Prop2Verdict:
    loo_stability_rate: float
    max_luf: float
    holds: bool


def prop2_check(rule: LearningRule, dataset: Dataset, split_plan: SplitPlan | None = None) -> Prop2Verdict:
    """Check that the exact LOO-stability rate is at most the largest LUF over training points."""
    if split_plan is not None:
        dataset = dataset.view(split_plan.train_ids).materialize()
    oracle = luf_oracle(rule, dataset)
    max_luf = max(p.luf_value for p in oracle.points)
    rate = loo_stability(rule, dataset, full_plan(dataset)).loo_stability_rate
    return Prop2Verdict(rate, max_luf, rate <= max_luf)


# ---------------------------------------------------------------------------
# other sources of instability


def seed_instability(
    rule: LearningRule,
    dataset: Dataset,
    split_plan: SplitPlan,
    seeds: Sequence[int],
    eval_ids=None,
    *,
    train_many: TrainMany | None = None,
) -> LufReport:
    """Flips relative to the first seed's model; the responsible tag is the seed."""
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ConfigurationError("need at least two seeds", key="seeds")
    view = train_view(dataset, split_plan)
    tasks = [TrainTask(s, rule.with_seed(s), view) for s in seeds]
    models = _run(tasks, train_many)
    return _compare_models(dataset, split_plan, eval_ids, models, seeds, _metadata(
        rule, split_plan, kind="seed-instability", seeds=seeds
    ))


def architecture_instability(
    rules: Sequence[LearningRule],
    dataset: Dataset,
    split_plan: SplitPlan,
    eval_ids=None,
    *,
    train_many: TrainMany | None = None,
) -> LufReport:
    """Flips relative to the first rule's model; all rules share the first rule's seed."""
    if len(rules) < 2:
        raise ConfigurationError("need at least two rules", key="rules")
    seed = rules[0].seed
    view = train_view(dataset, split_plan)
    tasks = [TrainTask(j, r.with_seed(seed), view) for j, r in enumerate(rules)]
    models = _run(tasks, train_many)
    if len({m.num_classes for m in models}) != 1:
        raise ConfigurationError("rules disagree on the number of classes", key="rules")
    meta = {
        "kind": "arch-instability",
        "rules": [r.with_seed(seed).to_dict() for r in rules],
        "split": split_plan.to_dict(),
    }
    return _compare_models(dataset, split_plan, eval_ids, models, list(range(len(rules))), meta)


def _compare_models(dataset, plan, eval_ids, models, tags, meta) -> LufReport:
    ids = _eval_ids(dataset, plan, eval_ids)
    x = dataset.features[dataset.positions(ids)]
    base_probs = models[0].predict_proba(x)
    variants = [(t, _onehot_argmax(m.predict_proba(x))) for t, m in zip(tags[1:], models[1:])]
    return _reduce(ids, base_probs, _onehot_argmax(base_probs), variants, meta)
