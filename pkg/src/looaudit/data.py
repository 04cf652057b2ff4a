"""Datasets, CSV preprocessing, splits, leave-one-out views, synthetic generators."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError
from .rng import STREAM_SAMPLE, STREAM_SPLIT, Rng

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "NA", "NaN", "nan"})


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class Dataset:
    """Immutable feature matrix, integer labels, and stable point ids."""

    def __init__(self, features, labels, num_classes: int | None = None, point_ids=None):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(labels)
        if y.dtype.kind not in "iub":
            if not np.all(np.mod(y, 1) == 0):
                raise ConfigurationError("labels must be integer class ids", key="labels")
        y = y.astype(np.int64)
        n = x.shape[0]
        if n < 1:
            raise ConfigurationError("dataset must contain at least one point", key="n")
        if y.shape != (n,):
            raise ConfigurationError(f"labels have shape {y.shape}, expected ({n},)", key="labels")
        k = int(num_classes) if num_classes is not None else int(y.max()) + 1
        if k < 1 or y.min() < 0 or y.max() >= k:
            raise ConfigurationError(f"labels must lie in [0, {k})", key="labels")
        ids = np.arange(n, dtype=np.int64) if point_ids is None else np.asarray(point_ids, np.int64)
        if ids.shape != (n,) or len(np.unique(ids)) != n:
            raise ConfigurationError("point_ids must be unique, one per row", key="point_ids")
        self.features = _frozen(x)
        self.labels = _frozen(y)
        self.num_classes = k
        self.point_ids = _frozen(ids)
        self._pos = {int(i): p for p, i in enumerate(ids)}

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def positions(self, ids: Iterable[int]) -> np.ndarray:
        try:
            return np.array([self._pos[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ConfigurationError(f"unknown point id {exc.args[0]}", key="point_ids") from None

    def view(self, ids: Iterable[int] | None = None) -> DatasetView:
        """Index-mask view over ``ids`` (default: every row, in row order)."""
        pos = np.arange(len(self)) if ids is None else self.positions(ids)
        return DatasetView(self, pos)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        h.update(self.point_ids.astype("<i8").tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, d={self.num_features}, num_classes={self.num_classes})"


class DatasetView:
    """Rows of a parent dataset selected by position; no data is copied until read."""

    def __init__(self, parent: Dataset, positions: np.ndarray):
        self.parent = parent
        self.positions = _frozen(np.asarray(positions, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def features(self) -> np.ndarray:
        return self.parent.features[self.positions]

    @property
    def labels(self) -> np.ndarray:
        return self.parent.labels[self.positions]

    @property
    def point_ids(self) -> np.ndarray:
        return self.parent.point_ids[self.positions]

    @property
    def num_classes(self) -> int:
        return self.parent.num_classes

    @property
    def num_features(self) -> int:
        return self.parent.num_features

    def digest(self) -> str:
        h = hashlib.sha256(self.parent.digest().encode())
        h.update(self.positions.astype("<i8").tobytes())
        return h.hexdigest()

    def materialize(self) -> Dataset:
        return Dataset(self.features, self.labels, self.num_classes, self.point_ids)


# ---------------------------------------------------------------------------
# preprocessing


DIRECTIVES = ("one-hot", "standardize", "min-max", "passthrough", "drop")


@dataclass
class PreprocessSpec:
    """Per-column directives plus the statistics fitted on the training rows.

    Columns without a directive are passed through when numeric and one-hot
    encoded otherwise. ``unknown_category`` is ``"zeros"`` (warn, encode as an
    all-zero block) or ``"error"``.
    """

    directives: dict[str, str] = field(default_factory=dict)
    unknown_category: str = "zeros"
    drop_missing: bool = True
    stats: dict[str, dict] = field(default_factory=dict)
    feature_names: list[str] = field(default_factory=list)
    label_vocabulary: list[str] = field(default_factory=list)

    def __post_init__(self):
        for col, d in self.directives.items():
            if d not in DIRECTIVES:
                raise ConfigurationError(f"unknown directive {d!r} for column {col!r}", key="preprocess")
        if self.unknown_category not in ("zeros", "error"):
            raise ConfigurationError("unknown_category must be 'zeros' or 'error'", key="unknown_category")

    @property
    def fitted(self) -> bool:
        return bool(self.stats)

    def to_json(self) -> str:
        """Canonical serialization of the fitted state."""
        return json.dumps(
            {
                "directives": self.directives,
                "unknown_category": self.unknown_category,
                "drop_missing": self.drop_missing,
                "stats": self.stats,
                "feature_names": self.feature_names,
                "label_vocabulary": self.label_vocabulary,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _sort_vocab(values: Iterable[str]) -> list[str]:
    vals = sorted(set(values))
    if all(_is_number(v) for v in vals):
        return sorted(vals, key=lambda v: (float(v), v))
    return vals


def read_csv_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Header and raw string rows; comma-separated UTF-8 with a header row."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=",")
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"empty file: {path}") from None
        rows = []
        for r, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"expected {len(header)} cells, got {len(row)}", row=r)
            rows.append([c.strip() for c in row])
    if len(set(header)) != len(header):
        raise IngestionError("duplicate column names in header")
    return header, rows


def load_csv(
    path: str | Path,
    preprocess_spec: PreprocessSpec | None,
    label_column: str,
    fit_rows: Sequence[int] | None = None,
) -> tuple[Dataset, PreprocessSpec]:
    """Read a CSV file into a numeric :class:`Dataset`.

    Statistics are fitted on ``fit_rows`` (data-row indices, default all rows)
    and applied unchanged to every row. ``point_ids`` are the data-row indices
    of the file, so they stay stable when rows with missing cells are dropped.
    """
    spec = PreprocessSpec() if preprocess_spec is None else preprocess_spec
    header, rows = read_csv_table(path)
    if label_column not in header:
        raise IngestionError(f"label column {label_column!r} not in header", column=label_column)
    for col in spec.directives:
        if col not in header:
            raise IngestionError("directive names a missing column", column=col)

    keep = []
    for r, row in enumerate(rows):
        if any(c in MISSING_TOKENS for c in row):
            if spec.drop_missing:
                continue
            bad = next(header[j] for j, c in enumerate(row) if c in MISSING_TOKENS)
            raise IngestionError("missing value", row=r, column=bad)
        keep.append(r)
    if not keep:
        raise IngestionError("no complete rows")
    if fit_rows is None:
        fit = keep
    else:
        kept = set(keep)
        fit = [r for r in fit_rows if r in kept]
    if not fit:
        raise IngestionError("no rows to fit preprocessing statistics on")

    li = header.index(label_column)
    if not spec.fitted:
        spec = _fit(spec, header, rows, fit, li, keep)
    columns, names = [], []
    for j, col in enumerate(header):
        if j == li:
            continue
        block, block_names = _transform_column(spec, col, [rows[r][j] for r in keep], keep)
        if block is not None:
            columns.append(block)
            names.extend(block_names)
    x = np.hstack(columns) if columns else np.zeros((len(keep), 0))
    vocab = spec.label_vocabulary
    index = {v: i for i, v in enumerate(vocab)}
    y = []
    for r in keep:
        v = rows[r][li]
        if v not in index:
            raise IngestionError(f"label {v!r} unseen while fitting", row=r, column=label_column)
        y.append(index[v])
    spec.feature_names = names
    return Dataset(x, np.array(y, dtype=np.int64), len(vocab), np.array(keep)), spec


def _directive(spec: PreprocessSpec, col: str, sample: Sequence[str]) -> str:
    if col in spec.directives:
        return spec.directives[col]
    return "passthrough" if all(_is_number(v) for v in sample) else "one-hot"


def _fit(spec, header, rows, fit, li, keep) -> PreprocessSpec:
    stats: dict[str, dict] = {}
    for j, col in enumerate(header):
        if j == li:
            continue
        values = [rows[r][j] for r in fit]
        d = _directive(spec, col, values)
        if d == "one-hot":
            stats[col] = {"directive": d, "vocabulary": _sort_vocab(values)}
            continue
        if d == "drop":
            stats[col] = {"directive": d}
            continue
        nums = _parse_numbers(values, [fit[i] for i in range(len(values))], col)
        if d == "standardize":
            mean = float(np.mean(nums))
            std = float(np.std(nums))
            stats[col] = {"directive": d, "mean": mean, "std": std if std > 0 else 1.0}
        elif d == "min-max":
            lo, hi = float(np.min(nums)), float(np.max(nums))
            stats[col] = {"directive": d, "min": lo, "max": hi}
        else:
            stats[col] = {"directive": d}
    # the label encoding is not a fitted statistic: cover every complete row
    labels = _sort_vocab(rows[r][li] for r in keep)
    return PreprocessSpec(
        directives=dict(spec.directives),
        unknown_category=spec.unknown_category,
        drop_missing=spec.drop_missing,
        stats=stats,
        label_vocabulary=labels,
    )


def _parse_numbers(values, row_ids, col) -> np.ndarray:
    out = np.empty(len(values))
    for i, (v, r) in enumerate(zip(values, row_ids)):
        try:
            out[i] = float(v)
        except ValueError:
            raise IngestionError(f"unparseable number {v!r}", row=r, column=col) from None
        if not math.isfinite(out[i]):
            raise IngestionError(f"non-finite number {v!r}", row=r, column=col)
    return out


def _transform_column(spec, col, values, row_ids):
    st = spec.stats[col]
    d = st["directive"]
    if d == "drop":
        return None, []
    if d == "one-hot":
        vocab = st["vocabulary"]
        index = {v: i for i, v in enumerate(vocab)}
        block = np.zeros((len(values), len(vocab)))
        for i, (v, r) in enumerate(zip(values, row_ids)):
            if v in index:
                block[i, index[v]] = 1.0
            elif spec.unknown_category == "error":
                raise IngestionError(f"unseen category {v!r}", row=r, column=col)
            else:
                log.warning("unseen category %r in column %r (row %d); encoded as zeros", v, col, r)
        return block, [f"{col}={v}" for v in vocab]
    nums = _parse_numbers(values, row_ids, col)
    if d == "standardize":
        nums = (nums - st["mean"]) / st["std"]
    elif d == "min-max":
        span = st["max"] - st["min"]
        nums = (nums - st["min"]) / span if span > 0 else np.zeros_like(nums)
    return nums[:, None], [col]


# ---------------------------------------------------------------------------
# splits and leave-one-out views


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/test ids with the leave-out set ``O`` inside train.

    ``leave_out_source`` records where ``O`` was drawn from: ``"train"`` draws
    it from the training ids; ``"heldout"`` draws it from the non-training
    pool and adds it to the training set, so ``O`` is still part of ``S``.
    """

    train_ids: tuple[int, ...]
    leave_out_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    seed: int
    leave_out_source: str = "train"

    def __post_init__(self):
        train = set(self.train_ids)
        if not set(self.leave_out_ids) <= train:
            raise ConfigurationError("leave-out ids must be training ids", key="leave_out_ids")
        if train & set(self.test_ids):
            raise ConfigurationError("train and test ids overlap", key="test_ids")
        if len(set(self.leave_out_ids)) != len(self.leave_out_ids):
            raise ConfigurationError("duplicate leave-out ids", key="leave_out_ids")

    def to_dict(self) -> dict:
        return {
            "train_ids": list(self.train_ids),
            "leave_out_ids": list(self.leave_out_ids),
            "test_ids": list(self.test_ids),
            "seed": self.seed,
            "leave_out_source": self.leave_out_source,
        }


def split_ids(
    ids: Sequence[int],
    train_fraction: float,
    o_size: int,
    seed: int,
    leave_out_source: str = "train",
) -> SplitPlan:
    """Seeded split of an id list; see :func:`make_split`."""
    ids = np.sort(np.asarray(list(ids), dtype=np.int64))
    n = len(ids)
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must lie in (0, 1)", key="train_fraction")
    if o_size < 0:
        raise ConfigurationError("o_size must be non-negative", key="o_size")
    if leave_out_source not in ("train", "heldout"):
        raise ConfigurationError("leave_out_source must be 'train' or 'heldout'", key="leave_out_source")
    n_train = int(round(train_fraction * n))
    rng = Rng(seed, STREAM_SPLIT)
    shuffled = ids[rng.permutation(n)]
    train, rest = shuffled[:n_train], shuffled[n_train:]
    if leave_out_source == "train":
        if o_size > len(train):
            raise ConfigurationError(
                f"o_size={o_size} exceeds the {len(train)} training points", key="o_size"
            )
        leave_out = train[rng.permutation(len(train))[:o_size]]
        test = rest
    else:
        if o_size > len(rest):
            raise ConfigurationError(
                f"o_size={o_size} exceeds the {len(rest)} held-out points", key="o_size"
            )
        leave_out = rest[:o_size]
        train = np.concatenate([train, leave_out])
        test = rest[o_size:]
    return SplitPlan(
        tuple(int(i) for i in np.sort(train)),
        tuple(int(i) for i in leave_out),
        tuple(int(i) for i in np.sort(test)),
        int(seed),
        leave_out_source,
    )


def make_split(
    dataset: Dataset,
    train_fraction: float,
    o_size: int,
    seed: int,
    leave_out_source: str = "train",
) -> SplitPlan:
    """Shuffle ids with ``seed``, cut off the training fraction, draw ``O``."""
    return split_ids(dataset.point_ids, train_fraction, o_size, seed, leave_out_source)


def full_plan(dataset: Dataset) -> SplitPlan:
    """Train on everything and leave each point out in turn (``O = S``)."""
    ids = tuple(int(i) for i in dataset.point_ids)
    return SplitPlan(ids, ids, (), 0, "train")


def train_view(dataset: Dataset, plan: SplitPlan) -> DatasetView:
    return dataset.view(plan.train_ids)


def leave_one_out(dataset: Dataset, plan: SplitPlan, removed_id: int) -> DatasetView:
    """Training view with ``removed_id`` masked out; row order is unchanged."""
    removed_id = int(removed_id)
    if removed_id not in plan.leave_out_ids:
        raise ConfigurationError(f"id {removed_id} is not in the leave-out set", key="removed_id")
    return dataset.view([i for i in plan.train_ids if i != removed_id])


# ---------------------------------------------------------------------------
# synthetic data


SYNTHETIC_KINDS = ("uniform-bernoulli-square", "two-circles", "gaussian-blobs")


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters.

    ``two-circles`` puts class 0 in a disc of diameter ``d`` at the origin and
    class 1 in a disc of diameter ``d`` centered ``3d`` away on the x axis;
    labels alternate 0, 1, 0, ... so both classes get ``n // 2`` or more points.
    ``gaussian-blobs`` cycles through ``means`` with isotropic ``std``.
    """

    kind: str
    n: int = 100
    seed: int = 0
    p: float = 0.5
    d: float = 1.0
    means: tuple[tuple[float, ...], ...] = ((-2.0, 0.0), (2.0, 0.0))
    std: float = 0.5

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ConfigurationError(f"unknown synthetic kind {self.kind!r}", key="kind")
        if self.n <= 0:
            raise ConfigurationError("n must be positive", key="n")
        if self.kind == "two-circles" and not self.d > 0:
            raise ConfigurationError("d must be positive", key="d")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError("p must lie in [0, 1]", key="p")
        if self.kind == "gaussian-blobs" and not self.std > 0:
            raise ConfigurationError("std must be positive", key="std")


def circle_centers(d: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [3.0 * d, 0.0]])


def sample_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = Rng(spec.seed, STREAM_SAMPLE)
    n = spec.n
    if spec.kind == "uniform-bernoulli-square":
        x = rng.uniform((n, 2))
        y = rng.bernoulli(spec.p, n)
        return Dataset(x, y, 2)
    if spec.kind == "two-circles":
        y = np.arange(n, dtype=np.int64) % 2
        u = rng.uniform((n, 2))
        # u < 1 always, so every radius is strictly below d/2
        r = 0.5 * spec.d * np.sqrt(u[:, 0])
        theta = 2.0 * math.pi * u[:, 1]
        x = circle_centers(spec.d)[y] + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        return Dataset(x, y, 2)
    means = np.asarray(spec.means, dtype=np.float64)
    k = len(means)
    y = np.arange(n, dtype=np.int64) % k
    x = means[y] + spec.std * rng.normal((n, means.shape[1]))
    return Dataset(x, y, k)
