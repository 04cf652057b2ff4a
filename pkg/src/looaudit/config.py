"""Audit configuration files (TOML): parsing, defaults, validation, hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import (
    DIRECTIVES,
    SYNTHETIC_KINDS,
    PreprocessSpec,
    SyntheticSpec,
    read_csv_table,
)
from .errors import ConfigurationError, IngestionError
from .models import SmoothingConfig
from .rules import RULE_KINDS, LearningRule

MODES = (
    "luf",
    "luf-randomized",
    "stability",
    "seed-instability",
    "arch-instability",
    "scenario",
    "boundary",
    "smooth-audit",
)

# Hyperparameters of the tabular experiments, usable via ``rule.preset``.
PRESETS: dict[str, dict] = {
    "german-credit": {
        "hidden": [128, 64, 16], "epochs": 100, "batch_size": 32, "learning_rate": 1e-3,
        "adv_norm": "linf", "adv_radius": 1.0, "adv_steps": 10, "trades_beta": 1.0,
        "adversarial_batch_size": 4,
        "smoothing": {"sigma_squared": 0.05, "num_samples": 2000},
    },
    "adult": {
        "hidden": [200], "epochs": 50, "batch_size": 128, "learning_rate": 1e-3,
        "adv_norm": "l2", "adv_radius": 1.0, "adv_steps": 10, "trades_beta": 1.0,
        "adversarial_batch_size": 32,
        "smoothing": {"sigma_squared": 0.1, "num_samples": 1000},
    },
    "seizure": {
        "hidden": [128, 32, 16], "epochs": 100, "batch_size": 128, "learning_rate": 1e-3,
        "adv_norm": "l2", "adv_radius": 3.0, "adv_steps": 10, "trades_beta": 10.0,
        "adversarial_batch_size": 128,
        "smoothing": {"sigma_squared": 0.1, "num_samples": 1000},
    },
}

TOP_KEYS = {
    "mode", "trials", "eval", "seeds", "parallelism", "output_dir",
    "dataset", "split", "rule", "rules", "smoothing", "scenario", "boundary",
}
DATASET_KEYS = {
    "source", "kind", "n", "seed", "p", "d", "means", "std",
    "path", "label_column", "unknown_category", "drop_missing", "preprocess",
}
SPLIT_KEYS = {"train_fraction", "o_size", "seed", "leave_out_source"}
RULE_KEYS = {
    "kind", "preset", "hidden", "epochs", "batch_size", "optimizer", "learning_rate",
    "adv_norm", "adv_radius", "adv_steps", "adv_step_size", "trades_beta", "k",
    "dp_epsilon", "constant_class", "seed",
}
SMOOTHING_KEYS = {"sigma_squared", "num_samples", "noise_seed", "pairing"}
SCENARIO_KEYS = {
    "name", "d", "n", "grid_resolution", "seed", "epsilon", "trials", "layer_dims", "epochs",
}
BOUNDARY_KEYS = {"grid_resolution", "removed_id"}


@dataclass
class AuditConfig:
    mode: str
    dataset: dict
    split: dict
    rules: list[LearningRule]
    trials: int = 100
    eval: str = "all"
    seeds: list[int] = field(default_factory=list)
    smoothing: SmoothingConfig | None = None
    scenario: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)
    parallelism: int = 1
    output_dir: str = "looaudit-out"
    auto_radius: list[bool] = field(default_factory=list)
    source_path: str | None = None

    @property
    def rule(self) -> LearningRule:
        return self.rules[0]

    def canonical(self) -> dict:
        """Everything that determines results; parallelism and paths are excluded."""
        return {
            "mode": self.mode,
            "dataset": self.dataset,
            "split": self.split,
            "rules": [r.to_dict() for r in self.rules],
            "auto_radius": self.auto_radius,
            "trials": self.trials,
            "eval": self.eval,
            "seeds": self.seeds,
            "smoothing": None if self.smoothing is None else self.smoothing.to_dict(),
            "scenario": self.scenario,
            "boundary": self.boundary,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def synthetic_spec(self) -> SyntheticSpec | None:
        ds = self.dataset
        if ds["source"] != "synthetic":
            return None
        return SyntheticSpec(
            kind=ds["kind"], n=ds["n"], seed=ds["seed"], p=ds["p"], d=ds["d"],
            means=tuple(tuple(m) for m in ds["means"]), std=ds["std"],
        )

    def preprocess_spec(self) -> PreprocessSpec:
        ds = self.dataset
        return PreprocessSpec(
            directives=dict(ds.get("preprocess", {})),
            unknown_category=ds.get("unknown_category", "zeros"),
            drop_missing=ds.get("drop_missing", True),
        )


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    for key in table:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigurationError("unknown key", key=name)


def _typed(table: dict, key: str, types, where: str, default=None):
    if key not in table:
        return default
    value = table[key]
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigurationError(f"expected {types}, got bool", key=f"{where}.{key}")
    if not isinstance(value, types):
        raise ConfigurationError(
            f"expected {getattr(types, '__name__', types)}, got {type(value).__name__}",
            key=f"{where}.{key}",
        )
    return value


def _build_rule(table: dict, where: str) -> tuple[LearningRule, bool]:
    """Rule from a config table; the flag is set when ``adv_radius = "auto"``."""
    _reject_unknown(table, RULE_KEYS, where)
    values: dict = {}
    preset = table.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}", key=f"{where}.preset")
        p = PRESETS[preset]
        values.update({k: v for k, v in p.items() if k in RULE_KEYS})
        if table.get("kind") in ("pgd-adversarial", "trades"):
            values["batch_size"] = p["adversarial_batch_size"]
    values.update({k: v for k, v in table.items() if k != "preset"})
    if "kind" not in values:
        raise ConfigurationError("missing rule kind", key=f"{where}.kind")
    if values["kind"] not in RULE_KINDS:
        raise ConfigurationError(f"unknown rule kind {values['kind']!r}", key=f"{where}.kind")
    auto = values.get("adv_radius") == "auto"
    if auto:
        values["adv_radius"] = 0.0
    try:
        rule = LearningRule(**values)
    except ConfigurationError as exc:
        raise ConfigurationError(str(exc).split(": ", 1)[-1], key=f"{where}.{exc.key}") from None
    except TypeError as exc:
        raise ConfigurationError(str(exc), key=where) from None
    return rule, auto


def _dataset_size(ds: dict, base: Path) -> int:
    if ds["source"] == "synthetic":
        return ds["n"]
    path = Path(ds["path"])
    if not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ConfigurationError(f"file not found: {path}", key="dataset.path")
    try:
        _, rows = read_csv_table(path)
    except IngestionError as exc:
        raise ConfigurationError(str(exc), key="dataset.path") from None
    ds["path"] = str(path)
    return len(rows)


def validate(raw: dict, base_dir: str | Path = ".") -> AuditConfig:
    """Fill defaults and check every key; errors name the offending key."""
    base = Path(base_dir)
    _reject_unknown(raw, TOP_KEYS, "")
    mode = raw.get("mode")
    if mode is None:
        raise ConfigurationError("missing mode", key="mode")
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}", key="mode")

    # scenario mode needs nothing else
    scen = dict(_typed(raw, "scenario", dict, "", {}))
    _reject_unknown(scen, SCENARIO_KEYS, "scenario")
    if mode == "scenario":
        name = scen.get("name")
        if name not in ("prop1", "two-circles", "dp-bound", "figure1"):
            raise ConfigurationError(f"unknown scenario {name!r}", key="scenario.name")

    ds_raw = dict(_typed(raw, "dataset", dict, "", {}))
    _reject_unknown(ds_raw, DATASET_KEYS, "dataset")
    source = ds_raw.get("source", "synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigurationError(f"unknown source {source!r}", key="dataset.source")
    if source == "synthetic":
        ds = {
            "source": "synthetic",
            "kind": _typed(ds_raw, "kind", str, "dataset", "two-circles"),
            "n": _typed(ds_raw, "n", int, "dataset", 100),
            "seed": _typed(ds_raw, "seed", int, "dataset", 0),
            "p": float(_typed(ds_raw, "p", (int, float), "dataset", 0.5)),
            "d": float(_typed(ds_raw, "d", (int, float), "dataset", 1.0)),
            "means": [list(map(float, m)) for m in _typed(ds_raw, "means", list, "dataset", [[-2.0, 0.0], [2.0, 0.0]])],
            "std": float(_typed(ds_raw, "std", (int, float), "dataset", 0.5)),
        }
        if ds["kind"] not in SYNTHETIC_KINDS:
            raise ConfigurationError(f"unknown synthetic kind {ds['kind']!r}", key="dataset.kind")
        for k in ("path", "label_column", "preprocess"):
            if k in ds_raw:
                raise ConfigurationError("only valid for csv sources", key=f"dataset.{k}")
        try:
            SyntheticSpec(ds["kind"], ds["n"], ds["seed"], ds["p"], ds["d"],
                          tuple(tuple(m) for m in ds["means"]), ds["std"])
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc).split(": ", 1)[-1], key=f"dataset.{exc.key}") from None
    else:
        if "path" not in ds_raw:
            raise ConfigurationError("csv source needs a path", key="dataset.path")
        if "label_column" not in ds_raw:
            raise ConfigurationError("csv source needs a label column", key="dataset.label_column")
        pre = dict(_typed(ds_raw, "preprocess", dict, "dataset", {}))
        for col, d in pre.items():
            if d not in DIRECTIVES:
                raise ConfigurationError(f"unknown directive {d!r}", key=f"dataset.preprocess.{col}")
        ds = {
            "source": "csv",
            "path": _typed(ds_raw, "path", str, "dataset"),
            "label_column": _typed(ds_raw, "label_column", str, "dataset"),
            "unknown_category": _typed(ds_raw, "unknown_category", str, "dataset", "zeros"),
            "drop_missing": _typed(ds_raw, "drop_missing", bool, "dataset", True),
            "preprocess": pre,
        }
        if ds["unknown_category"] not in ("zeros", "error"):
            raise ConfigurationError("expected 'zeros' or 'error'", key="dataset.unknown_category")

    sp_raw = dict(_typed(raw, "split", dict, "", {}))
    _reject_unknown(sp_raw, SPLIT_KEYS, "split")
    split = {
        "train_fraction": float(_typed(sp_raw, "train_fraction", (int, float), "split", 0.8)),
        "o_size": _typed(sp_raw, "o_size", int, "split", 10),
        "seed": _typed(sp_raw, "seed", int, "split", 0),
        "leave_out_source": _typed(sp_raw, "leave_out_source", str, "split", "train"),
    }
    if not 0.0 < split["train_fraction"] < 1.0:
        raise ConfigurationError("must lie in (0, 1)", key="split.train_fraction")
    if split["leave_out_source"] not in ("train", "heldout"):
        raise ConfigurationError("expected 'train' or 'heldout'", key="split.leave_out_source")
    if split["o_size"] < 0:
        raise ConfigurationError("must be non-negative", key="split.o_size")
    if mode != "scenario":
        n = _dataset_size(ds, base)
        n_train = int(round(split["train_fraction"] * n))
        room = n_train if split["leave_out_source"] == "train" else n - n_train
        if split["o_size"] > room:
            raise ConfigurationError(
                f"o_size={split['o_size']} exceeds the {room} points available", key="split.o_size"
            )

    rules: list[LearningRule] = []
    auto_radius: list[bool] = []
    tables = [("rule", raw["rule"])] if "rule" in raw else []
    tables += [(f"rules[{j}]", t) for j, t in enumerate(_typed(raw, "rules", list, "", []))]
    for where, table in tables:
        if not isinstance(table, dict):
            raise ConfigurationError("expected a table", key=where)
        rule, auto = _build_rule(dict(table), where)
        rules.append(rule)
        auto_radius.append(auto)
    if mode != "scenario" and not rules:
        raise ConfigurationError("missing rule table", key="rule")
    if mode == "arch-instability" and len(rules) < 2:
        raise ConfigurationError("arch-instability needs at least two [[rules]]", key="rules")

    smoothing = None
    if "smoothing" in raw or mode == "smooth-audit":
        sm = dict(_typed(raw, "smoothing", dict, "", {}))
        _reject_unknown(sm, SMOOTHING_KEYS, "smoothing")
        preset = raw.get("rule", {}).get("preset")
        defaults = PRESETS[preset]["smoothing"] if preset in PRESETS else {}
        try:
            smoothing = SmoothingConfig(
                sigma_squared=float(sm.get("sigma_squared", defaults.get("sigma_squared", 0.1))),
                num_samples=int(sm.get("num_samples", defaults.get("num_samples", 1000))),
                noise_seed=int(sm.get("noise_seed", 0)),
                pairing=sm.get("pairing", "common-random-numbers"),
            )
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc).split(": ", 1)[-1], key=f"smoothing.{exc.key}") from None

    trials = _typed(raw, "trials", int, "", 100)
    if mode == "luf-randomized" and trials < 2:
        raise ConfigurationError("must be at least 2", key="trials")
    seeds = [int(s) for s in _typed(raw, "seeds", list, "", [])]
    if mode == "seed-instability" and len(seeds) < 2:
        raise ConfigurationError("seed-instability needs at least two seeds", key="seeds")
    ev = _typed(raw, "eval", str, "", "all")
    if ev not in ("all", "test"):
        raise ConfigurationError("expected 'all' or 'test'", key="eval")
    bd = dict(_typed(raw, "boundary", dict, "", {}))
    _reject_unknown(bd, BOUNDARY_KEYS, "boundary")
    bd.setdefault("grid_resolution", 200)
    if mode == "boundary" and ds.get("kind") not in (None, "uniform-bernoulli-square", "two-circles", "gaussian-blobs"):
        raise ConfigurationError("boundary mode needs 2-feature data", key="dataset")
    par = _typed(raw, "parallelism", int, "", 1)
    if par < 1:
        raise ConfigurationError("must be at least 1", key="parallelism")
    return AuditConfig(
        mode=mode, dataset=ds, split=split, rules=rules, trials=trials, eval=ev, seeds=seeds,
        smoothing=smoothing, scenario=scen, boundary=bd, parallelism=par, auto_radius=auto_radius,
        output_dir=_typed(raw, "output_dir", str, "", "looaudit-out"),
    )


def parse_config(path: str | Path) -> AuditConfig:
    """Read and validate a TOML config. Syntax errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}", key="config") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        err = ConfigurationError(f"syntax error at line {line}, column {col}: {exc}", key="config")
        err.line, err.column = line, col
        raise err from None
    cfg = validate(raw, path.parent)
    cfg.source_path = str(path)
    return cfg
