"""Run an audit from a config: schedule trainings, cache models, write artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import AuditConfig
from .data import Dataset, load_csv, make_split, read_csv_table, sample_synthetic, split_ids
from .errors import AuditError
from .kernels import BACKEND
from .metrics import (
    LufReport,
    TrainTask,
    architecture_instability,
    audit_deterministic,
    audit_randomized,
    loo_stability,
    seed_instability,
    variant_tasks,
)
from .models import FORMAT_VERSION, Model, model_from_bytes
from .render import emit_plots, probability_rgb, diverging_rgb, write_ppm
from .rules import MLP_KINDS, adversarial_radius, train
from .scenarios import SCENARIOS, ScenarioResult, run_figure1_scenario

log = logging.getLogger(__name__)


def _task_key(task: TrainTask) -> str:
    h = hashlib.sha256()
    h.update(f"looa-v{FORMAT_VERSION}|".encode())
    h.update(task.rule.digest().encode())
    h.update(task.view.digest().encode())
    h.update(f"|seed={task.rule.seed}|trial={task.trial}".encode())
    return h.hexdigest()


def _train_one(task: TrainTask):
    start = time.perf_counter()
    try:
        model = train(task.rule, task.view, trial=task.trial)
    except Exception as exc:  # reported per variant by the caller
        return None, f"{type(exc).__name__}: {exc}", time.perf_counter() - start
    return model.to_bytes(), None, time.perf_counter() - start


class ModelCache:
    """Append-only directory of serialized models keyed by task hash.

    Each entry is ``<key>.looa`` plus ``<key>.sha256``; an entry whose bytes
    do not match the recorded digest is treated as missing.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _paths(self, key: str):
        return self.root / f"{key}.looa", self.root / f"{key}.sha256"

    def get(self, key: str) -> bytes | None:
        blob_p, dig_p = self._paths(key)
        try:
            blob = blob_p.read_bytes()
            digest = dig_p.read_text().strip()
        except OSError:
            return None
        if hashlib.sha256(blob).hexdigest() != digest:
            log.warning("cache entry %s is corrupt; retraining", key[:12])
            return None
        return blob

    def put(self, key: str, blob: bytes) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        blob_p, dig_p = self._paths(key)
        for path, data in ((blob_p, blob), (dig_p, hashlib.sha256(blob).hexdigest().encode())):
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)


@dataclass
class VariantRecord:
    tag: object
    key: str
    model_digest: str | None
    seconds: float
    status: str
    cached: bool
    trial: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "trial": self.trial,
            "key": self.key,
            "model_digest": self.model_digest,
            "seconds": round(self.seconds, 6),
            "status": self.status,
            "cached": self.cached,
            "error": self.error,
        }


class Trainer:
    """Runs training tasks over a worker pool, reusing cached models.

    Results come back in task order whatever the completion order, so every
    reduction downstream sees the same sequence of models.
    """

    def __init__(self, parallelism: int = 1, cache: ModelCache | None = None):
        self.parallelism = max(1, int(parallelism))
        self.cache = cache
        self.records: list[VariantRecord] = []

    def _cacheable(self, task: TrainTask) -> bool:
        return self.cache is not None and task.rule.kind in MLP_KINDS

    def __call__(self, tasks: Sequence[TrainTask]) -> list[Model]:
        tasks = list(tasks)
        keys = [_task_key(t) for t in tasks]
        blobs: list[bytes | None] = [None] * len(tasks)
        pending = []
        for j, (t, k) in enumerate(zip(tasks, keys)):
            blob = self.cache.get(k) if self._cacheable(t) else None
            if blob is None:
                pending.append(j)
            else:
                blobs[j] = blob
                self.records.append(VariantRecord(t.tag, k, hashlib.sha256(blob).hexdigest(), 0.0, "ok", True, t.trial))
        results = self._execute([tasks[j] for j in pending])
        failed = []
        for j, (blob, err, secs) in zip(pending, results):
            t = tasks[j]
            if blob is None:
                failed.append(t.tag)
                self.records.append(VariantRecord(t.tag, keys[j], None, secs, "failed", False, t.trial, err))
                continue
            blobs[j] = blob
            if self._cacheable(t):
                self.cache.put(keys[j], blob)
            self.records.append(
                VariantRecord(t.tag, keys[j], hashlib.sha256(blob).hexdigest(), secs, "ok", False, t.trial)
            )
        if failed:
            first = next((f for f in failed if f != "baseline"), None)
            raise AuditError(f"{len(failed)} training task(s) failed: {failed}", first)
        return [model_from_bytes(b) for b in blobs]

    def _execute(self, tasks: list[TrainTask]):
        if not tasks:
            return []
        if self.parallelism == 1 or len(tasks) == 1:
            return [_train_one(t) for t in tasks]
        with ProcessPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(_train_one, tasks, chunksize=max(1, len(tasks) // (4 * self.parallelism))))


@dataclass
class RunManifest:
    config_hash: str
    toolkit_version: str
    backend: str
    mode: str
    variants: list[VariantRecord] = field(default_factory=list)
    status: str = "ok"
    failed: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def retrained(self) -> int:
        return sum(1 for v in self.variants if not v.cached and v.status == "ok")

    @property
    def cache_hits(self) -> int:
        return sum(1 for v in self.variants if v.cached)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "toolkit_version": self.toolkit_version,
            "backend": self.backend,
            "mode": self.mode,
            "status": self.status,
            "failed": self.failed,
            "retrained": self.retrained,
            "cache_hits": self.cache_hits,
            "seconds": round(self.seconds, 6),
            "variants": self._variant_entries(),
        }

    def _variant_entries(self) -> list[dict]:
        """One entry per training, or per tag when tags repeat across trials."""
        tags = [v.tag for v in self.variants]
        if len(set(map(repr, tags))) == len(tags):
            return [v.to_dict() for v in self.variants]
        groups: dict[str, list[VariantRecord]] = {}
        for v in self.variants:
            groups.setdefault(repr(v.tag), []).append(v)
        out = []
        for recs in groups.values():
            recs = sorted(recs, key=lambda r: r.trial)
            h = hashlib.sha256()
            for r in recs:
                h.update((r.model_digest or "-").encode())
            bad = [r for r in recs if r.status != "ok"]
            out.append({
                "tag": recs[0].tag,
                "trials": len(recs),
                "model_digest": h.hexdigest(),
                "seconds": round(sum(r.seconds for r in recs), 6),
                "status": "failed" if bad else "ok",
                "cached": sum(r.cached for r in recs),
                "error": bad[0].error if bad else None,
            })
        return out


# ---------------------------------------------------------------------------
# dataset assembly


def build_dataset(cfg: AuditConfig):
    """Return ``(dataset, split_plan, preprocess_digest)``.

    CSV preprocessing statistics are fitted once on the training ids and
    shared by every leave-one-out variant.
    """
    sp = cfg.split
    if cfg.dataset["source"] == "synthetic":
        ds = sample_synthetic(cfg.synthetic_spec())
        plan = make_split(ds, sp["train_fraction"], sp["o_size"], sp["seed"], sp["leave_out_source"])
        return ds, plan, None
    path = cfg.dataset["path"]
    _, rows = read_csv_table(path)
    first, _ = load_csv(path, cfg.preprocess_spec(), cfg.dataset["label_column"])
    plan = split_ids(first.point_ids, sp["train_fraction"], sp["o_size"], sp["seed"], sp["leave_out_source"])
    ds, spec = load_csv(path, cfg.preprocess_spec(), cfg.dataset["label_column"], fit_rows=plan.train_ids)
    return ds, plan, spec.digest()


def _resolve_rules(cfg: AuditConfig, ds: Dataset, plan) -> list:
    rules = []
    for rule, auto in zip(cfg.rules, cfg.auto_radius or [False] * len(cfg.rules)):
        if auto:
            view = ds.view(plan.train_ids)
            r = adversarial_radius(view.features, view.labels, rule.adv_norm, seed=rule.seed)
            rule = replace(rule, adv_radius=r)
        if cfg.mode == "smooth-audit":
            rule = replace(rule, smoothing=cfg.smoothing)
        rules.append(rule)
    return rules


# ---------------------------------------------------------------------------
# artifact writers


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_report_files(report: LufReport, out: Path, extra: dict | None = None) -> list[Path]:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    paths = [out / "report.json", out / "per_point.csv", out / "flip_histogram.csv", out / "confidence_curve.csv"]
    _write(paths[0], json.dumps(doc, sort_keys=True, indent=2) + "\n")
    _write(paths[1], _csv_text(
        ["point_id", "confidence", "luf_value", "responsible_removed_id"],
        [[p.point_id, repr(r.confidence), repr(p.luf_value),
          "" if p.responsible_removed_id is None else p.responsible_removed_id]
         for p, r in zip(report.points, report.records)],
    ))
    _write(paths[2], _csv_text(
        ["removed_id", "fraction"], [[k, repr(v)] for k, v in report.flip_fractions.items()]
    ) + "\n" + _csv_text(
        ["bin_lower", "bin_upper", "count"],
        [[repr(b["lower"]), repr(b["upper"]), b["count"]] for b in report.flip_histogram],
    ))
    _write(paths[3], _csv_text(
        ["threshold", "expected_luf", "num_points"],
        [[repr(c), repr(v), n] for c, v, n in report.confidence_curve],
    ))
    return paths + emit_plots(report, out)


def write_rasters(result: ScenarioResult, out: Path) -> list[Path]:
    paths = []
    for name, arr in result.rasters.items():
        rgb = diverging_rgb(arr) if name == "difference" else probability_rgb(arr)
        paths.append(write_ppm(out / f"{name}.ppm", rgb))
    return paths


def run_scenario(name: str, params: dict | None = None) -> ScenarioResult:
    params = dict(params or {})
    params.pop("name", None)
    if name not in SCENARIOS:
        raise KeyError(name)
    return SCENARIOS[name](**params)


# ---------------------------------------------------------------------------
# orchestration


def run_audit(
    cfg: AuditConfig,
    out_dir: str | Path | None = None,
    *,
    parallelism: int | None = None,
    cache_dir: str | Path | None = None,
    use_cache: bool = True,
) -> tuple[RunManifest, bool]:
    """Execute ``cfg`` and write all artifacts. Returns ``(manifest, passed)``.

    ``passed`` is False when a scenario claim fails. Training failures leave a
    partial manifest with the failed ids on disk and re-raise.
    """
    t0 = time.perf_counter()
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = None
    if use_cache:
        cache = ModelCache(cache_dir if cache_dir is not None else out / "cache")
    trainer = Trainer(parallelism or cfg.parallelism, cache)
    manifest = RunManifest(cfg.config_hash(), __version__, BACKEND, cfg.mode)
    passed = True
    try:
        passed = _dispatch(cfg, out, trainer)
    except AuditError as exc:
        manifest.status = "failed"
        manifest.failed = [v.tag for v in trainer.records if v.status == "failed"]
        log.error("audit failed: %s", exc)
        raise
    finally:
        manifest.variants = trainer.records
        manifest.seconds = time.perf_counter() - t0
        _write(out / "manifest.json", json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n")
    return manifest, passed


def _dispatch(cfg: AuditConfig, out: Path, trainer: Trainer) -> bool:
    if cfg.mode == "scenario":
        result = run_scenario(cfg.scenario["name"], cfg.scenario)
        _write(out / "report.json", result.to_json())
        write_rasters(result, out)
        return result.passed

    ds, plan, pre_digest = build_dataset(cfg)
    rules = _resolve_rules(cfg, ds, plan)
    rule = rules[0]
    eval_ids = "test" if cfg.eval == "test" else None
    extra = {"config_hash": cfg.config_hash(), "preprocess_digest": pre_digest}

    if cfg.mode in ("luf", "smooth-audit"):
        report = audit_deterministic(rule, ds, plan, eval_ids, train_many=trainer)
    elif cfg.mode == "luf-randomized":
        report = audit_randomized(rule, ds, plan, eval_ids, cfg.trials, train_many=trainer)
    elif cfg.mode == "seed-instability":
        report = seed_instability(rule, ds, plan, cfg.seeds, eval_ids, train_many=trainer)
    elif cfg.mode == "arch-instability":
        report = architecture_instability(rules, ds, plan, eval_ids, train_many=trainer)
    elif cfg.mode == "stability":
        models = trainer(variant_tasks(rule, ds, plan))
        est = loo_stability(rule, ds, plan, models=models)
        report = audit_deterministic(rule, ds, plan, eval_ids, models=models) if rule.deterministic else None
        doc = {"stability": est.to_dict(), **extra}
        if report is not None:
            doc["luf"] = report.to_dict()
        _write(out / "report.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
        return True
    elif cfg.mode == "boundary":
        return _boundary(cfg, ds, plan, rule, out, extra, trainer)
    else:  # pragma: no cover - validated earlier
        raise AuditError(f"unhandled mode {cfg.mode}")
    write_report_files(report, out, extra)
    return True


def _boundary(cfg, ds, plan, rule, out: Path, extra: dict, trainer: Trainer) -> bool:
    if ds.num_features != 2:
        raise AuditError("boundary mode needs 2-feature data")
    train_ds = ds.view(plan.train_ids).materialize()
    removed = cfg.boundary.get("removed_id")
    if removed is None:
        if not plan.leave_out_ids:
            raise AuditError("boundary mode needs a nonempty leave-out set or boundary.removed_id")
        removed = plan.leave_out_ids[0]
    x = train_ds.features
    pad = 0.05 * (x.max(axis=0) - x.min(axis=0) + 1e-12)
    bounds = (x[:, 0].min() - pad[0], x[:, 0].max() + pad[0], x[:, 1].min() - pad[1], x[:, 1].max() + pad[1])
    result = run_figure1_scenario(
        grid_resolution=int(cfg.boundary["grid_resolution"]), rule=rule, dataset=train_ds,
        removed_id=int(removed), bounds=tuple(float(b) for b in bounds), train_many=trainer,
    )
    doc = result.to_dict()
    doc.update(extra)
    _write(out / "report.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
    write_rasters(result, out)
    return True
