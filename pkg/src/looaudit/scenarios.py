"""Self-checking constructions: the three-point table rule, two discs under
1-NN, the noisy-majority DP bound, and far-away boundary flips on random labels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import (
    Dataset,
    SyntheticSpec,
    circle_centers,
    full_plan,
    sample_synthetic,
)
from .errors import ConfigurationError
from .metrics import TrainTask, train_sequential, audit_deterministic, audit_randomized, dp_luf_bound, loo_stability, luf_oracle
from .rng import STREAM_SPLIT, Rng
from .rules import LearningRule, table_dataset, train


@dataclass
class Claim:
    description: str
    expected: float
    observed: float
    tolerance: float = 0.0
    comparison: str = "eq"  # "eq": |expected - observed| <= tol; "le": observed <= expected + tol

    @property
    def passed(self) -> bool:
        if self.comparison == "le":
            return self.observed <= self.expected + self.tolerance
        return abs(self.expected - self.observed) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "expected": self.expected,
            "observed": self.observed,
            "tolerance": self.tolerance,
            "comparison": self.comparison,
            "passed": self.passed,
        }


@dataclass
class ScenarioResult:
    name: str
    claims: list[Claim]
    metadata: dict = field(default_factory=dict)
    rasters: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.claims)

    def to_dict(self) -> dict:
        return {
            "scenario": self.name,
            "passed": self.passed,
            "claims": [c.to_dict() for c in self.claims],
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run_prop1_scenario() -> ScenarioResult:
    """LOO-stable with rate 0, yet every point of the support has LUF 1."""
    ds = table_dataset()
    rule = LearningRule("table-rule")
    plan = full_plan(ds)
    rate = loo_stability(rule, ds, plan).loo_stability_rate
    oracle = luf_oracle(rule, ds)
    report = audit_deterministic(rule, ds, plan)
    claims = [Claim("LOO-stability rate under 0-1 loss", 0.0, rate)]
    for p, name in zip(oracle.points, ("x1", "x2", "x3")):
        claims.append(Claim(f"oracle LUF at {name}", 1.0, p.luf_value))
    claims.append(Claim("expected LUF over the support", 1.0, report.expected_luf))
    meta = {
        "responsible_removed_id": {
            name: p.responsible_removed_id for p, name in zip(oracle.points, ("x1", "x2", "x3"))
        }
    }
    return ScenarioResult("prop1", claims, meta)


def disc_grid(center, d: float, resolution: int) -> np.ndarray:
    """Points of a ``resolution x resolution`` grid over the disc's bounding box
    that lie strictly inside the disc."""
    lin = np.linspace(-d / 2, d / 2, resolution)
    gx, gy = np.meshgrid(lin, lin, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = np.sum(pts * pts, axis=1) < (d / 2) ** 2
    return np.asarray(center) + pts[inside]


def _segment_probes(model, d: float, num: int = 401, offset: float = 1e-9) -> np.ndarray:
    """Probes on the segment between the centers, plus two probes straddling
    the baseline 1-NN boundary (located by bisection)."""
    c0, c1 = circle_centers(d)
    ts = np.linspace(0.0, 1.0, num)
    pts = c0 + ts[:, None] * (c1 - c0)
    labels = model.predict(pts)
    extra = []
    change = np.flatnonzero(labels[1:] != labels[:-1])
    if change.size:
        lo, hi = ts[change[0]], ts[change[0] + 1]
        lab_lo = labels[change[0]]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if model.predict((c0 + mid * (c1 - c0))[None, :])[0] == lab_lo:
                lo = mid
            else:
                hi = mid
        span = float(np.linalg.norm(c1 - c0))
        for t in (lo - offset / span, hi + offset / span):
            extra.append(c0 + t * (c1 - c0))
    # keep only probes outside both discs
    allp = np.vstack([pts] + ([np.array(extra)] if extra else []))
    dist = np.min(np.linalg.norm(allp[:, None, :] - circle_centers(d)[None], axis=2), axis=1)
    return allp[dist >= d / 2]


def run_two_circles_scenario(d: float = 1.0, n: int = 20, grid_resolution: int = 25, seed: int = 0) -> ScenarioResult:
    """1-NN on two discs ``3d`` apart: zero LUF on the support, flips off it."""
    if n < 4:
        raise ConfigurationError("n must be at least 4", key="n")
    ds = sample_synthetic(SyntheticSpec("two-circles", n=n, seed=seed, d=d))
    counts = np.bincount(ds.labels, minlength=2)
    if counts.min() < 2:
        raise ConfigurationError(
            f"sample has class counts {counts.tolist()}; need two per class, try another seed",
            key="seed",
        )
    rule = LearningRule("knn", k=1)
    centers = circle_centers(d)
    grid = np.vstack([disc_grid(c, d, grid_resolution) for c in centers])
    baseline = train(rule, ds)
    seg = _segment_probes(baseline, d)
    oracle = luf_oracle(rule, ds, probes=np.vstack([grid, seg]))
    grid_luf = [p.luf_value for p in oracle.probes[: len(grid)]]
    seg_est = oracle.probes[len(grid) :]
    flips = [(j, p) for j, p in enumerate(seg_est) if p.luf_value > 0]

    claims = [
        Claim("max oracle LUF over in-disc grid points", 0.0, float(max(grid_luf))),
        Claim("out-of-support probes whose 1-NN label flips (at least one)", 1.0,
              float(len(flips) > 0)),
    ]
    meta: dict = {"d": d, "n": n, "grid_points": len(grid), "segment_probes": len(seg)}
    witness = 0.0
    if flips:
        j, est = flips[0]
        probe = seg[j]
        removed = est.responsible_removed_id
        reduced = ds.view([i for i in ds.point_ids if i != removed])
        out_s = int(baseline.predict(probe[None, :])[0])
        out_r = int(train(rule, reduced).predict(probe[None, :])[0])
        # deterministic outputs: Pr[A(S) = out_s] = 1, Pr[A(S \ i) = out_s] = 0,
        # so 1 <= e^eps * 0 + delta fails for every finite eps when delta < 1
        witness = float(out_s != out_r)
        meta["flip_probe"] = [float(v) for v in probe]
        meta["dp_witness"] = {
            "probe": [float(v) for v in probe],
            "removed_id": removed,
            "label_full": out_s,
            "label_reduced": out_r,
            "prob_full": 1.0,
            "prob_reduced": 0.0,
        }
    claims.append(Claim("DP violation witness (adjacent sets, outputs 1 vs 0)", 1.0, witness))
    return ScenarioResult("two-circles", claims, meta)


def balanced_dataset(n: int = 4) -> Dataset:
    """Binary labels with signed count zero (``n`` even)."""
    if n < 2 or n % 2:
        raise ConfigurationError("n must be even and at least 2", key="n")
    x = np.arange(n, dtype=np.float64)[:, None]
    return Dataset(x, np.arange(n) % 2, 2)


def run_dp_bound_scenario(epsilon: float = 0.5, trials: int = 10_000, seed: int = 0, n: int = 4) -> ScenarioResult:
    """Monte Carlo LUF of the noisy-majority rule stays under the DP bound."""
    if trials < 1000:
        raise ConfigurationError("trials must be at least 1000", key="trials")
    ds = balanced_dataset(n)
    rule = LearningRule("noisy-majority", dp_epsilon=epsilon, seed=seed)
    report = audit_randomized(rule, ds, full_plan(ds), trials=trials)
    bound = dp_luf_bound(epsilon, 0.0)
    slack = 3.0 * report.std_error_bound
    claims = [
        Claim(f"Monte Carlo LUF at point {p.point_id} <= e^eps - 1 + 3 SE", bound, p.luf_value, slack, "le")
        for p in report.points
    ]
    meta = {
        "epsilon": epsilon,
        "trials": trials,
        "bound": bound,
        "slack": slack,
        "expected_luf": report.expected_luf,
        # exact LUF of this rule on this dataset: P(Lap(2/eps) > 0) - P(Lap(2/eps) > 1)
        "exact_luf": 0.5 - 0.5 * math.exp(-epsilon / 2.0),
    }
    return ScenarioResult("dp-bound", claims, meta)


def grid_points(resolution: int, bounds=(0.0, 1.0, 0.0, 1.0)) -> np.ndarray:
    """Cell centers over ``(xmin, xmax, ymin, ymax)``, row 0 at the top (largest y)."""
    xmin, xmax, ymin, ymax = bounds
    c = (np.arange(resolution) + 0.5) / resolution
    cx = xmin + (xmax - xmin) * c
    cy = ymin + (ymax - ymin) * c
    gy, gx = np.meshgrid(cy[::-1], cx, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def run_figure1_scenario(
    n: int = 100,
    layer_dims=(2, 64, 64, 64, 1),
    grid_resolution: int = 200,
    seed: int = 0,
    *,
    epochs: int = 500,
    rule: LearningRule | None = None,
    dataset: Dataset | None = None,
    removed_id: int | None = None,
    far: float = 0.25,
    bounds=(0.0, 1.0, 0.0, 1.0),
    train_many=None,
) -> ScenarioResult:
    """Remove one point and compare decision rasters over ``bounds`` (default ``[0, 1]^2``)."""
    layer_dims = tuple(int(v) for v in layer_dims)
    if layer_dims[0] != 2:
        raise ConfigurationError("the boundary scenario needs 2-feature data", key="layer_dims")
    ds = dataset if dataset is not None else sample_synthetic(
        SyntheticSpec("uniform-bernoulli-square", n=n, seed=seed, p=0.5)
    )
    if ds.num_features != 2:
        raise ConfigurationError("the boundary scenario needs 2-feature data", key="dataset")
    if rule is None:
        rule = LearningRule(
            "standard-mlp", hidden=layer_dims[1:-1], epochs=epochs, batch_size=32,
            learning_rate=1e-3, seed=seed,
        )
    if removed_id is None:
        removed_id = int(ds.point_ids[int(Rng(seed, STREAM_SPLIT).uniform() * len(ds))])
    rem_x = ds.features[ds.positions([removed_id])][0]
    reduced = ds.view([i for i in ds.point_ids if i != removed_id])
    tasks = [TrainTask("baseline", rule, ds.view(ds.point_ids)), TrainTask(int(removed_id), rule, reduced)]
    h_s, h_i = (train_many or train_sequential)(tasks)
    pts = grid_points(grid_resolution, bounds)
    p_s = h_s.predict_proba(pts)[:, 1]
    p_i = h_i.predict_proba(pts)[:, 1]
    flipped = h_s.predict(pts) != h_i.predict(pts)
    dist = np.linalg.norm(pts - rem_x, axis=1)
    far_flips = int(np.count_nonzero(flipped & (dist > far)))
    shape = (grid_resolution, grid_resolution)
    claims = [
        Claim("flipped-cell fraction > 0", 1.0, float(flipped.any())),
        Claim(f"some flipped cell farther than {far} from the removed point", 1.0, float(far_flips > 0)),
    ]
    meta = {
        "seed": seed,
        "n": len(ds),
        "bounds": [float(b) for b in bounds],
        "removed_id": removed_id,
        "removed_point": [float(v) for v in rem_x],
        "flipped_fraction": float(np.mean(flipped)),
        "far_flipped_cells": far_flips,
        "max_flip_distance": float(dist[flipped].max()) if flipped.any() else 0.0,
        "rule": rule.to_dict(),
        "training": "Adam lr 1e-3, batch 32" if rule.kind in ("standard-mlp", "linear") else rule.kind,
    }
    rasters = {
        "baseline": p_s.reshape(shape),
        "variant": p_i.reshape(shape),
        "difference": (p_i - p_s).reshape(shape),
    }
    return ScenarioResult("figure1", claims, meta, rasters)


SCENARIOS = {
    "prop1": run_prop1_scenario,
    "two-circles": run_two_circles_scenario,
    "dp-bound": run_dp_bound_scenario,
    "figure1": run_figure1_scenario,
}
