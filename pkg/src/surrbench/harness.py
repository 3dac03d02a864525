"""Fidelity evaluation: data splits, model quality, and outcome agreement.

Two complementary views of how trustworthy a trained benchmark is.  The
first holds out whole configurator runs (or whole configurators), refits on
the rest, and scores raw predictions against the held-out truth.  The second
runs the configurators themselves against the real backend and against the
benchmark and checks whether the statistical comparison of the procedures
comes out the same way.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .backends import Backend
from .configurators import CONFIGURATORS, Trajectory
from .forest import ForestConfig
from .rundata import DataError, Dataset, build_matrix
from .space import render_space
from .stats import Outcome, pairwise_outcomes, rmse, spearman, surrogate_error
from .surrogate import build_benchmark

__all__ = [
    "SplitPlan",
    "loro_splits",
    "loco_splits",
    "QualityRow",
    "QualityReport",
    "model_quality",
    "TimingSummary",
    "FidelityReport",
    "compare",
    "default_budget_grid",
    "fidelity_to_json",
    "quality_to_json",
    "write_json_report",
    "write_quality_csv",
    "write_trajectories_csv",
]


# -- splits ---------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """Index-level train/test partition of a dataset's records."""

    label: str
    kind: str  # "loro" or "loco"
    held_out: str
    train_idx: tuple[int, ...]
    test_idx: tuple[int, ...]


def loro_splits(dataset: Dataset) -> list[SplitPlan]:
    """Leave-one-run-out: split r holds out repetition r of every configurator."""
    reps = sorted({r.source[1] for r in dataset.records})
    if len(reps) < 2:
        raise DataError("leave-one-run-out needs at least 2 repetitions")
    out = []
    for rep in reps:
        test = tuple(i for i, r in enumerate(dataset.records) if r.source[1] == rep)
        train = tuple(i for i, r in enumerate(dataset.records) if r.source[1] != rep)
        out.append(SplitPlan(f"run={rep}", "loro", str(rep), train, test))
    return out


def loco_splits(dataset: Dataset) -> list[SplitPlan]:
    """Leave-one-configurator-out: split c holds out everything c produced."""
    names = sorted({r.source[0] for r in dataset.records})
    if len(names) < 2:
        raise DataError("leave-one-configurator-out needs at least 2 configurators")
    out = []
    for name in names:
        test = tuple(i for i, r in enumerate(dataset.records) if r.source[0] == name)
        train = tuple(i for i, r in enumerate(dataset.records) if r.source[0] != name)
        out.append(SplitPlan(f"configurator={name}", "loco", name, train, test))
    return out


def _subset(dataset: Dataset, idx: tuple[int, ...]) -> Dataset:
    return dataset.replace_records(tuple(dataset.records[i] for i in idx))


# -- model quality ----------------------------------------------------------------


@dataclass(frozen=True)
class QualityRow:
    """Prediction quality on one slice of held-out rows.

    cc is None when the slice is empty or its truth is constant; rmse is
    None only when the slice is empty.
    """

    split: str
    configurator: str
    scope: str  # "configuration", "validation" or "all"
    n: int
    rmse: float | None
    cc: float | None


@dataclass
class QualityReport:
    kind: str
    setting: str
    objective: str
    rows: list[QualityRow]

    def lookup(self, split: str, configurator: str = "all", scope: str = "all"):
        for row in self.rows:
            if (row.split, row.configurator, row.scope) == (split, configurator, scope):
                return row
        raise KeyError(f"no row for ({split!r}, {configurator!r}, {scope!r})")


def _score_slice(split: str, configurator: str, scope: str, pred, truth) -> QualityRow:
    n = len(truth)
    if n == 0:
        return QualityRow(split, configurator, scope, 0, None, None)
    err = rmse(pred, truth)
    try:
        cc = spearman(pred, truth)
    except ValueError:
        cc = None
    return QualityRow(split, configurator, scope, n, err, cc)


def _mean_rows(rows: list[QualityRow], configurator: str, scope: str) -> QualityRow:
    picked = [r for r in rows if r.configurator == configurator and r.scope == scope]
    rmses = [r.rmse for r in picked if r.rmse is not None]
    ccs = [r.cc for r in picked if r.cc is not None]
    return QualityRow(
        "mean",
        configurator,
        scope,
        sum(r.n for r in picked),
        float(np.mean(rmses)) if rmses else None,
        float(np.mean(ccs)) if ccs else None,
    )


def model_quality(
    dataset: Dataset,
    splits: Sequence[SplitPlan],
    *,
    setting: str = "train_plus_test_incumbents",
    config: ForestConfig | None = None,
    seed: int = 0,
) -> QualityReport:
    """Refit on each split's train side, score median predictions on the rest.

    Scores are computed in the model's response space (log10 seconds for
    runtime, raw cost for quality).  Censored held-out rows are skipped:
    their truth is only a lower bound.  Rows are scored overall, split by
    configuration versus validation runs, and per source configurator;
    "mean" rows average the per-split scores.
    """
    if not splits:
        raise DataError("no splits given")
    kinds = {s.kind for s in splits}
    rows: list[QualityRow] = []
    for k, plan in enumerate(splits):
        rng = np.random.default_rng(np.random.SeedSequence((seed, k)))
        bench = build_benchmark(
            _subset(dataset, plan.train_idx), setting=setting, config=config, rng=rng
        )
        matrix = build_matrix(_subset(dataset, plan.test_idx), "all")
        keep = ~matrix.censored
        pred = np.asarray(bench.forest.predict_quantile(matrix.X[keep], 0.5))
        truth = matrix.y[keep]
        is_val = matrix.is_validation[keep]
        sources = [rec.source[0] for rec, k2 in zip(matrix.records, keep) if k2]
        names = sorted(set(sources))
        per_conf = {name: np.array([s == name for s in sources]) for name in names}
        slices: list[tuple[str, np.ndarray]] = [
            ("all", np.ones(len(truth), dtype=bool)),
            ("configuration", ~is_val),
            ("validation", is_val),
        ]
        for conf_name, conf_mask in [("all", np.ones(len(truth), dtype=bool))] + [
            (n, per_conf[n]) for n in names
        ]:
            for scope, scope_mask in slices:
                m = conf_mask & scope_mask
                rows.append(
                    _score_slice(plan.label, conf_name, scope, pred[m], truth[m])
                )
    confs = sorted({r.configurator for r in rows})
    scopes = ("all", "configuration", "validation")
    means = [_mean_rows(rows, c, s) for c in confs for s in scopes]
    return QualityReport(
        kind="+".join(sorted(kinds)),
        setting=setting,
        objective=dataset.objective,
        rows=rows + means,
    )


# -- outcome agreement ---------------------------------------------------------------


class _TimedBackend:
    """Forwarding wrapper that clocks every evaluation."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.space = inner.space
        self.instances = inner.instances
        self.objective = inner.objective
        self.cutoff = inner.cutoff
        self.samples: list[float] = []

    def evaluate(self, config, instance_id, seed, cap=None):
        t0 = time.perf_counter()
        res = self.inner.evaluate(config, instance_id, seed, cap=cap)
        self.samples.append(time.perf_counter() - t0)
        return res


@dataclass(frozen=True)
class TimingSummary:
    """Wall-clock side channel; excluded from deterministic report output."""

    mean_original_cost: float | None
    mean_prediction_ms: float
    speedup: float | None


@dataclass
class FidelityReport:
    objective: str
    configurators: tuple[str, ...]
    n_runs: int
    run_budget: float
    budgets: tuple[float, ...]
    error: float
    outcomes_original: dict[float, dict[tuple[str, str], Outcome]]
    outcomes_surrogate: dict[float, dict[tuple[str, str], Outcome]]
    best_original: dict[str, list[list[float]]]  # name -> per budget -> per rep
    best_surrogate: dict[str, list[list[float]]]
    trajectories_original: list[Trajectory] = field(default_factory=list)
    trajectories_surrogate: list[Trajectory] = field(default_factory=list)
    timing: TimingSummary | None = None


def default_budget_grid(
    backend: Backend, run_budget: float, n_budgets: int = 20
) -> tuple[float, ...]:
    """Log-spaced checkpoints from one-cutoff scale up to the full budget."""
    lo = backend.cutoff if backend.objective == "runtime" else 2.0
    lo = min(float(lo), float(run_budget))
    if n_budgets < 1:
        raise ValueError("n_budgets must be >= 1")
    if lo == run_budget:
        return (float(run_budget),)
    grid = np.geomspace(lo, float(run_budget), n_budgets)
    grid[-1] = float(run_budget)
    return tuple(float(b) for b in grid)


def _run_matrix(
    backend: Backend,
    names: Sequence[str],
    run_budget: float,
    n_runs: int,
    master_seed: int,
    max_evals: int | None,
    kwargs_by_name: Mapping[str, dict],
) -> dict[str, list[Trajectory]]:
    out: dict[str, list[Trajectory]] = {}
    for ci, name in enumerate(names):
        fn = CONFIGURATORS[name]
        extra = dict(kwargs_by_name.get(name, {}))
        out[name] = []
        for rep in range(n_runs):
            rng = np.random.default_rng(np.random.SeedSequence((master_seed, ci, rep)))
            out[name].append(
                fn(backend, run_budget, rng, repetition=rep, max_evals=max_evals, **extra)
            )
    return out


def _best_found(traj: Trajectory, budget: float) -> float:
    pt = traj.incumbent_at(budget)
    return pt.estimate if pt is not None else math.inf


def compare(
    original: Backend,
    surrogate: Backend,
    run_budget: float,
    *,
    names: Sequence[str] = ("random_search", "roar", "ils"),
    n_runs: int = 10,
    budgets: Sequence[float] | None = None,
    n_budgets: int = 20,
    master_seed: int = 0,
    max_evals: int | None = None,
    configurator_kwargs: Mapping[str, dict] | None = None,
) -> FidelityReport:
    """Run the same seeded configurators on both backends and compare outcomes.

    Each (configurator, repetition) cell is seeded identically on both
    backends.  At every budget checkpoint the best-found estimates across
    repetitions feed the pairwise comparison; the report's error is the mean
    outcome disagreement between the two backends' tables.  Wall-clock
    timing lands in the separate timing summary.
    """
    if len(names) < 2 or len(set(names)) != len(names):
        raise ValueError("need at least 2 distinct configurators to compare")
    unknown = [n for n in names if n not in CONFIGURATORS]
    if unknown:
        raise ValueError(f"unknown configurators: {unknown}")
    if original.objective != surrogate.objective:
        raise ValueError("backends disagree on the objective")
    # matched seeds only line up if both backends sample the same space
    # and draw instance pairs from the same id table
    if render_space(original.space) != render_space(surrogate.space):
        raise ValueError("backends disagree on the configuration space")
    if (
        original.instances.ids != surrogate.instances.ids
        or original.instances.split != surrogate.instances.split
    ):
        raise ValueError("backends disagree on the instance set")
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2 for the comparison tests")
    grid = (
        tuple(float(b) for b in budgets)
        if budgets is not None
        else default_budget_grid(original, run_budget, n_budgets)
    )
    if not grid or list(grid) != sorted(grid):
        raise ValueError("budget grid must be non-empty and ascending")
    kwargs_by_name = configurator_kwargs or {}

    timed = _TimedBackend(surrogate)
    trajs_orig = _run_matrix(
        original, names, run_budget, n_runs, master_seed, max_evals, kwargs_by_name
    )
    trajs_surr = _run_matrix(
        timed, names, run_budget, n_runs, master_seed, max_evals, kwargs_by_name
    )

    def best_table(trajs: dict[str, list[Trajectory]]):
        return {
            name: [[_best_found(t, b) for t in trajs[name]] for b in grid]
            for name in names
        }

    best_o = best_table(trajs_orig)
    best_s = best_table(trajs_surr)
    outcomes_o: dict[float, dict[tuple[str, str], Outcome]] = {}
    outcomes_s: dict[float, dict[tuple[str, str], Outcome]] = {}
    for bi, b in enumerate(grid):
        outcomes_o[b] = pairwise_outcomes({n: best_o[n][bi] for n in names})
        outcomes_s[b] = pairwise_outcomes({n: best_s[n][bi] for n in names})
    error = surrogate_error(outcomes_o, outcomes_s)

    mean_cost = None
    speedup = None
    pred_ms = 1000.0 * float(np.mean(timed.samples)) if timed.samples else 0.0
    if original.objective == "runtime":
        costs = [
            r.measured_cost for ts in trajs_orig.values() for t in ts for r in t.evaluations
        ]
        if costs:
            mean_cost = float(np.mean(costs))
            if pred_ms > 0:
                speedup = mean_cost / (pred_ms / 1000.0)
    return FidelityReport(
        objective=original.objective,
        configurators=tuple(names),
        n_runs=n_runs,
        run_budget=float(run_budget),
        budgets=grid,
        error=error,
        outcomes_original=outcomes_o,
        outcomes_surrogate=outcomes_s,
        best_original=best_o,
        best_surrogate=best_s,
        trajectories_original=[t for ts in trajs_orig.values() for t in ts],
        trajectories_surrogate=[t for ts in trajs_surr.values() for t in ts],
        timing=TimingSummary(mean_cost, pred_ms, speedup),
    )


# -- report files ------------------------------------------------------------------


def _outcome_table_json(table: Mapping[float, Mapping[tuple[str, str], Outcome]]):
    return [
        {
            "budget": b,
            "outcomes": {f"{a}|{c}": o.name for (a, c), o in pairs.items()},
        }
        for b, pairs in table.items()
    ]


def _best_table_json(best: Mapping[str, list[list[float]]]):
    # budgets before the first incumbent carry +inf internally; emit null
    return {
        name: [[None if math.isinf(v) else v for v in reps] for reps in rows]
        for name, rows in best.items()
    }


def fidelity_to_json(report: FidelityReport, include_timing: bool = False) -> dict:
    """JSON-ready dict; wall-clock timing only on request (non-reproducible)."""
    out = {
        "objective": report.objective,
        "configurators": list(report.configurators),
        "n_runs": report.n_runs,
        "run_budget": report.run_budget,
        "budgets": list(report.budgets),
        "error": report.error,
        "outcomes_original": _outcome_table_json(report.outcomes_original),
        "outcomes_surrogate": _outcome_table_json(report.outcomes_surrogate),
        "best_original": _best_table_json(report.best_original),
        "best_surrogate": _best_table_json(report.best_surrogate),
    }
    if include_timing and report.timing is not None:
        out["timing"] = {
            "mean_original_cost": report.timing.mean_original_cost,
            "mean_prediction_ms": report.timing.mean_prediction_ms,
            "speedup": report.timing.speedup,
        }
    return out


def quality_to_json(report: QualityReport) -> dict:
    return {
        "kind": report.kind,
        "setting": report.setting,
        "objective": report.objective,
        "rows": [
            {
                "split": r.split,
                "configurator": r.configurator,
                "scope": r.scope,
                "n": r.n,
                "rmse": r.rmse,
                "cc": r.cc,
            }
            for r in report.rows
        ],
    }


def write_json_report(payload: dict, path) -> None:
    """Canonical JSON: sorted keys, stable float text, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_quality_csv(report: QualityReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "configurator", "scope", "n", "rmse", "cc"])
        for r in report.rows:
            w.writerow(
                [
                    r.split,
                    r.configurator,
                    r.scope,
                    r.n,
                    "" if r.rmse is None else repr(r.rmse),
                    "" if r.cc is None else repr(r.cc),
                ]
            )


def write_trajectories_csv(report: FidelityReport, path) -> None:
    """One row per incumbent adoption, both backends."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["budget", "run", "configurator", "backend", "cost"])
        for label, trajs in (
            ("original", report.trajectories_original),
            ("surrogate", report.trajectories_surrogate),
        ):
            for t in trajs:
                for pt in t.points:
                    w.writerow(
                        [repr(pt.budget), t.repetition, t.configurator, label, repr(pt.estimate)]
                    )
