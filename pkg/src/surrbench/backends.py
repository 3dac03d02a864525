"""Evaluation backends: anything that can run (config, instance, seed).

A backend exposes ``space``, ``instances``, ``objective``, ``cutoff``
and an ``evaluate`` method. Optimizers only talk to this interface, so
a trained stand-in, a live wire connection and the synthetic ground
truth below are interchangeable.

Runtime backends accept an optional cap: a per-run budget below the
scenario cutoff. A run that would exceed its cap comes back CENSORED at
the cap, a run reaching the full cutoff comes back TIMEOUT. Quality
backends reject caps since there is nothing to truncate.
"""
from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.stats import norm

from .rundata import MIN_COST, PAR_FACTOR, DataError, InstanceSet, RunStatus
from .space import ConfigurationSpace, canonical_config, parse_space
from .surrogate import SurrogateBenchmark, _hash_unit

__all__ = [
    "Backend",
    "EvalResult",
    "SyntheticBackend",
    "SyntheticSpec",
    "SurrogateBackend",
    "par10_score",
    "penalized_cost",
    "truncate_runtime",
]


@dataclass(frozen=True)
class EvalResult:
    """One finished run. cost is measured, never penalized."""

    status: RunStatus
    cost: float


class Backend(Protocol):
    space: ConfigurationSpace
    instances: InstanceSet
    objective: str
    cutoff: float | None

    def evaluate(
        self, config: dict, instance_id: str, seed: int, cap: float | None = None
    ) -> EvalResult: ...


def truncate_runtime(raw: float, cap: float | None, cutoff: float) -> EvalResult:
    """Apply cap and cutoff semantics to an untruncated runtime."""
    if cap is not None:
        if not cap > 0:
            raise ValueError("cap must be positive")
        cap = min(cap, cutoff)
    effective = cutoff if cap is None else cap
    if raw >= effective:
        if effective >= cutoff:
            return EvalResult(RunStatus.TIMEOUT, float(cutoff))
        return EvalResult(RunStatus.CENSORED, float(effective))
    return EvalResult(RunStatus.SUCCESS, float(max(raw, MIN_COST)))


def penalized_cost(result: EvalResult, cutoff: float) -> float:
    """PAR-style score: unfinished runs count as PAR_FACTOR times the cutoff."""
    if result.status == RunStatus.SUCCESS:
        return result.cost
    return PAR_FACTOR * cutoff


def par10_score(results: Iterable[EvalResult], cutoff: float) -> float:
    vals = [penalized_cost(r, cutoff) for r in results]
    if not vals:
        raise ValueError("no results to score")
    return float(np.mean(vals))


class SurrogateBackend:
    """Drives a trained benchmark through the evaluation interface."""

    def __init__(self, bench: SurrogateBenchmark):
        self.bench = bench
        self.space = bench.space
        self.instances = bench.instances
        self.objective = bench.objective
        self.cutoff = bench.cutoff
        self.n_evaluations = 0

    def evaluate(
        self, config: dict, instance_id: str, seed: int, cap: float | None = None
    ) -> EvalResult:
        self.n_evaluations += 1
        res = self.bench.predict_run(config, instance_id, seed)
        if self.objective == "quality":
            if cap is not None:
                raise ValueError("caps only apply to runtime objectives")
            return EvalResult(RunStatus.SUCCESS, res.cost)
        return truncate_runtime(res.raw_prediction, cap, self.cutoff)


DEFAULT_SPACE_TEXT = """\
heuristic categorical {wide, deep, adaptive} [wide]
prepro categorical {none, light, full} [light]
branching categorical {lexical, activity} [activity]
learning_rate real [0.001, 1.0] [0.1] (log)
clause_decay real [0.5, 0.999] [0.95]
restart_base integer [10, 10000] [100] (log)
noise_amp real [0.0, 0.5] [0.1]
elim_rounds integer [0, 12] [4]
adapt_gain real [0.01, 10.0] [1.0] (log)
adapt_gain | heuristic in {adaptive}
prepro_budget integer [1, 64] [8]
prepro_budget | prepro in {light, full}
"""


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the closed-form ground-truth benchmark."""

    seed: int = 0
    n_instances: int = 20
    n_train: int = 12
    n_basins: int = 3
    hardness_spread: float = 0.8
    interaction: float = 0.25
    noise_sd: float = 0.1
    timeout_frac: float = 0.1
    base_log_cost: float = 0.0
    objective: str = "runtime"
    calibration_draws: int = 20_000

    def __post_init__(self):
        if not 0 < self.n_train < self.n_instances:
            raise ValueError("need a non-empty train and test split")
        if self.objective not in ("runtime", "quality"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not 0.0 < self.timeout_frac < 1.0:
            raise ValueError("timeout_frac must be in (0, 1)")


class SyntheticBackend:
    """Ground truth with a known optimum structure and pinned randomness.

    The noiseless log10 cost is a mixture of quadratic basins over the
    unit-cube encoding of the configuration (category indices rescaled
    to [0, 1]), plus per-category offsets, scaled and shifted by an
    instance hardness term that is also exported as feature 0. Run noise
    is seeded from the (config, instance, seed) triple, so evaluation is
    a pure function of its arguments. The cutoff is set by Monte Carlo
    so that roughly timeout_frac of random runs exceed it.
    """

    def __init__(self, spec: SyntheticSpec = SyntheticSpec()):
        self.spec = spec
        self.space = parse_space(DEFAULT_SPACE_TEXT)
        self.objective = spec.objective
        self.n_evaluations = 0
        rng = np.random.default_rng(spec.seed)

        width = self.space.encoded_width()
        is_cat, n_cats = self.space.feature_meta()
        # rescale category indices onto [0, 1] alongside the numerics
        self._scale = np.where(is_cat, 1.0 / np.maximum(n_cats - 1, 1), 1.0)
        self._centers = rng.uniform(size=(spec.n_basins, width))
        self._weights = rng.uniform(0.5, 2.0, size=(spec.n_basins, width))
        self._depths = np.sort(rng.uniform(0.0, 1.5, size=spec.n_basins))
        self._cat_offsets = {
            p.name: {v: rng.normal(0.0, 0.3) for v in p.values}
            for p in self.space.params
            if p.kind == "categorical"
        }

        hardness = rng.uniform(0.0, spec.hardness_spread, spec.n_instances)
        feats = np.column_stack(
            [
                hardness,
                hardness + rng.normal(0.0, 0.05, spec.n_instances),
                rng.normal(0.0, 1.0, spec.n_instances),
            ]
        )
        ids = tuple(f"synth-{i:02d}" for i in range(spec.n_instances))
        split = tuple(
            "train" if i < spec.n_train else "test" for i in range(spec.n_instances)
        )
        self.instances = InstanceSet(ids=ids, features=feats, split=split)
        self._hardness = {i: float(h) for i, h in zip(ids, hardness)}

        if spec.objective == "runtime":
            self.cutoff = self._calibrate_cutoff(rng)
        else:
            self.cutoff = None

    def _g(self, config: dict) -> float:
        """Config-only part of the noiseless log cost."""
        z = self.space.encode(config) * self._scale
        sq = self._weights * (z[None, :] - self._centers) ** 2
        basin = float(np.min(self._depths + sq.sum(axis=1)))
        total = self.space.impute_inactive(config)
        offsets = sum(
            table[total[name]] for name, table in self._cat_offsets.items()
        )
        return basin + offsets

    def true_log_cost(self, config: dict, instance_id: str) -> float:
        """Noiseless log10 cost, exposed for fidelity checks."""
        cfg = self.space.coerce(config)
        self.space.validate(cfg)
        u = self._hardness.get(instance_id)
        if u is None:
            raise DataError(f"unknown instance {instance_id!r}")
        return (
            self.spec.base_log_cost
            + self._g(cfg) * (1.0 + self.spec.interaction * u)
            + u
        )

    def _calibrate_cutoff(self, rng: np.random.Generator) -> float:
        logs = np.empty(self.spec.calibration_draws)
        ids = self.instances.ids
        for k in range(self.spec.calibration_draws):
            cfg = self.space.sample(rng)
            inst = ids[int(rng.integers(len(ids)))]
            logs[k] = self.true_log_cost(cfg, inst)
        return float(10.0 ** np.quantile(logs, 1.0 - self.spec.timeout_frac))

    def evaluate(
        self, config: dict, instance_id: str, seed: int, cap: float | None = None
    ) -> EvalResult:
        self.n_evaluations += 1
        cfg = self.space.coerce(config)
        self.space.validate(cfg)
        mu = self.true_log_cost(cfg, instance_id)
        u = _hash_unit(
            "synthetic-noise", canonical_config(cfg), instance_id, str(int(seed))
        )
        z = norm.ppf(min(max(u, 1e-12), 1.0 - 1e-12))
        y = mu + self.spec.noise_sd * float(z)
        if self.objective == "quality":
            if cap is not None:
                raise ValueError("caps only apply to runtime objectives")
            # quality is a positive loss on the natural scale
            return EvalResult(RunStatus.SUCCESS, 10.0**y)
        return truncate_runtime(10.0**y, cap, self.cutoff)
