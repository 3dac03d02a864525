"""Desk-scale algorithm configurators over a common evaluation interface.

Four procedures share one contract: given a backend, a budget, and a seeded
generator, search the configuration space and return a :class:`Trajectory` of
incumbents together with every run performed.  The budget is simulated
runtime seconds for the runtime objective and an evaluation count for
quality; a single run may overshoot it, nothing else may.  All procedures
are deterministic given (backend, budget, generator state).

Cost estimates are PAR10 means for runtime (unfinished runs count as ten
times the cutoff) and plain means for quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .backends import Backend
from .forest import ForestConfig, fit_forest
from .rundata import MIN_COST, PAR_FACTOR, Dataset, InstanceSet, RunRecord, RunStatus
from .space import ConfigurationSpace, canonical_config

__all__ = [
    "TrajectoryPoint",
    "Trajectory",
    "random_search",
    "roar",
    "ils",
    "smac_lite",
    "validate_incumbents",
    "export_dataset",
    "CONFIGURATORS",
    "DEFAULT_SLACK",
]

DEFAULT_SLACK = 1.3  # adaptive capping headroom over the comparison total


@dataclass(frozen=True)
class TrajectoryPoint:
    """Incumbent adopted at `budget` spent, with its training-set estimate."""

    budget: float
    config: dict
    estimate: float


@dataclass
class Trajectory:
    """Everything one configurator repetition produced."""

    configurator: str
    repetition: int
    objective: str
    points: list[TrajectoryPoint]
    evaluations: list[RunRecord]
    validations: list[RunRecord] = field(default_factory=list)

    @property
    def spent(self) -> float:
        if self.objective == "runtime":
            return float(sum(r.measured_cost for r in self.evaluations))
        return float(len(self.evaluations))

    def incumbent_at(self, budget: float) -> TrajectoryPoint | None:
        """Lowest-estimate incumbent adopted within the given budget."""
        best: TrajectoryPoint | None = None
        for pt in self.points:
            if pt.budget <= budget and (best is None or pt.estimate < best.estimate):
                best = pt
        return best

    def final(self) -> TrajectoryPoint | None:
        return self.incumbent_at(math.inf)


class _Session:
    """Budget accounting and run logging for one configurator repetition."""

    def __init__(
        self,
        backend: Backend,
        budget: float,
        name: str,
        repetition: int,
        max_evals: int | None,
    ):
        if not budget > 0:
            raise ValueError("budget must be positive")
        if max_evals is not None and max_evals < 1:
            raise ValueError("max_evals must be >= 1")
        self.backend = backend
        self.budget = float(budget)
        self.name = name
        self.repetition = int(repetition)
        self.max_evals = max_evals
        self.runtime = backend.objective == "runtime"
        if self.runtime and not (backend.cutoff and backend.cutoff > 0):
            raise ValueError("runtime backend must declare a positive cutoff")
        self.records: list[RunRecord] = []
        self.spent = 0.0

    def exhausted(self) -> bool:
        if self.max_evals is not None and len(self.records) >= self.max_evals:
            return True
        return self.spent >= self.budget

    def evaluate(
        self, config: dict, instance: str, seed: int, cap: float | None = None
    ) -> RunRecord:
        cfg = self.backend.space.coerce(config)
        res = self.backend.evaluate(cfg, instance, seed, cap=cap if self.runtime else None)
        rec = RunRecord(
            config=cfg,
            instance=instance,
            seed=int(seed),
            status=res.status,
            measured_cost=res.cost,
            cutoff=self.backend.cutoff if self.runtime else 1.0,
            source=(self.name, self.repetition),
        )
        self.records.append(rec)
        self.spent += rec.measured_cost if self.runtime else 1.0
        return rec

    def penalty(self, rec: RunRecord) -> float:
        if not self.runtime or rec.status is RunStatus.SUCCESS:
            return rec.measured_cost
        return PAR_FACTOR * rec.cutoff


def _draw_pairs(
    instances: InstanceSet, rng: np.random.Generator, runs_per_config: int
) -> list[tuple[str, int]]:
    """Fixed (instance, seed) comparison set: permuted train blocks, fresh seeds."""
    if runs_per_config < 1:
        raise ValueError("runs_per_config must be >= 1")
    ids = list(instances.train_ids())
    pairs: list[tuple[str, int]] = []
    while len(pairs) < runs_per_config:
        order = rng.permutation(len(ids))
        for i in order:
            if len(pairs) == runs_per_config:
                break
            pairs.append((ids[int(i)], int(rng.integers(2**31 - 1))))
    return pairs


# -- random search ------------------------------------------------------------


def random_search(
    backend: Backend,
    budget: float,
    rng: np.random.Generator,
    *,
    repetition: int = 0,
    runs_per_config: int = 5,
    max_evals: int | None = None,
) -> Trajectory:
    """Uniform sampling; every configuration gets the same (instance, seed) set.

    The default configuration is evaluated first.  A later sample replaces
    the incumbent only when its full-set mean is strictly better; a
    configuration cut short by the budget never displaces anything (the
    very first one still seeds the trajectory, on whatever it completed).
    """
    s = _Session(backend, budget, "random_search", repetition, max_evals)
    traj = Trajectory("random_search", repetition, backend.objective, [], s.records)
    pairs = _draw_pairs(backend.instances, rng, runs_per_config)
    inc_est = math.inf
    first = True
    while not s.exhausted():
        config = backend.space.default_config() if first else backend.space.sample(rng)
        first = False
        pens = []
        for inst, seed in pairs:
            if s.exhausted():
                break
            pens.append(s.penalty(s.evaluate(config, inst, seed)))
        if not pens:
            break
        est = float(np.mean(pens))
        if not traj.points:
            traj.points.append(TrajectoryPoint(s.spent, config, est))
            inc_est = est
        elif len(pens) == len(pairs) and est < inc_est:
            traj.points.append(TrajectoryPoint(s.spent, config, est))
            inc_est = est
    return traj


# -- racing core ---------------------------------------------------------------


class _Intensifier:
    """Aggressive racing against the incumbent on a growing comparison set.

    One master (instance, seed) list is shared by every comparison; the
    incumbent has run all of it.  Challengers work through prefixes of
    doubling length and are rejected the moment a completed prefix mean is
    worse than the incumbent's on the same runs.  Adoption requires strictly
    beating the incumbent's full-set mean; ties keep the incumbent.  For
    runtime objectives each challenger run is capped at what is left of
    `slack` times the incumbent's total on the prefix under comparison.
    """

    def __init__(self, session: _Session, rng: np.random.Generator, slack: float):
        if not slack >= 1.0:
            raise ValueError("slack must be >= 1")
        self.s = session
        self.rng = rng
        self.slack = slack
        self.pairs: list[tuple[str, int]] = []
        self._deck: list[str] = []
        self.inc_config: dict | None = None
        self.inc_costs: list[float] = []
        self.inc_penalties: list[float] = []

    def _next_pair(self) -> tuple[str, int]:
        if not self._deck:
            ids = list(self.s.backend.instances.train_ids())
            self._deck = [ids[int(i)] for i in self.rng.permutation(len(ids))]
        inst = self._deck.pop()
        return inst, int(self.rng.integers(2**31 - 1))

    def initialize(self, config: dict) -> bool:
        """Install the first incumbent with a single run; False if no budget."""
        if self.s.exhausted():
            return False
        pair = self._next_pair()
        rec = self.s.evaluate(config, *pair)
        self.pairs.append(pair)
        self.inc_config = config
        self.inc_costs = [rec.measured_cost]
        self.inc_penalties = [self.s.penalty(rec)]
        return True

    def extend_incumbent(self) -> bool:
        """Run the incumbent on one fresh pair; False if no budget."""
        if self.s.exhausted():
            return False
        pair = self._next_pair()
        rec = self.s.evaluate(self.inc_config, *pair)
        self.pairs.append(pair)
        self.inc_costs.append(rec.measured_cost)
        self.inc_penalties.append(self.s.penalty(rec))
        return True

    def incumbent_estimate(self) -> float:
        return float(np.mean(self.inc_penalties))

    def race(self, challenger: dict) -> float | None:
        """Race a challenger; its new full-set estimate if adopted, else None."""
        n = len(self.pairs)
        chal_costs: list[float] = []
        chal_pens: list[float] = []
        target = 1
        while True:
            target = min(target, n)
            while len(chal_costs) < target:
                if self.s.exhausted():
                    return None
                cap = None
                if self.s.runtime:
                    bound = self.slack * float(sum(self.inc_costs[:target]))
                    remaining = bound - float(sum(chal_costs))
                    if remaining <= 0:
                        return None
                    cap = min(self.s.backend.cutoff, remaining)
                pair = self.pairs[len(chal_costs)]
                rec = self.s.evaluate(challenger, *pair, cap=cap)
                chal_costs.append(rec.measured_cost)
                chal_pens.append(self.s.penalty(rec))
            if float(np.mean(chal_pens)) > float(np.mean(self.inc_penalties[:target])):
                return None
            if target == n:
                break
            target *= 2
        if not float(np.mean(chal_pens)) < float(np.mean(self.inc_penalties)):
            return None  # ties keep the incumbent
        self.inc_config = challenger
        self.inc_costs = chal_costs
        self.inc_penalties = chal_pens
        return float(np.mean(chal_pens))


def roar(
    backend: Backend,
    budget: float,
    rng: np.random.Generator,
    *,
    repetition: int = 0,
    slack: float = DEFAULT_SLACK,
    max_evals: int | None = None,
) -> Trajectory:
    """Random challengers raced against the incumbent with adaptive capping."""
    s = _Session(backend, budget, "roar", repetition, max_evals)
    traj = Trajectory("roar", repetition, backend.objective, [], s.records)
    intens = _Intensifier(s, rng, slack)
    if not intens.initialize(backend.space.default_config()):
        return traj
    traj.points.append(
        TrajectoryPoint(s.spent, intens.inc_config, intens.incumbent_estimate())
    )
    while not s.exhausted():
        challenger = backend.space.sample(rng)
        if not intens.extend_incumbent():
            break
        est = intens.race(challenger)
        if est is not None:
            traj.points.append(TrajectoryPoint(s.spent, challenger, est))
    return traj


# -- iterated local search ------------------------------------------------------


def _perturb(
    space: ConfigurationSpace, config: dict, rng: np.random.Generator, strength: int
) -> dict:
    """Kick move: resample `strength` randomly chosen parameters, re-project."""
    total = space.impute_inactive(config)
    names = list(space.names)
    k = min(int(strength), len(names))
    for i in rng.choice(len(names), size=k, replace=False):
        p = space.param(names[int(i)])
        total[p.name] = p.sample(rng)
    return space.project(total)


def ils(
    backend: Backend,
    budget: float,
    rng: np.random.Generator,
    *,
    repetition: int = 0,
    restart_prob: float = 0.01,
    perturb_strength: int = 3,
    runs_per_config: int = 5,
    slack: float = DEFAULT_SLACK,
    max_evals: int | None = None,
) -> Trajectory:
    """First-improvement local search with kicks, on a fixed comparison set.

    Neighbors are tried in random order and the first strict improvement is
    taken.  At a local optimum the walk either restarts from a uniform
    sample (probability restart_prob) or resamples perturb_strength random
    parameters.  The trajectory tracks the best configuration seen anywhere;
    runtime neighbor runs are capped against the current configuration's
    total, as in the racing procedures.
    """
    if not 0.0 <= restart_prob <= 1.0:
        raise ValueError("restart_prob must lie in [0, 1]")
    if perturb_strength < 1:
        raise ValueError("perturb_strength must be >= 1")
    s = _Session(backend, budget, "ils", repetition, max_evals)
    traj = Trajectory("ils", repetition, backend.objective, [], s.records)
    pairs = _draw_pairs(backend.instances, rng, runs_per_config)
    space = backend.space

    def run_all(config: dict, reference_total: float | None = None):
        """Full-set (mean, total); None when capped out or out of budget."""
        costs: list[float] = []
        pens: list[float] = []
        for inst, seed in pairs:
            if s.exhausted():
                return None
            cap = None
            if s.runtime and reference_total is not None:
                remaining = slack * reference_total - float(sum(costs))
                if remaining <= 0:
                    return None
                cap = min(backend.cutoff, remaining)
            rec = s.evaluate(config, inst, seed, cap=cap)
            costs.append(rec.measured_cost)
            pens.append(s.penalty(rec))
        return float(np.mean(pens)), float(sum(costs))

    current = space.default_config()
    got = run_all(current)
    if got is None:
        if s.records:  # partial initial read still seeds the trajectory
            pens = [s.penalty(r) for r in s.records]
            traj.points.append(TrajectoryPoint(s.spent, current, float(np.mean(pens))))
        return traj
    cur_mean, cur_total = got
    traj.points.append(TrajectoryPoint(s.spent, current, cur_mean))
    inc_mean = cur_mean

    while not s.exhausted():
        improved = False
        nbrs = space.neighbors(current, rng)
        for i in rng.permutation(len(nbrs)):
            if s.exhausted():
                break
            got = run_all(nbrs[int(i)], cur_total)
            if got is not None and got[0] < cur_mean:
                current = nbrs[int(i)]
                cur_mean, cur_total = got
                improved = True
                if cur_mean < inc_mean:
                    inc_mean = cur_mean
                    traj.points.append(TrajectoryPoint(s.spent, current, cur_mean))
                break
        if s.exhausted():
            break
        if improved:
            continue
        if float(rng.uniform()) < restart_prob:
            current = space.sample(rng)
        else:
            current = _perturb(space, current, rng, perturb_strength)
        got = run_all(current)
        if got is None:
            break
        cur_mean, cur_total = got
        if cur_mean < inc_mean:
            inc_mean = cur_mean
            traj.points.append(TrajectoryPoint(s.spent, current, cur_mean))
    return traj


# -- model-guided search ---------------------------------------------------------


def _expected_improvement(
    f_star: float, mean: np.ndarray, sigma: np.ndarray
) -> np.ndarray:
    """Closed-form EI for minimization; zero-variance points get max(gap, 0)."""
    imp = f_star - mean
    ei = np.maximum(imp, 0.0)
    pos = sigma > 0
    u = imp[pos] / sigma[pos]
    ei[pos] = imp[pos] * norm.cdf(u) + sigma[pos] * norm.pdf(u)
    return ei


def smac_lite(
    backend: Backend,
    budget: float,
    rng: np.random.Generator,
    *,
    repetition: int = 0,
    n_random_fraction: float = 0.5,
    slack: float = DEFAULT_SLACK,
    n_candidates: int = 10,
    max_evals: int | None = None,
) -> Trajectory:
    """Forest-guided challenger selection with the same racing as roar.

    A small forest is fit to per-configuration mean costs (log10 PAR10 for
    runtime, raw for quality), marginal over instances.  Challengers maximize
    expected improvement over the incumbent's neighbors plus uniform samples;
    a coin with probability n_random_fraction interleaves pure random picks.
    """
    if not 0.0 <= n_random_fraction <= 1.0:
        raise ValueError("n_random_fraction must lie in [0, 1]")
    s = _Session(backend, budget, "smac_lite", repetition, max_evals)
    traj = Trajectory("smac_lite", repetition, backend.objective, [], s.records)
    space = backend.space
    intens = _Intensifier(s, rng, slack)
    if not intens.initialize(space.default_config()):
        return traj
    traj.points.append(
        TrajectoryPoint(s.spent, intens.inc_config, intens.incumbent_estimate())
    )
    is_cat, n_cats = space.feature_meta(0)
    model_cfg = ForestConfig(num_trees=16, min_samples_to_split=2)

    def model_target(rec: RunRecord) -> float:
        if s.runtime:
            return math.log10(max(s.penalty(rec), MIN_COST))
        return rec.measured_cost

    def pick_challenger() -> dict:
        history: dict[str, tuple[dict, list[float]]] = {}
        for rec in s.records:
            key = canonical_config(rec.config)
            history.setdefault(key, (rec.config, []))[1].append(model_target(rec))
        if len(history) < 2 or float(rng.uniform()) < n_random_fraction:
            return space.sample(rng)
        configs = [cfg for cfg, _ in history.values()]
        X = np.stack([space.encode(c) for c in configs])
        y = np.array([float(np.mean(v)) for _, v in history.values()])
        forest = fit_forest(X, y, is_cat, n_cats, model_cfg, rng)
        f_star = float(y.min())
        cands = space.neighbors(intens.inc_config, rng)
        cands += [space.sample(rng) for _ in range(n_candidates)]
        Xc = np.stack([space.encode(c) for c in cands])
        mean, var = forest.predict_mean_var(Xc)
        ei = _expected_improvement(f_star, mean, np.sqrt(np.maximum(var, 0.0)))
        return cands[int(np.argmax(ei))]

    while not s.exhausted():
        challenger = pick_challenger()
        if not intens.extend_incumbent():
            break
        est = intens.race(challenger)
        if est is not None:
            traj.points.append(TrajectoryPoint(s.spent, challenger, est))
    return traj


# -- dataset assembly -------------------------------------------------------------


def validate_incumbents(
    traj: Trajectory,
    backend: Backend,
    rng: np.random.Generator,
    *,
    seeds_per_instance: int = 1,
) -> list[RunRecord]:
    """Run every distinct incumbent on the test split, flagged as validation.

    These runs happen outside the configuration budget.  Appends to
    traj.validations and returns the new records.
    """
    if seeds_per_instance < 1:
        raise ValueError("seeds_per_instance must be >= 1")
    runtime = backend.objective == "runtime"
    out: list[RunRecord] = []
    seen: set[str] = set()
    for pt in traj.points:
        key = canonical_config(pt.config)
        if key in seen:
            continue
        seen.add(key)
        for inst in backend.instances.test_ids():
            for _ in range(seeds_per_instance):
                seed = int(rng.integers(2**31 - 1))
                res = backend.evaluate(pt.config, inst, seed)
                out.append(
                    RunRecord(
                        config=pt.config,
                        instance=inst,
                        seed=seed,
                        status=res.status,
                        measured_cost=res.cost,
                        cutoff=backend.cutoff if runtime else 1.0,
                        source=(traj.configurator, traj.repetition),
                        is_validation=True,
                    )
                )
    traj.validations.extend(out)
    return out


def export_dataset(
    trajectories: list[Trajectory],
    space: ConfigurationSpace,
    instances: InstanceSet,
    objective: str = "runtime",
) -> Dataset:
    """Bundle all configuration and validation runs into one dataset."""
    records: list[RunRecord] = []
    for traj in trajectories:
        records.extend(traj.evaluations)
        records.extend(traj.validations)
    return Dataset(space, instances, tuple(records), objective)


CONFIGURATORS: dict[str, Callable[..., Trajectory]] = {
    "random_search": random_search,
    "roar": roar,
    "ils": ils,
    "smac_lite": smac_lite,
}
