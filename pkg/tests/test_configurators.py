import math

import numpy as np
import pytest

from surrbench.backends import (
    EvalResult,
    SyntheticBackend,
    SyntheticSpec,
    truncate_runtime,
)
from surrbench.configurators import (
    CONFIGURATORS,
    Trajectory,
    TrajectoryPoint,
    _draw_pairs,
    _expected_improvement,
    export_dataset,
    ils,
    random_search,
    roar,
    smac_lite,
    validate_incumbents,
)
from surrbench.rundata import InstanceSet, RunStatus
from surrbench.space import canonical_config, parse_space


def make_instances(n_train: int, n_test: int = 0) -> InstanceSet:
    n = n_train + n_test
    ids = tuple(f"i{k:02d}" for k in range(n))
    feats = np.arange(n, dtype=np.float64).reshape(n, 1)
    split = ("train",) * n_train + ("test",) * n_test
    return InstanceSet(ids, feats, split)


class QualityTable:
    """Noise-free quality backend scoring configs with a plain function."""

    def __init__(self, space_text, fn, n_train=2, n_test=0):
        self.space = parse_space(space_text)
        self.instances = make_instances(n_train, n_test)
        self.objective = "quality"
        self.cutoff = None
        self.fn = fn
        self.n_evaluations = 0

    def evaluate(self, config, instance_id, seed, cap=None):
        if cap is not None:
            raise ValueError("caps only apply to runtime objectives")
        self.instances.feature_vector(instance_id)
        self.n_evaluations += 1
        return EvalResult(RunStatus.SUCCESS, float(self.fn(config)))


class RuntimeTable:
    """Noise-free runtime backend: fn gives seconds, caps and cutoff apply."""

    def __init__(self, space_text, fn, cutoff=100.0, n_train=2, n_test=0):
        self.space = parse_space(space_text)
        self.instances = make_instances(n_train, n_test)
        self.objective = "runtime"
        self.cutoff = float(cutoff)
        self.fn = fn
        self.n_evaluations = 0

    def evaluate(self, config, instance_id, seed, cap=None):
        self.instances.feature_vector(instance_id)
        self.n_evaluations += 1
        return truncate_runtime(float(self.fn(config)), cap, self.cutoff)


TWO_CHOICES = "x categorical {bad, good} [bad]\n"
TWO_CHOICES_GOOD = "x categorical {good, bad} [good]\n"
CHAIN = "x integer [0, 9] [5]\n"


def two_level(config):
    return 1.0 if config["x"] == "good" else 2.0


def assert_same_trajectory(a: Trajectory, b: Trajectory):
    assert a.configurator == b.configurator and a.repetition == b.repetition
    assert [(p.budget, canonical_config(p.config), p.estimate) for p in a.points] == [
        (p.budget, canonical_config(p.config), p.estimate) for p in b.points
    ]
    assert [
        (r.instance, r.seed, r.status, r.measured_cost) for r in a.evaluations
    ] == [(r.instance, r.seed, r.status, r.measured_cost) for r in b.evaluations]


def assert_trajectory_shape(traj: Trajectory):
    budgets = [p.budget for p in traj.points]
    assert budgets == sorted(budgets)
    assert all(b2 > b1 for b1, b2 in zip(budgets, budgets[1:]))
    for rec in traj.evaluations:
        assert rec.source == (traj.configurator, traj.repetition)
        assert not rec.is_validation


class TestDrawPairs:
    def test_block_structure(self):
        inst = make_instances(3, 1)
        pairs = _draw_pairs(inst, np.random.default_rng(0), 7)
        assert len(pairs) == 7
        names = [p[0] for p in pairs]
        assert set(names) <= set(inst.train_ids())
        counts = {n: names.count(n) for n in set(names)}
        assert max(counts.values()) - min(counts.values()) <= 1

    def test_deterministic(self):
        inst = make_instances(4)
        a = _draw_pairs(inst, np.random.default_rng(9), 6)
        b = _draw_pairs(inst, np.random.default_rng(9), 6)
        assert a == b

    def test_rejects_zero_runs(self):
        with pytest.raises(ValueError, match="runs_per_config"):
            _draw_pairs(make_instances(2), np.random.default_rng(0), 0)


class TestRandomSearch:
    def test_one_point_space(self):
        backend = QualityTable("x categorical {only}\n", lambda c: 3.5)
        traj = random_search(backend, 10, np.random.default_rng(0), runs_per_config=2)
        assert all(p.config == {"x": "only"} for p in traj.points)
        assert traj.points[0].estimate == 3.5
        assert traj.spent == 10

    def test_budget_for_single_config(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        traj = random_search(backend, 4, np.random.default_rng(1), runs_per_config=4)
        assert len(traj.points) == 1
        assert traj.points[0].config == {"x": "bad"}  # the default seeds the search
        assert len(traj.evaluations) == 4

    def test_dominating_config_wins(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        traj = random_search(backend, 40, np.random.default_rng(2), runs_per_config=2)
        assert traj.final().config == {"x": "good"}
        assert traj.final().estimate == 1.0

    def test_estimates_non_increasing_noise_free(self):
        backend = QualityTable(
            "a real [0.0, 1.0]\nb real [0.0, 1.0]\n",
            lambda c: (c["a"] - 0.3) ** 2 + (c["b"] - 0.6) ** 2,
        )
        traj = random_search(backend, 120, np.random.default_rng(3), runs_per_config=2)
        ests = [p.estimate for p in traj.points]
        assert len(ests) >= 3
        assert all(e2 < e1 for e1, e2 in zip(ests, ests[1:]))
        assert_trajectory_shape(traj)

    def test_runtime_budget_overshoot_bound(self):
        backend = RuntimeTable(TWO_CHOICES, lambda c: 3.0, cutoff=50.0)
        traj = random_search(backend, 20, np.random.default_rng(4), runs_per_config=3)
        assert traj.spent >= 20
        assert traj.spent <= 20 + 3.0
        assert traj.spent == pytest.approx(
            sum(r.measured_cost for r in traj.evaluations)
        )

    def test_max_evals_stops_collection(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        traj = random_search(
            backend, 10_000, np.random.default_rng(5), runs_per_config=2, max_evals=17
        )
        assert len(traj.evaluations) == 17

    def test_deterministic(self):
        backend_a = QualityTable(TWO_CHOICES, two_level)
        backend_b = QualityTable(TWO_CHOICES, two_level)
        a = random_search(backend_a, 30, np.random.default_rng(6), repetition=2)
        b = random_search(backend_b, 30, np.random.default_rng(6), repetition=2)
        assert_same_trajectory(a, b)
        assert a.repetition == 2

    def test_rejects_bad_budget(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        with pytest.raises(ValueError, match="budget"):
            random_search(backend, 0, np.random.default_rng(0))


class TestRoar:
    def test_unbeaten_incumbent_never_changes(self):
        backend = QualityTable(TWO_CHOICES_GOOD, two_level)
        traj = roar(backend, 60, np.random.default_rng(0))
        assert len(traj.points) == 1
        assert traj.points[0].config == {"x": "good"}

    def test_dominating_challenger_adopted(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        traj = roar(backend, 60, np.random.default_rng(1))
        assert traj.final().config == {"x": "good"}
        assert traj.final().estimate == 1.0
        assert_trajectory_shape(traj)

    def test_capped_challenger_runs_censored(self):
        # good default takes 1s; bad challengers exceed 1.3x the incumbent
        # total almost immediately and must be recorded as censored
        backend = RuntimeTable(TWO_CHOICES_GOOD, lambda c: two_level(c) * 30, cutoff=90.0)
        traj = roar(backend, 2000, np.random.default_rng(2))
        chal = [r for r in traj.evaluations if r.config == {"x": "bad"}]
        assert chal, "expected at least one challenger run"
        assert any(r.status is RunStatus.CENSORED for r in chal)
        for r in chal:
            if r.status is RunStatus.CENSORED:
                assert r.measured_cost < backend.cutoff
        assert traj.final().config == {"x": "good"}

    def test_budget_accounting(self):
        backend = RuntimeTable(TWO_CHOICES, lambda c: two_level(c) * 5, cutoff=40.0)
        traj = roar(backend, 100, np.random.default_rng(3))
        assert traj.spent <= 100 + backend.cutoff
        assert traj.spent == pytest.approx(
            sum(r.measured_cost for r in traj.evaluations)
        )

    def test_deterministic_on_synthetic(self):
        spec = SyntheticSpec(calibration_draws=2000)
        a = roar(SyntheticBackend(spec), 3000, np.random.default_rng(7), max_evals=60)
        b = roar(SyntheticBackend(spec), 3000, np.random.default_rng(7), max_evals=60)
        assert_same_trajectory(a, b)
        assert_trajectory_shape(a)

    def test_slack_validation(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        with pytest.raises(ValueError, match="slack"):
            roar(backend, 10, np.random.default_rng(0), slack=0.5)


class TestIls:
    def test_reaches_unimodal_optimum(self):
        backend = QualityTable(CHAIN, lambda c: abs(c["x"] - 7) + 1.0)
        traj = ils(backend, 200, np.random.default_rng(0), runs_per_config=1)
        assert traj.final().config["x"] == 7
        assert traj.final().estimate == 1.0
        assert_trajectory_shape(traj)

    def test_incumbent_tracks_global_best(self):
        backend = QualityTable(CHAIN, lambda c: abs(c["x"] - 7) + 1.0)
        traj = ils(
            backend, 150, np.random.default_rng(1), runs_per_config=1, restart_prob=0.3
        )
        by_config: dict[str, list[float]] = {}
        for r in traj.evaluations:
            by_config.setdefault(canonical_config(r.config), []).append(r.measured_cost)
        best_seen = min(float(np.mean(v)) for v in by_config.values())
        assert traj.final().estimate == pytest.approx(best_seen)
        ests = [p.estimate for p in traj.points]
        assert all(e2 < e1 for e1, e2 in zip(ests, ests[1:]))

    def test_runtime_capping_censors_bad_neighbors(self):
        backend = RuntimeTable(CHAIN, lambda c: abs(c["x"] - 7) * 5.0 + 1.0, cutoff=100.0)
        traj = ils(backend, 400, np.random.default_rng(2), runs_per_config=2)
        assert any(r.status is RunStatus.CENSORED for r in traj.evaluations)
        assert traj.final().config["x"] == 7

    def test_restarts_explore(self):
        backend = QualityTable(CHAIN, lambda c: abs(c["x"] - 7) + 1.0)
        traj = ils(
            backend, 120, np.random.default_rng(3), runs_per_config=1, restart_prob=1.0
        )
        starts = {canonical_config(r.config) for r in traj.evaluations}
        assert len(starts) >= 4

    def test_deterministic(self):
        mk = lambda: QualityTable(CHAIN, lambda c: abs(c["x"] - 7) + 1.0)
        a = ils(mk(), 90, np.random.default_rng(4), runs_per_config=2)
        b = ils(mk(), 90, np.random.default_rng(4), runs_per_config=2)
        assert_same_trajectory(a, b)

    def test_parameter_validation(self):
        backend = QualityTable(CHAIN, lambda c: 1.0)
        with pytest.raises(ValueError, match="restart_prob"):
            ils(backend, 10, np.random.default_rng(0), restart_prob=2.0)
        with pytest.raises(ValueError, match="perturb_strength"):
            ils(backend, 10, np.random.default_rng(0), perturb_strength=0)


class TestExpectedImprovement:
    def test_zero_variance_gap(self):
        ei = _expected_improvement(1.0, np.array([0.4]), np.array([0.0]))
        assert ei[0] == pytest.approx(0.6)

    def test_zero_variance_worse_mean(self):
        ei = _expected_improvement(1.0, np.array([2.0]), np.array([0.0]))
        assert ei[0] == 0.0

    def test_matches_closed_form(self):
        from scipy.stats import norm

        f_star, mu, sigma = 2.0, 1.5, 0.8
        u = (f_star - mu) / sigma
        want = (f_star - mu) * norm.cdf(u) + sigma * norm.pdf(u)
        ei = _expected_improvement(f_star, np.array([mu]), np.array([sigma]))
        assert ei[0] == pytest.approx(want, rel=1e-12)

    def test_monotone_in_mean(self):
        means = np.array([0.0, 0.5, 1.0, 1.5])
        ei = _expected_improvement(1.0, means, np.full(4, 0.3))
        assert all(a > b for a, b in zip(ei, ei[1:]))


class TestSmacLite:
    def test_improves_on_table(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        traj = smac_lite(backend, 60, np.random.default_rng(0))
        assert traj.final().config == {"x": "good"}
        assert_trajectory_shape(traj)

    def test_beats_random_on_unimodal(self):
        def score(c):
            return (c["x"] - 7.0) ** 2 + (c["y"] - 2.0) ** 2 + 0.3

        space = "x real [0.0, 10.0]\ny real [0.0, 10.0]\n"
        finals = {"smac_lite": [], "random_search": []}
        for rep in range(10):
            rng = np.random.default_rng(100 + rep)
            t = smac_lite(QualityTable(space, score), 240, rng, repetition=rep)
            finals["smac_lite"].append(t.final().estimate)
            rng = np.random.default_rng(100 + rep)
            t = random_search(
                QualityTable(space, score), 240, rng, repetition=rep, runs_per_config=2
            )
            finals["random_search"].append(t.final().estimate)
        assert np.median(finals["smac_lite"]) <= np.median(finals["random_search"])

    def test_deterministic(self):
        mk = lambda: QualityTable(CHAIN, lambda c: abs(c["x"] - 7) + 1.0)
        a = smac_lite(mk(), 50, np.random.default_rng(5))
        b = smac_lite(mk(), 50, np.random.default_rng(5))
        assert_same_trajectory(a, b)

    def test_fraction_validation(self):
        backend = QualityTable(CHAIN, lambda c: 1.0)
        with pytest.raises(ValueError, match="n_random_fraction"):
            smac_lite(backend, 10, np.random.default_rng(0), n_random_fraction=1.5)

    def test_runtime_smoke(self):
        backend = RuntimeTable(CHAIN, lambda c: abs(c["x"] - 7) * 4.0 + 1.0, cutoff=60.0)
        traj = smac_lite(backend, 600, np.random.default_rng(6))
        assert traj.final().estimate <= traj.points[0].estimate
        assert traj.spent <= 600 + backend.cutoff


class TestValidateIncumbents:
    def test_runs_test_split_only(self):
        backend = QualityTable(TWO_CHOICES, two_level, n_train=2, n_test=2)
        traj = random_search(backend, 40, np.random.default_rng(0), runs_per_config=2)
        recs = validate_incumbents(traj, backend, np.random.default_rng(1))
        n_distinct = len({canonical_config(p.config) for p in traj.points})
        assert len(recs) == n_distinct * 2
        assert traj.validations == recs
        for r in recs:
            assert r.is_validation
            assert r.instance in backend.instances.test_ids()
            assert r.source == ("random_search", 0)

    def test_seeds_per_instance(self):
        backend = QualityTable(TWO_CHOICES, two_level, n_train=2, n_test=1)
        traj = random_search(backend, 20, np.random.default_rng(2), runs_per_config=2)
        recs = validate_incumbents(
            traj, backend, np.random.default_rng(3), seeds_per_instance=4
        )
        n_distinct = len({canonical_config(p.config) for p in traj.points})
        assert len(recs) == n_distinct * 4
        with pytest.raises(ValueError, match="seeds_per_instance"):
            validate_incumbents(traj, backend, np.random.default_rng(0), seeds_per_instance=0)

    def test_configuration_runs_stay_on_train_split(self):
        spec = SyntheticSpec(calibration_draws=2000)
        backend = SyntheticBackend(spec)
        traj = roar(backend, 5000, np.random.default_rng(4), max_evals=80)
        train = set(backend.instances.train_ids())
        assert all(r.instance in train for r in traj.evaluations)
        validate_incumbents(traj, backend, np.random.default_rng(5))
        test = set(backend.instances.test_ids())
        assert traj.validations
        assert all(r.instance in test for r in traj.validations)


class TestExportDataset:
    def test_bundles_all_runs(self):
        backend = QualityTable(TWO_CHOICES, two_level, n_train=2, n_test=1)
        rng = np.random.default_rng(0)
        trajs = [
            random_search(backend, 20, rng, repetition=0, runs_per_config=2),
            random_search(backend, 20, rng, repetition=1, runs_per_config=2),
        ]
        for t in trajs:
            validate_incumbents(t, backend, rng)
        ds = export_dataset(trajs, backend.space, backend.instances, backend.objective)
        want = sum(len(t.evaluations) + len(t.validations) for t in trajs)
        assert len(ds) == want
        sources = {r.source for r in ds.records}
        assert sources == {("random_search", 0), ("random_search", 1)}
        assert any(r.is_validation for r in ds.records)

    def test_runtime_records_validate(self):
        backend = RuntimeTable(TWO_CHOICES, lambda c: two_level(c) * 20, cutoff=30.0)
        traj = roar(backend, 400, np.random.default_rng(1))
        ds = export_dataset([traj], backend.space, backend.instances, "runtime")
        statuses = {r.status for r in ds.records}
        assert RunStatus.SUCCESS in statuses
        assert ds.cutoff() == 30.0


class TestRegistry:
    def test_names_and_callables(self):
        assert set(CONFIGURATORS) == {"random_search", "roar", "ils", "smac_lite"}
        backend = QualityTable(TWO_CHOICES, two_level)
        for name, fn in CONFIGURATORS.items():
            traj = fn(backend, 8, np.random.default_rng(0), repetition=1)
            assert traj.configurator == name
            assert traj.repetition == 1


class TestTrajectoryHelpers:
    def test_incumbent_at_budget(self):
        pts = [
            TrajectoryPoint(1.0, {"x": "a"}, 5.0),
            TrajectoryPoint(4.0, {"x": "b"}, 3.0),
            TrajectoryPoint(9.0, {"x": "c"}, 4.0),
        ]
        traj = Trajectory("roar", 0, "quality", pts, [])
        assert traj.incumbent_at(0.5) is None
        assert traj.incumbent_at(1.0).estimate == 5.0
        assert traj.incumbent_at(5.0).estimate == 3.0
        # a later, worse point never displaces the earlier best
        assert traj.incumbent_at(math.inf).estimate == 3.0
        assert traj.final().config == {"x": "b"}
