import copy
import json
import math

import numpy as np
import pytest

from surrbench.backends import SyntheticBackend, SyntheticSpec
from surrbench.configurators import random_search, roar, validate_incumbents, export_dataset
from surrbench.forest import ForestConfig
from surrbench.harness import (
    FidelityReport,
    compare,
    default_budget_grid,
    fidelity_to_json,
    loco_splits,
    loro_splits,
    model_quality,
    quality_to_json,
    write_json_report,
    write_quality_csv,
    write_trajectories_csv,
)
from surrbench.rundata import DataError, RunStatus
from surrbench.stats import Outcome, surrogate_error

from test_configurators import QualityTable, RuntimeTable, TWO_CHOICES, two_level

FAST_SPEC = SyntheticSpec(calibration_draws=2000)
SMALL_FOREST = ForestConfig(num_trees=16)


@pytest.fixture(scope="module")
def synth_dataset():
    backend = SyntheticBackend(FAST_SPEC)
    trajs = []
    for rep in range(2):
        for fn, ci in ((random_search, 0), (roar, 1)):
            rng = np.random.default_rng(np.random.SeedSequence((3, ci, rep)))
            traj = fn(backend, 1e6, rng, repetition=rep, max_evals=50)
            validate_incumbents(traj, backend, rng)
            trajs.append(traj)
    return export_dataset(trajs, backend.space, backend.instances, backend.objective)


class TestSplits:
    def test_loro_partitions_by_repetition(self, synth_dataset):
        splits = loro_splits(synth_dataset)
        assert [s.label for s in splits] == ["run=0", "run=1"]
        n = len(synth_dataset.records)
        for s in splits:
            assert sorted(s.train_idx + s.test_idx) == list(range(n))
            rep = int(s.held_out)
            assert all(synth_dataset.records[i].source[1] == rep for i in s.test_idx)
            assert all(synth_dataset.records[i].source[1] != rep for i in s.train_idx)
            assert s.kind == "loro"

    def test_loco_partitions_by_configurator(self, synth_dataset):
        splits = loco_splits(synth_dataset)
        assert [s.held_out for s in splits] == ["random_search", "roar"]
        for s in splits:
            assert all(
                synth_dataset.records[i].source[0] == s.held_out for i in s.test_idx
            )
            assert s.kind == "loco"

    def test_loro_needs_two_repetitions(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        traj = random_search(backend, 8, np.random.default_rng(0), runs_per_config=2)
        ds = export_dataset([traj], backend.space, backend.instances, "quality")
        with pytest.raises(DataError, match="repetitions"):
            loro_splits(ds)

    def test_loco_needs_two_configurators(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        traj = random_search(backend, 8, np.random.default_rng(0), runs_per_config=2)
        ds = export_dataset([traj], backend.space, backend.instances, "quality")
        with pytest.raises(DataError, match="configurators"):
            loco_splits(ds)


class TestModelQuality:
    def test_loro_rows_and_scores(self, synth_dataset):
        report = model_quality(
            synth_dataset, loro_splits(synth_dataset), config=SMALL_FOREST, seed=1
        )
        assert report.kind == "loro"
        assert report.objective == "runtime"
        agg = report.lookup("mean", "all", "all")
        assert agg.n == len(
            [r for r in synth_dataset.records if r.status is not RunStatus.CENSORED]
        )
        assert agg.rmse is not None and agg.rmse > 0
        assert agg.cc is not None and -1.0 <= agg.cc <= 1.0
        per_run = report.lookup("run=0", "all", "configuration")
        assert per_run.n > 0
        val = report.lookup("mean", "all", "validation")
        assert val.n > 0
        for name in ("random_search", "roar"):
            assert report.lookup("mean", name, "all").n > 0

    def test_censored_rows_are_skipped(self, synth_dataset):
        n_cen = sum(1 for r in synth_dataset.records if r.status is RunStatus.CENSORED)
        assert n_cen > 0, "fixture should contain capped runs"
        report = model_quality(
            synth_dataset, loro_splits(synth_dataset), config=SMALL_FOREST
        )
        agg = report.lookup("mean", "all", "all")
        assert agg.n == len(synth_dataset.records) - n_cen

    def test_loco_runs(self, synth_dataset):
        report = model_quality(
            synth_dataset, loco_splits(synth_dataset), config=SMALL_FOREST
        )
        assert report.kind == "loco"
        held = report.lookup("configurator=roar", "roar", "all")
        assert held.n > 0

    def test_constant_truth_gives_missing_cc(self):
        backend = QualityTable(TWO_CHOICES, lambda c: 1.0, n_train=2, n_test=1)
        trajs = []
        for rep in range(2):
            rng = np.random.default_rng(rep)
            t = random_search(backend, 12, rng, repetition=rep, runs_per_config=2)
            validate_incumbents(t, backend, rng)
            trajs.append(t)
        ds = export_dataset(trajs, backend.space, backend.instances, "quality")
        report = model_quality(ds, loro_splits(ds), config=SMALL_FOREST)
        agg = report.lookup("mean", "all", "all")
        assert agg.cc is None
        assert agg.rmse is not None

    def test_deterministic_given_seed(self, synth_dataset):
        a = model_quality(
            synth_dataset, loro_splits(synth_dataset), config=SMALL_FOREST, seed=7
        )
        b = model_quality(
            synth_dataset, loro_splits(synth_dataset), config=SMALL_FOREST, seed=7
        )
        assert quality_to_json(a) == quality_to_json(b)

    def test_rejects_empty_split_list(self, synth_dataset):
        with pytest.raises(DataError, match="no splits"):
            model_quality(synth_dataset, [])


class TestBudgetGrid:
    def test_runtime_grid_spans_cutoff_to_budget(self):
        backend = RuntimeTable(TWO_CHOICES, lambda c: 1.0, cutoff=10.0)
        grid = default_budget_grid(backend, 1000.0, 20)
        assert len(grid) == 20
        assert grid[0] == 10.0 and grid[-1] == 1000.0
        assert list(grid) == sorted(grid)

    def test_quality_grid_starts_at_two(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        grid = default_budget_grid(backend, 64.0, 6)
        assert grid[0] == 2.0 and grid[-1] == 64.0

    def test_tiny_budget_collapses(self):
        backend = RuntimeTable(TWO_CHOICES, lambda c: 1.0, cutoff=10.0)
        assert default_budget_grid(backend, 5.0, 20) == (5.0,)


class TestCompare:
    def test_identity_control_error_zero(self):
        backend = RuntimeTable(TWO_CHOICES, lambda c: two_level(c) * 4, cutoff=30.0)
        report = compare(
            backend,
            backend,
            300.0,
            names=("random_search", "roar"),
            n_runs=3,
            n_budgets=6,
            master_seed=11,
        )
        assert report.error == 0.0
        assert report.outcomes_original == report.outcomes_surrogate
        assert report.best_original == report.best_surrogate
        assert len(report.budgets) == 6
        assert report.timing.mean_original_cost is not None
        assert report.timing.speedup is not None

    def test_matched_seeds_share_structure(self):
        orig = QualityTable(TWO_CHOICES, two_level)
        surr = QualityTable(TWO_CHOICES, two_level)
        report = compare(
            orig, surr, 30, names=("random_search", "roar"), n_runs=2, n_budgets=4
        )
        assert report.error == 0.0
        pairs = {("random_search", "roar")}
        for table in (report.outcomes_original, report.outcomes_surrogate):
            assert set(table.keys()) == set(report.budgets)
            for cell in table.values():
                assert set(cell.keys()) == pairs

    def test_single_flipped_cell_costs_one_over_pb(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        report = compare(
            backend,
            backend,
            30,
            names=("random_search", "roar", "ils"),
            n_runs=2,
            n_budgets=5,
        )
        tweaked = copy.deepcopy(report.outcomes_surrogate)
        b0 = report.budgets[0]
        pair = next(iter(tweaked[b0]))
        was = tweaked[b0][pair]
        tweaked[b0][pair] = Outcome.FIRST if was is not Outcome.FIRST else Outcome.SECOND
        err = surrogate_error(report.outcomes_original, tweaked)
        penalty = 0.5 if was is Outcome.TIE else 1.0
        assert err == pytest.approx(penalty / 3 / 5)

    def test_disagreeing_backends_show_positive_error(self):
        # the original separates local search from random sampling on a
        # smooth 4-d bowl; the flat stand-in erases that, so decisive
        # outcomes degrade into ties and the error must be positive
        space = "".join(f"y{i} real [0.0, 10.0]\n" for i in range(4))

        def score(c):
            return 0.3 + sum(((c[f"y{i}"] - 7.0) / 7.0) ** 2 for i in range(4))

        orig = QualityTable(space, score)
        flat = QualityTable(space, lambda c: 1.5)
        kw = {"ils": {"runs_per_config": 1}, "random_search": {"runs_per_config": 1}}
        report = compare(
            orig,
            flat,
            120,
            names=("ils", "random_search"),
            n_runs=5,
            n_budgets=4,
            master_seed=3,
            configurator_kwargs=kw,
        )
        b_last = report.budgets[-1]
        pair = ("ils", "random_search")
        assert report.outcomes_original[b_last][pair] is Outcome.FIRST
        assert report.outcomes_surrogate[b_last][pair] is Outcome.TIE
        assert report.error > 0.0

    def test_deterministic_report(self):
        mk = lambda: RuntimeTable(TWO_CHOICES, lambda c: two_level(c) * 2, cutoff=25.0)
        a = compare(mk(), mk(), 120.0, names=("random_search", "roar"), n_runs=2, n_budgets=4)
        b = compare(mk(), mk(), 120.0, names=("random_search", "roar"), n_runs=2, n_budgets=4)
        assert fidelity_to_json(a) == fidelity_to_json(b)
        dumped = json.dumps(fidelity_to_json(a), sort_keys=True)
        assert json.dumps(fidelity_to_json(b), sort_keys=True) == dumped

    def test_validation(self):
        backend = QualityTable(TWO_CHOICES, two_level)
        with pytest.raises(ValueError, match="distinct"):
            compare(backend, backend, 10, names=("roar",))
        with pytest.raises(ValueError, match="unknown"):
            compare(backend, backend, 10, names=("roar", "nope"))
        with pytest.raises(ValueError, match="n_runs"):
            compare(backend, backend, 10, names=("roar", "ils"), n_runs=1)
        runtime = RuntimeTable(TWO_CHOICES, lambda c: 1.0)
        with pytest.raises(ValueError, match="objective"):
            compare(backend, runtime, 10, names=("roar", "ils"))


class TestWriters:
    def test_json_report_bytes_stable(self, tmp_path):
        backend = QualityTable(TWO_CHOICES, two_level)
        report = compare(
            backend, backend, 20, names=("random_search", "roar"), n_runs=2, n_budgets=3
        )
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_json_report(fidelity_to_json(report), p1)
        write_json_report(fidelity_to_json(report), p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = json.loads(p1.read_text())
        assert loaded["error"] == 0.0
        assert "timing" not in loaded
        with_timing = fidelity_to_json(report, include_timing=True)
        assert "timing" in with_timing

    def test_quality_csv_shape(self, tmp_path, synth_dataset):
        report = model_quality(
            synth_dataset, loro_splits(synth_dataset), config=SMALL_FOREST
        )
        path = tmp_path / "quality.csv"
        write_quality_csv(report, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "split,configurator,scope,n,rmse,cc"
        assert len(lines) == len(report.rows) + 1

    def test_trajectory_csv_rows(self, tmp_path):
        backend = QualityTable(TWO_CHOICES, two_level)
        report = compare(
            backend, backend, 20, names=("random_search", "roar"), n_runs=2, n_budgets=3
        )
        path = tmp_path / "traj.csv"
        write_trajectories_csv(report, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "budget,run,configurator,backend,cost"
        n_points = sum(
            len(t.points)
            for t in report.trajectories_original + report.trajectories_surrogate
        )
        assert len(lines) == n_points + 1
        assert any(",original," in ln for ln in lines[1:])
        assert any(",surrogate," in ln for ln in lines[1:])

    def test_inf_best_serializes_as_null(self):
        report = FidelityReport(
            objective="quality",
            configurators=("a", "b"),
            n_runs=1,
            run_budget=1.0,
            budgets=(1.0,),
            error=0.0,
            outcomes_original={1.0: {("a", "b"): Outcome.TIE}},
            outcomes_surrogate={1.0: {("a", "b"): Outcome.TIE}},
            best_original={"a": [[math.inf]], "b": [[2.0]]},
            best_surrogate={"a": [[math.inf]], "b": [[2.0]]},
        )
        payload = fidelity_to_json(report)
        assert payload["best_original"]["a"] == [[None]]
        assert payload["best_original"]["b"] == [[2.0]]
