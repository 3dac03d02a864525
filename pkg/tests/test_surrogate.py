import numpy as np
import pytest

from surrbench.forest import ForestConfig
from surrbench.rundata import (
    Dataset,
    DataError,
    InstanceSet,
    RunRecord,
    RunStatus,
)
from surrbench.space import SpaceError, parse_space
from surrbench.stats import spearman
from surrbench.surrogate import (
    ModelDigestError,
    ModelTruncatedError,
    ModelVersionError,
    SurrogateBenchmark,
    _hash_unit,
    benchmark_from_bytes,
    benchmark_to_bytes,
    build_benchmark,
    load_benchmark,
    save_benchmark,
)

SPACE_TEXT = """\
solver categorical {dfs, bfs, greedy} [dfs]
effort real [0.1, 10.0] [1.0] (log)
retries integer [0, 8] [2]
bias real [0.0, 1.0] [0.5]
bias | solver in {greedy}
"""

CUTOFF = 100.0


def true_log_cost(cfg, inst_offset):
    """Generative model behind the synthetic run log."""
    base = {"dfs": 0.6, "bfs": 0.9, "greedy": 0.2}[cfg["solver"]]
    base += 0.8 * np.log10(cfg["effort"]) + 0.05 * cfg["retries"]
    if cfg["solver"] == "greedy":
        base += 0.6 * cfg["bias"]
    return base + inst_offset


def make_dataset(objective="runtime", n_configs=50, crashed=0):
    space = parse_space(SPACE_TEXT)
    offsets = [0.0, 0.4, 0.8, 1.2]
    instances = InstanceSet(
        ids=("i0", "i1", "i2", "i3"),
        features=np.array([[o, 1.0] for o in offsets]),
        split=("train", "train", "train", "test"),
    )
    rng = np.random.default_rng(2024)
    records = []
    for k in range(n_configs):
        cfg = space.sample(rng)
        for idx, inst in enumerate(("i0", "i1", "i2")):
            for seed in (0, 1):
                log_cost = true_log_cost(cfg, offsets[idx])
                log_cost += 0.05 * rng.standard_normal()
                cost = 10.0**log_cost
                if objective == "quality":
                    rec = RunRecord(
                        config=cfg, instance=inst, seed=seed,
                        status=RunStatus.SUCCESS, measured_cost=log_cost + 2.0,
                        cutoff=CUTOFF, source=("collector", 0),
                    )
                elif cost >= CUTOFF:
                    rec = RunRecord(
                        config=cfg, instance=inst, seed=seed,
                        status=RunStatus.TIMEOUT, measured_cost=CUTOFF,
                        cutoff=CUTOFF, source=("collector", 0),
                    )
                elif seed == 1 and cost >= 40.0:
                    # this seed ran under an adaptive cap of 40 seconds
                    rec = RunRecord(
                        config=cfg, instance=inst, seed=seed,
                        status=RunStatus.CENSORED, measured_cost=40.0,
                        cutoff=CUTOFF, source=("collector", 0),
                    )
                else:
                    rec = RunRecord(
                        config=cfg, instance=inst, seed=seed,
                        status=RunStatus.SUCCESS, measured_cost=cost,
                        cutoff=CUTOFF, source=("collector", 0),
                    )
                records.append(rec)
    for k in range(crashed):
        records.append(
            RunRecord(
                config=space.default_config(), instance="i0", seed=90 + k,
                status=RunStatus.CRASHED, measured_cost=0.0,
                cutoff=CUTOFF, source=("collector", 0),
            )
        )
    return Dataset(space, instances, tuple(records), objective)


@pytest.fixture(scope="module")
def runtime_bench():
    ds = make_dataset(crashed=3)
    return ds, build_benchmark(
        ds, config=ForestConfig(num_trees=24), rng=np.random.default_rng(11)
    )


class TestHashUnit:
    def test_pinned_values(self):
        # frozen: saved models rely on this mapping never changing
        assert _hash_unit("a", "b", "0") == pytest.approx(
            0.71083219348356, abs=1e-14
        )
        assert _hash_unit('{"x":1}', "inst-3", "7") == pytest.approx(
            0.02627890252124241, abs=1e-14
        )

    def test_range_and_spread(self):
        vals = [_hash_unit("c", "i", str(s)) for s in range(500)]
        assert all(0.0 <= v < 1.0 for v in vals)
        assert len(set(vals)) == 500

    def test_separator_prevents_gluing(self):
        assert _hash_unit("ab", "c") != _hash_unit("a", "bc")


class TestPredictRun:
    def test_runtime_semantics(self, runtime_bench):
        ds, bench = runtime_bench
        rng = np.random.default_rng(5)
        saw_timeout = False
        for _ in range(200):
            cfg = ds.space.sample(rng)
            res = bench.predict_run(cfg, "i2", int(rng.integers(100)))
            assert 0.0 <= res.quantile < 1.0
            if res.status == RunStatus.TIMEOUT:
                saw_timeout = True
                assert res.cost == CUTOFF
                assert res.raw_prediction >= CUTOFF
            else:
                assert res.status == RunStatus.SUCCESS
                assert 0.005 <= res.cost < CUTOFF
                assert res.cost == pytest.approx(res.raw_prediction)
        assert saw_timeout

    def test_repeatable_per_triple(self, runtime_bench):
        ds, bench = runtime_bench
        cfg = ds.space.default_config()
        a = bench.predict_run(cfg, "i0", 7)
        b = bench.predict_run(cfg, "i0", 7)
        assert a == b

    def test_seed_varies_the_quantile(self, runtime_bench):
        ds, bench = runtime_bench
        cfg = ds.space.default_config()
        qs = {bench.predict_run(cfg, "i0", s).quantile for s in range(20)}
        assert len(qs) == 20

    def test_deterministic_mode_reports_median(self, runtime_bench):
        ds, _ = runtime_bench
        bench = build_benchmark(
            ds, config=ForestConfig(num_trees=24),
            rng=np.random.default_rng(11), deterministic=True,
        )
        cfg = ds.space.default_config()
        results = {bench.predict_run(cfg, "i0", s) for s in range(10)}
        assert len(results) == 1
        assert results.pop().quantile == 0.5

    def test_tracks_generative_truth(self, runtime_bench):
        ds, _ = runtime_bench
        bench = build_benchmark(
            ds, config=ForestConfig(num_trees=24),
            rng=np.random.default_rng(11), deterministic=True,
        )
        rng = np.random.default_rng(99)
        truth, predicted = [], []
        for _ in range(60):
            cfg = ds.space.sample(rng)
            truth.append(true_log_cost(ds.space.impute_inactive(cfg), 0.4))
            predicted.append(np.log10(bench.predict_run(cfg, "i1", 0).raw_prediction))
        assert spearman(predicted, truth) > 0.8

    def test_unknown_instance(self, runtime_bench):
        ds, bench = runtime_bench
        with pytest.raises(DataError, match="unknown instance"):
            bench.predict_run(ds.space.default_config(), "nope", 0)

    def test_invalid_config(self, runtime_bench):
        _, bench = runtime_bench
        with pytest.raises(SpaceError):
            bench.predict_run({"solver": "dfs"}, "i0", 0)

    def test_config_key_order_is_irrelevant(self, runtime_bench):
        ds, bench = runtime_bench
        cfg = {"solver": "bfs", "effort": 2.0, "retries": 4}
        flipped = dict(reversed(list(cfg.items())))
        assert bench.predict_run(cfg, "i0", 3) == bench.predict_run(flipped, "i0", 3)


class TestBuild:
    def test_metadata(self, runtime_bench):
        ds, bench = runtime_bench
        assert bench.metadata["setting"] == "train_plus_test_incumbents"
        assert bench.metadata["censored_rows"] > 0
        # crashed rows are dropped before anything else sees them
        assert bench.metadata["rows"] == 300
        assert bench.cutoff == CUTOFF

    def test_same_seed_same_bytes(self):
        ds = make_dataset()
        blobs = []
        for _ in range(2):
            bench = build_benchmark(
                ds, config=ForestConfig(num_trees=8),
                rng=np.random.default_rng(42),
            )
            blobs.append(benchmark_to_bytes(bench))
        assert blobs[0] == blobs[1]

    def test_max_rows_subsamples(self):
        ds = make_dataset()
        bench = build_benchmark(
            ds, config=ForestConfig(num_trees=8),
            rng=np.random.default_rng(0), max_rows=120,
        )
        assert bench.metadata["rows"] == 120

    def test_quality_objective(self):
        ds = make_dataset(objective="quality")
        bench = build_benchmark(
            ds, config=ForestConfig(num_trees=8), rng=np.random.default_rng(1)
        )
        assert bench.cutoff is None
        res = bench.predict_run(ds.space.default_config(), "i0", 0)
        assert res.status == RunStatus.SUCCESS
        assert res.cost == res.raw_prediction

    def test_cutoff_objective_consistency(self, runtime_bench):
        _, bench = runtime_bench
        with pytest.raises(ValueError, match="cutoff"):
            SurrogateBenchmark(
                space=bench.space, instances=bench.instances,
                forest=bench.forest, objective="runtime", cutoff=None,
            )
        with pytest.raises(ValueError, match="cutoff"):
            SurrogateBenchmark(
                space=bench.space, instances=bench.instances,
                forest=bench.forest, objective="quality", cutoff=10.0,
            )


class TestSerialization:
    def test_round_trip_predictions(self, runtime_bench, tmp_path):
        ds, bench = runtime_bench
        path = tmp_path / "model.bin"
        save_benchmark(bench, path)
        loaded = load_benchmark(path)
        rng = np.random.default_rng(3)
        for _ in range(50):
            cfg = ds.space.sample(rng)
            seed = int(rng.integers(1000))
            assert loaded.predict_run(cfg, "i1", seed) == bench.predict_run(
                cfg, "i1", seed
            )
        assert loaded.describe() == bench.describe()

    def test_write_is_reproducible(self, runtime_bench, tmp_path):
        _, bench = runtime_bench
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_benchmark(bench, a)
        save_benchmark(bench, b)
        assert a.read_bytes() == b.read_bytes()

    def test_corruption_detected(self, runtime_bench):
        _, bench = runtime_bench
        blob = bytearray(benchmark_to_bytes(bench))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(ModelDigestError):
            benchmark_from_bytes(bytes(blob))

    def test_truncation_detected(self, runtime_bench):
        _, bench = runtime_bench
        blob = benchmark_to_bytes(bench)
        with pytest.raises(ModelTruncatedError):
            benchmark_from_bytes(blob[:20])
        # dropping the tail also breaks the digest
        with pytest.raises((ModelTruncatedError, ModelDigestError)):
            benchmark_from_bytes(blob[:-100])

    def test_wrong_magic(self, runtime_bench):
        _, bench = runtime_bench
        blob = benchmark_to_bytes(bench)
        with pytest.raises(ModelVersionError):
            benchmark_from_bytes(b"NOTMODEL" + blob[8:])

    def test_wrong_version(self, runtime_bench):
        _, bench = runtime_bench
        blob = bytearray(benchmark_to_bytes(bench))
        import hashlib
        import struct

        struct.pack_into("<H", blob, 8, 99)
        body = bytes(blob[:-32])
        with pytest.raises(ModelVersionError, match="version"):
            benchmark_from_bytes(body + hashlib.sha256(body).digest())
