"""Command line front end.

Subcommands cover the whole workflow: train a performance model from
logged runs, query it once, serve it over stdio or TCP, score held-out
prediction quality, and measure how faithfully tuning against the model
reproduces tuning against the synthetic ground truth. Every command is
deterministic given its arguments, so repeated invocations produce
byte-identical files and stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backends import SurrogateBackend, SyntheticBackend, SyntheticSpec
from .configurators import CONFIGURATORS, export_dataset, validate_incumbents
from .forest import ForestConfig
from .harness import (
    compare,
    fidelity_to_json,
    loco_splits,
    loro_splits,
    model_quality,
    quality_to_json,
    write_json_report,
    write_quality_csv,
    write_trajectories_csv,
)
from .rundata import RunStatus, ingest_runs, save_features_csv, save_runs_csv
from .serving import serve_stdio, serve_tcp
from .space import parse_space, render_space
from .surrogate import build_benchmark, load_benchmark, save_benchmark


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def _read_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_config_arg(arg: str) -> dict:
    """Parse a configuration given inline as JSON or as @file."""
    raw = _read_text(arg[1:]) if arg.startswith("@") else arg
    cfg = json.loads(raw)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def _parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _forest_config(args: argparse.Namespace) -> ForestConfig | None:
    if getattr(args, "trees", None) is None:
        return None
    if args.trees < 1:
        raise ValueError("--trees must be >= 1")
    return ForestConfig(num_trees=args.trees)


def _set_threads(n: int) -> None:
    if n < 1:
        raise ValueError("--threads must be >= 1")
    import numba

    numba.set_num_threads(n)


def _load_dataset(args: argparse.Namespace):
    space = parse_space(_read_text(args.space))
    return ingest_runs(args.runs, args.features, space, objective=args.objective)


# -- subcommands -----------------------------------------------------------


def _cmd_train(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    bench = build_benchmark(
        ds,
        setting=args.setting,
        config=_forest_config(args),
        rng=np.random.default_rng(args.seed),
        max_rows=args.max_rows,
    )
    save_benchmark(bench, args.out)
    meta = bench.metadata
    cut = "none" if bench.cutoff is None else _fmt(bench.cutoff)
    print(f"rows: {meta['rows']} (censored: {meta['censored_rows']})")
    print(f"setting: {meta['setting']}")
    print(f"objective: {bench.objective} (cutoff: {cut})")
    print(f"forest: {len(bench.forest.trees)} trees")
    print(f"wrote {args.out} ({Path(args.out).stat().st_size} bytes)")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    bench = load_benchmark(args.model)
    res = bench.predict_run(_load_config_arg(args.config), args.instance, args.seed)
    payload = {
        "status": res.status.value,
        "cost": res.cost,
        "quantile": res.quantile,
        "raw_prediction": res.raw_prediction,
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    bench = load_benchmark(args.model)
    if args.stdio:
        serve_stdio(bench)
        return 0
    host, port = _parse_hostport(args.listen)
    server = serve_tcp(bench, host, port, background=True)
    # announce the bound address (port 0 picks a free one), then block
    # until a shutdown request stops the accept loop
    print(f"listening on {server.address[0]}:{server.address[1]}", flush=True)
    server._thread.join()
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    splits = loro_splits(ds) if args.splits == "loro" else loco_splits(ds)
    report = model_quality(
        ds,
        splits,
        setting=args.setting,
        config=_forest_config(args),
        seed=args.seed,
    )
    if args.json:
        write_json_report(quality_to_json(report), args.json)
    if args.csv:
        write_quality_csv(report, args.csv)
    row = report.lookup("mean")
    rmse = "n/a" if row.rmse is None else _fmt(row.rmse)
    cc = "n/a" if row.cc is None else _fmt(row.cc)
    print(f"{args.splits} mean over {len(splits)} splits: rmse={rmse} cc={cc} (n={row.n})")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    bench = load_benchmark(args.model)
    spec = SyntheticSpec(
        seed=args.synthetic_seed,
        objective=bench.objective,
        calibration_draws=args.calibration_draws,
    )
    report = compare(
        SyntheticBackend(spec),
        SurrogateBackend(bench),
        args.budget,
        names=tuple(args.names.split(",")),
        n_runs=args.n_runs,
        n_budgets=args.n_budgets,
        master_seed=args.master_seed,
        max_evals=args.max_evals,
    )
    if args.json:
        write_json_report(fidelity_to_json(report, include_timing=args.timing), args.json)
    if args.trajectories:
        write_trajectories_csv(report, args.trajectories)
    print(f"outcome disagreement: {_fmt(report.error)}")
    t = report.timing
    if t is not None and t.speedup is not None:
        print(
            f"surrogate: {_fmt(t.mean_prediction_ms)} ms/run"
            f" vs {_fmt(t.mean_original_cost)} s simulated ({_fmt(t.speedup)}x)"
        )
    return 0


# demo scale: small enough for a single core, large enough that the
# model orders configurations correctly
_DEMO_REPS = 3
_DEMO_EVALS = 150
_DEMO_BUDGET = 2e5
_DEMO_TREES = 24
_DEMO_COMPARE_RUNS = 4


def _cmd_demo(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(seed=args.seed, calibration_draws=2000)
    backend = SyntheticBackend(spec)
    print(
        f"synthetic benchmark: {spec.n_instances} instances,"
        f" cutoff {_fmt(backend.cutoff)}s"
    )

    names = ("random_search", "roar")
    print(f"collecting runs with {' and '.join(names)}, {_DEMO_REPS} repetitions each")
    trajs = []
    for ci, name in enumerate(names):
        for rep in range(_DEMO_REPS):
            rng = np.random.default_rng(np.random.SeedSequence((args.seed, ci, rep)))
            traj = CONFIGURATORS[name](
                backend, _DEMO_BUDGET, rng, repetition=rep, max_evals=_DEMO_EVALS
            )
            vrng = np.random.default_rng(np.random.SeedSequence((args.seed, ci, rep, 1)))
            validate_incumbents(traj, backend, vrng)
            trajs.append(traj)
    ds = export_dataset(trajs, backend.space, backend.instances)
    n_to = sum(1 for r in ds.records if r.status is RunStatus.TIMEOUT)
    n_cap = sum(1 for r in ds.records if r.status is RunStatus.CENSORED)
    print(f"collected {len(ds.records)} runs ({n_to} timeouts, {n_cap} capped)")
    save_runs_csv(ds, out / "runs.csv")
    save_features_csv(ds.instances, out / "features.csv")
    (out / "space.txt").write_text(render_space(backend.space), encoding="utf-8")

    bench = build_benchmark(
        ds,
        config=ForestConfig(num_trees=_DEMO_TREES),
        rng=np.random.default_rng(args.seed),
    )
    save_benchmark(bench, out / "model.bin")
    print(f"trained forest: {_DEMO_TREES} trees on {bench.metadata['rows']} rows")

    quality = model_quality(
        ds, loro_splits(ds), config=ForestConfig(num_trees=16), seed=args.seed
    )
    write_json_report(quality_to_json(quality), out / "quality.json")
    row = quality.lookup("mean")
    print(f"held-out fit (leave-one-run-out): rmse={_fmt(row.rmse)} cc={_fmt(row.cc)}")

    print(f"comparing tuning outcomes, {_DEMO_COMPARE_RUNS} runs per configurator")
    report = compare(
        backend,
        SurrogateBackend(bench),
        _DEMO_BUDGET,
        names=("random_search", "roar", "ils"),
        n_runs=_DEMO_COMPARE_RUNS,
        n_budgets=10,
        master_seed=args.seed,
        max_evals=_DEMO_EVALS,
    )
    write_json_report(fidelity_to_json(report), out / "fidelity.json")
    write_trajectories_csv(report, out / "trajectories.csv")
    print(f"outcome disagreement: {_fmt(report.error)}")
    print(f"wrote runs, features, space, model, quality and fidelity reports to {out}")
    return 0


# -- parser ----------------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--runs", required=True, help="runs CSV")
    p.add_argument("--features", required=True, help="instance features CSV")
    p.add_argument("--space", required=True, help="configuration space file")
    p.add_argument(
        "--objective", choices=("runtime", "quality"), default="runtime"
    )


def _add_fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--setting",
        choices=("train_only", "train_plus_test_incumbents", "all"),
        default="train_plus_test_incumbents",
        help="which logged rows to fit on",
    )
    p.add_argument("--trees", type=int, default=None, help="forest size")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surrbench",
        description="Train, serve and audit surrogate algorithm benchmarks.",
    )
    parser.add_argument(
        "--threads", type=int, default=None, help="numba thread count"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model from logged runs")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--max-rows", type=int, default=100_000)
    p.add_argument("--out", required=True, help="model output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="one predicted run as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True, help="JSON object or @file")
    p.add_argument("--instance", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("serve", help="answer run requests for a model")
    p.add_argument("--model", required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true", help="serve stdin/stdout")
    mode.add_argument("--listen", help="serve TCP on HOST:PORT (port 0 = any)")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("evaluate", help="held-out prediction quality")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument(
        "--splits",
        choices=("loro", "loco"),
        default="loro",
        help="leave-one-run-out or leave-one-configurator-out",
    )
    p.add_argument("--json", default=None, help="JSON report path")
    p.add_argument("--csv", default=None, help="CSV report path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser(
        "compare", help="tuning fidelity of a model against the synthetic truth"
    )
    p.add_argument("--model", required=True)
    p.add_argument("--budget", type=float, required=True, help="tuning budget per run")
    p.add_argument(
        "--names",
        default="random_search,roar,ils",
        help="comma-separated configurators",
    )
    p.add_argument("--n-runs", type=int, default=10)
    p.add_argument("--n-budgets", type=int, default=20)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--max-evals", type=int, default=None)
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.add_argument("--calibration-draws", type=int, default=20_000)
    p.add_argument("--timing", action="store_true", help="include wall-clock timing")
    p.add_argument("--json", default=None, help="JSON report path")
    p.add_argument("--trajectories", default=None, help="trajectory CSV path")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("demo", help="seeded end-to-end run on the synthetic benchmark")
    p.add_argument("--out-dir", default="surrbench-demo")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None:
            _set_threads(args.threads)
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
