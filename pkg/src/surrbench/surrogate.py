"""A trained stand-in for running the target algorithm.

A SurrogateBenchmark answers "what would a run of configuration c on
instance i with seed s have cost" from a quantile forest fitted to
logged runs. Which quantile gets reported is pinned by hashing the
(configuration, instance, seed) triple, so repeating a query returns
the same answer while different seeds sample the predicted response
distribution. A deterministic benchmark always reports the median.

Models are stored in a single binary file: magic bytes, a format
version, a JSON header (sorted keys), the raw array payload, and a
trailing SHA-256 over everything before it. Writing the same model
twice produces identical bytes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .forest import ForestConfig, QuantileForest, Tree, fit_forest
from .impute import impute_censored
from .rundata import (
    MIN_COST,
    OBJECTIVES,
    Dataset,
    InstanceSet,
    RunStatus,
    build_matrix,
    filter_crashed,
    subsample,
)
from .space import ConfigurationSpace, canonical_config, parse_space, render_space

__all__ = [
    "MAX_TRAIN_ROWS",
    "ModelDigestError",
    "ModelError",
    "ModelTruncatedError",
    "ModelVersionError",
    "RunResult",
    "SurrogateBenchmark",
    "build_benchmark",
    "load_benchmark",
    "save_benchmark",
]

MAX_TRAIN_ROWS = 1_000_000

_MAGIC = b"\x93SBMODEL"
_VERSION = 1

# per-tree arrays in serialization order, with their on-disk dtypes
_TREE_FIELDS = (
    ("feature", "<i8"),
    ("threshold", "<f8"),
    ("catmask", "<u8"),
    ("left", "<i8"),
    ("right", "<i8"),
    ("vstart", "<i8"),
    ("vlen", "<i8"),
    ("values", "<f8"),
    ("leaf_mean", "<f8"),
    ("leaf_var", "<f8"),
)


class ModelError(ValueError):
    """Raised when a model file cannot be read back."""


class ModelVersionError(ModelError):
    pass


class ModelTruncatedError(ModelError):
    pass


class ModelDigestError(ModelError):
    pass


def _hash_unit(*parts: str) -> float:
    """Map strings to a reproducible point in [0, 1)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little") / 2.0**64


@dataclass(frozen=True)
class RunResult:
    """Outcome of one simulated run.

    cost follows measurement conventions: seconds capped at the cutoff
    for runtime (status says whether the cap was hit), raw loss for
    quality. raw_prediction keeps the uncapped model output.
    """

    status: RunStatus
    cost: float
    quantile: float
    raw_prediction: float


@dataclass
class SurrogateBenchmark:
    space: ConfigurationSpace
    instances: InstanceSet
    forest: QuantileForest
    objective: str
    cutoff: float | None
    deterministic: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.objective == "runtime":
            if self.cutoff is None or not self.cutoff > 0:
                raise ValueError("runtime benchmarks need a positive cutoff")
        elif self.cutoff is not None:
            raise ValueError("quality benchmarks have no cutoff")
        want = self.space.encoded_width(self.instances.n_features)
        if self.forest.n_features != want:
            raise ValueError(
                f"forest expects {self.forest.n_features} columns but space "
                f"plus features encode to {want}"
            )

    def predict_run(self, config: dict, instance_id: str, seed: int) -> RunResult:
        cfg = self.space.coerce(config)
        self.space.validate(cfg)
        feats = self.instances.feature_vector(instance_id)
        if self.deterministic:
            alpha = 0.5
        else:
            alpha = _hash_unit(canonical_config(cfg), instance_id, str(int(seed)))
        x = self.space.encode(cfg, feats)
        y_hat = float(self.forest.predict_quantile(x, alpha))
        if self.objective == "quality":
            return RunResult(RunStatus.SUCCESS, y_hat, alpha, y_hat)
        raw = 10.0**y_hat
        if raw >= self.cutoff:
            return RunResult(RunStatus.TIMEOUT, float(self.cutoff), alpha, raw)
        return RunResult(RunStatus.SUCCESS, max(raw, MIN_COST), alpha, raw)

    def describe(self) -> dict:
        """JSON-ready summary for clients that probe before running."""
        return {
            "objective": self.objective,
            "cutoff": self.cutoff,
            "deterministic": self.deterministic,
            "instances": list(self.instances.ids),
            "parameters": list(self.space.names),
            "n_trees": len(self.forest.trees),
            "n_train": self.forest.n_train,
            "metadata": dict(self.metadata),
        }


def build_benchmark(
    dataset: Dataset,
    setting: str = "train_plus_test_incumbents",
    config: ForestConfig | None = None,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
    max_rows: int = MAX_TRAIN_ROWS,
    metadata: dict | None = None,
) -> SurrogateBenchmark:
    """Fit a benchmark from logged runs.

    Crashed runs are dropped, the remainder is subsampled to max_rows,
    rows are selected and encoded per ``setting``, censored responses
    are raised by iterative imputation, and the forest is fitted on the
    completed response. All randomness is drawn from ``rng`` in a fixed
    order, so equal seeds give byte-identical models.
    """
    cfg = config if config is not None else ForestConfig()
    if rng is None:
        rng = np.random.default_rng()
    ds = filter_crashed(dataset)
    ds = subsample(ds, max_rows, rng)
    matrix = build_matrix(ds, setting)
    y = matrix.y.copy()
    cen = matrix.censored
    n_censored = int(cen.sum())
    if n_censored:
        report = impute_censored(
            matrix.X[~cen],
            y[~cen],
            matrix.X[cen],
            y[cen],
            matrix.feat_is_cat,
            matrix.feat_n_cats,
            cfg,
            rng,
            cap=matrix.cap,
        )
        y[cen] = report.y_imputed
    forest = fit_forest(
        matrix.X, y, matrix.feat_is_cat, matrix.feat_n_cats, cfg, rng
    )
    meta = {
        "setting": setting,
        "rows": len(matrix),
        "censored_rows": n_censored,
        "sources": sorted({r.source[0] for r in ds.records}),
    }
    if metadata:
        meta.update(metadata)
    cutoff = ds.cutoff() if dataset.objective == "runtime" else None
    return SurrogateBenchmark(
        space=dataset.space,
        instances=dataset.instances,
        forest=forest,
        objective=dataset.objective,
        cutoff=cutoff,
        deterministic=deterministic,
        metadata=meta,
    )


# -- on-disk format --------------------------------------------------------


def _array_bytes(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr).astype(dtype, copy=False).tobytes(order="C")


def _manifest_and_payload(bench: SurrogateBenchmark) -> tuple[list, bytes]:
    entries: list[tuple[str, str, list[int]]] = []
    chunks: list[bytes] = []

    def put(name: str, arr: np.ndarray, dtype: str) -> None:
        entries.append((name, dtype, list(arr.shape)))
        chunks.append(_array_bytes(arr, dtype))

    put("features", bench.instances.features, "<f8")
    put("is_cat", bench.forest.is_cat.astype(np.uint8), "<u1")
    put("n_cats", bench.forest.n_cats, "<i8")
    for t, tree in enumerate(bench.forest.trees):
        for fname, dtype in _TREE_FIELDS:
            put(f"t{t:05d}.{fname}", getattr(tree, fname), dtype)
    return entries, b"".join(chunks)


def _header_dict(bench: SurrogateBenchmark, manifest: list) -> dict:
    forest = bench.forest
    return {
        "arrays": manifest,
        "cutoff": bench.cutoff,
        "deterministic": bench.deterministic,
        "forest": {
            "config": dataclasses.asdict(forest.config),
            "n_train": forest.n_train,
            "n_trees": len(forest.trees),
            "y_max": forest.y_max,
            "y_min": forest.y_min,
        },
        "instances": {
            "ids": list(bench.instances.ids),
            "split": list(bench.instances.split),
        },
        "metadata": bench.metadata,
        "objective": bench.objective,
        "space": render_space(bench.space),
    }


def benchmark_to_bytes(bench: SurrogateBenchmark) -> bytes:
    manifest, payload = _manifest_and_payload(bench)
    header = json.dumps(
        _header_dict(bench, manifest), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    body = b"".join(
        [
            _MAGIC,
            struct.pack("<H", _VERSION),
            struct.pack("<Q", len(header)),
            header,
            payload,
        ]
    )
    return body + hashlib.sha256(body).digest()


def save_benchmark(bench: SurrogateBenchmark, path: str | Path) -> None:
    Path(path).write_bytes(benchmark_to_bytes(bench))


def benchmark_from_bytes(blob: bytes) -> SurrogateBenchmark:
    if len(blob) < len(_MAGIC) + 2 + 8 + 32:
        raise ModelTruncatedError("file too short to be a model")
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ModelVersionError("not a benchmark model file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelDigestError("model file is corrupt (checksum mismatch)")
    pos = len(_MAGIC)
    (version,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    if version != _VERSION:
        raise ModelVersionError(f"unsupported model version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if pos + header_len > len(body):
        raise ModelTruncatedError("header extends past end of file")
    header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    pos += header_len

    arrays: dict[str, np.ndarray] = {}
    for name, dtype, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if pos + nbytes > len(body):
            raise ModelTruncatedError(f"array {name} extends past end of file")
        flat = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
        arrays[name] = flat.reshape(shape).astype(dtype[1:], copy=True)
        pos += nbytes
    if pos != len(body):
        raise ModelError("trailing bytes after array payload")

    fh = header["forest"]
    trees = []
    for t in range(fh["n_trees"]):
        trees.append(
            Tree(**{f: arrays[f"t{t:05d}.{f}"] for f, _ in _TREE_FIELDS})
        )
    forest = QuantileForest(
        config=ForestConfig(**fh["config"]),
        trees=trees,
        is_cat=arrays["is_cat"].astype(bool),
        n_cats=arrays["n_cats"].astype(np.int64, copy=False),
        y_min=fh["y_min"],
        y_max=fh["y_max"],
        n_train=fh["n_train"],
    )
    inst = header["instances"]
    instances = InstanceSet(
        ids=tuple(inst["ids"]),
        features=arrays["features"],
        split=tuple(inst["split"]),
    )
    return SurrogateBenchmark(
        space=parse_space(header["space"]),
        instances=instances,
        forest=forest,
        objective=header["objective"],
        cutoff=header["cutoff"],
        deterministic=header["deterministic"],
        metadata=header["metadata"],
    )


def load_benchmark(path: str | Path) -> SurrogateBenchmark:
    return benchmark_from_bytes(Path(path).read_bytes())
