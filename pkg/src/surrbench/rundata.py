"""Logged target-algorithm runs and their model-ready matrix form.

Two CSV formats travel with this module.  Run logs:

    run_source,repetition,instance_id,seed,status,measured_cost,cutoff,is_validation,config

where config is a JSON object in one (quoted) cell.  Instance features:

    instance_id,split,f_0,...,f_{d-1}

with split in {train,test}.  Runtime responses are modeled in log10 seconds
with timeouts expanded to ten times the cutoff before the transform; costs
below 0.005 seconds are floored there so sub-resolution measurements cannot
produce unbounded logs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .space import ConfigurationSpace, SpaceError

__all__ = [
    "RunStatus",
    "RunRecord",
    "InstanceSet",
    "Dataset",
    "TrainingMatrix",
    "DataError",
    "ingest_runs",
    "filter_crashed",
    "subsample",
    "build_matrix",
    "save_runs_csv",
    "save_features_csv",
    "MIN_COST",
    "PAR_FACTOR",
]

log = logging.getLogger(__name__)

MIN_COST = 0.005  # floor on measured seconds before the log10 transform
PAR_FACTOR = 10.0  # timeouts count as this multiple of the cutoff

OBJECTIVES = ("runtime", "quality")
SETTINGS = ("train_only", "train_plus_test_incumbents", "all")

RUNS_COLUMNS = [
    "run_source",
    "repetition",
    "instance_id",
    "seed",
    "status",
    "measured_cost",
    "cutoff",
    "is_validation",
    "config",
]


class DataError(ValueError):
    """Malformed or inconsistent run data."""


class RunStatus(str, Enum):
    SUCCESS = "SUCCESS"
    TIMEOUT = "TIMEOUT"
    CENSORED = "CENSORED"
    CRASHED = "CRASHED"


@dataclass(frozen=True)
class RunRecord:
    """One logged run of the target algorithm."""

    config: dict
    instance: str
    seed: int
    status: RunStatus
    measured_cost: float
    cutoff: float
    source: tuple[str, int]  # (configurator name, repetition index)
    is_validation: bool = False

    def __post_init__(self):
        if self.measured_cost < 0 or not math.isfinite(self.measured_cost):
            raise DataError(f"measured_cost must be finite and >= 0, got {self.measured_cost}")
        if self.cutoff <= 0 or not math.isfinite(self.cutoff):
            raise DataError(f"cutoff must be finite and > 0, got {self.cutoff}")


@dataclass(frozen=True)
class InstanceSet:
    """Instances with feature vectors and a train/test split."""

    ids: tuple[str, ...]
    features: np.ndarray  # (n, d) float64
    split: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate instance ids")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.ids):
            raise DataError(
                f"features must be (n_instances, d), got {feats.shape} for "
                f"{len(self.ids)} instances"
            )
        if not np.isfinite(feats).all():
            raise DataError("instance features must be finite")
        if len(self.split) != len(self.ids):
            raise DataError("split must label every instance")
        for s in self.split:
            if s not in ("train", "test"):
                raise DataError(f"split must be train or test, got {s!r}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(
            self, "_index", {i: k for k, i in enumerate(self.ids)}
        )

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def __contains__(self, instance_id: str) -> bool:
        return instance_id in self._index

    def feature_vector(self, instance_id: str) -> np.ndarray:
        try:
            return self.features[self._index[instance_id]]
        except KeyError:
            raise DataError(f"unknown instance {instance_id!r}") from None

    def split_of(self, instance_id: str) -> str:
        try:
            return self.split[self._index[instance_id]]
        except KeyError:
            raise DataError(f"unknown instance {instance_id!r}") from None

    def train_ids(self) -> tuple[str, ...]:
        return tuple(i for i, s in zip(self.ids, self.split) if s == "train")

    def test_ids(self) -> tuple[str, ...]:
        return tuple(i for i, s in zip(self.ids, self.split) if s == "test")


def _check_record(rec: RunRecord, objective: str) -> None:
    """Status/cost relations; cutoff comparisons only make sense for runtime."""
    if objective == "runtime":
        if rec.status is RunStatus.CENSORED and not rec.measured_cost < rec.cutoff:
            raise DataError(
                "CENSORED cost must be strictly below the cutoff, got "
                f"{rec.measured_cost} >= {rec.cutoff}"
            )
        if rec.status is RunStatus.TIMEOUT and rec.measured_cost != rec.cutoff:
            raise DataError(
                f"TIMEOUT cost must equal the cutoff, got {rec.measured_cost} "
                f"!= {rec.cutoff}"
            )
        if rec.status is RunStatus.SUCCESS and rec.measured_cost > rec.cutoff:
            raise DataError(
                f"SUCCESS cost must not exceed the cutoff, got "
                f"{rec.measured_cost} > {rec.cutoff}"
            )


@dataclass(frozen=True)
class Dataset:
    """Validated run records over one space and instance set."""

    space: ConfigurationSpace
    instances: InstanceSet
    records: tuple[RunRecord, ...]
    objective: str = "runtime"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise DataError(f"objective must be one of {OBJECTIVES}")
        for rec in self.records:
            if rec.instance not in self.instances:
                raise DataError(f"record references unknown instance {rec.instance!r}")
            _check_record(rec, self.objective)
            self.space.validate(rec.config)

    def __len__(self) -> int:
        return len(self.records)

    def sources(self) -> tuple[tuple[str, int], ...]:
        seen: dict[tuple[str, int], None] = {}
        for r in self.records:
            seen.setdefault(r.source, None)
        return tuple(seen)

    def cutoff(self) -> float:
        if not self.records:
            raise DataError("empty dataset has no cutoff")
        return max(r.cutoff for r in self.records)

    def replace_records(self, records: Sequence[RunRecord]) -> "Dataset":
        return Dataset(self.space, self.instances, tuple(records), self.objective)


@dataclass(frozen=True)
class TrainingMatrix:
    """Encoded rows ready for forest training.

    X holds encoded configurations with instance features appended; y is the
    response (log10 PAR10 seconds for runtime, raw loss for quality);
    censored marks rows whose y is only a lower bound.
    """

    X: np.ndarray
    y: np.ndarray
    censored: np.ndarray
    is_validation: np.ndarray
    records: tuple[RunRecord, ...]
    feat_is_cat: np.ndarray
    feat_n_cats: np.ndarray
    objective: str
    cap: float | None  # log10(PAR_FACTOR * cutoff) for runtime, else None

    def __len__(self) -> int:
        return self.X.shape[0]


def _parse_bool(tok: str, row: int) -> bool:
    t = tok.strip().lower()
    if t in ("true", "1"):
        return True
    if t in ("false", "0"):
        return False
    raise DataError(f"runs row {row}: bad is_validation value {tok!r}")


def ingest_runs(
    runs_path: str | Path,
    features_path: str | Path,
    space: ConfigurationSpace,
    objective: str = "runtime",
) -> Dataset:
    """Load run and feature CSVs into a validated Dataset.

    Errors carry the 1-based data row number of the offending line.
    """
    instances = _read_features(features_path)
    records: list[RunRecord] = []
    with open(runs_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RUNS_COLUMNS:
            raise DataError(
                f"runs header must be {','.join(RUNS_COLUMNS)}, got {header}"
            )
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(RUNS_COLUMNS):
                raise DataError(
                    f"runs row {row_no}: expected {len(RUNS_COLUMNS)} cells, "
                    f"got {len(row)}"
                )
            (src, rep, inst, seed, status, cost, cutoff, is_val, cfg_json) = row
            try:
                config = json.loads(cfg_json)
                if not isinstance(config, dict):
                    raise DataError("config cell must be a JSON object")
                config = space.coerce(config)
                rec = RunRecord(
                    config=config,
                    instance=inst,
                    seed=int(seed),
                    status=RunStatus(status),
                    measured_cost=float(cost),
                    cutoff=float(cutoff),
                    source=(src, int(rep)),
                    is_validation=_parse_bool(is_val, row_no),
                )
                if rec.instance not in instances:
                    raise DataError(f"unknown instance {inst!r}")
                _check_record(rec, objective)
            except (ValueError, SpaceError) as e:
                msg = str(e)
                if not msg.startswith("runs row"):
                    msg = f"runs row {row_no}: {msg}"
                raise DataError(msg) from None
            records.append(rec)
    return Dataset(space, instances, tuple(records), objective)


def _read_features(path: str | Path) -> InstanceSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (
            header is None
            or len(header) < 2
            or header[:2] != ["instance_id", "split"]
            or list(header[2:]) != [f"f_{i}" for i in range(len(header) - 2)]
        ):
            raise DataError(
                "features header must be instance_id,split,f_0,...,f_{d-1}, "
                f"got {header}"
            )
        d = len(header) - 2
        ids: list[str] = []
        splits: list[str] = []
        rows: list[list[float]] = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != d + 2:
                raise DataError(
                    f"features row {row_no}: expected {d + 2} cells, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row[2:]])
            except ValueError as e:
                raise DataError(f"features row {row_no}: {e}") from None
            ids.append(row[0])
            splits.append(row[1])
        try:
            return InstanceSet(tuple(ids), np.array(rows, dtype=np.float64).reshape(len(ids), d), tuple(splits))
        except DataError as e:
            raise DataError(f"features file: {e}") from None


def save_features_csv(instances: InstanceSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["instance_id", "split"] + [f"f_{i}" for i in range(instances.n_features)]
        )
        for i, inst in enumerate(instances.ids):
            w.writerow(
                [inst, instances.split[i]]
                + [repr(float(v)) for v in instances.features[i]]
            )


def save_runs_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RUNS_COLUMNS)
        for r in ds.records:
            w.writerow(
                [
                    r.source[0],
                    r.source[1],
                    r.instance,
                    r.seed,
                    r.status.value,
                    repr(float(r.measured_cost)),
                    repr(float(r.cutoff)),
                    "true" if r.is_validation else "false",
                    json.dumps(r.config, sort_keys=True),
                ]
            )


def filter_crashed(ds: Dataset) -> Dataset:
    """Drop CRASHED records; the removal count is logged."""
    kept = tuple(r for r in ds.records if r.status is not RunStatus.CRASHED)
    removed = len(ds.records) - len(kept)
    if removed:
        log.info("filter_crashed: removed %d of %d records", removed, len(ds.records))
    if not kept and ds.records:
        log.warning("filter_crashed: all %d records were CRASHED", len(ds.records))
    return ds.replace_records(kept)


def subsample(ds: Dataset, cap: int, rng: np.random.Generator) -> Dataset:
    """Uniform subsample without replacement down to cap records."""
    if cap <= 0:
        raise DataError(f"cap must be positive, got {cap}")
    if len(ds.records) <= cap:
        return ds
    idx = np.sort(rng.choice(len(ds.records), size=cap, replace=False))
    return ds.replace_records(tuple(ds.records[i] for i in idx))


def build_matrix(ds: Dataset, setting: str) -> TrainingMatrix:
    """Encode a dataset into (X, y, censored) under a data-inclusion setting.

    train_only keeps rows on train-split instances; train_plus_test_incumbents
    additionally keeps test-split rows flagged as incumbent validations; all
    keeps everything.  Rows are ordered by source run, then original record
    order, so identical inputs yield identical matrices.
    """
    if setting not in SETTINGS:
        raise DataError(f"setting must be one of {SETTINGS}, got {setting!r}")
    picked: list[tuple[int, RunRecord]] = []
    for i, rec in enumerate(ds.records):
        split = ds.instances.split_of(rec.instance)
        keep = (
            setting == "all"
            or split == "train"
            or (setting == "train_plus_test_incumbents" and rec.is_validation)
        )
        if keep:
            picked.append((i, rec))
    if not picked:
        raise DataError(f"no records selected under setting {setting!r}")
    picked.sort(key=lambda t: (t[1].source[0], t[1].source[1], t[0]))

    records = tuple(rec for _, rec in picked)
    n = len(records)
    width = len(ds.space.names) + ds.instances.n_features
    X = np.empty((n, width), dtype=np.float64)
    y = np.empty(n, dtype=np.float64)
    censored = np.zeros(n, dtype=bool)
    is_val = np.zeros(n, dtype=bool)
    for k, rec in enumerate(records):
        X[k] = ds.space.encode(rec.config, ds.instances.feature_vector(rec.instance))
        is_val[k] = rec.is_validation
        if ds.objective == "quality":
            if rec.status is RunStatus.CENSORED:
                raise DataError("CENSORED records are not supported for quality objectives")
            y[k] = rec.measured_cost
        elif rec.status is RunStatus.TIMEOUT:
            y[k] = math.log10(PAR_FACTOR * rec.cutoff)
        else:
            y[k] = math.log10(max(rec.measured_cost, MIN_COST))
            censored[k] = rec.status is RunStatus.CENSORED

    cap = None
    if ds.objective == "runtime":
        cap = math.log10(PAR_FACTOR * max(r.cutoff for r in records))
    is_cat, n_cats = ds.space.feature_meta(ds.instances.n_features)
    return TrainingMatrix(
        X=X,
        y=y,
        censored=censored,
        is_validation=is_val,
        records=records,
        feat_is_cat=is_cat,
        feat_n_cats=n_cats,
        objective=ds.objective,
        cap=cap,
    )
