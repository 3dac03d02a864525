"""Parameter spaces with conditional activation.

A space is declared in a small line-oriented text format, one declaration per
line, ``#`` starting a comment:

    <name> categorical {v1,v2,...} [<default>]
    <name> integer [<lo>, <hi>] [<default>] (log)
    <name> real [<lo>, <hi>] [<default>] (log)
    <child> | <parent> in {v1,v2,...}

The default and the ``(log)`` marker are optional.  A conditional parameter is
active only when its parent is active and holds one of the listed values; a
child has at most one parent, chains are allowed, cycles are not.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "ParameterSpec",
    "Condition",
    "ConfigurationSpace",
    "SpaceError",
    "SpaceParseError",
    "parse_space",
    "render_space",
    "canonical_config",
]

KINDS = ("categorical", "integer", "real")

_NAME = r"[A-Za-z_][A-Za-z0-9_.\-]*"
_NAME_RE = re.compile(_NAME)
_CAT_RE = re.compile(
    rf"^({_NAME})\s+categorical\s+\{{([^{{}}]*)\}}\s*(?:\[([^\[\]]*)\])?$"
)
_NUM_RE = re.compile(
    rf"^({_NAME})\s+(integer|real)\s+\[([^,\[\]]+),([^,\[\]]+)\]"
    rf"\s*(?:\[([^\[\]]*)\])?\s*(\(log\))?$"
)
_COND_RE = re.compile(rf"^({_NAME})\s*\|\s*({_NAME})\s+in\s+\{{([^{{}}]*)\}}$")


class SpaceError(ValueError):
    """Semantic error in a parameter space or configuration."""


class SpaceParseError(SpaceError):
    """Syntax or semantic error in space text, with source position."""

    def __init__(self, message: str, line: int, col: int = 1):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ParameterSpec:
    """One parameter: a categorical value list or a numeric interval."""

    name: str
    kind: str
    values: tuple[str, ...] = ()
    lo: float = 0.0
    hi: float = 0.0
    log_scale: bool = False
    default: Any = None

    def __post_init__(self):
        if not _NAME_RE.fullmatch(self.name):
            raise SpaceError(f"invalid parameter name {self.name!r}")
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.values:
                raise SpaceError(f"{self.name}: empty categorical domain")
            if len(set(self.values)) != len(self.values):
                raise SpaceError(f"{self.name}: duplicate categorical values")
            if self.log_scale:
                raise SpaceError(f"{self.name}: (log) invalid for categorical")
            if self.default is not None and self.default not in self.values:
                raise SpaceError(
                    f"{self.name}: default {self.default!r} not in domain"
                )
        else:
            if not (self.lo < self.hi):
                raise SpaceError(
                    f"{self.name}: bounds must satisfy lo < hi, got "
                    f"[{self.lo}, {self.hi}]"
                )
            if self.log_scale and self.lo <= 0:
                raise SpaceError(f"{self.name}: (log) requires lo > 0")
            if self.kind == "integer":
                if self.lo != int(self.lo) or self.hi != int(self.hi):
                    raise SpaceError(f"{self.name}: integer bounds must be whole")
            if self.default is not None:
                self.check_value(self.default)

    @property
    def is_numeric(self) -> bool:
        return self.kind != "categorical"

    def check_value(self, v: Any) -> None:
        """Raise SpaceError unless v lies in this parameter's domain."""
        if self.kind == "categorical":
            if not isinstance(v, str) or v not in self.values:
                raise SpaceError(f"{self.name}: value {v!r} not in domain")
            return
        if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
            raise SpaceError(f"{self.name}: value {v!r} is not a number")
        if self.kind == "integer" and float(v) != int(v):
            raise SpaceError(f"{self.name}: value {v!r} is not an integer")
        if not (self.lo <= float(v) <= self.hi):
            raise SpaceError(
                f"{self.name}: value {v!r} outside [{self.lo}, {self.hi}]"
            )

    def coerce(self, v: Any) -> Any:
        """Normalize a raw (e.g. JSON-decoded) value into domain form."""
        if self.kind == "categorical" and not isinstance(v, str):
            v = repr(v) if isinstance(v, float) else str(v)
        if self.kind == "integer" and isinstance(v, float) and v == int(v):
            v = int(v)
        if isinstance(v, (np.integer, np.floating)):
            v = v.item()
        self.check_value(v)
        return v

    # Transforms between domain values and [0, 1] coordinates.  Categorical
    # values map to their index (not normalized); the forest treats those
    # columns by identity, not order.
    def to_unit(self, v: Any) -> float:
        if self.kind == "categorical":
            return float(self.values.index(v))
        if self.log_scale:
            return (math.log(float(v)) - math.log(self.lo)) / (
                math.log(self.hi) - math.log(self.lo)
            )
        return (float(v) - self.lo) / (self.hi - self.lo)

    def from_unit(self, z: float) -> Any:
        if self.kind == "categorical":
            return self.values[int(z)]
        z = min(1.0, max(0.0, z))
        if self.log_scale:
            v = math.exp(
                math.log(self.lo) + z * (math.log(self.hi) - math.log(self.lo))
            )
        else:
            v = self.lo + z * (self.hi - self.lo)
        if self.kind == "integer":
            return min(int(self.hi), max(int(self.lo), _round_half_up(v)))
        return float(min(self.hi, max(self.lo, v)))

    def fill_value(self) -> Any:
        """Default if declared, otherwise the domain midpoint."""
        if self.default is not None:
            return self.default
        if self.kind == "categorical":
            return self.values[0]
        return self.from_unit(0.5)

    def sample(self, rng: np.random.Generator) -> Any:
        if self.kind == "categorical":
            return self.values[int(rng.integers(len(self.values)))]
        if self.kind == "integer" and not self.log_scale:
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        return self.from_unit(float(rng.uniform(0.0, 1.0)))


@dataclass(frozen=True)
class Condition:
    """child is active iff parent is active and holds one of `values`."""

    child: str
    parent: str
    values: tuple = ()

    def __post_init__(self):
        if not self.values:
            raise SpaceError(f"{self.child}: empty activation set")
        if self.child == self.parent:
            raise SpaceError(f"{self.child}: parameter cannot condition itself")


class ConfigurationSpace:
    """Ordered parameters plus conditions; the unit all sampling runs over.

    A configuration is a plain dict mapping parameter name to value and
    containing exactly the active parameters.
    """

    def __init__(
        self,
        params: Sequence[ParameterSpec],
        conditions: Sequence[Condition] = (),
    ):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise SpaceError(f"duplicate parameter name {dup!r}")
        by_name = {p.name: p for p in params}
        cond_by_child: dict[str, Condition] = {}
        for c in conditions:
            for ref in (c.child, c.parent):
                if ref not in by_name:
                    raise SpaceError(f"condition references unknown parameter {ref!r}")
            if c.child in cond_by_child:
                raise SpaceError(f"{c.child}: more than one condition")
            parent = by_name[c.parent]
            if parent.kind == "real":
                raise SpaceError(
                    f"{c.child}: condition on real-valued parent {c.parent!r} "
                    "not supported"
                )
            for v in c.values:
                parent.check_value(v)
            cond_by_child[c.child] = c
        # Reject cyclic condition chains.
        for name in cond_by_child:
            seen = {name}
            cur = name
            while cur in cond_by_child:
                cur = cond_by_child[cur].parent
                if cur in seen:
                    raise SpaceError(f"cyclic conditions involving {name!r}")
                seen.add(cur)
        self.params: tuple[ParameterSpec, ...] = tuple(params)
        self.conditions: tuple[Condition, ...] = tuple(conditions)
        self._by_name = by_name
        self._cond = cond_by_child
        # Topological order, declaration order among ready parameters, so a
        # single pass can decide activity parent-first.
        order: list[ParameterSpec] = []
        placed: set[str] = set()
        pending = list(self.params)
        while pending:
            rest = []
            for p in pending:
                c = cond_by_child.get(p.name)
                if c is None or c.parent in placed:
                    order.append(p)
                    placed.add(p.name)
                else:
                    rest.append(p)
            pending = rest
        self._order: tuple[ParameterSpec, ...] = tuple(order)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConfigurationSpace)
            and self.params == other.params
            and self.conditions == other.conditions
        )

    def __repr__(self) -> str:
        return (
            f"ConfigurationSpace({len(self.params)} params, "
            f"{len(self.conditions)} conditions)"
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def param(self, name: str) -> ParameterSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise SpaceError(f"unknown parameter {name!r}") from None

    def is_active(self, config: dict, name: str) -> bool:
        """Whether `name` is active under the parent values in `config`."""
        cond = self._cond.get(name)
        if cond is None:
            return True
        return config.get(cond.parent) in cond.values

    def validate(self, config: dict) -> None:
        """Raise SpaceError unless config holds exactly the active params."""
        for k in config:
            if k not in self._by_name:
                raise SpaceError(f"unknown parameter {k!r}")
        for p in self.params:
            if self.is_active(config, p.name):
                if p.name not in config:
                    raise SpaceError(f"missing active parameter {p.name!r}")
                p.check_value(config[p.name])
            elif p.name in config:
                raise SpaceError(f"inactive parameter {p.name!r} present")

    def coerce(self, config: dict) -> dict:
        """Normalize raw values (JSON ints/floats), then validate."""
        out = {}
        for k, v in config.items():
            out[k] = self.param(k).coerce(v) if k in self._by_name else v
        self.validate(out)
        return out

    def sample(self, rng: np.random.Generator) -> dict:
        """Draw a valid configuration uniformly (log-uniform where marked)."""
        cfg: dict[str, Any] = {}
        for p in self._order:  # parents precede children
            if self.is_active(cfg, p.name):
                cfg[p.name] = p.sample(rng)
        return cfg

    def impute_inactive(self, config: dict) -> dict:
        """Total assignment: present values kept, all others filled.

        Fills with the declared default, else the domain midpoint (log-space
        midpoint for log parameters, first listed value for categoricals).
        Idempotent; the result covers every parameter.
        """
        out = {}
        for p in self.params:
            v = config.get(p.name)
            out[p.name] = p.fill_value() if v is None else v
        return out

    def default_config(self) -> dict:
        """Valid configuration of defaults (midpoints where undeclared)."""
        return self._project(self.impute_inactive({}))

    def project(self, config: dict) -> dict:
        """Valid configuration from any (possibly total) assignment.

        Missing values are imputed first, then everything outside the active
        closure is dropped.  Inverse of impute_inactive on valid inputs.
        """
        out = self._project(self.impute_inactive(config))
        self.validate(out)
        return out

    def _project(self, total: dict) -> dict:
        """Restrict a total assignment to its active closure."""
        out: dict[str, Any] = {}
        for p in self._order:  # parents precede children
            if self.is_active(out, p.name):
                out[p.name] = total[p.name]
        return {p.name: out[p.name] for p in self.params if p.name in out}

    # -- encoding ---------------------------------------------------------

    def encode(
        self,
        config: dict,
        features: Sequence[float] = (),
        one_hot: bool = False,
    ) -> np.ndarray:
        """Numeric vector: transformed parameters then raw instance features.

        Numerics are min-max normalized (in log space where marked);
        categoricals become their category index, or indicator columns when
        one_hot is set.  Inactive parameters are imputed first.
        """
        total = self.impute_inactive(config)
        cols: list[float] = []
        for p in self.params:
            v = total[p.name]
            if p.kind == "categorical" and one_hot:
                idx = p.values.index(v)
                cols.extend(1.0 if i == idx else 0.0 for i in range(len(p.values)))
            else:
                cols.append(p.to_unit(v))
        cols.extend(float(f) for f in features)
        return np.asarray(cols, dtype=np.float64)

    def encoded_width(self, n_features: int = 0, one_hot: bool = False) -> int:
        w = 0
        for p in self.params:
            w += len(p.values) if (one_hot and p.kind == "categorical") else 1
        return w + n_features

    def feature_meta(self, n_features: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """(is_categorical, n_categories) per native-encoding column."""
        is_cat = np.array(
            [p.kind == "categorical" for p in self.params] + [False] * n_features
        )
        n_cats = np.array(
            [len(p.values) for p in self.params] + [0] * n_features, dtype=np.int64
        )
        return is_cat, n_cats

    # -- neighborhood -----------------------------------------------------

    def neighbors(
        self, config: dict, rng: np.random.Generator, k_perturb: int = 4
    ) -> list[dict]:
        """One-exchange neighbors of a valid configuration.

        Every alternative value for each active categorical; k_perturb
        Gaussian steps (0.2 of the normalized range, clipped) for each active
        numeric.  Children activated by a move get imputed values, children
        deactivated by it are dropped.  Never yields the input configuration.
        """
        self.validate(config)
        out: list[dict] = []
        for p in self.params:
            if p.name not in config:
                continue
            cur = config[p.name]
            if p.kind == "categorical":
                for v in p.values:
                    if v != cur:
                        out.append(self._one_exchange(config, p.name, v))
            else:
                z = p.to_unit(cur)
                made = tries = 0
                # Integer steps can round back onto the current value; redraw.
                while made < k_perturb and tries < 16 * k_perturb:
                    tries += 1
                    v = p.from_unit(z + 0.2 * float(rng.standard_normal()))
                    if v != cur:
                        out.append(self._one_exchange(config, p.name, v))
                        made += 1
        return out

    def _one_exchange(self, config: dict, name: str, value: Any) -> dict:
        moved = dict(config)
        moved[name] = value
        return self._project(self.impute_inactive(moved))


# -- text format ------------------------------------------------------------


def _parse_number(tok: str, kind: str, lineno: int, line: str) -> float | int:
    tok = tok.strip()
    try:
        if kind == "integer":
            return int(tok)
        return float(tok)
    except ValueError:
        col = line.find(tok) + 1
        raise SpaceParseError(f"bad {kind} literal {tok!r}", lineno, col) from None


def _split_values(body: str, lineno: int, line: str) -> list[str]:
    vals = [v.strip() for v in body.split(",")]
    if any(not v for v in vals):
        raise SpaceParseError("empty value in {...} list", lineno, line.find("{") + 1)
    return vals


def parse_space(text: str) -> ConfigurationSpace:
    """Parse space text; raises SpaceParseError with line/column on failure."""
    params: list[ParameterSpec] = []
    conditions: list[Condition] = []
    names: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if (m := _COND_RE.fullmatch(line)) is not None:
                child, parent, body = m.groups()
                vals = _split_values(body, lineno, raw)
                conditions.append((lineno, child, parent, vals))
                continue
            if (m := _CAT_RE.fullmatch(line)) is not None:
                name, body, default = m.groups()
                if name in names:
                    raise SpaceParseError(
                        f"duplicate parameter {name!r} (first on line {names[name]})",
                        lineno,
                        raw.find(name) + 1,
                    )
                vals = _split_values(body, lineno, raw)
                params.append(
                    ParameterSpec(
                        name,
                        "categorical",
                        values=tuple(vals),
                        default=default.strip() if default is not None else None,
                    )
                )
                names[name] = lineno
                continue
            if (m := _NUM_RE.fullmatch(line)) is not None:
                name, kind, lo, hi, default, log = m.groups()
                if name in names:
                    raise SpaceParseError(
                        f"duplicate parameter {name!r} (first on line {names[name]})",
                        lineno,
                        raw.find(name) + 1,
                    )
                params.append(
                    ParameterSpec(
                        name,
                        kind,
                        lo=_parse_number(lo, kind, lineno, raw),
                        hi=_parse_number(hi, kind, lineno, raw),
                        log_scale=log is not None,
                        default=(
                            _parse_number(default, kind, lineno, raw)
                            if default is not None and default.strip()
                            else None
                        ),
                    )
                )
                names[name] = lineno
                continue
        except SpaceError as e:
            if isinstance(e, SpaceParseError):
                raise
            raise SpaceParseError(str(e), lineno) from None
        raise SpaceParseError(f"unrecognized declaration {line!r}", lineno)

    by_name = {p.name: p for p in params}
    resolved: list[Condition] = []
    for lineno, child, parent, vals in conditions:
        try:
            pkind = by_name[parent].kind if parent in by_name else None
            typed = tuple(
                int(v) if pkind == "integer" else v for v in vals
            )
            resolved.append(Condition(child, parent, typed))
        except ValueError:
            raise SpaceParseError(
                f"activation value for integer parent {parent!r} must be an "
                "integer literal",
                lineno,
            ) from None
    try:
        return ConfigurationSpace(params, resolved)
    except SpaceError as e:
        # Attribute cross-declaration errors to the last line for lack of a
        # better anchor; the message names the parameters involved.
        raise SpaceParseError(str(e), len(text.splitlines()) or 1) from None


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_space(space: ConfigurationSpace) -> str:
    """Inverse of parse_space: parse_space(render_space(s)) == s."""
    lines = []
    for p in space.params:
        if p.kind == "categorical":
            line = f"{p.name} categorical {{{','.join(p.values)}}}"
            if p.default is not None:
                line += f" [{p.default}]"
        else:
            line = f"{p.name} {p.kind} [{_fmt(p.lo)}, {_fmt(p.hi)}]"
            if p.default is not None:
                line += f" [{_fmt(p.default)}]"
            if p.log_scale:
                line += " (log)"
        lines.append(line)
    for c in space.conditions:
        lines.append(f"{c.child} | {c.parent} in {{{','.join(map(str, c.values))}}}")
    return "\n".join(lines) + "\n"


def canonical_config(config: dict) -> str:
    """Deterministic JSON form of a configuration, for hashing and export."""
    return json.dumps(config, sort_keys=True, separators=(",", ":"))
