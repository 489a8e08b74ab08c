"""Experiment configuration: a small ``key = value`` format with ``[section]`` headers.

Example::

    [model]
    x = [1.0]
    V = [(0.5, [2])]      # 0.5 * x^2
    H = [1.0]             # F(x) = |x|^2

    [grid]
    T = 1.0
    n = 512

    [experiment]
    kind = convergence
    N = [2, 4, 8, 16, 32]

    [run]
    seed = 12345

Values are Python literals (numbers, lists, tuples, ``true``/``false``);
``kind`` and ``out`` may be bare words.  Unknown sections and keys are
rejected, and every applied default is recorded in :meth:`ExperimentConfig.to_text`.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, InputError
from .flow import Path, TimeGrid
from .potentials import InteractionFlow, MultiPoly, RadialInteraction

__all__ = ["KINDS", "ExperimentConfig", "parse_config", "format_value"]

KINDS = ("validate", "flow", "rate", "minimize", "convergence", "slope", "coupling")

_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_ENTRY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _as_int(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ValueError("expected an integer")
    return int(v)


def _as_float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValueError("expected a finite number")
    return float(v)


def _as_list(conv):
    def parse(v):
        if not isinstance(v, (list, tuple)):
            v = [v]
        return [conv(x) for x in v]

    return parse


def _as_terms(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise ValueError("expected a non-empty list of (coefficient, [exponents]) terms")
    out = []
    for term in v:
        if not isinstance(term, (list, tuple)) or len(term) != 2:
            raise ValueError(f"malformed term {term!r}")
        c, e = term
        out.append((_as_float(c), [_as_int(k) for k in (e if isinstance(e, (list, tuple)) else [e])]))
    return out


def _as_series(v):
    """Per-component polynomial coefficients in t, ascending: ``[[c0, c1, ...], ...]``."""
    if not isinstance(v, (list, tuple)) or not v:
        raise ValueError("expected a list of coefficient lists, one per component")
    return [_as_list(_as_float)(comp) for comp in v]


def _as_bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _as_kind(v):
    if v not in KINDS:
        raise ValueError(f"unknown experiment kind {v!r}; expected one of {', '.join(KINDS)}")
    return v


# section -> key -> (converter, required, default, bare-word allowed)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "d": (_as_int, False, None, False),
        "x": (_as_list(_as_float), True, None, False),
        "V": (_as_terms, True, None, False),
        "H": (_as_list(_as_float), False, None, False),
        "A": (_as_terms, False, None, False),
        "W": (_as_terms, False, None, False),
        "l": (_as_series, False, None, False),
        "f": (_as_series, False, None, False),
    },
    "grid": {
        "T": (_as_float, True, None, False),
        "n": (_as_int, True, None, False),
    },
    "experiment": {
        "kind": (_as_kind, False, None, True),
        "N": (_as_list(_as_int), False, None, False),
        "sigma": (_as_list(_as_float), False, [0.35, 0.25], False),
        "delta": (_as_float, False, 0.5, False),
        "R": (_as_int, False, 1000, False),
        "M": (_as_int, False, 1024, False),
        "check_radius": (_as_float, False, 10.0, False),
        "samples": (_as_int, False, 200, False),
        "max_iterations": (_as_int, False, 10000, False),
        "gradient_tolerance": (_as_float, False, 1e-8, False),
        "symmetric": (_as_bool, False, True, False),
    },
    "run": {
        "seed": (_as_int, False, 0, False),
        "out": (str, False, "out", True),
    },
}

_DEFAULT_N = {"convergence": [2, 4, 8, 16, 32], "slope": [8], "coupling": [8]}


def format_value(v) -> str:
    """Serialize a config value so that :func:`parse_config` reads it back unchanged."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return "(" + ", ".join(format_value(x) for x in v) + ")"
    if isinstance(v, list):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    return str(v)


def _literal(raw: str, bare_ok: bool, lineno: int):
    text = re.sub(r"\btrue\b", "True", re.sub(r"\bfalse\b", "False", raw))
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if bare_ok and re.fullmatch(r"[^\s\[\]\(\)=,'\"]+", raw):
            return raw
        raise ConfigError(f"malformed value {raw!r}", lineno) from None


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``values[section][key]`` holds resolved settings."""

    values: dict[str, dict[str, Any]]
    defaulted: set[tuple[str, str]] = field(default_factory=set)

    # -- typed accessors ----------------------------------------------------
    @property
    def kind(self) -> str | None:
        return self.values["experiment"].get("kind")

    @property
    def dimension(self) -> int:
        return self.values["model"]["d"]

    @property
    def start(self) -> np.ndarray:
        return np.array(self.values["model"]["x"])

    @property
    def grid(self) -> TimeGrid:
        g = self.values["grid"]
        return TimeGrid(g["T"], g["n"])

    @property
    def confining(self) -> MultiPoly:
        return MultiPoly.from_terms(self.values["model"]["V"], self.dimension)

    @property
    def interaction(self) -> RadialInteraction | None:
        h = self.values["model"].get("H")
        return None if h is None else RadialInteraction(tuple(h))

    @property
    def interaction_flow(self) -> InteractionFlow | None:
        m = self.values["model"]
        if m.get("W") is not None:
            return InteractionFlow.battery(MultiPoly.from_terms(m["W"], self.dimension))
        if m.get("A") is not None:
            return InteractionFlow.general(MultiPoly.from_terms(m["A"], 2 * self.dimension))
        return None

    def _series_path(self, coeffs) -> Path:
        grid = self.grid
        t = grid.nodes
        return Path(grid, np.stack([np.polynomial.polynomial.polyval(t, c) for c in coeffs], axis=-1))

    @property
    def drive(self) -> Path | None:
        l = self.values["model"].get("l")
        return None if l is None else self._series_path(l)

    @property
    def test_path(self) -> Path:
        f = self.values["model"].get("f")
        if f is None:
            return Path.constant(self.grid, self.start)
        return self._series_path(f)

    @property
    def experiment(self) -> dict[str, Any]:
        return self.values["experiment"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out(self) -> str:
        return self.values["run"]["out"]

    def with_overrides(self, kind=None, seed=None, out=None) -> "ExperimentConfig":
        vals = {s: dict(kv) for s, kv in self.values.items()}
        if kind is not None:
            if vals["experiment"].get("kind") not in (None, kind):
                raise ConfigError(
                    f"config declares kind {vals['experiment']['kind']!r} but {kind!r} was requested"
                )
            vals["experiment"]["kind"] = kind
        if seed is not None:
            vals["run"]["seed"] = _as_int(seed)
        if out is not None:
            vals["run"]["out"] = str(out)
        cfg = ExperimentConfig(vals, set(self.defaulted))
        if kind is not None:
            cfg._apply_kind_defaults()
        return cfg

    def _apply_kind_defaults(self):
        exp = self.values["experiment"]
        if exp.get("N") is None and self.kind is not None:
            exp["N"] = list(_DEFAULT_N.get(self.kind, [2]))
            self.defaulted.add(("experiment", "N"))
        self.check()

    def check(self):
        """Cross-field validation; raises ConfigError."""
        m = self.values["model"]
        exp = self.values["experiment"]
        kind = self.kind
        try:
            self.confining
            flow = self.interaction_flow
            self.grid
            if len(m["x"]) != self.dimension:
                raise ConfigError(f"[model] x has {len(m['x'])} components, expected d = {self.dimension}")
            for key in ("l", "f"):
                if m.get(key) is not None and len(m[key]) != self.dimension:
                    raise ConfigError(f"[model] {key} needs one coefficient list per component")
            if m.get("l") is not None and any(c[0] != 0.0 for c in m["l"]):
                raise ConfigError("[model] l must vanish at t = 0 (constant coefficients zero)")
            if m.get("f") is not None and not np.array_equal(self.test_path.start, self.start):
                raise ConfigError("[model] f must start at x (constant coefficients equal x)")
            if m.get("A") is not None and m.get("W") is not None:
                raise ConfigError("[model] give at most one of A and W")
            if m.get("l") is not None and flow is None:
                raise ConfigError("[model] l requires an interaction flow A or W")
            needs_h = kind in ("slope", "coupling", "convergence", "validate") or flow is None
            if needs_h and m.get("H") is None and kind is not None:
                raise ConfigError("missing required key 'H' in section [model]")
            self.interaction
        except (InputError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if kind == "slope" and len(exp["N"]) != 1:
            raise ConfigError("[experiment] slope takes a single N")
        if kind == "slope" and len(exp["sigma"]) < 2:
            raise ConfigError("[experiment] slope needs at least two sigma values")
        if kind in ("minimize", "convergence", "rate") and any(n < 2 for n in exp["N"]):
            raise ConfigError("[experiment] N values must be >= 2")
        if kind in ("slope", "coupling") and any(n < 1 for n in exp["N"]):
            raise ConfigError("[experiment] N values must be >= 1")
        if exp["R"] < 1 or exp["M"] < 2:
            raise ConfigError("[experiment] need R >= 1 and M >= 2")

    def to_text(self) -> str:
        """Fully resolved document; defaults are written out explicitly and marked."""
        lines = []
        for section, schema in _SCHEMA.items():
            lines.append(f"[{section}]")
            for key in schema:
                val = self.values[section].get(key)
                if val is None:
                    continue
                tag = "  # default" if (section, key) in self.defaulted else ""
                lines.append(f"{key} = {format_value(val)}{tag}")
            lines.append("")
        return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration document."""
    values: dict[str, dict[str, Any]] = {s: {} for s in _SCHEMA}
    seen_line: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = re.sub(r"(^|\s)#.*$", "", raw).strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        m = _ENTRY.match(line)
        if not m:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("entry before any [section] header", lineno)
        key, raw_val = m.group(1), m.group(2).strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in section [{section}]", lineno)
        if (section, key) in seen_line:
            raise ConfigError(f"duplicate key '{key}' in section [{section}]", lineno)
        conv, _, _, bare_ok = _SCHEMA[section][key]
        try:
            values[section][key] = conv(_literal(raw_val, bare_ok, lineno))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid value for '{key}' in section [{section}]: {exc}", lineno) from None
        seen_line[(section, key)] = lineno

    defaulted = set()
    for section, schema in _SCHEMA.items():
        for key, (_, required, default, _) in schema.items():
            if key in values[section]:
                continue
            if required:
                raise ConfigError(f"missing required key '{key}' in section [{section}]")
            if default is not None:
                values[section][key] = list(default) if isinstance(default, list) else default
                defaulted.add((section, key))

    model = values["model"]
    inferred = len(model["V"][0][1])
    if "d" not in model:
        model["d"] = inferred
        defaulted.add(("model", "d"))
    elif model["d"] != inferred:
        raise ConfigError(f"[model] V exponents have length {inferred}, but d = {model['d']}",
                          seen_line.get(("model", "d")))

    cfg = ExperimentConfig(values, defaulted)
    cfg._apply_kind_defaults()
    return cfg
