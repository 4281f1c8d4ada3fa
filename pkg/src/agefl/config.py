"""Experiment configuration.

Configs are YAML documents. Every mapping and list keeps the line it came
from so validation errors point at the offending line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .bound import BOUND_MODES, FSE_MODES
from .markov import STOCHASTIC_TOL, MarkovChain, MarkovError, cyclic_chain
from .model import DELTA_MODES, ClientSpec, make_clients
from .scheduler import DEFAULT_SCHEDULE_CAP, SCHEMES, Flags
from .simulate import BASELINE_MODES, FRESH_MODES

PAPER_CONFIG = Path(__file__).parent / "data" / "paper.cfg"


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {msg}" if where else msg)
        self.line = line


class _LineDict(dict):
    lines: dict


class _LineList(list):
    line: int
    item_lines: list


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    out.line = node.start_mark.line + 1
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = k_node.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _LineList(loader.construct_object(n, deep=True) for n in node.value)
    out.line = node.start_mark.line + 1
    out.item_lines = [n.start_mark.line + 1 for n in node.value]
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


@dataclass
class ClientConfig:
    name: str
    chain: MarkovChain
    n_samples: int
    q: float | None = None


@dataclass
class ExperimentConfig:
    clients: list[ClientConfig]
    t_agg: int
    eps_bar_grid: list[float]
    schemes: list[str]
    trials: int
    seed: int
    curve_eps_bar: float
    flags: Flags = field(default_factory=Flags)
    source: str | None = None

    def client_specs(self) -> list[ClientSpec]:
        return make_clients([c.chain for c in self.clients], [c.n_samples for c in self.clients])


def _line(d, key):
    return getattr(d, "lines", {}).get(key, getattr(d, "line", None))


def _require(d, key, path):
    if key not in d:
        raise ConfigError(f"missing required key '{key}'", getattr(d, "line", None), path)
    return d[key]


def _number_list(value, what, line, path) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{what} must be a non-empty list", line, path)
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            item_line = value.item_lines[i] if hasattr(value, "item_lines") else line
            raise ConfigError(f"{what}[{i}] is not a finite number: {v!r}", item_line, path)
        out.append(float(v))
    return out


def _parse_client(idx: int, d, defaults_values, path) -> ClientConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"client {idx + 1} must be a mapping", None, path)
    name = str(d.get("name", f"client-{idx + 1}"))
    label = f"client {idx + 1} ({name})"
    values = d.get("state_values", defaults_values)
    if values is None:
        raise ConfigError(f"{label}: no state_values given", d.line, path)
    values = _number_list(values, f"{label} state_values", _line(d, "state_values"), path)
    n = len(values)
    dist = _number_list(
        _require(d, "collection_dist", path), f"{label} collection_dist", _line(d, "collection_dist"), path
    )
    if len(dist) != n:
        raise ConfigError(f"{label}: collection_dist has {len(dist)} entries, expected {n}",
                          _line(d, "collection_dist"), path)
    if abs(sum(dist) - 1.0) > STOCHASTIC_TOL:
        raise ConfigError(f"{label}: collection_dist sums to {sum(dist):.15g}, not 1",
                          _line(d, "collection_dist"), path)
    n_samples = d.get("n_samples", 100)
    if isinstance(n_samples, bool) or not isinstance(n_samples, int) or n_samples < 1:
        raise ConfigError(f"{label}: n_samples must be a positive integer", _line(d, "n_samples"), path)

    if ("q" in d) == ("transition" in d):
        raise ConfigError(f"{label}: give exactly one of 'q' or 'transition'", d.line, path)
    q = None
    try:
        if "q" in d:
            q = d["q"]
            if isinstance(q, bool) or not isinstance(q, (int, float)):
                raise ConfigError(f"{label}: q must be a number", _line(d, "q"), path)
            q = float(q)
            chain = cyclic_chain(n, q, values, dist)
        else:
            rows = d["transition"]
            tline = _line(d, "transition")
            if not isinstance(rows, list) or len(rows) != n:
                raise ConfigError(f"{label}: transition must have {n} rows", tline, path)
            matrix = []
            for r, row in enumerate(rows):
                rline = rows.item_lines[r] if hasattr(rows, "item_lines") else tline
                row = _number_list(row, f"{label} transition row {r + 1}", rline, path)
                if len(row) != n:
                    raise ConfigError(f"{label}: transition row {r + 1} has {len(row)} entries, expected {n}",
                                      rline, path)
                if any(x < 0 or x > 1 for x in row):
                    raise ConfigError(f"{label}: transition row {r + 1} has entries outside [0, 1]", rline, path)
                if abs(sum(row) - 1.0) > STOCHASTIC_TOL:
                    raise ConfigError(
                        f"{label}: transition row {r + 1} sums to {sum(row):.15g}, not 1", rline, path
                    )
                matrix.append(row)
            chain = MarkovChain(values, np.array(matrix), dist)
    except MarkovError as exc:
        raise ConfigError(f"{label}: {exc}", d.line, path) from exc
    return ClientConfig(name, chain, n_samples, q)


def _choice(d, key, allowed, default, path):
    v = d.get(key, default)
    if v not in allowed:
        raise ConfigError(f"{key} must be one of {list(allowed)}, got {v!r}", _line(d, key), path)
    return v


def parse_config(text: str, path=None) -> ExperimentConfig:
    try:
        raw: Any = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"unparseable config: {exc}", mark.line + 1 if mark else None, path) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level", 1, path)

    if "seed" not in raw:
        raise ConfigError("missing required key 'seed' (runs must be reproducible)", raw.line, path)
    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer", _line(raw, "seed"), path)

    t_agg = raw.get("t_agg", 12)
    if isinstance(t_agg, bool) or not isinstance(t_agg, int) or t_agg < 1:
        raise ConfigError("t_agg must be a positive integer", _line(raw, "t_agg"), path)
    trials = raw.get("trials", 1000)
    if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
        raise ConfigError("trials must be a positive integer", _line(raw, "trials"), path)

    grid = _number_list(raw.get("eps_bar_grid", [0.25, 0.5, 1, 2, 4]), "eps_bar_grid",
                        _line(raw, "eps_bar_grid"), path)
    if any(e <= 0 for e in grid):
        raise ConfigError("eps_bar_grid values must be positive", _line(raw, "eps_bar_grid"), path)
    curve_eps = raw.get("curve_eps_bar", grid[0])
    if isinstance(curve_eps, bool) or not isinstance(curve_eps, (int, float)) or curve_eps <= 0:
        raise ConfigError("curve_eps_bar must be a positive number", _line(raw, "curve_eps_bar"), path)

    schemes = raw.get("schemes", list(SCHEMES))
    if not isinstance(schemes, list) or not schemes:
        raise ConfigError("schemes must be a non-empty list", _line(raw, "schemes"), path)
    for i, s in enumerate(schemes):
        if s not in SCHEMES:
            line = schemes.item_lines[i] if hasattr(schemes, "item_lines") else _line(raw, "schemes")
            raise ConfigError(f"unknown scheme {s!r}; expected one of {list(SCHEMES)}", line, path)

    fl = raw.get("flags", {}) or {}
    if not isinstance(fl, dict):
        raise ConfigError("flags must be a mapping", _line(raw, "flags"), path)
    cap = fl.get("schedule_cap", DEFAULT_SCHEDULE_CAP)
    flags = Flags(
        delta_mode=_choice(fl, "delta_mode", DELTA_MODES, "spectral", path),
        fse_mode=_choice(fl, "fse_mode", FSE_MODES, "paper", path),
        bound_mode=_choice(fl, "bound_mode", BOUND_MODES, "cancelled", path),
        fresh_mode=_choice(fl, "fresh_mode", FRESH_MODES, "shared", path),
        baseline_mode=_choice(fl, "baseline_mode", BASELINE_MODES, "exact", path),
        schedule_cap=int(cap),
    )

    clients_raw = _require(raw, "clients", path)
    if not isinstance(clients_raw, list) or not clients_raw:
        raise ConfigError("clients must be a non-empty list", _line(raw, "clients"), path)
    default_values = raw.get("state_values")
    clients = [_parse_client(i, c, default_values, path) for i, c in enumerate(clients_raw)]

    return ExperimentConfig(
        clients=clients,
        t_agg=t_agg,
        eps_bar_grid=grid,
        schemes=list(schemes),
        trials=trials,
        seed=seed,
        curve_eps_bar=float(curve_eps),
        flags=flags,
        source=str(path) if path is not None else None,
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a config file; ``"paper"`` loads the bundled one."""
    p = PAPER_CONFIG if str(path) == "paper" else Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), p)
