"""Run configuration: a YAML mapping turned into models, controls and problems.

Schema (every key may also be set from the command line)::

    data: path/to/file.csv      # or "egypt" for the bundled life-lengths
    column: 0                   # index or header name
    model: gamma                # normal | gamma | beta | beta_one
    wide_model: {name: gamma_in_gengamma, gamma0: [1.0]}
    controls:
      - {kind: cell, cells: [[9.5, 20.5]]}
      - {kind: moment, powers: [2]}
      - {kind: quantile, levels: [0.25, 0.5]}
      - {kind: partition, cells: [[0, 1], [1, .inf]]}
    focus: {kind: control, index: 0}   # or theta / moment / cell
    a: 0.61                     # or a policy mapping, see ``resolve_policy``
    method: hl                  # hl | alt
    seed: 0
    output_dir: out
"""

import csv
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional

import numpy as np
import yaml

from .controls import cell_control, combine_controls, moment_control, quantile_control
from .errors import HybridLikError
from .hl import HLProblem, cell_focus, control_focus, moment_focus, theta_focus
from .models import builtin_model, builtin_wide


class ConfigError(HybridLikError):
    """Malformed configuration or unreadable input file."""


EGYPT_N = 141
EGYPT_RANGE = (1.5, 96.0)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path, column=0):
    """One observation per row; a non-numeric first row is taken as a header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ConfigError(f"cannot read data file {path!r}: {exc}") from None
    if not rows:
        raise ConfigError(f"data file {path!r} is empty")
    header = None
    if not all(_is_number(c) for c in rows[0] if c.strip()):
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    if isinstance(column, str) and not column.lstrip("-").isdigit():
        if header is None or column not in header:
            raise ConfigError(f"column {column!r} not found in header of {path!r}")
        idx = header.index(column)
    else:
        idx = int(column)
    try:
        y = np.array([float(r[idx]) for r in rows])
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad value in column {column!r} of {path!r}: {exc}") from None
    if y.size == 0:
        raise ConfigError(f"no observations in {path!r}")
    if not np.all(np.isfinite(y)):
        raise ConfigError(f"non-finite observation in {path!r}")
    return y


def egypt_path():
    return resources.files("hybridlik") / "data" / "egypt.csv"


def egypt_available():
    return egypt_path().is_file()


def load_egypt():
    """The bundled Roman-era Egyptian life-lengths (n = 141)."""
    path = egypt_path()
    if not path.is_file():
        raise ConfigError("bundled life-length data (data/egypt.csv) is not installed")
    y = load_csv(str(path))
    if y.size != EGYPT_N or not (np.isclose(y.min(), EGYPT_RANGE[0]) and np.isclose(y.max(), EGYPT_RANGE[1])):
        raise ConfigError("bundled life-length data failed its integrity check")
    return y


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


def parse_grid(spec):
    """``"start:stop:step"`` (stop included), a list of values, or one number."""
    if spec is None:
        return None
    if isinstance(spec, str):
        parts = spec.split(":")
        try:
            if len(parts) == 3:
                lo, hi, st = (float(p) for p in parts)
                if st <= 0 or hi < lo:
                    raise ConfigError(f"bad grid {spec!r}")
                k = int(np.floor((hi - lo) / st + 1e-9))
                return np.round(lo + st * np.arange(k + 1), 12)
            return np.array([float(v) for v in spec.split(",")])
        except ValueError:
            raise ConfigError(f"bad grid {spec!r}") from None
    if isinstance(spec, dict):
        return parse_grid(f"{spec['start']}:{spec['stop']}:{spec['step']}")
    return np.atleast_1d(np.asarray(spec, dtype=float))


def parse_range(spec):
    """``"lo:hi:num"`` into an evenly spaced grid."""
    if isinstance(spec, str):
        try:
            lo, hi, num = spec.split(":")
            return np.linspace(float(lo), float(hi), int(num))
        except ValueError:
            raise ConfigError(f"bad range {spec!r}; expected lo:hi:num") from None
    if isinstance(spec, (list, tuple)) and len(spec) == 3:
        return np.linspace(float(spec[0]), float(spec[1]), int(spec[2]))
    raise ConfigError(f"bad range {spec!r}")


# ---------------------------------------------------------------------------
# Short forms used on the command line
# ---------------------------------------------------------------------------


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def parse_control_token(token):
    """``moment:2,3``, ``quantile:0.25,0.5``, ``cell:9.5,20.5`` or ``partition:0,1,3,inf``."""
    kind, _, rest = token.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "moment":
            return {"kind": kind, "powers": [int(v) for v in _floats(rest)]}
        if kind == "quantile":
            return {"kind": kind, "levels": _floats(rest)}
        if kind == "cell":
            v = _floats(rest)
            if len(v) % 2:
                raise ConfigError(f"cell control needs pairs of edges: {token!r}")
            return {"kind": kind, "cells": [v[i:i + 2] for i in range(0, len(v), 2)]}
        if kind == "partition":
            v = _floats(rest)
            return {"kind": kind, "cells": [[a, b] for a, b in zip(v[:-1], v[1:])]}
    except ValueError:
        raise ConfigError(f"bad control {token!r}") from None
    raise ConfigError(f"unknown control kind {kind!r}")


def parse_focus_token(token):
    """``control:0``, ``theta:1``, ``moment:2`` or ``cell:9.5,20.5``."""
    kind, _, rest = token.partition(":")
    try:
        if kind in ("control", "theta"):
            return {"kind": kind, "index": int(rest or 0)}
        if kind == "moment":
            return {"kind": kind, "power": int(rest)}
        if kind == "cell":
            return {"kind": kind, "cell": _floats(rest)}
    except ValueError:
        raise ConfigError(f"bad focus {token!r}") from None
    raise ConfigError(f"unknown focus kind {kind!r}")


# ---------------------------------------------------------------------------
# Config object
# ---------------------------------------------------------------------------

KNOWN_KEYS = {"data", "column", "model", "wide_model", "controls", "focus", "a", "method",
              "seed", "output_dir", "psi_range", "grid", "simulate", "threads", "mu"}


@dataclass
class RunConfig:
    raw: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def output_dir(self):
        return self.raw.get("output_dir", ".")

    @property
    def seed(self):
        return int(self.raw.get("seed", 0))


def read_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path!r} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return raw


def set_dotted(raw, key, value):
    node = raw
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a mapping")
    node[parts[-1]] = value


def validate(raw):
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "model" not in raw:
        raise ConfigError("config needs a model")
    return RunConfig(raw)


def build_model(cfg):
    try:
        return builtin_model(cfg.get("model"))
    except HybridLikError as exc:
        raise ConfigError(str(exc)) from None


def build_wide(cfg, required=True):
    spec = cfg.get("wide_model")
    if spec is None:
        if required:
            raise ConfigError("this command needs a wide_model with an explicit gamma0")
        return None
    if isinstance(spec, str) or "gamma0" not in spec:
        raise ConfigError("wide_model must give both name and gamma0")
    wm = builtin_wide(spec["name"])
    g0 = np.atleast_1d(np.asarray(spec["gamma0"], dtype=float))
    if wm.narrow.name != cfg.get("model"):
        raise ConfigError(f"wide model {wm.name!r} does not extend model {cfg.get('model')!r}")
    if not np.allclose(g0, wm.gamma0):
        raise ConfigError(f"wide model {wm.name!r} nests the working model at gamma0 = "
                          f"{wm.gamma0.tolist()}, not {g0.tolist()}")
    return wm


def build_controls(cfg, model):
    specs = cfg.get("controls")
    if not specs:
        raise ConfigError("config needs at least one control block")
    if isinstance(specs, dict):
        specs = [specs]
    sets = []
    for s in specs:
        if isinstance(s, str):
            s = parse_control_token(s)
        kind = s.get("kind")
        if kind == "moment":
            sets.append(moment_control(model, s["powers"]))
        elif kind == "quantile":
            sets.append(quantile_control(model, s["levels"]))
        elif kind in ("cell", "partition"):
            sets.append(cell_control(model, s["cells"], partition=kind == "partition"))
        else:
            raise ConfigError(f"unknown control kind {kind!r}")
    return combine_controls(sets)


def build_focus(cfg, model, controls):
    spec = cfg.get("focus")
    if spec is None:
        raise ConfigError("config needs exactly one focus")
    if isinstance(spec, str):
        spec = parse_focus_token(spec)
    kind = spec.get("kind")
    if kind == "control":
        j = int(spec.get("index", 0))
        if not 0 <= j < controls.q:
            raise ConfigError(f"focus index {j} out of range for {controls.q} controls")
        return control_focus(controls, j)
    if kind == "theta":
        j = int(spec.get("index", 0))
        if not 0 <= j < model.p:
            raise ConfigError(f"focus index {j} out of range for {model.p} parameters")
        return theta_focus(j, model.param_names[j])
    if kind == "moment":
        return moment_focus(model, int(spec["power"]))
    if kind == "cell":
        lo, hi = spec["cell"]
        return cell_focus(model, float(lo), float(hi))
    raise ConfigError(f"unknown focus kind {kind!r}")


def load_data(cfg):
    src = cfg.get("data")
    if src is None:
        raise ConfigError("config needs a data path")
    if isinstance(src, (list, tuple)):
        return np.asarray(src, dtype=float)
    if src == "egypt":
        return load_egypt()
    if not os.path.exists(src):
        raise ConfigError(f"data file {src!r} does not exist")
    return load_csv(src, cfg.get("column", 0))


def build_problem(cfg, a=0.0, data=None):
    model = build_model(cfg)
    controls = build_controls(cfg, model)
    focus = build_focus(cfg, model, controls)
    y = load_data(cfg) if data is None else data
    return HLProblem(model, controls, y, float(a), focus)


@dataclass(frozen=True)
class APolicy:
    kind: str  # fixed | efficiency_cap | fic | grid
    value: Optional[float] = None
    eps: Optional[float] = None
    grid: Any = None


def resolve_policy(spec):
    """``a`` as a number, or ``{policy: efficiency_cap, eps, grid}``,
    ``{policy: fic, grid}`` or ``{policy: grid, grid}``.

    The one-key forms ``{efficiency_cap: eps}``, ``{fic: grid}`` and
    ``{grid: grid}`` are accepted as well.
    """
    if spec is None:
        return APolicy("fixed", 0.0)
    if isinstance(spec, (int, float)):
        return APolicy("fixed", float(spec))
    if isinstance(spec, str):
        try:
            return APolicy("fixed", float(spec))
        except ValueError:
            raise ConfigError(f"bad balance parameter {spec!r}") from None
    if isinstance(spec, dict) and "policy" not in spec and len(spec) == 1:
        # short forms {efficiency_cap: eps}, {fic: grid}, {grid: grid}
        (kind, val), = spec.items()
        if kind == "efficiency_cap":
            spec = {"policy": kind, "eps": val}
        elif kind in ("fic", "grid"):
            spec = {"policy": kind} if val is None else {"policy": kind, "grid": val}
    if not isinstance(spec, dict) or "policy" not in spec:
        raise ConfigError("a must be a number or a mapping with a policy")
    kind = spec["policy"]
    grid = parse_grid(spec.get("grid", "0:0.95:0.01"))
    if kind == "efficiency_cap":
        if "eps" not in spec:
            raise ConfigError("efficiency_cap policy needs eps")
        return APolicy(kind, eps=float(spec["eps"]), grid=grid)
    if kind in ("fic", "grid"):
        return APolicy(kind, grid=grid)
    raise ConfigError(f"unknown a policy {kind!r}")
