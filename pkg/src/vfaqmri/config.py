"""Run configuration: nested JSON with defaults, strict keys and overrides.

Every section and key is known in advance; a file with an unknown key is
rejected. Command-line flags are applied on top of the file as dotted-path
overrides, and the fully resolved configuration is what gets echoed next to
every output.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

__all__ = ["DEFAULTS", "ConfigError", "resolve", "load", "dumps", "config_hash", "set_path", "get_path"]


class ConfigError(ValueError):
    """Invalid configuration (unknown key, wrong type or bad value)."""


DEFAULTS = {
    "acquisition": {"flip_angles": [5.0, 10.0, 20.0], "echo_times": [7.0, 15.0, 23.0, 31.0], "tr": 36.0},
    "grids": {
        "t1_min": 100.0, "t1_max": 5000.0, "t1_count": 256,
        "t2s_min": 1.0, "t2s_max": 200.0, "t2s_count": 256,
    },
    "phantom": {"preset": "default", "shape": [128, 128], "snr_db": 30.0, "seed": 0, "phase_order": 3},
    "sampling": {"pattern": "vd", "rate": 0.15, "scheme": "U1", "calib": 24, "seed": 1},
    "solver": {
        "method": "amp-pe",
        "lsq": {"max_iters": 50, "tol": 1e-10},
        "l1": {"kappa": 5e-2, "max_iters": 100, "normalize": True},
        "gamp": {
            "max_iters": 100, "tol": 1e-6, "alpha": None, "lambda_init": None,
            "tau_w_init": None, "estimate_params": True,
        },
        "amp_pe": {"outer_iters": 20, "inner_iters": 100, "outer_tol": 1e-4, "damping": None, "init": "lsq"},
    },
    "trends": {
        "methods": ["lsq", "l1", "amp-pe"],
        "schemes": ["U1", "U2", "U3", "U4"],
        "rates": [0.10, 0.15, 0.20],
        "patterns": ["vd", "pd"],
        "workers": 1,
    },
}

# keys whose value may be null in addition to a number
_NULLABLE = {
    ("solver", "gamp", "alpha"),
    ("solver", "gamp", "lambda_init"),
    ("solver", "gamp", "tau_w_init"),
    ("solver", "amp_pe", "damping"),
}

_CHOICES = {
    ("phantom", "preset"): ("default",),
    ("sampling", "pattern"): ("vd", "pd"),
    ("sampling", "scheme"): ("U1", "U2", "U3", "U4"),
    ("solver", "method"): ("lsq", "l1", "amp-pe"),
    ("solver", "amp_pe", "init"): ("lsq", "zero"),
}


def _merge(base: dict, update: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(where)!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{'.'.join(where)} must be a section")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = _coerce(val, base[key], where)
    return out


def _coerce(val, default, where):
    name = ".".join(where)
    if val is None:
        if where in _NULLABLE:
            return None
        raise ConfigError(f"{name} may not be null")
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"{name} must be true or false")
        return val
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
            raise ConfigError(f"{name} must be an integer")
        return int(val)
    if isinstance(default, float) or (default is None and where in _NULLABLE):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(val)
    if isinstance(default, str):
        if not isinstance(val, str):
            raise ConfigError(f"{name} must be a string")
        if where in _CHOICES:
            val = val.upper() if where == ("sampling", "scheme") else val.lower()
            if val not in _CHOICES[where]:
                raise ConfigError(f"{name} must be one of {_CHOICES[where]}, got {val!r}")
        return val
    if isinstance(default, list):
        if not isinstance(val, (list, tuple)) or not val:
            raise ConfigError(f"{name} must be a non-empty list")
        proto = default[0]
        return [_coerce(v, proto, where) if not isinstance(proto, str) else str(v) for v in val]
    raise ConfigError(f"cannot handle {name}")


def get_path(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Return a copy of ``cfg`` with ``dotted`` set (validated like a file value)."""
    parts = dotted.split(".")
    update = value
    for part in reversed(parts):
        update = {part: update}
    return _merge(cfg, update)


def resolve(file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file, then dotted-path overrides (``None`` values skipped)."""
    cfg = _merge(DEFAULTS, file_cfg or {})
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg = set_path(cfg, key, val)
    _check(cfg)
    return cfg


def _check(cfg):
    s = cfg["sampling"]
    if not 0 < s["rate"] <= 1:
        raise ConfigError("sampling.rate must be in (0, 1]")
    shape = cfg["phantom"]["shape"]
    if len(shape) != 2 or min(shape) < 2:
        raise ConfigError("phantom.shape must be two positive sizes")
    for r in cfg["trends"]["rates"]:
        if not 0 < r <= 1:
            raise ConfigError("trends.rates must lie in (0, 1]")
    for m in cfg["trends"]["methods"]:
        if m not in _CHOICES[("solver", "method")]:
            raise ConfigError(f"unknown method {m!r} in trends.methods")
    cfg["trends"]["schemes"] = [x.upper() for x in cfg["trends"]["schemes"]]
    for x in cfg["trends"]["schemes"]:
        if x not in _CHOICES[("sampling", "scheme")]:
            raise ConfigError(f"unknown scheme {x!r} in trends.schemes")
    cfg["trends"]["patterns"] = [x.lower() for x in cfg["trends"]["patterns"]]
    for x in cfg["trends"]["patterns"]:
        if x not in _CHOICES[("sampling", "pattern")]:
            raise ConfigError(f"unknown pattern {x!r} in trends.patterns")
    if cfg["trends"]["workers"] < 1:
        raise ConfigError("trends.workers must be >= 1")


def load(path) -> dict:
    """Read a JSON config file (not yet merged with defaults)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.blake2b(json.dumps(cfg, sort_keys=True).encode(), digest_size=8).hexdigest()
