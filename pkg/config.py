"""
Configuration: convexreg.json next to the code, merged over built-in defaults.

    {
      "pipeline":   {...},   # PipelineConfig fields
      "bands":      {...},   # BandConfig fields
      "studies":    {...},   # per-study overrides (replications, seed, ...)
      "tolerances": {"absolute": 1e-9, "relative": false}
    }

CONVEXREG_THREADS caps the worker threads used for replications.
"""

import copy
import json
import os

from errors import ParseError, UsageError

CONFIG_PATH = "convexreg.json"

DEFAULTS = {
    "pipeline": {
        "smoother": "localpoly",
        "kernel": "gaussian",
        "degree": 1,
        "bandwidth": "cv",
        "grid": 101,
        "shape": "convex",
        "domain": "box",
        "strict": True,
    },
    "bands": {
        "alpha": 0.05,
        "delta_exponent": 0.3,
        "kernel": "epanechnikov",
        "correction": 0.0,
    },
    "studies": {
        "seed": 2009,
    },
    "tolerances": {
        "absolute": 1e-9,
        "relative": False,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None = CONFIG_PATH) -> dict:
    """Load convexreg.json (if present) over the defaults."""
    if path is None or not os.path.exists(path):
        if path not in (None, CONFIG_PATH):
            raise UsageError(f"config file not found: {path}")
        return copy.deepcopy(DEFAULTS)
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return _merge(DEFAULTS, data)


def pipeline_section(cfg: dict) -> dict:
    """Pipeline options with the shared tolerances folded in."""
    section = dict(cfg.get("pipeline", {}))
    tol = cfg.get("tolerances", {})
    section.setdefault("tol", tol.get("absolute", 1e-9))
    section.setdefault("relative_tol", tol.get("relative", False))
    return section


def thread_count() -> int:
    cap = os.environ.get("CONVEXREG_THREADS")
    default = os.cpu_count() or 1
    try:
        return max(1, int(cap)) if cap else default
    except ValueError:
        raise UsageError(f"CONVEXREG_THREADS must be an integer, got {cap!r}") from None
