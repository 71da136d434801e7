"""Pipeline configuration: JSON file, dotted ``--set`` overrides and validation."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

DEFAULTS = {
    "products": {},
    "surface_mask": None,
    "precip": None,
    "gauges": None,
    "ensemble": None,
    "sigmas": None,
    "mad_filter": True,
    "mad_k": 3.0,
    "thresholds": {"land": 1.0, "ocean": 1.1},
    "alpha": 0.05,
    "B": 3000,
    "seed": 0,
    "threads": 1,
    "selectors": ["hemisphere=NH", "hemisphere=SH", "surface=land,hemisphere=NH",
                  "surface=ocean,hemisphere=NH"],
    "exceedance_levels": [0.25, 0.5, 0.75],
    "window": None,
    "slice_width": 15.0,
    "slice_anchor": 0.0,
    "min_annual_precip_mm": 50.0,
    "detrend_acf": False,
    "trend_maps": True,
    "trend_series": None,
    "occurrence_threshold": 0.0,
    "snow_phases": ["snow"],
    "out": "out",
}

PATH_KEYS = ("surface_mask", "precip", "gauges", "ensemble", "trend_series")


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=value``; the value is read as JSON when it parses."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty key in {assignment!r}")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {p} is not a mapping")
    node[parts[-1]] = _parse_value(raw)


def load(path=None, overrides=(), base_dir=None) -> dict:
    """Merge defaults, the JSON file and overrides; resolve relative paths."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(user)
        base_dir = base_dir or path.parent
    for item in overrides:
        apply_override(cfg, item)
    cfg["_hash"] = config_hash(cfg)
    base = Path(base_dir or ".")
    for key in PATH_KEYS:
        if cfg.get(key):
            cfg[key] = str(base / cfg[key])
    for name, paths in cfg["products"].items():
        if not isinstance(paths, dict):
            raise ConfigError(f"products.{name} must map variables to paths")
        cfg["products"][name] = {k: str(base / v) for k, v in paths.items()}
    cfg["out"] = str(base / cfg["out"]) if path is not None else cfg["out"]
    return cfg


def validate(cfg: dict, required=()) -> None:
    """Check ranges and that the named path keys exist on disk."""
    alpha = cfg["alpha"]
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 0.5:
        raise ConfigError(f"alpha must lie in (0, 0.5), got {alpha!r}")
    if not isinstance(cfg["B"], int) or cfg["B"] < 100:
        raise ConfigError(f"B must be an integer >= 100, got {cfg['B']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    for level in cfg["exceedance_levels"]:
        if not 0 <= level <= 1:
            raise ConfigError(f"exceedance level {level} outside [0, 1]")
    for key in required:
        value = cfg.get(key)
        if not value:
            raise ConfigError(f"config key {key!r} is required for this command")
        if not Path(value).exists():
            raise ConfigError(f"{key}: path {value} does not exist")


def config_hash(cfg: dict) -> str:
    """Digest of the settings that influence results.

    Taken before path resolution and without ``out``/``threads`` so that the
    same run in another directory hashes identically.
    """
    kept = {k: v for k, v in cfg.items() if k not in ("out", "threads", "_hash")}
    canonical = json.dumps(kept, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
