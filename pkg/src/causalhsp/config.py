"""INI run configuration.

Sections and keys (all optional unless a command needs them)::

    [run]          seed, output
    [data]         assets, drivers, kind (returns|prices), drivers_kind, align (inner|forward_fill)
    [selection]    mode, m, epsilon, t0, t1, window, exclude, screen_collinear, estimator, exhaustive
    [sensitivity]  model, lag, window, aggregation, scope, epochs, learning_rate, optimizer
    [geometry]     psd_repair, linkage_input
    [allocation]   method, bounds, alpha, lambda, cov_window, gamma, target
    [sde]          model, dt, horizon, paths, sens_window, n_hist, stride, theta_span, common_noise
    [backtest]     methods, rebalance_every, driver_update_every, initial_nav, holdings, cost_bps, start

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid

SCHEMA = {
    "run": {"seed": int, "output": str},
    "data": {"assets": str, "drivers": str, "kind": str, "drivers_kind": str, "align": str},
    "selection": {"mode": str, "m": int, "epsilon": float, "t0": float, "t1": float, "window": int,
                  "exclude": list, "screen_collinear": bool, "estimator": str, "exhaustive": bool},
    "sensitivity": {"model": str, "lag": int, "window": int, "aggregation": str, "scope": str,
                    "epochs": int, "learning_rate": float, "optimizer": str},
    "geometry": {"psd_repair": bool, "linkage_input": str},
    "allocation": {"method": str, "bounds": "bounds", "alpha": float, "lambda": float,
                   "cov_window": int, "gamma": float, "target": float},
    "sde": {"model": str, "dt": float, "horizon": int, "paths": int, "sens_window": int,
            "n_hist": int, "stride": int, "theta_span": int, "common_noise": bool},
    "backtest": {"methods": list, "rebalance_every": int, "driver_update_every": int,
                 "initial_nav": float, "holdings": str, "cost_bps": float, "start": int},
}
PATH_KEYS = {("data", "assets"), ("data", "drivers"), ("run", "output")}


def parse_bounds(text: str) -> tuple[float, float] | None:
    """'0.03:0.10' -> (0.03, 0.10); 'none' -> None; empty sides mean unbounded."""
    text = text.strip()
    if text.lower() in ("", "none"):
        return None
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ValueError(f"bounds must look like LO:HI, got {text!r}")
    return (float(lo) if lo.strip() else None, float(hi) if hi.strip() else None)


def _convert(kind, raw: str):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is list:
        return [x.strip() for x in raw.split(",") if x.strip()]
    if kind == "bounds":
        return parse_bounds(raw)
    return kind(raw.strip())


@dataclass
class RunConfig:
    sections: dict = field(default_factory=lambda: {s: {} for s in SCHEMA})
    source: str | None = None

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value) -> None:
        if value is not None:
            self.sections.setdefault(section, {})[key] = value


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(str(path), "file not found")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigInvalid(str(path), f"unparseable: {exc}") from exc
    cfg = RunConfig(source=str(path))
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigInvalid(str(path), f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigInvalid(str(path), f"unknown key {key!r} in [{section}]")
            try:
                value = _convert(SCHEMA[section][key], raw)
            except ValueError as exc:
                raise ConfigInvalid(str(path), f"[{section}] {key}: {exc}") from exc
            if (section, key) in PATH_KEYS and not Path(value).is_absolute():
                value = str((path.parent / value).resolve())
            cfg.sections[section][key] = value
    return cfg
