"""Series loading, alignment, return transformation and window extraction.

Dates are ``numpy.datetime64[D]`` when read from CSV, but any strictly
increasing, hashable, orderable labels work (integers are handy in tests).
Returns are simple percentage changes. Panels are immutable: their arrays
are marked read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import (DivisionByZero, EmptyIntersection, InsufficientHistory, MissingData,
                     ShapeMismatch, TooShort)

ROWS_PER_MONTH = 21  # convention only; windows are always row counts
PAPER_LAGS = (0, 1, 2, 5, 10, 20)


def _frozen(a, dtype=None):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawSeries:
    """A named sequence of (date, level) observations."""

    name: str
    dates: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        dates = _frozen(self.dates)
        levels = _frozen(self.levels, float)
        if dates.ndim != 1 or dates.shape != levels.shape:
            raise ShapeMismatch(f"{self.name}: dates and levels must be equal-length vectors")
        if dates.size == 0:
            raise TooShort(f"{self.name}: series is empty", name=self.name)
        if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
            raise ValueError(f"{self.name}: dates must be strictly increasing")
        if not np.all(np.isfinite(levels)):
            raise MissingData(f"{self.name}: non-finite level", name=self.name)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_pairs(cls, name: str, observations: Iterable[tuple]) -> "RawSeries":
        obs = list(observations)
        return cls(name, np.array([d for d, _ in obs]), np.array([v for _, v in obs], float))

    def __len__(self) -> int:
        return self.dates.size


@dataclass(frozen=True)
class ReturnPanel:
    """Date-indexed matrix of returns with an explicit missing mask."""

    dates: np.ndarray
    names: tuple
    values: np.ndarray
    missing: np.ndarray = field(default=None)

    def __post_init__(self):
        dates = _frozen(self.dates)
        names = tuple(str(n) for n in self.names)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape != (dates.size, len(names)):
            raise ShapeMismatch(f"values shape {values.shape} != ({dates.size}, {len(names)})")
        missing = np.isnan(values) if self.missing is None else np.array(self.missing, bool)
        if missing.shape != values.shape:
            raise ShapeMismatch("missing mask shape differs from values")
        if not np.all(np.isfinite(values[~missing])):
            raise MissingData("non-missing values must be finite")
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        values[missing] = np.nan
        values.setflags(write=False)
        missing.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @property
    def n_rows(self) -> int:
        return self.dates.size

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "ReturnPanel":
        idx = [self.names.index(n) for n in names]
        return ReturnPanel(self.dates, [self.names[i] for i in idx],
                           self.values[:, idx], self.missing[:, idx])

    def rows(self, start: int, stop: int) -> "ReturnPanel":
        return ReturnPanel(self.dates[start:stop], self.names,
                           self.values[start:stop], self.missing[start:stop])

    def index_of(self, date) -> int:
        hits = np.flatnonzero(self.dates == _coerce_date(date, self.dates))
        if hits.size == 0:
            raise KeyError(f"date {date} not in panel")
        return int(hits[0])

    def require_complete(self) -> "ReturnPanel":
        if self.missing.any():
            r, c = np.argwhere(self.missing)[0]
            raise MissingData(f"missing value for {self.names[c]} at {self.dates[r]}",
                              name=self.names[c], date=self.dates[r])
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(np.asarray(self.values), index=pd.Index(self.dates, name="date"),
                            columns=list(self.names))

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "ReturnPanel":
        return cls(df.index.to_numpy(), list(df.columns), df.to_numpy(float))


@dataclass(frozen=True)
class WindowSpec:
    end: object
    length: int
    lag: int = 0

    def __post_init__(self):
        if int(self.length) < 2:
            raise ValueError("window length must be >= 2")
        if int(self.lag) < 0:
            raise ValueError("lag must be non-negative")


def _coerce_date(d, like: np.ndarray):
    if np.issubdtype(like.dtype, np.datetime64) and not isinstance(d, np.datetime64):
        return np.datetime64(d, "D")
    return d


def to_returns(series: RawSeries) -> RawSeries:
    """Simple returns ``level[t] / level[t-1] - 1``, one observation shorter."""
    if len(series) < 2:
        raise TooShort(f"{series.name}: need at least 2 observations", name=series.name)
    lv = series.levels
    zero = np.flatnonzero(lv[:-1] == 0.0)
    if zero.size:
        raise DivisionByZero(series.dates[zero[0] + 1])
    return RawSeries(series.name, series.dates[1:], lv[1:] / lv[:-1] - 1.0)


def from_returns(series: RawSeries, base: float) -> np.ndarray:
    """Rebuild levels from returns and a starting level (inverse of to_returns)."""
    return base * np.concatenate([[1.0], np.cumprod(1.0 + series.levels)])


def align(panels: Sequence[RawSeries], policy: str = "inner") -> ReturnPanel:
    """Merge series into one panel.

    ``inner`` keeps dates common to every series. ``forward_fill`` keeps the
    union of dates and carries each series' last value across its gaps, but
    leaves rows before its first observation missing.
    """
    if not panels:
        raise EmptyIntersection("no series to align")
    if policy not in ("inner", "forward_fill"):
        raise ValueError(f"unknown alignment policy {policy!r}")
    frames = [pd.Series(s.levels, index=pd.Index(s.dates), name=s.name) for s in panels]
    df = pd.concat(frames, axis=1, join="inner" if policy == "inner" else "outer").sort_index()
    if policy == "inner" and len(df) < 2:
        raise EmptyIntersection(f"inner alignment leaves {len(df)} dates", dates=len(df))
    if policy == "forward_fill":
        df = df.ffill()
    dates = df.index.to_numpy().astype(np.asarray(panels[0].dates).dtype)
    return ReturnPanel(dates, [s.name for s in panels], df.to_numpy(float))


def window_bounds(panel: ReturnPanel, spec: WindowSpec) -> tuple[int, int]:
    """Row range ``[start, stop)`` of the window, lag rows included before it."""
    stop = panel.index_of(spec.end) + 1
    needed = int(spec.length) + int(spec.lag)
    if stop < needed:
        raise InsufficientHistory(needed, stop)
    return stop - int(spec.length), stop


def slice_window(panel: ReturnPanel, spec: WindowSpec, allow_missing: bool = False) -> ReturnPanel:
    """The ``spec.length`` rows ending at ``spec.end``."""
    start, stop = window_bounds(panel, spec)
    out = panel.rows(start, stop)
    return out if allow_missing else out.require_complete()


def lagged_pair(drivers: ReturnPanel, assets: ReturnPanel, spec: WindowSpec):
    """Aligned regression arrays for a lagged fit.

    Row ``i`` pairs driver values at ``t - lag`` with asset values at ``t`` for
    the ``spec.length`` dates ``t`` ending at ``spec.end``. Both panels must
    share the same date index.
    """
    if drivers.n_rows != assets.n_rows or not np.array_equal(drivers.dates, assets.dates):
        raise ShapeMismatch("driver and asset panels must share dates")
    start, stop = window_bounds(assets, spec)
    lag = int(spec.lag)
    X = drivers.rows(start - lag, stop - lag).require_complete()
    Y = assets.rows(start, stop).require_complete()
    return np.asarray(X.values), np.asarray(Y.values)


# -- csv ----------------------------------------------------------------------


def read_series_csv(path: str | Path) -> list[RawSeries]:
    """Parse a ``date,<name>,...`` CSV into one series per column (blanks dropped)."""
    df = pd.read_csv(path, float_precision="round_trip")
    if df.columns[0] != "date":
        raise ValueError(f"{path}: first column must be 'date'")
    dates = pd.to_datetime(df["date"]).to_numpy().astype("datetime64[D]")
    out = []
    for name in df.columns[1:]:
        col = pd.to_numeric(df[name], errors="raise").to_numpy(float)
        ok = ~np.isnan(col)
        out.append(RawSeries(str(name), dates[ok], col[ok]))
    return out


def load_panel(path: str | Path, kind: str = "returns", policy: str = "inner") -> ReturnPanel:
    """Read a CSV as a return panel; ``kind='prices'`` converts levels first."""
    series = read_series_csv(path)
    if kind == "prices":
        series = [to_returns(s) for s in series]
    elif kind != "returns":
        raise ValueError(f"kind must be 'prices' or 'returns', got {kind!r}")
    return align(series, policy)


def panel_to_csv_text(panel: ReturnPanel) -> str:
    df = panel.to_frame()
    df.index = pd.Index([str(d) for d in panel.dates], name="date")
    return df.to_csv(float_format="%.17g", lineterminator="\n")
