"""FRED-MD style panel loading, stationarity transforms and window cutting."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "LoadError",
    "RawPanel",
    "TimeSeriesPanel",
    "TargetSpec",
    "EVALUATION_TARGETS",
    "LEADING_LOSS",
    "load_fred_md",
    "apply_tcode",
    "balance_and_transform",
    "standardize",
    "standardize_array",
    "rolling_window",
    "parse_month",
]

# Leading observations lost by each transformation code.
LEADING_LOSS = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


class LoadError(ValueError):
    """Raised when a panel file or its contents cannot be used."""


@dataclass(frozen=True)
class TargetSpec:
    name: str
    group: str = ""


EVALUATION_TARGETS = (
    TargetSpec("RPI", "Output & income"),
    TargetSpec("CE16OV", "Labor market"),
    TargetSpec("HOUST", "Housing"),
    TargetSpec("DPCERA3M086SBEA", "Consumption & inventories"),
    TargetSpec("M1SL", "Money & credit"),
    TargetSpec("FEDFUNDS", "Interest & exchange rates"),
    TargetSpec("CPIAUCSL", "Prices"),
    TargetSpec("S&P 500", "Stock market"),
)


def _check_monthly(dates: np.ndarray) -> None:
    if len(dates) > 1:
        steps = np.diff(dates.astype("datetime64[M]").astype(np.int64))
        bad = np.flatnonzero(steps != 1)
        if bad.size:
            i = int(bad[0])
            raise LoadError(
                f"dates must be consecutive months; {dates[i]} is followed by {dates[i + 1]}"
            )


@dataclass(frozen=True)
class RawPanel:
    """Untransformed panel; NaN marks a missing cell."""

    values: np.ndarray
    dates: np.ndarray
    names: tuple[str, ...]
    tcodes: tuple[int, ...]

    def __post_init__(self):
        if self.values.ndim != 2:
            raise LoadError("values must be a 2-d array")
        T, N = self.values.shape
        if len(self.names) != N or len(self.tcodes) != N:
            raise LoadError(
                f"{N} columns but {len(self.names)} names and {len(self.tcodes)} tcodes"
            )
        if len(self.dates) != T:
            raise LoadError(f"{T} rows but {len(self.dates)} dates")
        for name, code in zip(self.names, self.tcodes):
            if code not in LEADING_LOSS:
                raise LoadError(f"invalid transformation code {code} for series {name!r}")
        _check_monthly(self.dates)


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Complete (no missing cells) panel of transformed series."""

    values: np.ndarray
    dates: np.ndarray
    names: tuple[str, ...]
    dropped: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError("values shape does not match names")
        if len(self.dates) != self.values.shape[0]:
            raise ValueError("dates length does not match rows")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("panel contains non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"series {name!r} not in panel") from None

    def without(self, name: str) -> TimeSeriesPanel:
        """Panel with one series removed."""
        j = self.names.index(name)
        keep = [i for i in range(len(self.names)) if i != j]
        return TimeSeriesPanel(
            self.values[:, keep], self.dates, tuple(self.names[i] for i in keep), self.dropped
        )

    def index_of(self, date) -> int:
        d = parse_month(date) if isinstance(date, str) else np.datetime64(date, "M")
        hit = np.flatnonzero(self.dates == d)
        if not hit.size:
            raise KeyError(f"date {d} outside panel range {self.dates[0]}..{self.dates[-1]}")
        return int(hit[0])


_ISO = re.compile(r"^\s*(\d{4})-(\d{1,2})(?:-\d{1,2})?\s*$")
_US = re.compile(r"^\s*(\d{1,2})/(\d{1,2})/(\d{4})\s*$")


def parse_month(text: str) -> np.datetime64:
    """Parse ``M/D/YYYY`` or ``YYYY-MM`` (day ignored) into a month stamp."""
    m = _ISO.match(text)
    if m:
        year, month = int(m.group(1)), int(m.group(2))
    else:
        m = _US.match(text)
        if not m:
            raise LoadError(f"unrecognised date {text!r}")
        year, month = int(m.group(3)), int(m.group(1))
    if not 1 <= month <= 12:
        raise LoadError(f"unrecognised date {text!r}")
    return np.datetime64(f"{year:04d}-{month:02d}", "M")


def _parse_cell(cell: str, line: int, name: str) -> float:
    cell = cell.strip()
    if not cell or cell.lower() == "nan":
        return np.nan
    try:
        return float(cell)
    except ValueError:
        raise LoadError(f"line {line}: non-numeric value {cell!r} for {name!r}") from None


def load_fred_md(path) -> RawPanel:
    """Read a FRED-MD CSV.

    Layout: a header row ``sasdate,NAME1,...``, a ``Transform:`` row with one
    code per series, then one row per month. Blank cells become NaN and fully
    blank trailing rows are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    # keep physical line numbers for error messages
    numbered = [(i, r) for i, r in enumerate(rows, start=1) if any(c.strip() for c in r)]
    if len(numbered) < 3:
        raise LoadError(f"{path}: need a header, a transform row and at least one data row")
    (_, header), (tline, trow) = numbered[0], numbered[1]
    names = tuple(h.strip() for h in header[1:])
    N = len(names)
    if N == 0:
        raise LoadError(f"{path}: header has no series columns")
    if len(trow) < N + 1:
        raise LoadError(f"{path}: transform row has {len(trow) - 1} codes for {N} series")
    tcodes = []
    for name, cell in zip(names, trow[1 : N + 1]):
        try:
            code = float(cell)
        except ValueError:
            raise LoadError(f"line {tline}: invalid transformation code {cell!r} for {name!r}") from None
        if code != int(code) or int(code) not in LEADING_LOSS:
            raise LoadError(f"line {tline}: invalid transformation code {cell.strip()} for {name!r}")
        tcodes.append(int(code))

    dates, values, lines = [], [], []
    for lineno, row in numbered[2:]:
        if len(row) < N + 1:
            row = row + [""] * (N + 1 - len(row))
        try:
            dates.append(parse_month(row[0]))
        except LoadError as exc:
            raise LoadError(f"line {lineno}: {exc}") from None
        values.append([_parse_cell(c, lineno, n) for c, n in zip(row[1 : N + 1], names)])
        lines.append(lineno)

    dates = np.array(dates, dtype="datetime64[M]")
    steps = np.diff(dates.astype(np.int64))
    if np.any(steps <= 0):
        i = int(np.flatnonzero(steps <= 0)[0])
        raise LoadError(f"line {lines[i + 1]}: dates not strictly increasing ({dates[i]} then {dates[i + 1]})")
    return RawPanel(np.array(values, dtype=float), dates, names, tuple(tcodes))


def apply_tcode(series, code: int, name: str = "series") -> np.ndarray:
    """Apply a FRED-MD transformation code.

    1 level, 2 first difference, 3 second difference, 4 log, 5 log difference,
    6 second log difference, 7 first difference of the period growth rate.
    The result keeps the input length, with NaN in the leading positions lost
    to differencing.
    """
    x = np.asarray(series, dtype=float)
    if code not in LEADING_LOSS:
        raise LoadError(f"invalid transformation code {code} for {name!r}")
    if code in (4, 5, 6):
        bad = np.flatnonzero(np.isfinite(x) & (x <= 0))
        if bad.size:
            raise LoadError(
                f"series {name!r} has non-positive value {x[bad[0]]} at row {bad[0]} under log transform"
            )
        x = np.log(x)
    out = np.full_like(x, np.nan)
    if code in (1, 4):
        out[:] = x
    elif code in (2, 5):
        out[1:] = np.diff(x)
    elif code in (3, 6):
        out[2:] = np.diff(x, n=2)
    else:
        prev = x[:-1]
        bad = np.flatnonzero(np.isfinite(prev) & (prev == 0))
        if bad.size:
            raise LoadError(f"series {name!r} has a zero at row {bad[0]}; growth rate undefined")
        growth = x[1:] / prev - 1.0
        out[2:] = np.diff(growth)
    return out


def balance_and_transform(raw: RawPanel, start=None, end=None) -> TimeSeriesPanel:
    """Transform every column, trim the differencing burn-in and drop gappy columns.

    ``start``/``end`` optionally restrict the sample to a month range
    (inclusive) after transformation, e.g. ``start="1960-01"``.
    """
    T, N = raw.values.shape
    cols = [apply_tcode(raw.values[:, j], raw.tcodes[j], raw.names[j]) for j in range(N)]
    data = np.column_stack(cols) if cols else np.empty((T, 0))
    lo = max(LEADING_LOSS[c] for c in raw.tcodes)
    hi = T
    if start is not None:
        lo = max(lo, int(np.searchsorted(raw.dates, parse_month(start) if isinstance(start, str) else start)))
    if end is not None:
        e = parse_month(end) if isinstance(end, str) else np.datetime64(end, "M")
        hi = int(np.searchsorted(raw.dates, e, side="right"))
    if hi - lo < 1:
        raise LoadError("no rows left after trimming")
    data, dates = data[lo:hi], raw.dates[lo:hi]
    complete = np.all(np.isfinite(data), axis=0)
    kept = [raw.names[j] for j in range(N) if complete[j]]
    dropped = tuple(raw.names[j] for j in range(N) if not complete[j])
    if len(kept) < 2:
        raise LoadError(f"only {len(kept)} complete column(s) survive; need at least 2")
    return TimeSeriesPanel(data[:, complete], dates, tuple(kept), dropped)


def standardize_array(X: np.ndarray, names=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Demean each column and scale it to unit Euclidean norm.

    Returns ``(Z, means, norms)`` so that ``X = Z * norms + means``.
    """
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    Xc = X - means
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    scale = np.maximum(np.abs(X).max(axis=0), 1.0) if X.size else np.ones(X.shape[1])
    flat = norms <= 1e-12 * scale * np.sqrt(max(X.shape[0], 1))
    if np.any(flat):
        j = int(np.flatnonzero(flat)[0])
        label = names[j] if names is not None else f"column {j}"
        raise ValueError(f"cannot standardize constant series {label!r}")
    return Xc / norms, means, norms


def standardize(panel: TimeSeriesPanel) -> tuple[TimeSeriesPanel, np.ndarray, np.ndarray]:
    Z, means, norms = standardize_array(panel.values, panel.names)
    return TimeSeriesPanel(Z, panel.dates, panel.names, panel.dropped), means, norms


def rolling_window(panel: TimeSeriesPanel, end_index: int, length: int) -> TimeSeriesPanel:
    """Rows ``end_index - length + 1 .. end_index`` inclusive, unstandardized."""
    T = panel.values.shape[0]
    start = end_index - length + 1
    if length < 1 or start < 0 or end_index >= T:
        raise IndexError(f"window of length {length} ending at {end_index} is outside 0..{T - 1}")
    rows = slice(start, end_index + 1)
    return TimeSeriesPanel(panel.values[rows], panel.dates[rows], panel.names, panel.dropped)
