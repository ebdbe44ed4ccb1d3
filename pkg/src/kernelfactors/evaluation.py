"""Rolling pseudo-out-of-sample evaluation, kernel CV and forecast comparison."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .data_ingest import TargetSpec, TimeSeriesPanel, standardize_array
from .factors import FactorSet, kernel_factors, pca_factors, spc_factors
from .forecasting import forecast, select_and_fit
from .kernels import GramBasis, KernelSpec, center_gram, gram_basis, gram_from_basis

__all__ = [
    "METHOD_NAMES",
    "DEFAULT_GAMMA_GRID",
    "MethodSpec",
    "ForecastRecord",
    "Skip",
    "RollingResult",
    "CVResult",
    "DMResult",
    "ReportRow",
    "EvaluationReport",
    "default_methods",
    "extract_factors",
    "cross_validate_gamma",
    "run_rolling",
    "forecast_origin",
    "OriginForecast",
    "mspe",
    "relative_mspe",
    "align_records",
    "dm_test",
    "build_report",
]

log = logging.getLogger(__name__)

METHOD_NAMES = ("pca", "spc", "pc2", "kpca")
DEFAULT_GAMMA_GRID = tuple(float(10.0**e) for e in np.arange(-4.0, 1.0 + 1e-9, 0.5))
CV_HOLDOUT = 5


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kernel: KernelSpec | None = None
    gamma_grid: tuple[float, ...] = ()

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}; expected one of {METHOD_NAMES}")
        if self.name == "kpca" and self.kernel is None:
            raise ValueError("kpca needs a kernel")
        if self.name != "kpca" and (self.kernel is not None or self.gamma_grid):
            raise ValueError(f"method {self.name!r} takes no kernel or gamma grid")
        if any(not g > 0 for g in self.gamma_grid):
            raise ValueError("gamma grid values must be positive")
        object.__setattr__(self, "gamma_grid", tuple(sorted(float(g) for g in self.gamma_grid)))

    @property
    def label(self) -> str:
        return f"kpca_{self.kernel.label}" if self.name == "kpca" else self.name

    @property
    def cross_validated(self) -> bool:
        return self.name == "kpca" and self.kernel.uses_gamma and len(self.gamma_grid) > 0


def default_methods(gamma_grid=DEFAULT_GAMMA_GRID) -> list[MethodSpec]:
    """The six ARDI variants of the empirical exercise."""
    grid = tuple(gamma_grid)
    return [
        MethodSpec("pca"),
        MethodSpec("spc"),
        MethodSpec("pc2"),
        MethodSpec("kpca", KernelSpec.polynomial(2, 1.0)),
        MethodSpec("kpca", KernelSpec.sigmoid(1.0, c0=1.0), grid),
        MethodSpec("kpca", KernelSpec.rbf(1.0), grid),
    ]


@dataclass(frozen=True)
class ForecastRecord:
    target: str
    method: str
    horizon: int
    origin: np.datetime64
    date: np.datetime64
    forecast: float
    actual: float
    gamma: float | None = None
    order: tuple[int, int, int] | None = None

    @property
    def error(self) -> float:
        return self.actual - self.forecast


@dataclass(frozen=True)
class Skip:
    origin: np.datetime64
    reason: str


@dataclass
class RollingResult:
    records: list[ForecastRecord]
    skips: list[Skip] = field(default_factory=list)

    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records])

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


class _RowGuard:
    """Row accessor that remembers the highest row handed out."""

    def __init__(self, values: np.ndarray):
        self._values = values
        self.max_row = -1

    def rows(self, start: int, stop: int) -> np.ndarray:
        self.max_row = max(self.max_row, stop - 1)
        return self._values[start:stop]


def _standardize_window(X: np.ndarray) -> np.ndarray:
    keep = np.ptp(X, axis=0) > 0
    Z, _, _ = standardize_array(X[:, keep])
    return Z


def extract_factors(
    X, method: MethodSpec, r: int, gamma: float | None = None, basis: GramBasis | None = None
) -> FactorSet:
    """Factors of a standardized window for one method.

    ``pc2`` extracts plain PCA factors; its squares enter the forecasting
    equation instead.
    """
    T, N = X.shape
    if method.name in ("pca", "pc2"):
        return pca_factors(X, min(r, T, N))
    if method.name == "spc":
        return spc_factors(X, min(r, T, 2 * N))
    kernel = method.kernel if gamma is None else method.kernel.with_gamma(gamma)
    if basis is None:
        basis = gram_basis(X)
    K = center_gram(gram_from_basis(kernel, basis))
    return kernel_factors(K, min(r, T), kernel)


@dataclass(frozen=True)
class CVResult:
    gamma: float
    mean_errors: tuple[float, ...]
    fallback: bool = False


def cross_validate_gamma(
    X, y, h: int, method: MethodSpec, maxima=(6, 6, 6), n_factors: int | None = None, holdout: int = CV_HOLDOUT
) -> CVResult:
    """Pick gamma by forecasting the last ``holdout`` in-window targets.

    Each holdout target at row ``s`` is forecast from rows ``0..s-h`` only,
    with that sub-window re-standardized. The grid value with the smallest
    mean squared error wins; ties go to the smaller gamma.
    """
    grid = method.gamma_grid
    if not grid:
        raise ValueError("method has no gamma grid")
    if len(grid) == 1:
        return CVResult(grid[0], (math.nan,))
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    r = maxima[2] if n_factors is None else n_factors
    L = y.shape[0]
    sq_err = np.zeros(len(grid))
    failed = np.zeros(len(grid), dtype=bool)
    midpoint = CVResult(grid[len(grid) // 2], tuple(math.nan for _ in grid), fallback=True)
    # smallest sub-window has L - holdout - h + 1 rows; it must still admit the smallest design
    if L - holdout - 2 * h + 2 < 3 + 5:
        return midpoint
    for s in range(L - holdout, L):
        o = s - h
        try:
            Xs = _standardize_window(X[: o + 1])
            basis = gram_basis(Xs)
        except ValueError:
            failed[:] = True
            continue
        ys = y[: o + 1]
        for i, g in enumerate(grid):
            try:
                F = extract_factors(Xs, method, r, g, basis)
                fit = select_and_fit(ys, F, h, maxima)
                sq_err[i] += (y[s] - forecast(fit, ys, F)) ** 2
            except ValueError:
                failed[i] = True
    if failed.all():
        return midpoint
    mean = np.where(failed, np.inf, sq_err / holdout)
    # errors equal up to rounding count as tied; the first (smallest) gamma wins
    floor = mean.min()
    slack = 1e-9 * floor + 1e-24 * float(np.mean(y**2))
    best = int(np.flatnonzero(mean <= floor + slack)[0])
    return CVResult(grid[best], tuple(float(m) for m in mean))


@dataclass(frozen=True)
class OriginForecast:
    forecast: float
    gamma: float | None
    order: tuple[int, int, int]


def _forecast_window(Xw, yw, method: MethodSpec, h: int, maxima, r: int, gamma: float | None) -> OriginForecast:
    if method.cross_validated and gamma is None:
        gamma = cross_validate_gamma(Xw, yw, h, method, maxima, r).gamma
    Xs = _standardize_window(Xw)
    F = extract_factors(Xs, method, r, gamma if method.cross_validated else None)
    fit = select_and_fit(yw, F, h, maxima, include_squares=method.name == "pc2")
    spec = fit.spec
    return OriginForecast(
        forecast(fit, yw, F), gamma if method.cross_validated else None, (spec.p_lags, spec.f_lags, spec.n_factors)
    )


def _split_target(panel: TimeSeriesPanel, target) -> tuple[str, np.ndarray, np.ndarray]:
    name = target.name if isinstance(target, TargetSpec) else target
    if name not in panel.names:
        raise KeyError(f"target {name!r} not in panel")
    j = panel.names.index(name)
    return name, np.delete(panel.values, j, axis=1), panel.values[:, j]


def forecast_origin(
    panel: TimeSeriesPanel, target: TargetSpec | str, method: MethodSpec, h: int, origin: int,
    window_base: int = 120, maxima=(6, 6, 6), n_factors: int | None = None,
) -> OriginForecast:
    """Forecast of ``y[origin + h]`` from the window ending at row ``origin``.

    Only rows ``origin - (window_base - h) + 1 .. origin`` are read; the
    forecast date may lie beyond the end of the panel.
    """
    _, predictors, y_all = _split_target(panel, target)
    if h < 1:
        raise ValueError("horizon must be >= 1")
    L = window_base - h
    T = panel.values.shape[0]
    if not L - 1 <= origin < T:
        raise IndexError(f"origin row {origin} needs rows {origin - L + 1}..{origin} inside 0..{T - 1}")
    r = maxima[2] if n_factors is None else n_factors
    lo = origin - L + 1
    return _forecast_window(predictors[lo : origin + 1], y_all[lo : origin + 1], method, h, maxima, r, None)


def run_rolling(
    panel: TimeSeriesPanel,
    target: TargetSpec | str,
    method: MethodSpec,
    h: int,
    window_base: int = 120,
    maxima=(6, 6, 6),
    n_factors: int | None = None,
    first_target: int | None = None,
    cv_stride: int = 1,
    audit: dict | None = None,
) -> RollingResult:
    """Rolling-window direct forecasts of one target at horizon ``h``.

    The window holds ``window_base - h`` rows ending at the origin ``t``;
    predictors (every series but the target) are re-standardized inside it,
    factors extracted, the ARDI order chosen by BIC and ``y[t+h]`` forecast.
    Origins run from the first full window (or from ``first_target - h`` if
    given, a row index of the first forecast target) through ``T - 1 - h``.
    Kernel gamma is re-validated every ``cv_stride`` origins.

    When ``audit`` is a dict it receives ``origin -> highest row read`` for
    every origin.
    """
    name, predictors, y_all = _split_target(panel, target)
    if h < 1 or cv_stride < 1:
        raise ValueError("horizon and cv_stride must be >= 1")
    L = window_base - h
    T = panel.values.shape[0]
    r = maxima[2] if n_factors is None else n_factors

    first = L - 1
    if first_target is not None:
        first = max(first, first_target - h)
    if L < 2 or first > T - 1 - h:
        raise ValueError(f"panel of {T} rows is too short for a {L}-row window at horizon {h}")

    result = RollingResult([])
    gamma = None
    for step, t in enumerate(range(first, T - h)):
        guard_x, guard_y = _RowGuard(predictors), _RowGuard(y_all)
        lo = t - L + 1
        if step % cv_stride == 0:
            gamma = None
        try:
            out = _forecast_window(guard_x.rows(lo, t + 1), guard_y.rows(lo, t + 1), method, h, maxima, r, gamma)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("%s %s h=%d origin %s skipped: %s", name, method.label, h, panel.dates[t], exc)
            result.skips.append(Skip(panel.dates[t], str(exc)))
            continue
        finally:
            if audit is not None:
                audit[t] = max(guard_x.max_row, guard_y.max_row)
        gamma = out.gamma
        result.records.append(
            ForecastRecord(
                name, method.label, h, panel.dates[t], panel.dates[t + h],
                out.forecast, float(y_all[t + h]), out.gamma, out.order,
            )
        )
    return result


def _as_records(records) -> list[ForecastRecord]:
    return list(records.records if isinstance(records, RollingResult) else records)


def mspe(records) -> float:
    recs = _as_records(records)
    if not recs:
        raise ValueError("no forecasts to score")
    e = np.array([r.error for r in recs])
    return float(e @ e / e.size)


def relative_mspe(records, baseline_records) -> float:
    """MSPE ratio of ``records`` to ``baseline_records`` on identical dates."""
    a, b = _as_records(records), _as_records(baseline_records)
    if len(a) != len(b):
        raise ValueError(f"record lists differ in length ({len(a)} vs {len(b)})")
    for ra, rb in zip(a, b):
        if ra.date != rb.date:
            raise ValueError(f"dates misaligned: first mismatch {ra.date} vs {rb.date}")
    return mspe(a) / mspe(b)


def align_records(a, b) -> tuple[list[ForecastRecord], list[ForecastRecord]]:
    """Restrict two record lists to their common forecast dates."""
    a, b = _as_records(a), _as_records(b)
    common = {r.date for r in a} & {r.date for r in b}
    return (
        sorted((r for r in a if r.date in common), key=lambda r: r.date),
        sorted((r for r in b if r.date in common), key=lambda r: r.date),
    )


class DMResult(tuple):
    """``(statistic, p_value)``; both NaN when the HAC variance is unusable."""

    def __new__(cls, statistic: float, pvalue: float):
        return super().__new__(cls, (statistic, pvalue))

    statistic = property(lambda self: self[0])
    pvalue = property(lambda self: self[1])

    @property
    def valid(self) -> bool:
        return not math.isnan(self[0])


def dm_test(e1, e2, h: int = 1, min_obs: int = 20) -> DMResult:
    """Diebold-Mariano test of equal squared-error accuracy.

    Loss differential ``d = e1**2 - e2**2``; long-run variance from Bartlett
    weights over ``h - 1`` autocovariance lags (1/n normalization); two-sided
    normal p-value. Positive statistics mean ``e1`` is less accurate.
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if e1.shape != e2.shape or e1.ndim != 1:
        raise ValueError("error vectors must have equal length")
    n = e1.size
    if n < min_obs:
        raise ValueError(f"need at least {min_obs} forecast errors, got {n}")
    d = e1**2 - e2**2
    dbar = d.mean()
    dc = d - dbar
    if not np.any(d):
        return DMResult(0.0, 1.0)
    lrv = dc @ dc / n
    for k in range(1, h):
        lrv += 2.0 * (1.0 - k / h) * (dc[k:] @ dc[:-k]) / n
    if lrv <= 0:
        if lrv == 0 and dbar != 0 and np.ptp(d) == 0:
            raise ValueError("loss differential has zero variance")
        return DMResult(math.nan, math.nan)
    stat = dbar / math.sqrt(lrv / n)
    return DMResult(float(stat), float(2.0 * stats.norm.sf(abs(stat))))


@dataclass(frozen=True)
class ReportRow:
    target: str
    horizon: int
    method: str
    mspe: float
    relative_mspe: float
    dm_stat: float
    dm_pvalue: float
    n_forecasts: int
    star: bool = False
    bold: bool = False


@dataclass
class EvaluationReport:
    rows: list[ReportRow]
    baseline: str = "pca"

    FIELDS = ("target", "horizon", "method", "mspe", "rel_mspe", "dm_stat", "dm_p", "n", "star", "bold")

    def cell(self, target: str, horizon: int, method: str) -> ReportRow:
        for row in self.rows:
            if (row.target, row.horizon, row.method) == (target, horizon, method):
                return row
        raise KeyError((target, horizon, method))

    @property
    def targets(self) -> list[str]:
        return list(dict.fromkeys(r.target for r in self.rows))

    @property
    def horizons(self) -> list[int]:
        return sorted({r.horizon for r in self.rows})

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def comparison_cells(self) -> list[ReportRow]:
        return [r for r in self.rows if r.method != self.baseline]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            for r in self.rows:
                w.writerow(
                    [r.target, r.horizon, r.method, repr(r.mspe), repr(r.relative_mspe),
                     repr(r.dm_stat), repr(r.dm_pvalue), r.n_forecasts, int(r.star), int(r.bold)]
                )

    def to_text(self) -> str:
        """Relative-MSPE table laid out as one block per target.

        ``*`` marks the best method for a horizon (none shown: the baseline
        wins); brackets mark a Diebold-Mariano rejection at the 10% level.
        """
        horizons = self.horizons
        shown = [m for m in self.methods if m != self.baseline] or [self.baseline]
        lw = max(len(m) for m in shown) + 2
        cw = 12
        head = " " * lw + "".join(f"{'h=' + str(h):>{cw}}" for h in horizons)
        lines = [head, "-" * len(head)]
        for target in self.targets:
            lines.append(target.center(len(head)).rstrip())
            for m in shown:
                cells = []
                for h in horizons:
                    try:
                        r = self.cell(target, h, m)
                    except KeyError:
                        cells.append(f"{'-':>{cw}}")
                        continue
                    txt = f"{r.relative_mspe:.4f}"
                    if r.bold:
                        txt = f"[{txt}]"
                    if r.star:
                        txt += "*"
                    cells.append(f"{txt:>{cw}}")
                lines.append(f"{m:<{lw}}" + "".join(cells))
            lines.append("-" * len(head))
        lines.append(f"ratios to {self.baseline} MSPE; * best for the horizon; [x] DM p < 0.10")
        return "\n".join(lines) + "\n"


def build_report(records, baseline: str = "pca", significance: float = 0.10) -> EvaluationReport:
    """Relative MSPEs and DM tests against ``baseline`` for every cell."""
    groups: dict[tuple[str, int], dict[str, list[ForecastRecord]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        groups[(r.target, r.horizon)][r.method].append(r)
    rows = []
    for (target, h), by_method in groups.items():
        if baseline not in by_method:
            raise ValueError(f"baseline {baseline!r} missing for target {target!r}, h={h}")
        cells = []
        for m, recs in by_method.items():
            if m == baseline:
                base = sorted(recs, key=lambda r: r.date)
                cells.append([m, mspe(base), 1.0, math.nan, math.nan, len(base)])
                continue
            a, b = align_records(recs, by_method[baseline])
            if not a:
                raise ValueError(f"{m} shares no forecast dates with {baseline} for {target!r}, h={h}")
            ea = np.array([r.error for r in a])
            eb = np.array([r.error for r in b])
            try:
                stat, p = dm_test(ea, eb, h)
            except ValueError:
                stat, p = math.nan, math.nan
            cells.append([m, mspe(a), relative_mspe(a, b), stat, p, len(a)])
        best = min(c[2] for c in cells)
        for m, ms, rel, stat, p, n in cells:
            rows.append(ReportRow(target, h, m, ms, rel, stat, p, n, rel == best, bool(p < significance)))
    rows.sort(key=lambda r: (r.target, r.horizon))
    order = {t: i for i, t in enumerate(dict.fromkeys(r.target for r in records))}
    morder = {m: i for i, m in enumerate(dict.fromkeys(r.method for r in records))}
    rows.sort(key=lambda r: (order[r.target], r.horizon, morder[r.method]))
    return EvaluationReport(rows, baseline)
