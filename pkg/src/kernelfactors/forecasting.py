"""Direct h-step autoregressive diffusion-index (ARDI) regressions.

The forecasting equation regresses ``y[t+h]`` on an intercept, ``P`` lags of
the target and ``M`` lags of the first ``K`` factors (optionally with their
squares), all dated ``t`` or earlier. ``P``, ``M`` and ``K`` are chosen by BIC.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .factors import FactorSet

__all__ = [
    "InsufficientSample",
    "ArdiSpec",
    "OlsResult",
    "FittedArdi",
    "build_design",
    "regressor_row",
    "ols_fit",
    "bic",
    "select_and_fit",
    "forecast",
]

MIN_SPARE_ROWS = 5


class InsufficientSample(ValueError):
    pass


@dataclass(frozen=True)
class ArdiSpec:
    horizon: int
    p_lags: int = 1
    f_lags: int = 1
    n_factors: int = 1
    include_squares: bool = False

    def __post_init__(self):
        for name in ("horizon", "p_lags", "f_lags", "n_factors"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_params(self) -> int:
        mk = self.f_lags * self.n_factors
        return 1 + self.p_lags + mk * (2 if self.include_squares else 1)


@dataclass(frozen=True)
class OlsResult:
    coefficients: np.ndarray
    ssr: float
    rank_deficient: bool


@dataclass(frozen=True)
class FittedArdi:
    spec: ArdiSpec
    coefficients: np.ndarray
    ssr: float
    n_obs: int
    bic: float
    rank_deficient: bool = False

    @property
    def perfect_fit(self) -> bool:
        return self.bic == -math.inf


def _factor_matrix(F) -> np.ndarray:
    return F.factors if isinstance(F, FactorSet) else np.asarray(F, dtype=float).reshape(len(F), -1)


def _lag_block(A: np.ndarray, rows: np.ndarray, lags: int) -> np.ndarray:
    # columns: A[t], A[t-1], ..., A[t-lags+1] for each row t
    return np.hstack([A[rows - m] for m in range(lags)])


def _check_lengths(y: np.ndarray, F: np.ndarray) -> None:
    if y.ndim != 1:
        raise ValueError("target must be a vector")
    if F.shape[0] != y.shape[0]:
        raise ValueError(f"target has {y.shape[0]} rows but factors have {F.shape[0]}")


def build_design(y, F, spec: ArdiSpec) -> tuple[np.ndarray, np.ndarray]:
    """Regressor matrix and response for the direct h-step equation.

    Rows are origins ``t = max(P, M) - 1, ..., T - 1 - h`` (0-based). Columns
    are ``[1, y_t .. y_{t-P+1}, F_t[:K] .. F_{t-M+1}[:K]]`` followed, when
    ``include_squares`` is set, by the elementwise squares of the factor block.
    """
    y = np.asarray(y, dtype=float)
    Fm = _factor_matrix(F)
    _check_lengths(y, Fm)
    if spec.n_factors > Fm.shape[1]:
        raise ValueError(f"spec asks for {spec.n_factors} factors, only {Fm.shape[1]} available")
    T, h = y.shape[0], spec.horizon
    first = max(spec.p_lags, spec.f_lags) - 1
    rows = np.arange(first, T - h)
    if rows.size < spec.n_params + MIN_SPARE_ROWS:
        raise InsufficientSample(
            f"insufficient sample: {max(rows.size, 0)} usable rows for {spec.n_params} regressors"
        )
    fblock = _lag_block(Fm[:, : spec.n_factors], rows, spec.f_lags)
    parts = [np.ones((rows.size, 1)), _lag_block(y[:, None], rows, spec.p_lags), fblock]
    if spec.include_squares:
        parts.append(fblock**2)
    return np.hstack(parts), y[rows + h]


def regressor_row(y, F, spec: ArdiSpec, t: int | None = None) -> np.ndarray:
    """Regressor vector formed at origin ``t`` (default: the last row)."""
    y = np.asarray(y, dtype=float)
    Fm = _factor_matrix(F)
    _check_lengths(y, Fm)
    T = y.shape[0]
    t = T - 1 if t is None else t
    if not max(spec.p_lags, spec.f_lags) - 1 <= t < T:
        raise IndexError(f"origin {t} does not leave room for the requested lags")
    rows = np.array([t])
    fblock = _lag_block(Fm[:, : spec.n_factors], rows, spec.f_lags)
    parts = [np.ones((1, 1)), _lag_block(y[:, None], rows, spec.p_lags), fblock]
    if spec.include_squares:
        parts.append(fblock**2)
    return np.hstack(parts)[0]


def ols_fit(Z, y) -> OlsResult:
    """Least squares through an orthogonal (SVD) factorization.

    Rank-deficient designs get the minimum-norm solution and a flag.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.shape[0] < Z.shape[1]:
        raise InsufficientSample(f"{Z.shape[0]} rows for {Z.shape[1]} columns")
    coef, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ coef
    return OlsResult(coef, float(resid @ resid), bool(rank < Z.shape[1]))


def bic(ssr: float, n_obs: int, n_params: int) -> float:
    """Gaussian BIC ``n log(ssr / n) + k log(n)``; ``-inf`` flags a perfect fit."""
    if n_obs <= n_params:
        raise ValueError(f"need more observations ({n_obs}) than parameters ({n_params})")
    if ssr < 0:
        raise ValueError("ssr must be nonnegative")
    if ssr == 0:
        return -math.inf
    return n_obs * math.log(ssr / n_obs) + n_params * math.log(n_obs)


def _lagged(A: np.ndarray, lags: int) -> np.ndarray:
    """``out[t, c, m] = A[t - m, c]``, zero where ``t < m``."""
    T, C = A.shape
    out = np.zeros((T, C, lags))
    for m in range(lags):
        out[m:, :, m] = A[: T - m]
    return out


@functools.lru_cache(maxsize=64)
def _scan_layout(p_max: int, m_max: int, k_max: int, n_blocks: int):
    """Column indices of every (P, M) design, padded to a common width.

    Columns of the full lag matrix are ``[1, y lags, factor 1 lags
    (and squared lags), factor 2 ...]``. Returns ``(pm, index, mask, ends)``
    where ``ends[c, K - 1]`` is the width of candidate ``c`` with ``K`` factors.
    """
    width_k = m_max * n_blocks
    pm, cols, ends = [], [], []
    for P in range(1, p_max + 1):
        for M in range(1, m_max + 1):
            idx = [0] + list(range(1, P + 1))
            e = []
            for k in range(k_max):
                base = 1 + p_max + k * width_k
                for blk in range(n_blocks):
                    idx += [base + blk * m_max + m for m in range(M)]
                e.append(len(idx))
            pm.append((P, M))
            cols.append(idx)
            ends.append(e)
    W = max(len(c) for c in cols)
    index = np.zeros((len(cols), W), dtype=np.intp)
    mask = np.zeros((len(cols), W), dtype=bool)
    for i, c in enumerate(cols):
        index[i, : len(c)] = c
        mask[i, : len(c)] = True
    return np.array(pm), index, mask, np.array(ends)


def _scan_bics(y, Fm, h, p_max, m_max, k_max, squares):
    """BIC of every (P, M, K) candidate from cross-product matrices.

    Candidates sharing ``s = max(P, M)`` share an estimation sample, and each
    K is a column prefix of its (P, M) design, so one Cholesky factor per
    (P, M) gives the residual sum of squares for every K. All (P, M) systems
    are padded with an identity block and factored in one batch.

    Returns an array of shape ``(p_max, m_max, k_max)`` holding the BIC,
    ``inf`` for candidates without enough rows and ``nan`` for numerically
    collinear designs that need a direct fit.
    """
    T = y.shape[0]
    n_blocks = 2 if squares else 1
    flag = _lagged(Fm[:, :k_max], m_max)
    blocks = [flag, flag**2] if squares else [flag]
    full = np.hstack([np.ones((T, 1)), _lagged(y[:, None], p_max)[:, 0, :],
                      np.concatenate(blocks, axis=2).reshape(T, -1)])
    pm, index, mask, ends = _scan_layout(p_max, m_max, k_max, n_blocks)
    s_of = pm.max(axis=1)
    n_of = T - h - s_of + 1

    C = full.shape[1]
    G = np.zeros((max(p_max, m_max), C, C))
    g = np.zeros((max(p_max, m_max), C))
    yy = np.zeros(max(p_max, m_max))
    for s in range(1, max(p_max, m_max) + 1):
        if T - h - s + 1 <= 0:
            continue
        Z = full[s - 1 : T - h]
        resp = y[s - 1 + h : T]
        G[s - 1] = Z.T @ Z
        g[s - 1] = Z.T @ resp
        yy[s - 1] = resp @ resp

    feasible = n_of[:, None] >= ends + MIN_SPARE_ROWS
    # keep each system no wider than its widest feasible K
    width = np.where(feasible, ends, 0).max(axis=1)
    W = index.shape[1]
    mask = mask & (np.arange(W)[None, :] < width[:, None])
    si = (s_of - 1)[:, None]
    # bordered system [[A, b], [b', c]]: its Cholesky factor carries L^-1 b in the last row
    A = np.zeros((len(pm), W + 1, W + 1))
    both = mask[:, :, None] & mask[:, None, :]
    A[:, :W, :W] = np.where(both, G[si[:, :, None], index[:, :, None], index[:, None, :]], np.eye(W))
    b = np.where(mask, g[si, index], 0.0)
    A[:, W, :W] = b
    A[:, :W, W] = b
    A[:, W, W] = 2.0 * yy[s_of - 1] + 1.0

    result = np.full((p_max, m_max, k_max), np.inf)
    if not feasible.any():
        return result
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        result[feasible.reshape(p_max, m_max, k_max)] = np.nan
        return result
    diagA = np.diagonal(A, axis1=1, axis2=2)[:, :W]
    diagL = np.diagonal(L, axis1=1, axis2=2)[:, :W]
    weak = np.cumsum(diagL**2 <= 1e-12 * np.maximum(diagA, 1e-300), axis=1) > 0
    z = L[:, W, :W]
    cum = np.cumsum(z * z, axis=1)
    rows = np.arange(len(pm))[:, None]
    ssr = np.maximum(yy[s_of - 1][:, None] - cum[rows, ends - 1], 0.0)
    n = n_of[:, None].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = n * np.log(ssr / n) + ends * np.log(n)
    value = np.where(weak[rows, ends - 1], np.nan, value)
    result[...] = np.where(feasible, value, np.inf).reshape(p_max, m_max, k_max)
    return result


def select_and_fit(y, F, h: int, maxima=(6, 6, 6), include_squares: bool = False) -> FittedArdi:
    """Exhaustive BIC search over ``P x M x K`` followed by a final fit.

    Ties go to the smaller ``P``, then ``M``, then ``K``.
    """
    y = np.asarray(y, dtype=float)
    Fm = _factor_matrix(F)
    _check_lengths(y, Fm)
    p_max, m_max, k_max = maxima
    if min(p_max, m_max, k_max) < 1:
        raise ValueError("all maxima must be >= 1")
    k_max = min(k_max, Fm.shape[1])

    scanned = _scan_bics(y, Fm, h, p_max, m_max, k_max, include_squares)
    for P, M, K in zip(*np.nonzero(np.isnan(scanned))):
        Z, yh = build_design(y, Fm, ArdiSpec(h, P + 1, M + 1, K + 1, include_squares))
        scanned[P, M, K] = bic(ols_fit(Z, yh).ssr, *Z.shape)
    if not np.any(np.isfinite(scanned) | (scanned == -np.inf)):
        # surfaces the descriptive error for the smallest model
        build_design(y, Fm, ArdiSpec(h, 1, 1, 1, include_squares))
        raise InsufficientSample("insufficient sample for every candidate specification")
    # argmin returns the first minimum: smallest P, then M, then K
    P, M, K = np.unravel_index(int(np.argmin(scanned)), scanned.shape)
    return fit_spec(y, Fm, ArdiSpec(h, int(P) + 1, int(M) + 1, int(K) + 1, include_squares))


def fit_spec(y, F, spec: ArdiSpec) -> FittedArdi:
    Z, yh = build_design(y, F, spec)
    res = ols_fit(Z, yh)
    return FittedArdi(spec, res.coefficients, res.ssr, Z.shape[0], bic(res.ssr, *Z.shape), res.rank_deficient)


def forecast(fitted: FittedArdi, y, F) -> float:
    """Point forecast of ``y[T-1+h]`` from the regressors at the last row."""
    x = regressor_row(y, F, fitted.spec)
    if x.shape[0] != fitted.coefficients.shape[0]:
        raise ValueError("regressor vector does not match the fitted coefficients")
    return float(x @ fitted.coefficients)
