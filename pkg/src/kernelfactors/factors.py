"""Factor extraction: linear PCA, squared PCA and kernel factors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .kernels import GramMatrix, KernelSpec

__all__ = [
    "FactorError",
    "EigenResult",
    "FactorSet",
    "symmetric_eig",
    "pca_factors",
    "augment_squares",
    "spc_factors",
    "kernel_factors",
    "projection_matrix",
]

DEGENERATE_RATIO = 1e-12


class FactorError(ValueError):
    pass


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class FactorSet:
    factors: np.ndarray
    eigenvalues: np.ndarray
    method: str
    kernel: KernelSpec | None = None
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.factors.ndim != 2 or self.factors.shape[1] < 1:
            raise FactorError("a factor set needs at least one column")
        if not np.all(np.isfinite(self.factors)):
            raise FactorError("factors contain non-finite values")

    @property
    def n_factors(self) -> int:
        return self.factors.shape[1]


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive; entries within rounding of the
    # maximum count as tied and the lowest index wins
    mag = np.abs(V)
    idx = np.argmax(mag >= mag.max(axis=0) * (1.0 - 1e-10), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def symmetric_eig(S, r: int) -> EigenResult:
    """Top-``r`` eigenpairs of a dense symmetric matrix, eigenvalues descending.

    Each eigenvector is signed so its largest-magnitude component is positive.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    d = S.shape[0]
    if not 1 <= r <= d:
        raise ValueError(f"r must lie in 1..{d}, got {r}")
    scale = max(1.0, float(np.abs(S).max()))
    if np.abs(S - S.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    S = 0.5 * (S + S.T)
    w, V = scipy.linalg.eigh(S, subset_by_index=[d - r, d - 1])
    w, V = w[::-1], V[:, ::-1]
    return EigenResult(w.copy(), _fix_signs(np.ascontiguousarray(V)))


def _degeneracy_warnings(eigenvalues: np.ndarray) -> tuple[str, ...]:
    lead = eigenvalues[0]
    if eigenvalues[-1] <= DEGENERATE_RATIO * lead:
        return (f"near-degenerate eigenspace: lambda_r={eigenvalues[-1]:.3e}, lambda_1={lead:.3e}",)
    return ()


def _check_centered(X: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(X).max()))
    if np.abs(X.mean(axis=0)).max() > 1e-8 * scale:
        raise FactorError("predictor columns must be demeaned before extracting factors")


def pca_factors(X, r: int) -> FactorSet:
    """Principal-component factors ``X @ eig_r(X'X)`` of a column-centered panel."""
    X = np.asarray(X, dtype=float)
    T, N = X.shape
    if not 1 <= r <= min(T, N):
        raise FactorError(f"r must lie in 1..{min(T, N)}, got {r}")
    _check_centered(X)
    eig = symmetric_eig(X.T @ X, r)
    return FactorSet(X @ eig.eigenvectors, eig.eigenvalues, "pca", None, _degeneracy_warnings(eig.eigenvalues))


def augment_squares(X) -> np.ndarray:
    """``[X, X**2]`` with every column re-demeaned and scaled to unit norm.

    Squared columns with no variation are left as zeros.
    """
    X = np.asarray(X, dtype=float)
    A = np.hstack([X, X**2])
    A = A - A.mean(axis=0)
    norms = np.linalg.norm(A, axis=0)
    live = norms > 1e-12 * np.maximum(np.abs(A).max(axis=0), 1e-300)
    A[:, live] /= norms[live]
    A[:, ~live] = 0.0
    return A


def spc_factors(X, r: int) -> FactorSet:
    """Squared principal components: PCA on the panel augmented with its squares."""
    X = np.asarray(X, dtype=float)
    _check_centered(X)
    fs = pca_factors(augment_squares(X), r)
    return FactorSet(fs.factors, fs.eigenvalues, "spc", None, fs.warnings)


def kernel_factors(K: GramMatrix, r: int, kernel: KernelSpec | None = None) -> FactorSet:
    """Kernel factors ``K @ A_r`` with ``A_r`` the top eigenvectors of ``K / T``."""
    if not K.centered:
        raise FactorError("kernel factors need a centered Gram matrix")
    T = K.size
    if not 1 <= r <= T:
        raise FactorError(f"r must lie in 1..{T}, got {r}")
    eig = symmetric_eig(K.values / T, r)
    if not eig.eigenvalues[0] > 0:
        raise FactorError("Gram matrix has no positive eigenvalue; kernel factors are degenerate")
    return FactorSet(
        K.values @ eig.eigenvectors, eig.eigenvalues, "kpca", kernel, _degeneracy_warnings(eig.eigenvalues)
    )


def projection_matrix(F, max_condition: float = 1e12) -> np.ndarray:
    """Orthogonal projector ``F (F'F)^-1 F'`` onto the column space of ``F``."""
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    s = np.linalg.svd(F, compute_uv=False)
    if s.size == 0 or s[-1] <= s[0] / max_condition:
        raise FactorError("factor matrix is rank deficient")
    Q, _ = np.linalg.qr(F)
    P = Q @ Q.T
    return np.triu(P) + np.triu(P, 1).T
