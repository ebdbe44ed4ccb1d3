"""Fast numerical self-checks of the kernel-factor identities.

Each check draws its own random inputs from a fixed seed and returns a
``CheckResult``; ``run_all`` is what ``kernelfactors selftest`` prints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factors import kernel_factors, pca_factors, projection_matrix
from .kernels import GramMatrix, KernelSpec, center_gram, eval_kernel, gram_matrix, rbf_feature_map_truncated
from .montecarlo import make_rng

__all__ = ["CheckResult", "check_span_equality", "check_small_gamma_limit", "check_feature_map", "run_all"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _centered_panel(rng, T: int, N: int) -> np.ndarray:
    X = rng.standard_normal((T, N))
    X -= X.mean(axis=0)
    return X / np.linalg.norm(X, axis=0)


def check_span_equality(trials: int = 50, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    """Kernel factors ``K A_r`` and the weights ``A_r`` span the same space."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(trials):
        T = int(rng.integers(10, 61))
        rank = int(rng.integers(2, T))
        B = rng.standard_normal((T, rank))
        K = center_gram(B @ B.T)
        r = int(rng.integers(1, min(rank, T - 1)))
        fs = kernel_factors(K, r)
        A = fs.factors / (T * fs.eigenvalues)
        worst = max(worst, float(np.abs(projection_matrix(fs.factors) - projection_matrix(A)).max()))
    return CheckResult("span equality", worst <= tol, f"max projector gap {worst:.2e} (tol {tol:.0e})")


def _scaled_rbf_gap(X: np.ndarray, r: int, gamma: float) -> float:
    T = X.shape[0]
    fs = kernel_factors(center_gram(gram_matrix(KernelSpec.rbf(gamma), X)), r)
    lam = T * fs.eigenvalues / (2.0 * gamma)  # eigenvalues of XX' in the limit
    scaled = fs.factors / (2.0 * gamma) / np.sqrt(lam)
    ref = pca_factors(X, r).factors
    signs = np.sign(np.sum(scaled * ref, axis=0))
    return float(np.linalg.norm(scaled * signs - ref) / np.linalg.norm(ref))


def check_small_gamma_limit(trials: int = 20, seed: int = 1, gamma: float = 1e-6) -> CheckResult:
    """RBF Gram over ``2 gamma`` tends to ``XX'`` and kernel factors to PCA factors."""
    rng = make_rng(seed)
    worst_gram = worst_fac = 0.0
    for _ in range(trials):
        T, N = int(rng.integers(10, 41)), int(rng.integers(3, 21))
        X = _centered_panel(rng, T, N)
        XX = X @ X.T
        K = center_gram(gram_matrix(KernelSpec.rbf(gamma), X)).values / (2.0 * gamma)
        worst_gram = max(worst_gram, float(np.abs(K - XX).max() / np.abs(XX).max()))
        r = int(rng.integers(1, min(T, N) // 2 + 1))
        # well-separated spectra only: near-ties make the eigenvectors ill-posed
        w = np.linalg.eigvalsh(XX)[::-1]
        if np.min(np.abs(np.diff(w[: r + 1]))) < 1e-3 * w[0]:
            continue
        worst_fac = max(worst_fac, _scaled_rbf_gap(X, r, gamma))
    ok = worst_gram <= 1e-4 and worst_fac <= 1e-3
    return CheckResult(
        "small-gamma limit", ok, f"Gram gap {worst_gram:.2e} (tol 1e-4), factor gap {worst_fac:.2e} (tol 1e-3)"
    )


def check_feature_map(pairs: int = 100, seed: int = 2, degree: int = 12, tol: float = 1e-6) -> CheckResult:
    """Truncated RBF feature maps reproduce the kernel when ``gamma |x - z|^2 <= 1``."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        dim = int(rng.integers(1, 4))
        x = rng.uniform(-1, 1, dim)
        z = rng.uniform(-1, 1, dim)
        # the truncation error also grows with gamma (|x|^2 + |z|^2), so bound both
        d2 = float((x - z) @ (x - z))
        cap = min(1.0 / max(d2, 1e-12), 2.0 / max(float(x @ x + z @ z), 1e-12), 1.0)
        gamma = float(rng.uniform(0.05, 1.0)) * cap
        spec = KernelSpec.rbf(gamma)
        approx = rbf_feature_map_truncated(x, gamma, degree) @ rbf_feature_map_truncated(z, gamma, degree)
        worst = max(worst, abs(approx - eval_kernel(spec, x, z)))
    return CheckResult("rbf feature map", worst <= tol, f"max kernel gap {worst:.2e} at degree {degree} (tol {tol:.0e})")


def check_centering(seed: int = 3) -> CheckResult:
    rng = make_rng(seed)
    B = rng.standard_normal((25, 4))
    K = center_gram(GramMatrix(B @ B.T + 3.0)).values
    gap = float(max(np.abs(K.sum(axis=0)).max(), np.abs(K - K.T).max()))
    return CheckResult("double centering", gap <= 1e-10, f"max row sum / asymmetry {gap:.2e}")


def run_all() -> list[CheckResult]:
    return [check_centering(), check_span_equality(), check_small_gamma_limit(), check_feature_map()]
