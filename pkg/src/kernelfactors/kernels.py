"""Kernel functions, Gram matrices and double-centering."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "KernelSpec",
    "GramMatrix",
    "GramBasis",
    "eval_kernel",
    "gram_matrix",
    "gram_basis",
    "gram_from_basis",
    "center_gram",
    "rbf_feature_map_truncated",
    "rbf_feature_count",
]

FAMILIES = ("linear", "rbf", "sigmoid", "polynomial")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    ``gamma`` is used by rbf and sigmoid, ``c0`` by sigmoid
    (``tanh(c0 + gamma * x'z)``), ``degree`` and ``offset`` by polynomial
    (``(x'z + offset) ** degree``).
    """

    family: str
    gamma: float = 1.0
    c0: float = 1.0
    degree: int = 2
    offset: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.family in ("rbf", "sigmoid") and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.family == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError(f"degree must be a positive integer, got {self.degree}")

    @classmethod
    def linear(cls) -> KernelSpec:
        return cls("linear")

    @classmethod
    def rbf(cls, gamma: float) -> KernelSpec:
        return cls("rbf", gamma=gamma)

    @classmethod
    def sigmoid(cls, gamma: float, c0: float = 1.0) -> KernelSpec:
        return cls("sigmoid", gamma=gamma, c0=c0)

    @classmethod
    def polynomial(cls, degree: int = 2, offset: float = 1.0) -> KernelSpec:
        return cls("polynomial", degree=degree, offset=offset)

    @property
    def uses_gamma(self) -> bool:
        return self.family in ("rbf", "sigmoid")

    def with_gamma(self, gamma: float) -> KernelSpec:
        return replace(self, gamma=float(gamma))

    @property
    def label(self) -> str:
        if self.family == "polynomial":
            return f"poly{self.degree}"
        return self.family


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    centered: bool = False

    @property
    def size(self) -> int:
        return self.values.shape[0]


def eval_kernel(spec: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1:
        raise ValueError(f"kernel arguments must be equal-length vectors, got {x.shape} and {z.shape}")
    if spec.family == "linear":
        return float(x @ z)
    if spec.family == "rbf":
        d = x - z
        return float(np.exp(-spec.gamma * (d @ d)))
    if spec.family == "sigmoid":
        return float(np.tanh(spec.c0 + spec.gamma * (x @ z)))
    return float((x @ z + spec.offset) ** spec.degree)


def _mirror_upper(A: np.ndarray) -> np.ndarray:
    return np.triu(A) + np.triu(A, 1).T


@dataclass(frozen=True)
class GramBasis:
    """Inner products and squared distances of one data set.

    Every supported kernel is an elementwise function of these, so a basis
    can be reused across a hyperparameter grid.
    """

    inner: np.ndarray
    sqdist: np.ndarray


def gram_basis(X) -> GramBasis:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a T x N matrix")
    inner = _mirror_upper(X @ X.T)
    sq = np.diag(inner)
    sqdist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * inner, 0.0)
    np.fill_diagonal(sqdist, 0.0)
    return GramBasis(inner, _mirror_upper(sqdist))


def gram_from_basis(spec: KernelSpec, basis: GramBasis) -> GramMatrix:
    if spec.family == "linear":
        K = basis.inner.copy()
    elif spec.family == "rbf":
        K = np.exp(-spec.gamma * basis.sqdist)
    elif spec.family == "sigmoid":
        K = np.tanh(spec.c0 + spec.gamma * basis.inner)
    else:
        K = (basis.inner + spec.offset) ** spec.degree
    return GramMatrix(K, centered=False)


def gram_matrix(spec: KernelSpec, X) -> GramMatrix:
    """Uncentered Gram matrix ``K[i, j] = k(X[i], X[j])``, exactly symmetric."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"need a T x N matrix with T >= 2, got shape {X.shape}")
    return gram_from_basis(spec, gram_basis(X))


def center_gram(K: GramMatrix | np.ndarray) -> GramMatrix:
    """Double-center a Gram matrix so the implied features have zero mean.

    ``K - 1K - K1 + 1K1`` with ``1`` the T x T matrix of ``1/T``.
    """
    A = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("Gram matrix must be square")
    col = A.mean(axis=0)
    row = A.mean(axis=1)
    C = A - row[:, None] - col[None, :] + A.mean()
    return GramMatrix(_mirror_upper(C), centered=True)


def rbf_feature_count(dim: int, max_degree: int) -> int:
    return math.comb(dim + max_degree, max_degree)


def rbf_feature_map_truncated(x, gamma: float, max_degree: int, max_features: int = 2_000_000) -> np.ndarray:
    """Explicit RBF feature map truncated at total polynomial degree ``max_degree``.

    Coordinates are ``(2 gamma)^(j/2) exp(-gamma |x|^2) prod_i x_i^n_i / sqrt(n_i!)``
    over multi-indices ``n`` with ``|n| = j``, degrees ascending and graded
    lexicographic within a degree. Inner products of two maps converge to
    ``exp(-gamma |x - z|^2)`` as ``max_degree`` grows.
    """
    x = np.asarray(x, dtype=float).ravel()
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    k = x.size
    count = rbf_feature_count(k, max_degree)
    if count > max_features:
        raise ValueError(f"feature map would have {count} coordinates, above the cap of {max_features}")
    envelope = math.exp(-gamma * float(x @ x))
    inv_sqrt_fact = np.array([1.0 / math.sqrt(math.factorial(n)) for n in range(max_degree + 1)])
    out = np.empty(count)
    pos = 0
    for j in range(max_degree + 1):
        # sorted index tuples (0, 0, 1) <-> exponents (2, 1, 0): graded lex order
        combos = np.array(list(itertools.combinations_with_replacement(range(k), j)), dtype=np.intp)
        if j == 0:
            expo = np.zeros((1, k), dtype=np.intp)
        else:
            expo = np.zeros((len(combos), k), dtype=np.intp)
            for col in range(j):
                np.add.at(expo, (np.arange(len(combos)), combos[:, col]), 1)
        terms = np.prod(np.power(x[None, :], expo) * inv_sqrt_fact[expo], axis=1)
        out[pos : pos + len(terms)] = (2.0 * gamma) ** (j / 2.0) * envelope * terms
        pos += len(terms)
    return out
