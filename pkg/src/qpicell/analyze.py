"""Unsupervised organization of the feature matrix.

Standardization, correlation-matrix PCA with a deterministic sign
convention, eigenvector stability as rows are added, Kaiser-Meyer-Olkin
sampling adequacy, and the mean silhouette of labelled score clouds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (DegenerateColumnError, DegenerateInputError, InsufficientRowsError,
                     InvalidInputError, SingularMatrixError)

KMO_FORMULA = ("KMO = sum_{j!=k} r_jk^2 / (sum_{j!=k} r_jk^2 + sum_{j!=k} q_jk^2), "
               "q_jk = -c_jk / sqrt(c_jj c_kk), C = inverse correlation matrix")


def _matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise InvalidInputError(f"data matrix must be 2D, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise InvalidInputError("data matrix contains non-finite entries")
    return D


def standardize(D, names: Optional[Sequence[str]] = None, return_stats: bool = False):
    """Column-wise zero mean and unit population standard deviation."""
    D = _matrix(D)
    if D.shape[0] < 2:
        raise InsufficientRowsError("standardization needs at least two rows")
    mean = D.mean(axis=0)
    centered = D - mean
    std = np.sqrt(np.mean(centered * centered, axis=0))
    scale = np.maximum(np.abs(mean), 1.0)
    for j, s in enumerate(std):
        if not s > 1e-13 * scale[j]:
            raise DegenerateColumnError(names[j] if names is not None else j)
    Z = centered / std
    if return_stats:
        return Z, mean, std
    return Z


@dataclass(frozen=True)
class PCAModel:
    column_means: np.ndarray
    column_stds: np.ndarray
    eigenvectors: np.ndarray  # columns u_k
    eigenvalues: np.ndarray  # descending

    @property
    def explained_fraction(self) -> np.ndarray:
        return self.eigenvalues / self.eigenvalues.sum()

    def standardize(self, D) -> np.ndarray:
        return (_matrix(D) - self.column_means) / self.column_stds


def _eigh(C):
    return np.linalg.eigh(C)


def _sign_convention(U: np.ndarray) -> np.ndarray:
    U = U.copy()
    for k in range(U.shape[1]):
        j = int(np.argmax(np.abs(U[:, k])))
        if U[j, k] < 0:
            U[:, k] = -U[:, k]
    return U


def pca(D, names: Optional[Sequence[str]] = None) -> PCAModel:
    """Eigen-decomposition of the correlation matrix ``Z^T Z / n``.

    ``D`` is standardized first (a no-op for already standardized input).
    Eigenvalues are sorted descending and every eigenvector is flipped so
    its largest-magnitude entry is positive.
    """
    Z, mean, std = standardize(D, names, return_stats=True)
    n, p = Z.shape
    if n < p:
        warnings.warn(f"PCA with fewer rows ({n}) than columns ({p})", stacklevel=2)
    C = Z.T @ Z / n
    C = 0.5 * (C + C.T)
    mu, U = _eigh(C)
    order = np.argsort(mu, kind="stable")[::-1]
    mu = np.clip(mu[order], 0.0, None)
    U = _sign_convention(U[:, order])
    return PCAModel(column_means=mean, column_stds=std, eigenvectors=U, eigenvalues=mu)


def project(D, model: PCAModel, k: int) -> np.ndarray:
    """Scores of standardized rows ``D`` on the first ``k`` principal axes."""
    D = _matrix(D)
    p = model.eigenvectors.shape[0]
    if not 1 <= k <= p:
        raise InvalidInputError(f"k must lie in [1, {p}], got {k}")
    return D @ model.eigenvectors[:, :k]


def explained_variance(model: PCAModel, k: int) -> float:
    mu = model.eigenvalues
    if not 1 <= k <= mu.size:
        raise InvalidInputError(f"k must lie in [1, {mu.size}], got {k}")
    return float(mu[:k].sum() / mu.sum())


@dataclass(frozen=True)
class StabilityTrace:
    n_values: np.ndarray
    s_values: np.ndarray

    def settled_after(self, threshold: float = 0.005) -> int:
        """Smallest n0 such that every s(n) with n >= n0 stays at or below ``threshold``."""
        above = np.nonzero(self.s_values > threshold)[0]
        if above.size == 0:
            return int(self.n_values[0])
        last = int(above[-1])
        if last + 1 >= self.n_values.size:
            return int(self.n_values[-1]) + 1
        return int(self.n_values[last + 1])


def align_eigenvectors(U_new: np.ndarray, U_ref: np.ndarray) -> np.ndarray:
    """Flip columns of ``U_new`` whose inner product with the matching ``U_ref`` column is negative."""
    signs = np.where(np.sum(U_new * U_ref, axis=0) < 0, -1.0, 1.0)
    return U_new * signs


def stability_curve(D, start_n: int, fit: Callable[[np.ndarray], PCAModel] = pca) -> StabilityTrace:
    """Relative Frobenius change of the eigenvector matrix as rows are added.

    For n = start_n .. N-1: ``s(n) = |U(n+1) - U(n)|_F / |U(n)|_F`` where
    ``U(n)`` is fitted on the first n rows and ``U(n+1)`` is sign-aligned
    to it column by column. Rows are used in the given order; shuffle them
    beforehand.
    """
    D = _matrix(D)
    N, p = D.shape
    if start_n < p or start_n < 2:
        raise InsufficientRowsError(f"start_n={start_n} is below the column count {p}")
    if start_n >= N:
        raise InsufficientRowsError(f"start_n={start_n} leaves no rows to add (N={N})")
    ns, ss = [], []
    U_prev = fit(D[:start_n]).eigenvectors
    for n in range(start_n, N):
        U_next = align_eigenvectors(fit(D[:n + 1]).eigenvectors, U_prev)
        ns.append(n)
        ss.append(np.linalg.norm(U_next - U_prev) / np.linalg.norm(U_prev))
        U_prev = U_next
    return StabilityTrace(np.asarray(ns), np.asarray(ss))


@dataclass(frozen=True)
class KMOResult:
    overall: float
    per_variable: np.ndarray


def kmo(D, max_condition: float = 1e12) -> KMOResult:
    """Kaiser-Meyer-Olkin sampling adequacy from the anti-image (partial) correlations."""
    Z = standardize(D)
    n, p = Z.shape
    if p < 2:
        raise InvalidInputError("KMO needs at least two variables")
    Rm = Z.T @ Z / n
    Rm = 0.5 * (Rm + Rm.T)
    cond = np.linalg.cond(Rm)
    if not np.isfinite(cond) or cond >= max_condition:
        raise SingularMatrixError(f"correlation matrix is (near) singular, condition number {cond:.3g}")
    Cinv = np.linalg.inv(Rm)
    d = np.sqrt(np.diag(Cinv))
    Q = -Cinv / np.outer(d, d)
    off = ~np.eye(p, dtype=bool)
    r2 = np.where(off, Rm * Rm, 0.0)
    q2 = np.where(off, Q * Q, 0.0)
    overall = r2.sum() / (r2.sum() + q2.sum())
    per = r2.sum(axis=0) / (r2.sum(axis=0) + q2.sum(axis=0))
    return KMOResult(overall=float(overall), per_variable=per)


def silhouette(scores, labels) -> float:
    """Mean silhouette with Euclidean distances; singleton clusters score 0."""
    X = np.asarray(scores, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise InvalidInputError("one label per row is required")
    classes, inv = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise DegenerateInputError("silhouette needs at least two distinct labels")
    dist = cdist(X, X)
    counts = np.bincount(inv)
    sums = np.stack([dist[:, inv == c].sum(axis=1) for c in range(classes.size)], axis=1)
    own = counts[inv]
    a = sums[np.arange(len(inv)), inv] / np.maximum(own - 1, 1)
    means = sums / counts
    means[np.arange(len(inv)), inv] = np.inf
    b = means.min(axis=1)
    s = np.where(own > 1, (b - a) / np.maximum(np.maximum(a, b), 1e-300), 0.0)
    return float(s.mean())
