"""Principal component analysis by eigendecomposition of the covariance."""

from dataclasses import dataclass

import numpy as np

from .errors import ClusteringDomainError


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray                 # (dim,)
    axes: np.ndarray                 # (k, dim), orthonormal rows
    explained_variance: np.ndarray   # (k,)
    explained_ratio: np.ndarray      # (k,)

    @property
    def k(self) -> int:
        return self.axes.shape[0]

    @property
    def dim(self) -> int:
        return self.axes.shape[1]


def pca_fit(x, k: int) -> PcaModel:
    """Top-k variance axes of `x` (n x dim).

    Each axis is signed so its largest-magnitude component is positive,
    which makes the projection deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ClusteringDomainError(f"PCA needs a 2-D matrix, got shape {x.shape}")
    n, dim = x.shape
    if not 1 <= k <= min(n - 1, dim):
        raise ClusteringDomainError(f"k={k} must be in [1, min(n-1, dim)] = [1, {min(n - 1, dim)}]")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(-values, kind="stable")[:k]
    axes = vectors[:, order].T.copy()
    for row in axes:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    values = np.clip(values, 0.0, None)
    total = values.sum()
    explained = values[order]
    ratio = explained / total if total > 0 else np.zeros(k)
    return PcaModel(mean, axes, explained, ratio)


def pca_project(m: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.dim:
        raise ClusteringDomainError(f"expected (n, {m.dim}) input, got {x.shape}")
    return (x - m.mean) @ m.axes.T


def pca_reconstruct(m: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z @ m.axes + m.mean
