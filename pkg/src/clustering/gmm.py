"""
Diagonal-covariance Gaussian mixture fitted by expectation-maximization.

Initialization picks means k-means++ style; the best of several restarts
by final log-likelihood is kept. Variances are floored to keep every
component non-singular.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ClusteringDomainError

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray      # (K,)
    means: np.ndarray        # (K, d)
    variances: np.ndarray    # (K, d)
    log_likelihood_trace: Tuple[float, ...]
    converged: bool = False

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1]


def _log_joint(weights: np.ndarray, means: np.ndarray, variances: np.ndarray, x: np.ndarray) -> np.ndarray:
    """log w_k + log N(x | mu_k, diag(var_k)) for every point and component, (n, K)."""
    diff = x[:, None, :] - means[None, :, :]
    log_det = np.sum(np.log(variances), axis=1)
    maha = np.sum(diff * diff / variances[None, :, :], axis=2)
    d = x.shape[1]
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] - 0.5 * (d * _LOG_2PI + log_det[None, :] + maha)


def _check_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ClusteringDomainError(f"expected a non-empty (n, d) matrix, got shape {x.shape}")
    return x


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def _em(
    x: np.ndarray,
    means: np.ndarray,
    max_iter: int,
    tol: float,
    floor: float,
) -> GmmModel:
    n, d = x.shape
    k = means.shape[0]
    weights = np.full(k, 1.0 / k)
    variances = np.tile(np.maximum(x.var(axis=0), floor), (k, 1))

    joint = _log_joint(weights, means, variances, x)
    ll = float(logsumexp(joint, axis=1).sum())
    trace = [ll]
    converged = False
    for _ in range(max_iter):
        resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        nk = resp.sum(axis=0)
        safe = np.maximum(nk, np.finfo(np.float64).tiny)
        weights = nk / n
        means = (resp.T @ x) / safe[:, None]
        variances = np.empty((k, d))
        for j in range(k):
            diff = x - means[j]
            variances[j] = resp[:, j] @ (diff * diff) / safe[j]
        variances = np.maximum(variances, floor)

        joint = _log_joint(weights, means, variances, x)
        new_ll = float(logsumexp(joint, axis=1).sum())
        trace.append(new_ll)
        if new_ll - ll < tol:
            converged = True
            break
        ll = new_ll
    return GmmModel(weights, means, variances, tuple(trace), converged)


def gmm_fit_em(
    x,
    n_components: int,
    rng: np.random.Generator,
    max_iter: int = 200,
    tol: float = 1e-6,
    restarts: int = 5,
    variance_floor: float = VARIANCE_FLOOR,
) -> GmmModel:
    """Fit a K-component diagonal GMM; returns the best of `restarts` runs.

    Raises:
        ClusteringDomainError: Fewer points than components, or K < 1.
    """
    x = _check_points(x)
    n = x.shape[0]
    if n_components < 1:
        raise ClusteringDomainError(f"need at least one component (got {n_components})")
    if n < n_components:
        raise ClusteringDomainError(f"{n} points cannot fit {n_components} components")
    if restarts < 1:
        raise ClusteringDomainError(f"restarts must be >= 1 (got {restarts})")

    best = None
    for r in range(restarts):
        model = _em(x, _kmeans_pp(x, n_components, rng), max_iter, tol, variance_floor)
        logger.debug(f"GMM restart {r}: log-likelihood {model.log_likelihood:.4f} "
                     f"after {len(model.log_likelihood_trace) - 1} iterations")
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    return best


def gmm_soft_assign(m: GmmModel, x) -> np.ndarray:
    """Posterior component probabilities, (n, K); rows sum to 1."""
    x = _check_points(x)
    if x.shape[1] != m.means.shape[1]:
        raise ClusteringDomainError(f"points have dim {x.shape[1]}, model has {m.means.shape[1]}")
    joint = _log_joint(m.weights, m.means, m.variances, x)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
