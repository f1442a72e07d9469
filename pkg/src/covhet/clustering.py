"""Gaussian mixture clustering of image coordinates and label scoring."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DataError
from .estimation import MEAN_CG, CGOptions, solve_mean

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class GMMOptions:
    restarts: int = 5
    floor: float = 1e-6  # relative to the mean per-dimension data variance
    tol: float = 1e-8  # on the mean per-point log-likelihood gain
    max_iters: int = 500


@dataclass
class GMMModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d)
    log_likelihood: list[float] = field(default_factory=list)  # total, per EM iteration
    degenerate: bool = False

    @property
    def K(self) -> int:
        return self.weights.size


@dataclass
class Labeling:
    labels: np.ndarray
    responsibilities: np.ndarray


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError(f"points must be (n, d), got shape {x.shape}")
    return x


def _log_gauss(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Log densities, shape ``(n, K)``."""
    n, d = x.shape
    out = np.empty((n, means.shape[0]))
    for k, (m, c) in enumerate(zip(means, covs)):
        chol = np.linalg.cholesky(c)
        z = np.linalg.solve(chol, (x - m).T)
        out[:, k] = -0.5 * (np.sum(z * z, axis=0) + d * _LOG_2PI) - np.sum(np.log(np.diag(chol)))
    return out


def _kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[i])
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
    return np.array(centers)


def _em(x, K, rng, floor, opts):
    n, d = x.shape
    eye = np.eye(d)
    means = _kmeanspp(x, K, rng)
    base = np.cov(x.T, bias=True).reshape(d, d) + floor * eye
    covs = np.repeat(base[None], K, axis=0)
    weights = np.full(K, 1.0 / K)
    trace = []
    for _ in range(opts.max_iters):
        logp = _log_gauss(x, means, covs) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        if trace and (ll - trace[-1]) / n < opts.tol:
            trace.append(ll)
            break
        trace.append(ll)
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for k in range(K):
            diff = x - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + floor * eye
    return GMMModel(weights / weights.sum(), means, covs, trace)


def fit_gmm(points, K: int, seed: int = 0, opts: GMMOptions = GMMOptions()) -> GMMModel:
    """Fit a ``K``-component full-covariance Gaussian mixture by EM.

    Each restart seeds the means k-means++ style from its own stream derived
    from ``seed``; the restart with the highest final log-likelihood wins.
    """
    x = _as_points(points)
    n = x.shape[0]
    if K < 1:
        raise ConfigError("K must be >= 1")
    if K > n:
        raise ConfigError(f"cannot fit {K} components to {n} points")
    var = float(np.mean(np.var(x, axis=0)))
    degenerate = var == 0.0
    floor = opts.floor * (var if not degenerate else 1.0)
    if degenerate:
        logger.warning("all points identical; components collapse to the floor")
    best = None
    for child in np.random.SeedSequence(seed).spawn(opts.restarts):
        model = _em(x, K, np.random.default_rng(child), floor, opts)
        if best is None or model.log_likelihood[-1] > best.log_likelihood[-1]:
            best = model
    best.degenerate = degenerate
    return best


def assign_labels(model: GMMModel, points) -> Labeling:
    """Posterior responsibilities and maximum-posterior labels (ties go to the lower index)."""
    x = _as_points(points)
    if x.shape[1] != model.means.shape[1]:
        raise DataError("point dimension does not match the model")
    logp = _log_gauss(x, model.means, model.covariances) + np.log(model.weights)
    resp = np.exp(logp - logsumexp(logp, axis=1)[:, None])
    return Labeling(np.argmax(resp, axis=1), resp)


MAX_PERMUTATION_LABELS = 8


def accuracy_best_permutation(pred, truth) -> float:
    """Fraction of agreeing labels, maximised over relabelings of ``pred``."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DataError("label arrays differ in length")
    if pred.size == 0:
        raise DataError("no labels")
    if pred.min() < 0 or truth.min() < 0:
        raise DataError("labels must be non-negative")
    K = int(max(pred.max(), truth.max())) + 1
    if K > MAX_PERMUTATION_LABELS:
        raise ConfigError(f"{K} labels is too many for an exhaustive permutation scan")
    # joint counts make each permutation O(K)
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (pred, truth), 1)
    best = max(counts[np.arange(K), perm].sum() for perm in itertools.permutations(range(K)))
    return best / pred.size


def reconstruct_cluster_means(d, labels, K: int | None = None, opts: CGOptions = MEAN_CG) -> list[np.ndarray]:
    """Mean volume of each cluster, solved on that cluster's images alone."""
    labels = np.asarray(getattr(labels, "labels", labels))
    if K is None:
        K = int(labels.max()) + 1
    out = []
    for k in range(K):
        idx = np.flatnonzero(labels == k)
        if idx.size == 0:
            raise DataError(f"cluster {k} is empty")
        out.append(solve_mean(d.subset(idx), opts)[0])
    return out
