"""End-to-end estimation and classification on a dataset."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clustering import GMMOptions, accuracy_best_permutation, assign_labels, fit_gmm
from .estimation import COVARIANCE_CG, MEAN_CG, CGOptions, CGReport, Dataset, solve_covariance, solve_mean
from .spectral import GapReport, estimate_num_classes, image_coordinates


@dataclass
class EstimateResult:
    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray  # full spectrum, descending
    eigenvectors: np.ndarray  # top columns only
    gap: GapReport
    mean_report: CGReport
    covariance_report: CGReport
    timings: dict[str, float] = field(default_factory=dict)


def estimate(
    d: Dataset,
    mean_opts: CGOptions = MEAN_CG,
    cov_opts: CGOptions = COVARIANCE_CG,
    tau: float = 2.0,
    m_scan: Optional[int] = None,
    n_eigvecs: int = 10,
) -> EstimateResult:
    timings = {}
    t0 = time.perf_counter()
    mu, mean_report = solve_mean(d, mean_opts)
    t1 = time.perf_counter()
    sigma, cov_report = solve_covariance(d, mu, cov_opts)
    t2 = time.perf_counter()
    vals, vecs = np.linalg.eigh(sigma)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    gap = estimate_num_classes(vals, tau, m_scan)
    t3 = time.perf_counter()
    timings.update(mean=t1 - t0, covariance=t2 - t1, spectrum=t3 - t2)
    k = min(max(n_eigvecs, gap.num_classes - 1, 1), vals.size)
    return EstimateResult(mu, sigma, vals, np.ascontiguousarray(vecs[:, :k]), gap, mean_report, cov_report, timings)


@dataclass
class ClassifyResult:
    alpha: np.ndarray
    labels: np.ndarray
    responsibilities: np.ndarray
    singular: np.ndarray
    accuracy: Optional[float]


def classify(d: Dataset, mu: np.ndarray, eigenvectors: np.ndarray, K: int,
             gmm_opts: GMMOptions = GMMOptions(), seed: int = 0) -> ClassifyResult:
    """Coordinates on the top ``max(K - 1, 1)`` eigenvolumes, clustered into ``K`` groups."""
    m = max(K - 1, 1)
    if eigenvectors.shape[1] < m:
        raise ValueError(f"need {m} eigenvectors, have {eigenvectors.shape[1]}")
    alpha, singular = image_coordinates(d, mu, eigenvectors[:, :m])
    model = fit_gmm(alpha, K, seed=seed, opts=gmm_opts)
    lab = assign_labels(model, alpha)
    acc = None if d.labels is None else accuracy_best_permutation(lab.labels, d.labels)
    return ClassifyResult(alpha, lab.labels, lab.responsibilities, singular, acc)
