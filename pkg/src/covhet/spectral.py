"""Eigen-analysis of the covariance estimate and per-image coordinates."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class Spectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # (p, m), orthonormal columns


def eig_hermitian(S: np.ndarray, m: int) -> Spectrum:
    """Top ``m`` eigenpairs of a Hermitian matrix by algebraic value."""
    S = np.asarray(S)
    p = S.shape[0]
    if not 1 <= m <= p:
        raise ValueError(f"need 1 <= m <= {p}, got {m}")
    vals, vecs = scipy.linalg.eigh(S, subset_by_index=[p - m, p - 1])
    vals, vecs = vals[::-1], vecs[:, ::-1]
    resid = np.linalg.norm(S @ vecs - vecs * vals, axis=0)
    bound = 1e-8 * max(np.linalg.norm(S), np.finfo(float).tiny)
    if np.any(resid > bound):
        raise NumericalError(f"eigensolver residual {resid.max():.3g} exceeds {bound:.3g}")
    return Spectrum(vals, vecs)


@dataclass
class GapReport:
    num_classes: int
    ratios: np.ndarray  # ratio lambda_i / lambda_{i+1} for i = 1..m_scan
    best_index: int  # 1-based position of the largest ratio (0 when degenerate)
    best_ratio: float
    degenerate: bool = False


def estimate_num_classes(eigenvalues, tau: float = 2.0, m_scan: int | None = None) -> GapReport:
    """Number of states from the largest ratio between consecutive eigenvalues.

    Eigenvalues are clamped at zero and each denominator is floored at
    ``1e-3 * lambda_1``. The count is ``i + 1`` for the position ``i`` of the
    largest ratio when that ratio reaches ``tau``, otherwise 1.
    """
    raw = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    lam = np.clip(raw, 0.0, None)
    if m_scan is None:
        m_scan = min(20, lam.size - 1)
    if np.count_nonzero(raw >= 0) < 2 or lam[0] == 0 or m_scan < 1:
        return GapReport(1, np.zeros(0), 0, 1.0, degenerate=True)
    if lam.size < m_scan + 1:
        raise ValueError(f"need at least {m_scan + 1} eigenvalues, got {lam.size}")
    floor = 1e-3 * lam[0]
    ratios = lam[:m_scan] / np.maximum(lam[1 : m_scan + 1], floor)
    i = int(np.argmax(ratios))
    best = float(ratios[i])
    c = i + 2 if best >= tau else 1
    return GapReport(c, ratios, i + 1, best)


def image_coordinates(d, mu: np.ndarray, U: np.ndarray):
    """Least-squares coordinates of each image in the span of ``U`` around ``mu``.

    For image ``s`` solves ``(U^H M_s^H M_s U) a = U^H M_s^H (I_s - M_s mu)``,
    i.e. the fit is done in image space through the imaging matrix. Returns
    ``(alpha, singular)``: the real part of the coordinates, ``(n, m)``, and a
    flag per image whose normal system was numerically singular (its
    coordinates are set to zero).
    """
    U = np.asarray(U)
    if U.ndim == 1:
        U = U[:, None]
    p, m = U.shape
    if p != d.ball.p or mu.shape != (p,):
        raise DataError("mean / eigenvector dimensions do not match the dataset")
    alpha = np.zeros((d.n, m))
    singular = np.zeros(d.n, dtype=bool)
    for s, ms in enumerate(d.matrices):
        mu_img = ms @ U
        gram = mu_img.conj().T @ mu_img
        rhs = mu_img.conj().T @ (d.images[s] - ms @ mu)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(gram, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.min() <= 1e-12 * max(diag.max(), np.finfo(float).tiny):
            singular[s] = True
            continue
        alpha[s] = scipy.linalg.lu_solve((lu, piv), rhs).real
    if singular.any():
        logger.warning("%d images have a singular coordinate system", int(singular.sum()))
    return alpha, singular
