"""Least-squares estimators of the volume mean and covariance.

The mean solves ``A_n mu = b_n`` and the covariance ``L_n(Sigma) = B_n`` with

    A_n      = 1/n sum_s M_s^H M_s
    b_n      = 1/n sum_s M_s^H I_s
    L_n(S)   = 1/n sum_s M_s^H M_s S M_s^H M_s
    B_n      = 1/n sum_s M_s^H r_s r_s^H M_s - sigma2 A_n,   r_s = I_s - M_s mu

Both systems are solved matrix-free with conjugate gradients started at zero;
capping the iteration count of the covariance solve acts as regularization.
Per-image terms are accumulated over fixed-size chunks in chunk order, so
results do not depend on the number of worker threads.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DataError, NumericalError
from .freqbasis import build_ball3, build_disc2
from .imaging import CTFParams, ImagingOperator

logger = logging.getLogger(__name__)

MAX_CHUNK = 128
CHUNK_BYTES = 1 << 26
THREADS_ENV = "COVHET_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class Dataset:
    """Images with their imaging parameters.

    ``images`` is ``(n, q)`` complex in canonical disc order, ``rotations`` is
    ``(n, 3, 3)``, ``ctf_indices`` index into ``ctf_bank`` and ``labels`` holds
    the generating class per image (or is None). ``N`` is the nominal pixel
    grid size used to give disc frequencies a physical scale.
    """

    images: np.ndarray
    rotations: np.ndarray
    ctf_indices: np.ndarray
    ctf_bank: tuple[CTFParams, ...]
    sigma2: float
    n_res: int
    N: int
    labels: Optional[np.ndarray] = None
    threads: int = field(default_factory=default_threads)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=complex)
        self.rotations = np.asarray(self.rotations, dtype=float)
        self.ctf_indices = np.asarray(self.ctf_indices, dtype=np.int64)
        self.ctf_bank = tuple(self.ctf_bank)
        n = self.images.shape[0]
        if n < 1:
            raise DataError("dataset has no images")
        if self.images.shape != (n, self.disc.q):
            raise DataError(f"images must have shape ({n}, {self.disc.q}), got {self.images.shape}")
        if self.rotations.shape != (n, 3, 3) or self.ctf_indices.shape != (n,):
            raise DataError("rotations / ctf indices do not match the number of images")
        if np.any(self.ctf_indices < 0) or np.any(self.ctf_indices >= len(self.ctf_bank)):
            raise DataError("ctf index outside the bank")
        if not self.sigma2 >= 0:
            raise DataError(f"sigma2 must be non-negative, got {self.sigma2}")
        if self.N % 2 == 0 or self.N < self.n_res:
            raise DataError(f"grid size N={self.N} must be odd and >= n_res={self.n_res}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DataError("labels do not match the number of images")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def ball(self):
        return build_ball3(self.n_res)

    @property
    def disc(self):
        return build_disc2(self.n_res)

    def operator(self, s: int) -> ImagingOperator:
        return ImagingOperator(self.rotations[s], int(self.ctf_indices[s]), self.ball, self.disc)

    @cached_property
    def matrices(self) -> list[sp.csr_matrix]:
        """Sparse imaging matrix of every image."""
        return [self.operator(s).matrix(self.ctf_bank, self.N) for s in range(self.n)]

    @property
    def chunk_size(self) -> int:
        # depends on the basis only, never on the thread count
        per_image = 16 * self.ball.p * self.disc.q
        return max(1, min(MAX_CHUNK, CHUNK_BYTES // per_image))

    @cached_property
    def chunks(self) -> list[tuple[slice, sp.csr_matrix]]:
        """Fixed partition of the images with the stacked matrix of each part."""
        out = []
        for start in range(0, self.n, self.chunk_size):
            sl = slice(start, min(start + self.chunk_size, self.n))
            out.append((sl, sp.vstack(self.matrices[sl], format="csr")))
        return out

    @cached_property
    def block_diagonals(self) -> list[tuple[sp.csr_matrix, sp.csr_matrix]]:
        """Block-diagonal ``diag(M_s)`` of each chunk and its transpose."""
        out = []
        for sl, _ in self.chunks:
            bd = sp.block_diag(self.matrices[sl], format="csr")
            out.append((bd, bd.T.tocsr()))
        return out

    @cached_property
    def transposed_chunks(self) -> list[sp.csr_matrix]:
        return [m.T.tocsr() for _, m in self.chunks]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return replace(
            self,
            images=self.images[idx],
            rotations=self.rotations[idx],
            ctf_indices=self.ctf_indices[idx],
            labels=None if self.labels is None else self.labels[idx],
        )

    def map_reduce(self, fn: Callable[[slice, sp.csr_matrix], np.ndarray]) -> np.ndarray:
        """Sum ``fn`` over the chunks, in chunk order."""
        if self.threads > 1 and len(self.chunks) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(lambda c: fn(*c), self.chunks))
        else:
            parts = [fn(*c) for c in self.chunks]
        total = parts[0]
        for part in parts[1:]:
            total = total + part
        return total


@dataclass(frozen=True)
class CGOptions:
    max_iters: int = 200
    rel_tol: float = 1e-8
    record_residuals: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be non-negative")


MEAN_CG = CGOptions(max_iters=200, rel_tol=1e-8)
COVARIANCE_CG = CGOptions(max_iters=10, rel_tol=0.0)


@dataclass
class CGReport:
    iterations: int
    residuals: list[float]
    terminated_by: str  # "tolerance" or "iteration_cap"


def _spmm(a: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Real sparse matrix times dense array; complex operands go through a float view."""
    if np.iscomplexobj(x) and x.ndim == 2:
        x = np.ascontiguousarray(x, dtype=complex)
        return (a @ x.view(float)).view(complex)
    return a @ x


def _inner(a, b) -> float:
    return float(np.vdot(a, b).real)


def cg_solve(apply: Callable, rhs: np.ndarray, opts: CGOptions = MEAN_CG):
    """Conjugate gradients for a self-adjoint positive semidefinite ``apply``.

    Works on any array shape with the inner product ``Re <a, b>`` (for
    matrices this is ``Re tr(A^H B)``). Starts from zero, so the iterates stay
    in the Krylov space of ``rhs``. Stops when ``|r| / |rhs| <= rel_tol`` or
    after ``max_iters`` iterations.
    """
    x = np.zeros_like(rhs, dtype=np.result_type(rhs, float))
    bnorm = np.sqrt(_inner(rhs, rhs))
    if not np.isfinite(bnorm):
        raise NumericalError("right-hand side is not finite (iteration 0)")
    residuals: list[float] = []
    if bnorm == 0.0:
        return x, CGReport(0, residuals, "tolerance")

    r = rhs.astype(x.dtype, copy=True)
    p = r.copy()
    rr = bnorm**2
    for k in range(1, opts.max_iters + 1):
        ap = apply(p)
        pap = _inner(p, ap)
        if not np.isfinite(pap):
            raise NumericalError(f"non-finite value in conjugate gradients at iteration {k}")
        if pap <= 0.0:
            # p lies in the null space; nothing more is reachable
            return x, CGReport(k - 1, residuals, "tolerance")
        step = rr / pap
        x = x + step * p
        r = r - step * ap
        rr_new = _inner(r, r)
        rel = np.sqrt(rr_new) / bnorm
        if not np.isfinite(rel):
            raise NumericalError(f"non-finite value in conjugate gradients at iteration {k}")
        if opts.record_residuals:
            residuals.append(float(rel))
        if rel <= opts.rel_tol:
            return x, CGReport(k, residuals, "tolerance")
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, CGReport(opts.max_iters, residuals, "iteration_cap")


def rhs_mean(d: Dataset) -> np.ndarray:
    def part(sl, m):
        return m.T @ d.images[sl].reshape(-1)

    return d.map_reduce(part) / d.n


def apply_mean_operator(d: Dataset, v: np.ndarray) -> np.ndarray:
    return d.map_reduce(lambda sl, m: m.T @ (m @ v)) / d.n


def mean_operator_matrix(d: Dataset) -> np.ndarray:
    """Dense ``A_n``; fine up to a few thousand coefficients."""
    return d.map_reduce(lambda sl, m: (m.T @ m).toarray()) / d.n


def solve_mean(d: Dataset, opts: CGOptions = MEAN_CG):
    """Least-squares mean volume and its CG report."""
    b = rhs_mean(d)
    mu, report = cg_solve(lambda v: apply_mean_operator(d, v), b, opts)
    logger.info("mean solve: %d iterations (%s)", report.iterations, report.terminated_by)
    return mu, report


def _backprojected_residuals(d: Dataset, sl: slice, m: sp.csr_matrix, mu: np.ndarray) -> np.ndarray:
    """Columns ``M_s^H (I_s - M_s mu)`` for the images in one chunk, shape ``(p, c)``."""
    q = d.disc.q
    res = d.images[sl] - (m @ mu).reshape(-1, q)
    c = res.shape[0]
    block = sp.csr_matrix(
        (res.reshape(-1), (np.arange(c * q), np.repeat(np.arange(c), q))), shape=(c * q, c)
    )
    return (m.T @ block).toarray()


def rhs_covariance(d: Dataset, mu: np.ndarray) -> np.ndarray:
    """Noise-debiased right-hand side ``B_n`` (dense Hermitian ``p x p``)."""
    if mu.shape != (d.ball.p,):
        raise DataError(f"mean must have {d.ball.p} coefficients, got shape {mu.shape}")

    def part(sl, m):
        v = _backprojected_residuals(d, sl, m, mu)
        out = v @ v.conj().T
        if d.sigma2:
            out -= d.sigma2 * (m.T @ m).toarray()
        return out

    b = d.map_reduce(part) / d.n
    return 0.5 * (b + b.conj().T)


def apply_covariance_operator(d: Dataset, S: np.ndarray) -> np.ndarray:
    """``L_n(S)`` for Hermitian ``S``, applied image by image through sparse products."""
    p, q = d.ball.p, d.disc.q
    S = np.ascontiguousarray(S, dtype=complex)
    extra = {sl.start: (bd, mt) for (sl, _), bd, mt in zip(d.chunks, d.block_diagonals, d.transposed_chunks)}

    def part(sl, m):
        (bd, bdt), mt = extra[sl.start]
        c = sl.stop - sl.start
        y = _spmm(m, S).reshape(c, q, p)  # M_s S
        yt = y.transpose(0, 2, 1).reshape(c * p, q)  # (M_s S)^T per block
        zc = _spmm(bd, yt)  # (M_s S M_s^T)^T = conj(Z_s) as S is Hermitian
        vt = _spmm(bdt, zc)  # (Z_s M_s)^T
        v = vt.reshape(c, p, q).transpose(0, 2, 1).reshape(c * q, p)
        return _spmm(mt, v)

    out = d.map_reduce(part) / d.n
    return 0.5 * (out + out.conj().T)


def solve_covariance(d: Dataset, mu: np.ndarray, opts: CGOptions = COVARIANCE_CG):
    """Covariance estimate from an iteration-capped CG solve, plus its report."""
    if d.n < 2:
        raise DataError("covariance estimation needs at least two images")
    B = rhs_covariance(d, mu)
    sigma, report = cg_solve(lambda S: apply_covariance_operator(d, S), B, opts)
    logger.info("covariance solve: %d iterations (%s)", report.iterations, report.terminated_by)
    return 0.5 * (sigma + sigma.conj().T), report


def is_hermitian(S: np.ndarray, tol: float = 1e-10) -> bool:
    scale = max(np.linalg.norm(S), np.finfo(float).tiny)
    return bool(np.linalg.norm(S - S.conj().T) <= tol * scale)
