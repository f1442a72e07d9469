"""Truncated Fourier bases for volumes and images.

Volumes live on the integer frequencies of a 3D ball of radius ``n_res / 2``
and images on the matching 2D disc. Coefficients are the unitary DFT values of
an odd, origin-centred real-space grid, so white pixel noise maps to white
coefficient noise of the same variance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError

HERMITIAN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FrequencyMap:
    """Integer frequencies with norm at most ``n_res / 2``, in lexicographic order."""

    n_res: int
    indices: np.ndarray  # (count, ndim) int64, read-only
    neg: np.ndarray = field(repr=False)  # position of -k for each k
    _lookup: dict = field(repr=False)

    @property
    def ndim(self) -> int:
        return self.indices.shape[1]

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    @property
    def radius(self) -> float:
        return self.n_res / 2

    def position(self, k) -> int:
        """Index of the integer frequency ``k``; raises KeyError when outside the map."""
        return self._lookup[tuple(int(c) for c in k)]

    def __contains__(self, k) -> bool:
        return tuple(int(c) for c in k) in self._lookup

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FrequencyMap)
            and self.n_res == other.n_res
            and self.ndim == other.ndim
        )

    def __hash__(self) -> int:
        return hash((self.n_res, self.ndim))


class FrequencyBall3D(FrequencyMap):
    @property
    def p(self) -> int:
        return self.size


class FrequencyDisc2D(FrequencyMap):
    @property
    def q(self) -> int:
        return self.size


def _check_n_res(n_res) -> int:
    if int(n_res) != n_res or n_res < 3 or n_res % 2 == 0:
        raise ConfigError(f"n_res must be an odd integer >= 3, got {n_res!r}")
    return int(n_res)


def _build(cls, n_res: int, ndim: int):
    h = n_res // 2
    r2 = (n_res / 2) ** 2
    # itertools.product over a sorted range is already lexicographic
    pts = [k for k in itertools.product(range(-h, h + 1), repeat=ndim)
           if sum(c * c for c in k) <= r2]
    indices = np.array(pts, dtype=np.int64)
    indices.setflags(write=False)
    lookup = {k: i for i, k in enumerate(pts)}
    neg = np.array([lookup[tuple(-c for c in k)] for k in pts], dtype=np.int64)
    neg.setflags(write=False)
    return cls(n_res=n_res, indices=indices, neg=neg, _lookup=lookup)


@lru_cache(maxsize=None)
def build_ball3(n_res: int) -> FrequencyBall3D:
    """Volume frequency ball for effective resolution ``n_res`` (odd, >= 3)."""
    return _build(FrequencyBall3D, _check_n_res(n_res), 3)


@lru_cache(maxsize=None)
def build_disc2(n_res: int) -> FrequencyDisc2D:
    """Image frequency disc for effective resolution ``n_res`` (odd, >= 3)."""
    return _build(FrequencyDisc2D, _check_n_res(n_res), 2)


def is_hermitian_symmetric(values: np.ndarray, fmap: FrequencyMap, tol: float = HERMITIAN_TOL) -> bool:
    """True when ``values[-k] == conj(values[k])`` up to ``tol`` relative to the max magnitude.

    ``values`` may carry leading batch axes; the frequency axis is last.
    """
    values = np.asarray(values)
    scale = max(float(np.max(np.abs(values), initial=0.0)), 1.0)
    dev = np.max(np.abs(values - np.conj(values[..., fmap.neg])), initial=0.0)
    return bool(dev <= tol * scale)


def symmetrize(values: np.ndarray, fmap: FrequencyMap) -> np.ndarray:
    """Project onto Hermitian-symmetric coefficients (the real-valued signals)."""
    return 0.5 * (values + np.conj(values[..., fmap.neg]))


def _grid_positions(fmap: FrequencyMap, N: int) -> tuple[np.ndarray, ...]:
    return tuple((fmap.indices % N).T)


def grid_to_coeffs(grid: np.ndarray, fmap: FrequencyMap) -> np.ndarray:
    """Unitary DFT of an origin-centred odd grid, restricted to the frequencies of ``fmap``.

    The grid origin sits at index ``(N - 1) // 2`` along every axis.
    """
    grid = np.asarray(grid)
    N = grid.shape[0]
    if grid.ndim != fmap.ndim or any(s != N for s in grid.shape):
        raise DataError(f"expected a cubic {fmap.ndim}D grid, got shape {grid.shape}")
    if N % 2 == 0 or N < fmap.n_res:
        raise DataError(f"grid size must be odd and >= n_res={fmap.n_res}, got {N}")
    spec = np.fft.fftn(np.fft.ifftshift(grid), norm="ortho")
    return spec[_grid_positions(fmap, N)]


def coeffs_to_grid(coeffs: np.ndarray, fmap: FrequencyMap, N: int) -> np.ndarray:
    """Real-space grid of size ``N`` from Hermitian-symmetric coefficients."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (fmap.size,):
        raise DataError(f"expected {fmap.size} coefficients, got shape {coeffs.shape}")
    if N % 2 == 0 or N < fmap.n_res:
        raise DataError(f"grid size must be odd and >= n_res={fmap.n_res}, got {N}")
    if not is_hermitian_symmetric(coeffs, fmap):
        raise DataError("coefficients are not Hermitian-symmetric")
    spec = np.zeros((N,) * fmap.ndim, dtype=complex)
    spec[_grid_positions(fmap, N)] = coeffs
    return np.fft.fftshift(np.fft.ifftn(spec, norm="ortho")).real
