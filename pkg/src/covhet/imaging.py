"""Imaging operator: Fourier-slice projection followed by a radial CTF.

The forward map of one image is a real sparse ``q x p`` matrix: each disc
frequency ``w`` reads the volume at ``R.T @ (w1, w2, 0)`` by trilinear
interpolation, then the row is scaled by the CTF at ``|w|``. Because every
entry is real, the adjoint is the plain transpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .freqbasis import FrequencyBall3D, FrequencyDisc2D

_ORTHO_TOL = 1e-12
# ctf parameter units -> angstrom
_UM = 1e4
_MM = 1e7


def check_rotation(r: np.ndarray, tol: float = _ORTHO_TOL) -> np.ndarray:
    """Validate a 3x3 rotation matrix and return it as a float array."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ConfigError(f"rotation must be 3x3, got {r.shape}")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise ConfigError("matrix is not a proper rotation")
    return r


@dataclass(frozen=True)
class CTFParams:
    """Radial contrast transfer function parameters.

    Units: defocus in micrometres, wavelength in angstrom, spherical
    aberration in millimetres, pixel size in angstrom. An all-zero parameter
    set denotes the identity filter (no CTF).
    """

    defocus_z: float
    wavelength_lambda: float
    cs: float
    alpha_ac: float
    pixel_size: float

    def __post_init__(self):
        if self.is_identity:
            return
        if self.wavelength_lambda <= 0 or self.pixel_size <= 0:
            raise ConfigError("wavelength and pixel size must be positive")
        if self.defocus_z < 0 or self.cs < 0:
            raise ConfigError("defocus and spherical aberration must be non-negative")
        if not 0.0 <= self.alpha_ac <= 1.0:
            raise ConfigError(f"amplitude contrast must lie in [0, 1], got {self.alpha_ac}")

    @classmethod
    def identity(cls) -> "CTFParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def is_identity(self) -> bool:
        return self.astuple() == (0.0, 0.0, 0.0, 0.0, 0.0)

    def astuple(self) -> tuple[float, float, float, float, float]:
        return (self.defocus_z, self.wavelength_lambda, self.cs, self.alpha_ac, self.pixel_size)


def ctf_value(params: CTFParams, s):
    """CTF at radial spatial frequency ``s`` (1/angstrom).

    ``H(s) = -sqrt(1 - a^2) sin(chi) - a cos(chi)`` with
    ``chi = pi lam z s^2 - pi/2 Cs lam^3 s^4``.
    """
    s = np.asarray(s, dtype=float)
    if params.is_identity:
        return np.ones_like(s)[()]
    lam = params.wavelength_lambda
    z = params.defocus_z * _UM
    cs = params.cs * _MM
    chi = np.pi * lam * z * s**2 - 0.5 * np.pi * cs * lam**3 * s**4
    a = params.alpha_ac
    return (-np.sqrt(1.0 - a * a) * np.sin(chi) - a * np.cos(chi))[()]


def ctf_diagonal(params: CTFParams, disc: FrequencyDisc2D, n_ref: int) -> np.ndarray:
    """CTF values at every disc frequency for a nominal grid of size ``n_ref``."""
    if params.is_identity:
        return np.ones(disc.q)
    s = np.linalg.norm(disc.indices, axis=1) / (n_ref * params.pixel_size)
    return ctf_value(params, s)


def apply_ctf(img: np.ndarray, params: CTFParams, disc: FrequencyDisc2D, n_ref: int) -> np.ndarray:
    return ctf_diagonal(params, disc, n_ref) * img


def slice_matrix(r: np.ndarray, ball: FrequencyBall3D, disc: FrequencyDisc2D) -> sp.csr_matrix:
    """Sparse trilinear slicing matrix of shape ``(q, p)`` for rotation ``r``."""
    w = np.zeros((disc.q, 3))
    w[:, :2] = disc.indices
    pts = w @ np.asarray(r, dtype=float)  # row i is R.T @ w_i
    base = np.floor(pts)
    frac = pts - base
    base = base.astype(np.int64)

    rows, cols, vals = [], [], []
    h = ball.n_res // 2
    r2 = ball.radius**2
    side = 2 * h + 1
    # dense lookup cube: position in ball or -1
    cube = np.full((side,) * 3, -1, dtype=np.int64)
    cube[tuple((ball.indices + h).T)] = np.arange(ball.p)
    for corner in np.ndindex(2, 2, 2):
        c = np.array(corner)
        nb = base + c
        weight = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        inside = (np.sum(nb * nb, axis=1) <= r2) & (weight > 0.0)
        inside &= np.all(np.abs(nb) <= h, axis=1)
        idx = np.flatnonzero(inside)
        rows.append(idx)
        cols.append(cube[tuple((nb[idx] + h).T)])
        vals.append(weight[idx])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(disc.q, ball.p))


def slice_project(vol: np.ndarray, r: np.ndarray, ball: FrequencyBall3D, disc: FrequencyDisc2D) -> np.ndarray:
    return slice_matrix(r, ball, disc) @ vol


def slice_project_adjoint(img: np.ndarray, r: np.ndarray, ball: FrequencyBall3D, disc: FrequencyDisc2D) -> np.ndarray:
    return slice_matrix(r, ball, disc).T @ img


@dataclass(frozen=True, eq=False)
class ImagingOperator:
    """One image's forward map: a rotation and an index into a CTF bank."""

    rotation: np.ndarray
    ctf_index: int
    ball: FrequencyBall3D
    disc: FrequencyDisc2D

    def matrix(self, bank: Sequence[CTFParams], n_ref: int) -> sp.csr_matrix:
        """Sparse real ``q x p`` matrix of ``H . P_R``."""
        if not 0 <= self.ctf_index < len(bank):
            raise ConfigError(f"ctf index {self.ctf_index} outside bank of size {len(bank)}")
        h = ctf_diagonal(bank[self.ctf_index], self.disc, n_ref)
        return sp.csr_matrix(sp.diags(h) @ slice_matrix(self.rotation, self.ball, self.disc))


def apply_forward(vol: np.ndarray, op: ImagingOperator, bank: Sequence[CTFParams], n_ref: int) -> np.ndarray:
    return op.matrix(bank, n_ref) @ vol


def apply_adjoint(img: np.ndarray, op: ImagingOperator, bank: Sequence[CTFParams], n_ref: int) -> np.ndarray:
    return op.matrix(bank, n_ref).T @ img
