"""Ground-truth phantoms and labelled synthetic datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation as _Rotation

from .errors import ConfigError
from .estimation import Dataset
from .freqbasis import build_ball3, build_disc2, grid_to_coeffs, symmetrize
from .imaging import CTFParams, ImagingOperator

# stream keys under the generator seed
_IMAGE_STREAM = 0
_CALIBRATION_STREAM = 1


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float, float]  # in the [-1, 1]^3 box
    width: float  # standard deviation, box units
    amplitude: float

    def __post_init__(self):
        if self.width <= 0:
            raise ConfigError(f"blob width must be positive, got {self.width}")
        if len(self.center) != 3 or max(abs(c) for c in self.center) > 1:
            raise ConfigError(f"blob centre {self.center} outside the unit cube")


@dataclass(frozen=True)
class PhantomSpec:
    classes: tuple[tuple[Blob, ...], ...]
    N: int
    n_res: int

    def __post_init__(self):
        if len(self.classes) < 1:
            raise ConfigError("need at least one class")
        if self.N % 2 == 0 or self.N < self.n_res:
            raise ConfigError(f"grid size N={self.N} must be odd and >= n_res={self.n_res}")

    @property
    def C(self) -> int:
        return len(self.classes)


_BODY = (
    Blob((0.0, 0.0, 0.0), 0.25, 1.0),
    Blob((0.3, 0.2, -0.1), 0.18, 0.8),
    Blob((-0.25, -0.2, 0.2), 0.2, 0.7),
)
_MARKER = Blob((0.3, -0.3, 0.0), 0.15, 1.0)
_SHIFTS = ((-0.6, 0.0, 0.0), (0.0, 0.6, 0.0), (0.0, 0.0, 0.6), (-0.6, 0.6, 0.0))


def default_phantom_spec(C: int = 2, N: int = 33, n_res: int = 9) -> PhantomSpec:
    """Shared three-blob body plus one marker blob shifted by 0.3 box lengths per class."""
    if not 1 <= C <= len(_SHIFTS) + 1:
        raise ConfigError(f"default phantoms support 1..{len(_SHIFTS) + 1} classes, got {C}")
    classes = [_BODY + (_MARKER,)]
    for shift in _SHIFTS[: C - 1]:
        center = tuple(float(a + b) for a, b in zip(_MARKER.center, shift))
        classes.append(_BODY + (Blob(center, _MARKER.width, _MARKER.amplitude),))
    return PhantomSpec(tuple(classes), N, n_res)


def box_coordinates(N: int) -> np.ndarray:
    """Box coordinate of each grid index; one pixel is ``2 / N`` box units."""
    return (np.arange(N) - (N - 1) / 2) * (2.0 / N)


def blob_grid(blobs: Sequence[Blob], N: int) -> np.ndarray:
    u = box_coordinates(N)
    x, y, z = np.meshgrid(u, u, u, indexing="ij")
    grid = np.zeros((N, N, N))
    for b in blobs:
        r2 = (x - b.center[0]) ** 2 + (y - b.center[1]) ** 2 + (z - b.center[2]) ** 2
        grid += b.amplitude * np.exp(-r2 / (2 * b.width**2))
    return grid


def make_phantoms(spec: PhantomSpec) -> list[np.ndarray]:
    """Coefficient vectors of the class volumes, Hermitian-symmetric by construction."""
    ball = build_ball3(spec.n_res)
    return [symmetrize(grid_to_coeffs(blob_grid(blobs, spec.N), ball), ball) for blobs in spec.classes]


@dataclass(frozen=True)
class AngleDistribution:
    """Viewing-direction distribution.

    ``uniform`` is the Haar measure on rotations. ``capped`` draws the viewing
    axis from a von Mises-Fisher density about ``axis`` with concentration
    ``kappa`` (``inf`` pins it) and the in-plane angle uniformly.
    """

    kind: str = "uniform"
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "capped"):
            raise ConfigError(f"unknown angle distribution {self.kind!r}")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise ConfigError("axis must be a unit vector")
        if not self.kappa >= 0:
            raise ConfigError("kappa must be non-negative")


def _orthonormal_frame(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``v`` to a right-handed frame ``(a, b, v)``."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a = np.cross(helper, v)
    a /= np.linalg.norm(a)
    return a, np.cross(v, a)


def sample_vmf_axis(mean_axis, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """One draw from the von Mises-Fisher density on the 2-sphere."""
    mu = np.asarray(mean_axis, dtype=float)
    u = rng.random()
    if np.isinf(kappa):
        w = 1.0
    elif kappa == 0:
        w = 2.0 * u - 1.0
    else:
        # inverse CDF of the cosine to the mean axis
        w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    phi = 2 * np.pi * rng.random()
    a, b = _orthonormal_frame(mu)
    s = np.sqrt(max(0.0, 1.0 - w * w))
    return w * mu + s * (np.cos(phi) * a + np.sin(phi) * b)


def sample_rotation(dist: AngleDistribution, rng: np.random.Generator) -> np.ndarray:
    """Rotation whose third row (the viewing axis in the volume frame) follows ``dist``."""
    if dist.kind == "uniform":
        return _Rotation.random(random_state=rng).as_matrix()
    v = sample_vmf_axis(dist.axis, dist.kappa, rng)
    a, b = _orthonormal_frame(v)
    psi = 2 * np.pi * rng.random()
    c, s = np.cos(psi), np.sin(psi)
    inplane = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return inplane @ np.array([a, b, v])


def make_ctf_bank(
    count: int = 7,
    defocus_range: tuple[float, float] = (1.0, 2.5),
    wavelength: float = 0.0197,
    cs: float = 2.0,
    alpha: float = 0.07,
    pixel_size: float = 2.0,
) -> tuple[CTFParams, ...]:
    """CTFs with evenly spaced defocus (micrometres)."""
    if count < 1:
        raise ConfigError("ctf bank needs at least one entry")
    return tuple(CTFParams(float(z), wavelength, cs, alpha, pixel_size)
                 for z in np.linspace(*defocus_range, count))


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 2000
    probs: tuple[float, ...] = (0.5, 0.5)
    ctf_bank: tuple[CTFParams, ...] = field(default_factory=make_ctf_bank)
    snr_het: float | None = 0.02
    seed: int = 0
    sigma: float | None = None  # explicit noise level; overrides snr_het
    calibration_draws: int = 200

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if any(p <= 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-12:
            raise ConfigError(f"class probabilities must be positive and sum to 1, got {self.probs}")
        if self.snr_het is not None and not self.snr_het > 0:
            raise ConfigError("snr_het must be positive")
        if self.sigma is not None and not self.sigma >= 0:
            raise ConfigError("sigma must be non-negative")
        if len(self.ctf_bank) < 1:
            raise ConfigError("empty ctf bank")


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def draw_image_parameters(config: GeneratorConfig, dist: AngleDistribution, n: int | None = None):
    """Class label, rotation and CTF index of every image, one RNG stream per image."""
    n = config.n if n is None else n
    labels = np.empty(n, dtype=np.int64)
    rotations = np.empty((n, 3, 3))
    ctf_indices = np.empty(n, dtype=np.int64)
    cum = np.cumsum(config.probs)
    for s in range(n):
        rng = _stream(config.seed, _IMAGE_STREAM, s)
        labels[s] = min(int(np.searchsorted(cum, rng.random(), side="right")), len(cum) - 1)
        rotations[s] = sample_rotation(dist, rng)
        ctf_indices[s] = rng.integers(len(config.ctf_bank))
    return labels, rotations, ctf_indices


def sigma_for_snr(volumes, probs, matrices, snr_het: float, n_pixels: int) -> float:
    """Noise level giving heterogeneity SNR ``snr_het``.

    The SNR is the per-pixel power of the heterogeneous part of the clean
    images over the pixel noise variance:
    ``snr_het = E_s sum_c p_c |M_s (X_c - mu_0)|^2 / (n_pixels * sigma^2)``
    with ``mu_0 = sum_c p_c X_c``, averaged over the sampled ``matrices``.
    Coefficient energy equals pixel energy because the transform is unitary.
    """
    if not snr_het > 0:
        raise ConfigError("snr_het must be positive")
    vols = np.asarray(volumes)
    probs = np.asarray(probs, dtype=float)
    dev = vols - probs @ vols
    if not np.any(np.abs(dev) > 0):
        raise ConfigError("no heterogeneity: signal power is zero")
    power = np.mean([probs @ np.sum(np.abs(dev @ m.T) ** 2, axis=1) for m in matrices])
    if power == 0:
        raise ConfigError("no heterogeneity visible through the sampled operators")
    return float(np.sqrt(power / (n_pixels * snr_het)))


def white_noise(q: int, neg: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Complex coefficient noise of variance ``sigma**2`` that is the transform of real pixel noise."""
    g = (rng.standard_normal(q) + 1j * rng.standard_normal(q)) * (sigma / np.sqrt(2))
    return (g + np.conj(g[neg])) / np.sqrt(2)


def calibrate_sigma(phantoms, config: GeneratorConfig, dist: AngleDistribution, n_res: int, N: int) -> float:
    """``sigma_for_snr`` over ``config.calibration_draws`` operators from a dedicated stream."""
    ball, disc = build_ball3(n_res), build_disc2(n_res)
    bank = config.ctf_bank
    cal = _stream(config.seed, _CALIBRATION_STREAM)
    mats = [
        ImagingOperator(sample_rotation(dist, cal), int(cal.integers(len(bank))), ball, disc).matrix(bank, N)
        for _ in range(config.calibration_draws)
    ]
    return sigma_for_snr(phantoms, config.probs, mats, config.snr_het, N * N)


def generate_dataset(
    phantoms: Sequence[np.ndarray],
    config: GeneratorConfig,
    dist: AngleDistribution,
    n_res: int,
    N: int,
) -> Dataset:
    """Noisy labelled projections of the phantoms.

    Noise is ``config.sigma`` when given, else calibrated to ``config.snr_het``,
    else absent.
    """
    if len(phantoms) != len(config.probs):
        raise ConfigError(f"{len(phantoms)} phantoms but {len(config.probs)} class probabilities")
    ball, disc = build_ball3(n_res), build_disc2(n_res)
    labels, rotations, ctf_indices = draw_image_parameters(config, dist)
    bank = config.ctf_bank

    if config.sigma is not None:
        sigma = config.sigma
    elif config.snr_het is not None:
        sigma = calibrate_sigma(phantoms, config, dist, n_res, N)
    else:
        sigma = 0.0

    matrices = []
    images = np.empty((config.n, disc.q), dtype=complex)
    for s in range(config.n):
        m = ImagingOperator(rotations[s], int(ctf_indices[s]), ball, disc).matrix(bank, N)
        matrices.append(m)
        images[s] = symmetrize(m @ phantoms[labels[s]], disc)
        if sigma > 0:
            # noise stream is independent of the parameter stream of the same image
            images[s] += white_noise(disc.q, disc.neg, sigma, _stream(config.seed, _IMAGE_STREAM, s, 1))

    d = Dataset(images, rotations, ctf_indices, bank, sigma**2, n_res, N, labels=labels)
    d.__dict__["matrices"] = matrices  # prime the cache
    return d

