"""Run configuration read from JSON.

Every section is optional; missing keys take the defaults below and unknown
keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .clustering import GMMOptions
from .errors import ConfigError
from .estimation import CGOptions
from .imaging import CTFParams
from .synthetic import AngleDistribution, GeneratorConfig, default_phantom_spec, make_ctf_bank


@dataclass
class PhantomSection:
    C: int = 2
    N: int = 33
    n_res: int = 9


@dataclass
class GeneratorSection:
    n: int = 2000
    probs: Optional[list] = None  # uniform over C when absent
    snr_het: Optional[float] = 0.02
    sigma: Optional[float] = None
    seed: int = 7
    calibration_draws: int = 200


@dataclass
class CTFSection:
    enabled: bool = True
    count: int = 7
    defocus_min: float = 1.0
    defocus_max: float = 2.5
    wavelength: float = 0.0197
    cs: float = 2.0
    alpha: float = 0.07
    pixel_size: float = 2.0


@dataclass
class AnglesSection:
    kind: str = "uniform"
    axis: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    kappa: float = 0.0


@dataclass
class CGSection:
    mean_max_iters: int = 200
    mean_rel_tol: float = 1e-8
    cov_max_iters: int = 10
    cov_rel_tol: float = 0.0


@dataclass
class SpectralSection:
    tau: float = 2.0
    m_scan: Optional[int] = None
    n_eigvecs: int = 10


@dataclass
class GMMSection:
    K: Optional[int] = None  # taken from the estimate when absent
    seed: int = 0
    restarts: int = 5
    floor: float = 1e-6
    tol: float = 1e-8
    max_iters: int = 500


@dataclass
class OutputSection:
    figures: bool = True


@dataclass
class PathsSection:
    dataset: Optional[str] = None
    out: Optional[str] = None


_SECTIONS = {
    "phantom": PhantomSection,
    "generator": GeneratorSection,
    "ctf": CTFSection,
    "angles": AnglesSection,
    "cg": CGSection,
    "spectral": SpectralSection,
    "gmm": GMMSection,
    "output": OutputSection,
    "paths": PathsSection,
}


@dataclass
class RunConfig:
    phantom: PhantomSection = field(default_factory=PhantomSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    ctf: CTFSection = field(default_factory=CTFSection)
    angles: AnglesSection = field(default_factory=AnglesSection)
    cg: CGSection = field(default_factory=CGSection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    gmm: GMMSection = field(default_factory=GMMSection)
    output: OutputSection = field(default_factory=OutputSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            values = data.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"section '{name}' must be an object")
            allowed = {f.name for f in fields(section_cls)}
            bad = sorted(set(values) - allowed)
            if bad:
                raise ConfigError(f"unknown configuration keys: {', '.join(f'{name}.{k}' for k in bad)}")
            sections[name] = section_cls(**values)
        cfg = cls(**sections)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        ph = self.phantom
        if not isinstance(ph.n_res, int) or ph.n_res < 3 or ph.n_res % 2 == 0:
            raise ConfigError(f"phantom.n_res must be an odd integer >= 3, got {ph.n_res!r}")
        if not isinstance(ph.N, int) or ph.N % 2 == 0 or ph.N < ph.n_res:
            raise ConfigError(
                f"phantom.N={ph.N!r} must be odd and >= phantom.n_res={ph.n_res} (grid size vs resolution)"
            )
        if self.generator.probs is not None and len(self.generator.probs) != ph.C:
            raise ConfigError(f"generator.probs has {len(self.generator.probs)} entries but phantom.C={ph.C}")
        # building the derived objects runs their own checks
        self.phantom_spec()
        self.generator_config()
        self.angle_distribution()
        self.cg_options()
        self.gmm_options()

    def phantom_spec(self):
        return default_phantom_spec(self.phantom.C, self.phantom.N, self.phantom.n_res)

    def ctf_bank(self) -> tuple[CTFParams, ...]:
        c = self.ctf
        if not c.enabled:
            return (CTFParams.identity(),)
        return make_ctf_bank(c.count, (c.defocus_min, c.defocus_max), c.wavelength, c.cs, c.alpha, c.pixel_size)

    def generator_config(self) -> GeneratorConfig:
        g = self.generator
        probs = tuple(g.probs) if g.probs is not None else (1.0 / self.phantom.C,) * self.phantom.C
        snr = g.snr_het
        if self.phantom.C == 1 and g.sigma is None:
            snr = None  # heterogeneity SNR is undefined for one class
        return GeneratorConfig(g.n, probs, self.ctf_bank(), snr, g.seed, g.sigma, g.calibration_draws)

    def angle_distribution(self) -> AngleDistribution:
        a = self.angles
        return AngleDistribution(a.kind, tuple(float(x) for x in a.axis), float(a.kappa))

    def cg_options(self) -> tuple[CGOptions, CGOptions]:
        c = self.cg
        try:
            return CGOptions(c.mean_max_iters, c.mean_rel_tol), CGOptions(c.cov_max_iters, c.cov_rel_tol)
        except ValueError as exc:
            raise ConfigError(f"cg: {exc}") from exc

    def gmm_options(self) -> GMMOptions:
        g = self.gmm
        return GMMOptions(g.restarts, g.floor, g.tol, g.max_iters)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return RunConfig.from_dict(data)
