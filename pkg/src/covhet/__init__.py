"""Covariance estimation and classification of heterogeneous volumes from noisy projections."""

from .clustering import GMMModel, GMMOptions, Labeling, accuracy_best_permutation, assign_labels, fit_gmm, reconstruct_cluster_means
from .errors import ConfigError, CovhetError, DataError, NumericalError
from .estimation import (
    CGOptions,
    CGReport,
    Dataset,
    apply_covariance_operator,
    apply_mean_operator,
    cg_solve,
    rhs_covariance,
    rhs_mean,
    solve_covariance,
    solve_mean,
)
from .freqbasis import build_ball3, build_disc2, coeffs_to_grid, grid_to_coeffs
from .imaging import CTFParams, ImagingOperator, apply_adjoint, apply_ctf, apply_forward, ctf_value, slice_project, slice_project_adjoint
from .spectral import Spectrum, eig_hermitian, estimate_num_classes, image_coordinates
from .synthetic import AngleDistribution, GeneratorConfig, PhantomSpec, default_phantom_spec, generate_dataset, make_phantoms, sample_rotation, sigma_for_snr

__version__ = "0.1.0"
