import numpy as np
import pytest

from covhet.estimation import Dataset
from covhet.freqbasis import build_disc2, symmetrize
from covhet.imaging import CTFParams
from covhet.synthetic import make_ctf_bank
from scipy.spatial.transform import Rotation


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_hermitian_coeffs(fmap, rng, size=None):
    shape = (fmap.size,) if size is None else (size, fmap.size)
    return symmetrize(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), fmap)


def random_rotations(n, rng):
    return Rotation.random(n, random_state=rng).as_matrix().reshape(n, 3, 3)


def random_dataset(n, n_res, rng, N=None, sigma2=0.3, bank=None, labels=True):
    """Small dataset with random images (not generated from any volume)."""
    disc = build_disc2(n_res)
    bank = make_ctf_bank(3) if bank is None else bank
    return Dataset(
        images=random_hermitian_coeffs(disc, rng, n),
        rotations=random_rotations(n, rng),
        ctf_indices=rng.integers(len(bank), size=n),
        ctf_bank=bank,
        sigma2=sigma2,
        n_res=n_res,
        N=N or 2 * n_res + 1,
        labels=rng.integers(2, size=n) if labels else None,
    )


IDENTITY_BANK = (CTFParams.identity(),)


PAPER_SCALE_ENV = "COVHET_PAPER_SCALE"
ACCEPTANCE_LINES = []


def pytest_collection_modifyitems(config, items):
    import os

    if os.environ.get(PAPER_SCALE_ENV) == "1":
        return
    skip = pytest.mark.skip(reason=f"set {PAPER_SCALE_ENV}=1 to run")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
