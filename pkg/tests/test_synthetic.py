import numpy as np
import pytest

from covhet.errors import ConfigError
from covhet.freqbasis import build_ball3, build_disc2, is_hermitian_symmetric
from covhet.imaging import ImagingOperator
from covhet.io import dataset_to_bytes
from covhet.synthetic import (
    AngleDistribution,
    Blob,
    GeneratorConfig,
    PhantomSpec,
    calibrate_sigma,
    default_phantom_spec,
    draw_image_parameters,
    generate_dataset,
    make_ctf_bank,
    make_phantoms,
    sample_rotation,
    sample_vmf_axis,
    sigma_for_snr,
    white_noise,
)

from .conftest import IDENTITY_BANK


class TestPhantoms:
    def test_centered_blob_is_real(self):
        (x,) = make_phantoms(PhantomSpec(((Blob((0.0, 0.0, 0.0), 0.2, 1.0),),), 17, 9))
        assert np.max(np.abs(x.imag)) < 1e-12

    def test_dc_is_gaussian_integral(self):
        N, w, a = 33, 0.2, 1.7  # width 3.3 pixels
        ball = build_ball3(9)
        (x,) = make_phantoms(PhantomSpec(((Blob((0.0, 0.1, -0.1), w, a),),), N, 9))
        expected = a * (2 * np.pi) ** 1.5 * (w * N / 2) ** 3 / N**1.5
        assert x[ball.position((0, 0, 0))].real == pytest.approx(expected, rel=0.01)

    def test_hermitian_and_deterministic(self):
        spec = default_phantom_spec(3, 17, 7)
        a, b = make_phantoms(spec), make_phantoms(spec)
        ball = build_ball3(7)
        for x, y in zip(a, b):
            assert is_hermitian_symmetric(x, ball)
            assert x.tobytes() == y.tobytes()

    def test_classes_differ_only_by_marker(self):
        spec = default_phantom_spec(2, 33, 9)
        x0, x1 = make_phantoms(spec)
        assert np.linalg.norm(x0 - x1) > 0.1 * np.linalg.norm(x0)
        # the shifted marker keeps its mass inside the box
        dc = build_ball3(9).position((0, 0, 0))
        assert abs(x0[dc] - x1[dc]) < 1e-4 * abs(x0[dc])

    @pytest.mark.parametrize("kw", [dict(N=16, n_res=9), dict(N=7, n_res=9)])
    def test_bad_grid(self, kw):
        with pytest.raises(ConfigError):
            default_phantom_spec(2, **kw)

    def test_bad_blob(self):
        with pytest.raises(ConfigError):
            Blob((0.0, 0.0, 0.0), 0.0, 1.0)


class TestAngles:
    def test_haar_mean_vanishes(self):
        rng = np.random.default_rng(1)
        mats = np.array([sample_rotation(AngleDistribution(), rng) for _ in range(20000)])
        assert np.max(np.abs(mats.mean(axis=0))) < 0.02
        assert np.allclose(np.einsum("nij,nkj->nik", mats, mats), np.eye(3), atol=1e-12)

    def test_pinned_axis(self):
        rng = np.random.default_rng(2)
        axis = (0.0, 0.6, 0.8)
        for _ in range(20):
            r = sample_rotation(AngleDistribution("capped", axis, np.inf), rng)
            assert np.allclose(r[2], axis, atol=1e-12)
            assert np.isclose(np.linalg.det(r), 1.0)

    @pytest.mark.parametrize("kappa", [0.5, 5.0, 40.0])
    def test_vmf_mean_cosine(self, kappa):
        rng = np.random.default_rng(3)
        mu = np.array([1.0, 0.0, 0.0])
        v = np.array([sample_vmf_axis(mu, kappa, rng) for _ in range(20000)])
        assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
        expected = 1 / np.tanh(kappa) - 1 / kappa
        assert abs((v @ mu).mean() - expected) < 0.015

    def test_kappa_zero_is_uniform(self):
        rng = np.random.default_rng(4)
        v = np.array([sample_vmf_axis((0.0, 0.0, 1.0), 0.0, rng) for _ in range(20000)])
        assert np.max(np.abs(v.mean(axis=0))) < 0.02


class TestNoise:
    def test_white_and_real(self):
        disc = build_disc2(9)
        rng = np.random.default_rng(5)
        sigma = 0.7
        e = np.array([white_noise(disc.q, disc.neg, sigma, rng) for _ in range(5000)])
        assert all(is_hermitian_symmetric(x, disc) for x in e[:50])
        cov = e.T @ e.conj() / len(e)
        assert np.max(np.abs(np.diag(cov).real / sigma**2 - 1)) < 0.1
        assert abs(np.mean(np.diag(cov).real) / sigma**2 - 1) < 0.05
        off = cov - np.diag(np.diag(cov))
        assert np.max(np.abs(off)) < 0.1 * sigma**2

    def test_dataset_noise_level(self):
        n_res, N = 7, 15
        zero = [np.zeros(build_ball3(n_res).p, dtype=complex)]
        cfg = GeneratorConfig(n=5000, probs=(1.0,), ctf_bank=IDENTITY_BANK, snr_het=None, sigma=0.5, seed=1)
        d = generate_dataset(zero, cfg, AngleDistribution(), n_res, N)
        assert d.sigma2 == 0.25
        assert abs(np.mean(np.abs(d.images) ** 2) / 0.25 - 1) < 0.05


class TestSigma:
    def setup_method(self):
        self.n_res, self.N = 7, 15
        self.ph = make_phantoms(default_phantom_spec(2, self.N, self.n_res))
        self.cfg = GeneratorConfig(n=10, ctf_bank=make_ctf_bank(3), snr_het=0.05, seed=2)

    def test_scales_with_signal(self):
        dist = AngleDistribution()
        s1 = calibrate_sigma(self.ph, self.cfg, dist, self.n_res, self.N)
        s2 = calibrate_sigma([3 * x for x in self.ph], self.cfg, dist, self.n_res, self.N)
        assert s2 == pytest.approx(3 * s1, rel=1e-12)

    def test_no_heterogeneity(self):
        with pytest.raises(ConfigError):
            sigma_for_snr([self.ph[0], self.ph[0]], (0.5, 0.5), [np.eye(3)], 0.1, 9)

    def test_closed_form(self):
        # with a single operator the definition can be evaluated by hand
        m = np.eye(2)
        vols = [np.array([1.0, 0.0]), np.array([-1.0, 0.0])]
        # mean 0, each deviation has power 1, so snr = 1 / (4 sigma^2)
        assert sigma_for_snr(vols, (0.5, 0.5), [m], 1.0, 4) == pytest.approx(0.5)

    def test_monte_carlo_agreement(self):
        dist = AngleDistribution()
        ball, disc = build_ball3(self.n_res), build_disc2(self.n_res)
        rng = np.random.default_rng(6)
        bank = self.cfg.ctf_bank
        mats = [
            ImagingOperator(sample_rotation(dist, rng), int(rng.integers(len(bank))), ball, disc).matrix(bank, self.N)
            for _ in range(5000)
        ]
        ref = sigma_for_snr(self.ph, self.cfg.probs, mats, self.cfg.snr_het, self.N**2)
        assert calibrate_sigma(self.ph, self.cfg, dist, self.n_res, self.N) == pytest.approx(ref, rel=0.05)


class TestGenerate:
    def test_central_slice(self):
        n_res, N = 9, 17
        ball, disc = build_ball3(n_res), build_disc2(n_res)
        spec = PhantomSpec(((Blob((0.1, -0.2, 0.05), 0.2, 1.0), Blob((-0.3, 0.1, 0.2), 0.15, 0.5)),), N, n_res)
        from covhet.synthetic import blob_grid

        grid = blob_grid(spec.classes[0], N)
        (x,) = make_phantoms(spec)
        img = ImagingOperator(np.eye(3), 0, ball, disc).matrix(IDENTITY_BANK, N) @ x
        # projection along the third axis, transformed in 2D
        proj = np.fft.fftn(np.fft.ifftshift(grid.sum(axis=2)), norm="ortho") / np.sqrt(N)
        expected = np.array([proj[i % N, j % N] for i, j in disc.indices])
        assert np.allclose(img, expected, atol=1e-10)

    def test_images_are_clean_projections(self):
        n_res, N = 7, 15
        ph = make_phantoms(default_phantom_spec(2, N, n_res))
        cfg = GeneratorConfig(n=30, ctf_bank=make_ctf_bank(3), snr_het=None, seed=3)
        d = generate_dataset(ph, cfg, AngleDistribution(), n_res, N)
        assert d.sigma2 == 0.0
        for s in range(d.n):
            m = d.operator(s).matrix(d.ctf_bank, N)
            assert np.allclose(d.images[s], m @ ph[d.labels[s]], atol=1e-12)
            assert is_hermitian_symmetric(d.images[s], d.disc)

    def test_label_frequencies(self):
        cfg = GeneratorConfig(n=100000, probs=(0.3, 0.7), seed=4)
        labels, _, ctf = draw_image_parameters(cfg, AngleDistribution())
        assert abs(np.mean(labels == 0) - 0.3) < 0.01
        assert np.all(np.abs(np.bincount(ctf) / len(ctf) - 1 / 7) < 0.01)

    def test_prefix_stable(self):
        cfg = GeneratorConfig(n=50, seed=5)
        a = draw_image_parameters(cfg, AngleDistribution())
        b = draw_image_parameters(cfg, AngleDistribution(), n=20)
        for x, y in zip(a, b):
            assert np.array_equal(x[:20], y)

    def test_byte_identical(self):
        n_res, N = 5, 11
        ph = make_phantoms(default_phantom_spec(2, N, n_res))
        cfg = GeneratorConfig(n=40, seed=11, snr_het=0.1)
        a = generate_dataset(ph, cfg, AngleDistribution(), n_res, N)
        b = generate_dataset(ph, cfg, AngleDistribution(), n_res, N)
        assert dataset_to_bytes(a) == dataset_to_bytes(b)
        c = generate_dataset(ph, GeneratorConfig(n=40, seed=12, snr_het=0.1), AngleDistribution(), n_res, N)
        assert dataset_to_bytes(a) != dataset_to_bytes(c)

    def test_probs_mismatch(self):
        ph = make_phantoms(default_phantom_spec(2, 11, 5))
        with pytest.raises(ConfigError):
            generate_dataset(ph, GeneratorConfig(n=5, probs=(1.0,)), AngleDistribution(), 5, 11)

    @pytest.mark.parametrize("kw", [dict(probs=(0.4, 0.4)), dict(n=0), dict(snr_het=-1.0), dict(sigma=-1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            GeneratorConfig(**kw)
