import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ambient_pix2pix import metrics
from ambient_pix2pix.rng import make_rng


def naive_ssim(a, b, L=1.0):
    """Double loop over window positions, weighted moments computed directly."""
    t = np.arange(11) - 5.0
    g = np.exp(-t ** 2 / (2 * 1.5 ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    h, wd = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(wd - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - ma) ** 2)
            vb = np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def naive_mse(a, b):
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (float(x) - float(y)) ** 2
    return total / a.size


# -- SSIM / PSNR / RMSE -----------------------------------------------------------

def test_ssim_self_is_one():
    x = make_rng(0).uniform(size=(32, 32))
    assert metrics.ssim(x, x) == 1.0


def test_ssim_constant_images():
    c1 = 0.01 ** 2
    got = metrics.ssim(np.zeros((16, 16)), np.ones((16, 16)), 1.0)
    assert got == pytest.approx(c1 / (1 + c1), rel=1e-12)
    assert got == pytest.approx(9.999e-5, rel=1e-4)


def test_ssim_matches_naive_reference():
    rng = make_rng(1)
    a, b = rng.uniform(size=(2, 32, 32))
    assert abs(metrics.ssim(a, b) - naive_ssim(a, b)) < 1e-8


def test_ssim_errors():
    with pytest.raises(metrics.MetricError):
        metrics.ssim(np.zeros((16, 16)), np.zeros((16, 15)))
    with pytest.raises(metrics.MetricError):
        metrics.ssim(np.zeros((16, 16)), np.zeros((16, 16)), data_range=0)
    with pytest.raises(metrics.MetricError):
        metrics.psnr(np.zeros((4, 4)), np.ones((4, 4)), data_range=-1)


def test_psnr_closed_form_and_identity():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)  # MSE = 0.01
    assert metrics.psnr(a, b, 1.0) == pytest.approx(20.0, abs=1e-12)
    assert math.isinf(metrics.psnr(a, a))


def test_psnr_rmse_against_brute_force():
    rng = make_rng(2)
    a, b = rng.uniform(size=(2, 20, 20))
    m = naive_mse(a, b)
    assert abs(metrics.psnr(a, b) - 10 * math.log10(1 / m)) < 1e-10
    assert abs(metrics.rmse(a, b) - math.sqrt(m)) < 1e-12


def test_rmse_trivial():
    a = make_rng(3).uniform(size=(8, 8))
    assert metrics.rmse(a, a) == 0.0
    assert metrics.rmse(a, a + 0.05) == pytest.approx(0.05, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32), scale=st.floats(0.01, 2.0))
def test_symmetry_and_psnr_rmse_identity(seed, scale):
    rng = make_rng(seed)
    a, b = rng.uniform(size=(2, 16, 16)) * scale
    assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-14)
    assert metrics.rmse(a, b) == metrics.rmse(b, a)
    L = 1.5
    assert metrics.psnr(a, b, L) == pytest.approx(20 * math.log10(L) - 20 * math.log10(metrics.rmse(a, b)),
                                                  abs=1e-12)


# -- Fréchet distance --------------------------------------------------------------

class FirstPixel:
    name = "first-pixel"

    def __call__(self, images):
        return np.asarray(images, dtype=np.float64).reshape(len(images), -1)[:, :1]


def test_frechet_identical_sets():
    x = make_rng(4).uniform(size=(300, 16, 16))
    assert metrics.frechet_distance(x, x, metrics.PixelEmbedding(4)) < 1e-6
    assert metrics.frechet_distance(x, x, metrics.RandomProjectionEmbedding(8)) < 1e-6


def test_frechet_univariate_closed_form():
    rng = make_rng(5)
    a = rng.normal(0.3, 0.5, size=(500, 2, 2))
    b = rng.normal(-0.2, 1.3, size=(700, 2, 2))
    fa, fb = a.reshape(500, -1)[:, 0], b.reshape(700, -1)[:, 0]
    mu1, mu2 = fa.mean(), fb.mean()
    s1, s2 = fa.std(ddof=1), fb.std(ddof=1)
    expected = (mu1 - mu2) ** 2 + (s1 - s2) ** 2
    assert abs(metrics.frechet_distance(a, b, FirstPixel()) - expected) < 1e-9


def test_frechet_diagonal_closed_form():
    rng = make_rng(6)
    d = 6
    mu_a, mu_b = rng.normal(size=d), rng.normal(size=d)
    la, lb = rng.uniform(0.1, 3, d), rng.uniform(0.1, 3, d)
    expected = np.sum((mu_a - mu_b) ** 2) + np.sum((np.sqrt(la) - np.sqrt(lb)) ** 2)
    got = metrics.frechet_from_moments(mu_a, np.diag(la), mu_b, np.diag(lb))
    assert abs(got - expected) < 1e-8


def test_frechet_symmetric():
    rng = make_rng(7)
    a = rng.uniform(size=(200, 8, 8))
    b = rng.uniform(size=(220, 8, 8)) ** 2
    emb = metrics.PixelEmbedding(4)
    assert metrics.frechet_distance(a, b, emb) == pytest.approx(metrics.frechet_distance(b, a, emb), abs=1e-8)


def test_frechet_undersized_sets():
    x = make_rng(8).uniform(size=(10, 16, 16))
    with pytest.raises(metrics.MetricError):
        metrics.frechet_distance(x, x, metrics.PixelEmbedding(4))  # d = 16 > n - 1
    assert metrics.frechet_distance(x, x, metrics.PixelEmbedding(4), allow_rank_deficient=True) < 1e-6
    with pytest.raises(metrics.MetricError):
        metrics.frechet_distance(x[:1], x[:1], metrics.PixelEmbedding(4), allow_rank_deficient=True)


def test_frechet_rejects_indefinite_covariance():
    with pytest.raises(metrics.MetricError):
        metrics.frechet_from_moments(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))


def test_embeddings():
    x = make_rng(9).uniform(size=(3, 64, 64))
    e = metrics.get_embedding("pixels16")
    f = e(x)
    assert f.shape == (3, 256)
    assert f[0, 0] == pytest.approx(x[0, :4, :4].mean())
    r = metrics.get_embedding("randproj64")
    assert r(x).shape == (3, 64)
    assert np.array_equal(r(x), metrics.get_embedding("randproj64")(x))
    with pytest.raises(metrics.MetricError):
        metrics.get_embedding("inception")


# -- spectra -------------------------------------------------------------------------

def test_svs_copies_are_zero():
    x = np.repeat(make_rng(10).uniform(size=(1, 6, 6)), 5, axis=0)
    assert np.all(metrics.singular_value_spectrum(x) < 1e-24)  # mean of equal floats may round


def test_svs_rank_one():
    rng = make_rng(11)
    m = rng.uniform(size=36)
    u = rng.normal(size=36)
    alpha = rng.normal(size=40)
    x = (m + alpha[:, None] * u).reshape(40, 6, 6)
    sv = metrics.singular_value_spectrum(x)
    expected = np.var(alpha, ddof=1) * np.dot(u, u)
    assert sv[0] == pytest.approx(expected, rel=1e-10)
    assert np.all(np.abs(sv[1:]) < 1e-10 * expected)
    assert np.all(np.diff(sv) <= 0)


def test_svs_needs_two_images():
    with pytest.raises(metrics.MetricError):
        metrics.singular_value_spectrum(np.zeros((1, 4, 4)))


def test_power_spectrum_constant_is_dc_only():
    c = 0.7
    f, p = metrics.radial_power_spectrum(np.full((16, 16), c))
    assert len(f) == 9
    assert p[0] == pytest.approx(c ** 2 * 16 * 16)
    assert np.allclose(p[1:], 0, atol=1e-20)


@pytest.mark.parametrize("k", [1, 3, 7, 12])
def test_power_spectrum_cosine_peak(k):
    n = 32
    j = np.arange(n)
    img = np.tile(np.cos(2 * np.pi * k * j / n), (n, 1))
    f, p = metrics.radial_power_spectrum(img)
    assert int(np.argmax(p)) == k
    # all power sits at (0, +-k): n^2/4 each, spread over the ring's pixel count
    ring = np.rint(np.hypot(*np.meshgrid(np.arange(n) - n // 2, np.arange(n) - n // 2)))
    assert p[k] == pytest.approx(2 * (n * n / 4) / np.sum(ring == k), rel=1e-10)


def test_power_spectrum_errors():
    with pytest.raises(metrics.MetricError):
        metrics.radial_power_spectrum(np.zeros((8, 16)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32), n=st.sampled_from([8, 15, 32]))
def test_parseval(seed, n):
    x = make_rng(seed).normal(size=(n, n))
    assert metrics.power_spectrum_2d(x).sum() == pytest.approx(np.sum(x ** 2), rel=1e-6)


def test_power_spectrum_bins_contiguous():
    f, p = metrics.radial_power_spectrum(make_rng(12).normal(size=(5, 20, 20)))
    assert np.array_equal(f, np.arange(11))
    assert np.all(np.isfinite(p))


# -- histograms ----------------------------------------------------------------------

def test_pdf_single_value():
    h = metrics.metric_pdf([0.3] * 5)
    assert len(h.density) == 1
    assert h.density[0] == pytest.approx(1 / h.widths[0])


def test_pdf_uniform():
    v = make_rng(13).uniform(2.0, 4.0, 200_000)
    h = metrics.metric_pdf(v, 20)
    assert np.allclose(h.density, 1 / (v.max() - v.min()), rtol=0.05)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200), st.integers(1, 50))
def test_pdf_normalized(values, bins):
    h = metrics.metric_pdf(values, bins)
    assert np.sum(h.density * h.widths) == pytest.approx(1.0, abs=1e-12)


def test_pdf_excludes_infinite():
    h = metrics.metric_pdf([1.0, 2.0, math.inf, 3.0])
    assert h.n_excluded == 1
    with pytest.raises(metrics.MetricError):
        metrics.metric_pdf([])
    with pytest.raises(metrics.MetricError):
        metrics.metric_pdf([math.inf, 1.0])


def test_evaluate_report(tmp_path):
    rng = make_rng(14)
    y = rng.uniform(size=(20, 32, 32))
    rep = metrics.evaluate(y, y, "pixels16")
    assert np.all(rep.ssim == 1.0)
    assert np.all(rep.rmse == 0.0)
    assert rep.frechet_distance < 1e-6
    assert rep.metadata["psnr_infinite_count"] == 20
    assert np.all(np.isfinite(rep.psnr_db))
    rep.write(tmp_path / "m")
    assert (tmp_path / "m.csv").read_text().count("\n") == 21


def test_white_noise_svs_within_marchenko_pastur_edges():
    n, d, sigma = 10_000, 64, 0.1
    sv = metrics.singular_value_spectrum(make_rng(15).normal(0, sigma, (n, 8, 8))) / sigma ** 2
    q = math.sqrt(d / n)
    # finite-size fluctuations at the edges are O(n^-2/3); 3% slack covers them
    assert sv.max() < (1 + q) ** 2 * 1.03
    assert sv.min() > (1 - q) ** 2 * 0.97
    assert sv.mean() == pytest.approx(1.0, abs=0.01)


def test_white_noise_radial_spectrum_flat():
    sigma = 0.1
    _, p = metrics.radial_power_spectrum(make_rng(16).normal(0, sigma, (1000, 32, 32)))
    assert np.all(np.abs(p / sigma ** 2 - 1) < 0.10)
