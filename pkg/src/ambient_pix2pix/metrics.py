"""Full-reference and distributional image-quality metrics, plus spectra.

All functions take numpy arrays (or :class:`~ambient_pix2pix.grid.ImageGrid`)
and compute in float64. Image sets are ``(n, H, W)`` stacks.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .rng import make_rng

SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
PSNR_CAP_DB = 100.0


class MetricError(ValueError):
    pass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _check_range(data_range: float) -> float:
    if not data_range > 0:
        raise MetricError(f"data_range must be > 0, got {data_range}")
    return float(data_range)


# -- per-image metrics ----------------------------------------------------------

def ssim_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    from numpy.lib.stride_tricks import sliding_window_view

    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _pair(a, b)
    L = _check_range(data_range)
    if a.ndim != 2 or min(a.shape) < SSIM_WIN:
        raise MetricError(f"ssim needs 2-D images at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape}")
    g = ssim_window()
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    s_a = _filter_valid(a * a, g) - mu_a * mu_a
    s_b = _filter_valid(b * b, g) - mu_b * mu_b
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_a + s_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid 11x11 Gaussian-window positions (sigma 1.5)."""
    return float(ssim_map(a, b, data_range).mean())


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def rmse(a, b) -> float:
    return math.sqrt(mse(a, b))


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak SNR in dB; ``math.inf`` when the images are identical."""
    L = _check_range(data_range)
    m = mse(a, b)
    if m == 0:
        return math.inf
    return 10.0 * math.log10(L * L / m)


# -- feature embeddings for the Fréchet distance -------------------------------

class FeatureEmbedding(Protocol):
    name: str

    def __call__(self, images: np.ndarray) -> np.ndarray: ...


class FlattenEmbedding:
    """Raw vectorized pixels."""

    name = "flatten"

    def __call__(self, images):
        images = np.asarray(images, dtype=np.float64)
        return images.reshape(len(images), -1)


class PixelEmbedding:
    """Block-averaged pixels on a ``size x size`` grid."""

    def __init__(self, size: int = 16):
        self.size = size
        self.name = f"pixels{size}"

    def __call__(self, images):
        images = np.asarray(images, dtype=np.float64)
        n, h, w = images.shape
        s = self.size
        if h % s or w % s:
            from scipy.ndimage import zoom

            return np.stack([zoom(im, (s / h, s / w), order=1) for im in images]).reshape(n, -1)
        return images.reshape(n, s, h // s, s, w // s).mean(axis=(2, 4)).reshape(n, -1)


class RandomProjectionEmbedding:
    """Fixed seeded Gaussian projection of the pixel vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.name = f"randproj{dim}"
        self._cache: dict[int, np.ndarray] = {}

    def matrix(self, n_pixels: int) -> np.ndarray:
        if n_pixels not in self._cache:
            rng = make_rng(self.seed, n_pixels)
            self._cache[n_pixels] = rng.standard_normal((n_pixels, self.dim)) / math.sqrt(n_pixels)
        return self._cache[n_pixels]

    def __call__(self, images):
        flat = FlattenEmbedding()(images)
        return flat @ self.matrix(flat.shape[1])


EMBEDDINGS: dict[str, Callable[[], FeatureEmbedding]] = {
    "pixels16": lambda: PixelEmbedding(16),
    "randproj64": lambda: RandomProjectionEmbedding(64, seed=0),
}


def get_embedding(name: str) -> FeatureEmbedding:
    try:
        return EMBEDDINGS[name]()
    except KeyError:
        raise MetricError(f"unknown embedding {name!r}; choose from {sorted(EMBEDDINGS)}") from None


# -- Fréchet distance -------------------------------------------------------------

def _psd_eigvals(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"eigendecomposition of {what} did not converge") from exc
    tol = 1e-8 * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -tol:
        raise MetricError(f"{what} has a negative eigenvalue {w.min():.3g}")
    return np.clip(w, 0.0, None), v


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """``|mu_a - mu_b|^2 + Tr(Ca + Cb - 2 (Ca Cb)^(1/2))``.

    The trace of the product root is taken from the symmetric matrix
    ``Ca^(1/2) Cb Ca^(1/2)``, which is similar to ``Ca Cb``.
    """
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    w, v = _psd_eigvals((cov_a + cov_a.T) / 2, "covariance")
    root_a = (v * np.sqrt(w)) @ v.T
    m = root_a @ cov_b @ root_a
    ev, _ = _psd_eigvals((m + m.T) / 2, "covariance product")
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2 * np.sum(np.sqrt(ev)))
    return max(d, 0.0)


def frechet_distance(set_a, set_b, embed: FeatureEmbedding | None = None,
                     allow_rank_deficient: bool = False) -> float:
    """Fréchet distance between Gaussians fitted to embedded image sets.

    Each set needs at least ``d + 1`` members so the covariances are full
    rank, unless ``allow_rank_deficient`` is set (then only 2 are required).
    """
    embed = embed or FlattenEmbedding()
    fa, fb = embed(set_a), embed(set_b)
    if fa.ndim == 1:
        fa, fb = fa[:, None], fb[:, None]
    d = fa.shape[1]
    need = 2 if allow_rank_deficient else d + 1
    for name, f in (("set_a", fa), ("set_b", fb)):
        if len(f) < need:
            raise MetricError(f"{name} has {len(f)} images; {need} needed for a {d}-dim embedding")
    cov = lambda f: np.atleast_2d(np.cov(f, rowvar=False, ddof=1))
    return frechet_from_moments(fa.mean(0), cov(fa), fb.mean(0), cov(fb))


# -- spectra ------------------------------------------------------------------------

def singular_value_spectrum(images) -> np.ndarray:
    """Eigenvalues (descending) of the empirical pixel covariance, divisor n-1."""
    x = np.asarray(images, dtype=np.float64)
    if len(x) < 2:
        raise MetricError("singular value spectrum needs at least 2 images")
    x = x.reshape(len(x), -1)
    xc = x - x.mean(axis=0)
    s = np.linalg.svd(xc, compute_uv=False)
    vals = np.zeros(x.shape[1])
    vals[:len(s)] = s ** 2 / (len(x) - 1)
    return np.sort(vals)[::-1]


def power_spectrum_2d(img) -> np.ndarray:
    """``|DFT|^2 / (W H)`` with DC moved to the center."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    return np.fft.fftshift(np.abs(np.fft.fft2(img)) ** 2 / (w * h), axes=(-2, -1))


def radial_power_spectrum(images) -> tuple[np.ndarray, np.ndarray]:
    """Set-averaged power per integer-radius annulus, bins ``0..W//2``."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    n, h, w = x.shape
    if h != w:
        raise MetricError(f"radial power spectrum needs square images, got {h}x{w}")
    power = power_spectrum_2d(x).mean(axis=0)
    f = np.arange(w) - w // 2
    r = np.rint(np.hypot(f[:, None], f[None, :])).astype(int)
    nbins = w // 2 + 1
    mask = r < nbins
    sums = np.bincount(r[mask], weights=power[mask], minlength=nbins)
    counts = np.bincount(r[mask], minlength=nbins)
    return np.arange(nbins, dtype=np.float64), sums / counts


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    frequencies: np.ndarray
    radial_power: np.ndarray
    n_images: int

    @classmethod
    def from_images(cls, images) -> "SpectrumReport":
        f, p = radial_power_spectrum(images)
        return cls(singular_value_spectrum(images), f, p, len(images))

    def write_csv(self, prefix) -> None:
        prefix = str(prefix)
        with open(prefix + "_singular_values.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "value"])
            w.writerows([i, repr(float(v))] for i, v in enumerate(self.singular_values))
        with open(prefix + "_radial_power.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frequency", "power"])
            w.writerows([repr(float(f)), repr(float(p))] for f, p in zip(self.frequencies, self.radial_power))


# -- histograms -----------------------------------------------------------------------

@dataclass
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    n_excluded: int = 0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def metric_pdf(values, n_bins: int = 30) -> Histogram:
    """Density-normalized histogram over ``[min, max]``; non-finite values dropped.

    When all values coincide a single unit-width bin centered on the value
    is returned.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    finite = v[np.isfinite(v)]
    excluded = int(v.size - finite.size)
    if finite.size < 2:
        raise MetricError(f"metric_pdf needs at least 2 finite values, got {finite.size}")
    lo, hi = finite.min(), finite.max()
    if hi == lo:
        return Histogram(np.array([lo - 0.5, lo + 0.5]), np.array([1.0]), excluded)
    counts, edges = np.histogram(finite, bins=n_bins, range=(lo, hi))
    density = counts / (finite.size * np.diff(edges))
    return Histogram(edges, density, excluded)


# -- full report -------------------------------------------------------------------------

@dataclass
class MetricReport:
    ssim: np.ndarray
    psnr_db: np.ndarray
    rmse: np.ndarray
    frechet_distance: float
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ssim_mean": float(np.mean(self.ssim)),
            "psnr_db_mean": float(np.mean(self.psnr_db)),
            "rmse_mean": float(np.mean(self.rmse)),
            "frechet_distance": float(self.frechet_distance),
            **self.metadata,
        }

    def write(self, prefix) -> None:
        prefix = str(prefix)
        Path(prefix + ".json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        with open(prefix + ".csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "ssim", "psnr_db", "rmse"])
            for i, row in enumerate(zip(self.ssim, self.psnr_db, self.rmse)):
                w.writerow([i] + [repr(float(x)) for x in row])


def evaluate(outputs, targets, embedding: str | FeatureEmbedding = "pixels16",
             data_range: float = 1.0) -> MetricReport:
    """Per-image SSIM/PSNR/RMSE and the set-level Fréchet distance.

    Infinite PSNRs (identical images) are stored capped at ``PSNR_CAP_DB``
    and counted in the metadata.
    """
    outputs, targets = _pair(outputs, targets)
    embed = get_embedding(embedding) if isinstance(embedding, str) else embedding
    s = np.array([ssim(a, b, data_range) for a, b in zip(outputs, targets)])
    p = np.array([psnr(a, b, data_range) for a, b in zip(outputs, targets)])
    r = np.array([rmse(a, b) for a, b in zip(outputs, targets)])
    n_inf = int(np.sum(np.isinf(p)))
    p = np.where(np.isinf(p), PSNR_CAP_DB, p)
    dim = embed(outputs[:1]).shape[1]
    fd = frechet_distance(outputs, targets, embed, allow_rank_deficient=len(outputs) <= dim)
    meta = {"n_images": int(len(outputs)), "embedding": embed.name, "data_range": float(data_range),
            "psnr_infinite_count": n_inf, "psnr_cap_db": PSNR_CAP_DB,
            "frechet_rank_deficient": bool(len(outputs) <= dim)}
    return MetricReport(s, p, r, fd, meta)
