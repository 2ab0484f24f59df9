"""Hotelling-observer SNR for signal-known-exactly / background-known-statistically tasks.

Under the signal-absent hypothesis the data are ``g = b + n``; under the
signal-present one ``g = b + s + n``, with ``b`` a center-cropped background
image, ``s`` a centered Gaussian blob and ``n`` white Gaussian noise.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .grid import ImageGrid

CROP = 30
SOURCES = ("ground_truth", "pix2pix", "ambient")


class ObserverError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionTask:
    task_id: int
    signal_std: float
    signal_magnitude: float
    noise_mean: float = 0.0
    noise_std: float = 1.0
    crop: int = CROP

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ObserverError(f"task {self.task_id}: noise_std must be > 0")
        if not self.signal_std > 0:
            raise ObserverError(f"task {self.task_id}: signal_std must be > 0")
        if self.crop < 1:
            raise ObserverError(f"task {self.task_id}: crop must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionTask":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ObserverError(f"unknown task keys: {sorted(extra)}")
        return cls(**d)


# signal std, magnitude, noise std of the five reference tasks
DEFAULT_TASKS = tuple(
    DetectionTask(i + 1, s, m, 0.0, n)
    for i, (s, m, n) in enumerate([(0.6, 1.5, 1.0), (0.5, 1.0, 0.7), (0.7, 0.4, 0.5),
                                   (0.5, 1.0, 1.0), (0.6, 0.9, 1.0)]))


def load_tasks(path) -> list[DetectionTask]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list) or not data:
        raise ObserverError(f"{path}: task file must hold a non-empty JSON array")
    return [DetectionTask.from_dict(d) for d in data]


def dump_tasks(tasks, path) -> None:
    Path(path).write_text(json.dumps([asdict(t) for t in tasks], indent=2) + "\n")


def make_signal(task: DetectionTask) -> ImageGrid:
    """Gaussian blob centered at the continuous middle of the crop grid."""
    c = (task.crop - 1) / 2.0
    i = np.arange(task.crop, dtype=np.float64)
    r2 = (i[:, None] - c) ** 2 + (i[None, :] - c) ** 2
    s = task.signal_magnitude * np.exp(-r2 / (2.0 * task.signal_std ** 2))
    return ImageGrid(s, (0.0, max(float(s.max()), 0.0)))


def center_crop(images, size: int = CROP) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    h, w = x.shape[-2:]
    if size > h or size > w:
        raise ObserverError(f"crop {size} larger than image {h}x{w}")
    r0, c0 = (h - size) // 2, (w - size) // 2
    return x[..., r0:r0 + size, c0:c0 + size]


@dataclass
class HypothesisEnsemble:
    """Cropped backgrounds plus realized data under both hypotheses.

    ``g0``/``g1`` have shape ``(n_backgrounds * n_noise_reps, crop, crop)``.
    """

    backgrounds: np.ndarray
    signal: np.ndarray
    task: DetectionTask
    g0: np.ndarray
    g1: np.ndarray
    paired: bool = True


def build_ensembles(images, task: DetectionTask, n_noise_reps: int, rng: np.random.Generator,
                    paired: bool = True) -> HypothesisEnsemble:
    """Crop backgrounds and draw noisy realizations under H0 and H1.

    In paired mode both hypotheses share each noise draw, so ``g1 - g0 == s``.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 3 or len(x) < 2:
        raise ObserverError("build_ensembles needs a stack of at least 2 images")
    if n_noise_reps < 1:
        raise ObserverError("n_noise_reps must be >= 1")
    b = center_crop(x, task.crop)
    s = make_signal(task).data
    base = np.repeat(b, n_noise_reps, axis=0)
    n0 = rng.normal(task.noise_mean, task.noise_std, size=base.shape)
    n1 = n0 if paired else rng.normal(task.noise_mean, task.noise_std, size=base.shape)
    return HypothesisEnsemble(b, s, task, base + n0, base + s + n1, paired)


def background_covariance(backgrounds) -> np.ndarray:
    b = np.asarray(backgrounds, dtype=np.float64)
    return np.atleast_2d(np.cov(b.reshape(len(b), -1), rowvar=False, ddof=1))


def hotelling_snr_from_covariance(signal, k_b, noise_std: float) -> float:
    """``sqrt(s^T (K_b + noise_std^2 I)^-1 s)`` via a Cholesky solve."""
    s = np.asarray(signal, dtype=np.float64).ravel()
    k = np.array(k_b, dtype=np.float64, copy=True)
    k[np.diag_indices_from(k)] += noise_std ** 2
    try:
        factor = cho_factor(k, lower=True)
    except LinAlgError as exc:
        raise ObserverError("data covariance is not positive definite") from exc
    w = cho_solve(factor, s)
    return math.sqrt(max(float(s @ w), 0.0))


def hotelling_snr(ensemble: HypothesisEnsemble, empirical: bool = False) -> float:
    """Hotelling SNR of an ensemble.

    By default the mean difference is the known signal and the data
    covariance is the background covariance (noise-free crops) plus
    ``noise_std**2 * I``. ``empirical=True`` instead estimates both from the
    realized ``g0``/``g1`` (validation only; needs many realizations).
    """
    if len(ensemble.backgrounds) < 2:
        raise ObserverError("need at least 2 backgrounds")
    if not empirical:
        return hotelling_snr_from_covariance(ensemble.signal, background_covariance(ensemble.backgrounds),
                                             ensemble.task.noise_std)
    g0 = ensemble.g0.reshape(len(ensemble.g0), -1)
    g1 = ensemble.g1.reshape(len(ensemble.g1), -1)
    dg = g1.mean(0) - g0.mean(0)
    k = 0.5 * (np.cov(g0, rowvar=False) + np.cov(g1, rowvar=False))
    try:
        w = cho_solve(cho_factor(k, lower=True), dg)
    except LinAlgError as exc:
        raise ObserverError("empirical data covariance is singular; add realizations") from exc
    return math.sqrt(max(float(dg @ w), 0.0))


@dataclass(frozen=True)
class SNRResult:
    task_id: int
    source: str
    snr_ho: float


def run_task_suite(real_images, pix2pix_images, ambient_images,
                   tasks=DEFAULT_TASKS) -> list[SNRResult]:
    """SNR for every task on the three background sources."""
    sets = dict(zip(SOURCES, (real_images, pix2pix_images, ambient_images)))
    shapes = {np.shape(v) for v in sets.values()}
    if len(shapes) != 1:
        raise ObserverError(f"background sets differ in shape: {shapes}")
    results = []
    cov_cache: dict[tuple[str, int], np.ndarray] = {}
    for task in tasks:
        s = make_signal(task).data
        for name, imgs in sets.items():
            key = (name, task.crop)
            if key not in cov_cache:
                cov_cache[key] = background_covariance(center_crop(imgs, task.crop))
            results.append(SNRResult(task.task_id, name, hotelling_snr_from_covariance(
                s, cov_cache[key], task.noise_std)))
    return results


def write_results_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "source", "snr_ho"])
        for r in results:
            w.writerow([r.task_id, r.source, repr(float(r.snr_ho))])


def read_results_csv(path) -> list[SNRResult]:
    with open(path, newline="") as fh:
        return [SNRResult(int(r["task_id"]), r["source"], float(r["snr_ho"])) for r in csv.DictReader(fh)]


def results_table(results) -> dict[int, dict[str, float]]:
    table: dict[int, dict[str, float]] = {}
    for r in results:
        table.setdefault(r.task_id, {})[r.source] = r.snr_ho
    return table


def plot_results(results, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    table = results_table(results)
    ids = sorted(table)
    sources = [s for s in SOURCES if any(s in table[i] for i in ids)]
    width = 0.8 / max(len(sources), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, src in enumerate(sources):
        ax.bar(np.arange(len(ids)) + (k - (len(sources) - 1) / 2) * width,
               [table[i].get(src, np.nan) for i in ids], width, label=src)
    ax.set_xticks(np.arange(len(ids)), [f"Task {i}" for i in ids])
    ax.set_ylabel("SNR_HO")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
