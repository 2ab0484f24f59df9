"""Synthetic paired two-modality phantoms.

A lumpy background (Poisson number of Gaussian lumps) plays the source
modality. The target modality is a fixed nonlinear, blurred rendition of the
same object, so source-to-target translation is well posed and the clean
truth is always known.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import degradation as deg
from .grid import ImageGrid, read_grid, write_grid, export_png
from .rng import BACKGROUND, SOURCE_NOISE, TARGET_NOISE, make_rng

MANIFEST_VERSION = 1
KINDS = ("source_clean", "target_clean", "source_meas", "target_meas")
TRAIN_FRACTION = 0.8


class PhantomConfigError(ValueError):
    pass


class DatasetWriteError(OSError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    image_size: int = 64
    lump_rate: float = 80.0
    lump_width: float = 4.0
    lump_magnitude: float = 1.0
    modality_blur_sigma: float = 1.5
    modality_gamma: float = 2.0
    seed: int = 0

    def validate(self) -> "PhantomConfig":
        if int(self.image_size) != self.image_size or self.image_size < 32:
            raise PhantomConfigError(f"image_size must be an integer >= 32, got {self.image_size}")
        if not self.lump_rate > 0:
            raise PhantomConfigError("lump_rate must be > 0")
        if not self.lump_width > 0:
            raise PhantomConfigError("lump_width must be > 0")
        if not self.modality_blur_sigma >= 0:
            raise PhantomConfigError("modality_blur_sigma must be >= 0")
        if not self.modality_gamma > 0:
            raise PhantomConfigError("modality_gamma must be > 0")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise PhantomConfigError(f"unknown phantom keys: {sorted(extra)}")
        return cls(**d).validate()


def lumpy_background_raw(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """Sum of Gaussian lumps before any rescaling, shape ``(L, L)``.

    Lump centers are uniform over the grid and distances wrap around the
    edges, so every lump contributes its full mass to the image.
    """
    cfg.validate()
    size = int(cfg.image_size)
    n = rng.poisson(cfg.lump_rate)
    centers = rng.uniform(0.0, size, size=(n, 2))
    if n == 0:
        return np.zeros((size, size))
    coords = np.arange(size, dtype=np.float64)
    # periodic (minimum-image) distance along each axis
    dx = np.abs(coords[None, :] - centers[:, 0:1])
    dy = np.abs(coords[None, :] - centers[:, 1:2])
    dx = np.minimum(dx, size - dx)
    dy = np.minimum(dy, size - dy)
    inv = 1.0 / (2.0 * cfg.lump_width ** 2)
    gx = np.exp(-dx ** 2 * inv)
    gy = np.exp(-dy ** 2 * inv)
    return cfg.lump_magnitude * (gy.T @ gx)


def rescale(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(raw)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def generate_lumpy_background(cfg: PhantomConfig, rng: np.random.Generator) -> ImageGrid:
    """Lumpy background affinely rescaled by its own min/max onto [0, 1].

    A constant raw image (including the empty N=0 draw) maps to all zeros.
    """
    raw = lumpy_background_raw(cfg, rng)
    return ImageGrid(rescale(raw, float(raw.min()), float(raw.max())), (0.0, 1.0))


def render_modalities(b: ImageGrid | np.ndarray, cfg: PhantomConfig) -> tuple[ImageGrid, ImageGrid]:
    """Return ``(source_clean, target_clean)`` for a background in [0, 1].

    The target is ``blur(b ** gamma)``; both steps map [0, 1] into itself,
    the final clip only guards rounding.
    """
    arr = np.asarray(b, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 1:
        raise PhantomConfigError("render_modalities expects a background in [0, 1]")
    target = deg.blur_array(arr ** cfg.modality_gamma, cfg.modality_blur_sigma)
    return ImageGrid(arr.copy(), (0.0, 1.0)), ImageGrid(np.clip(target, 0.0, 1.0), (0.0, 1.0))


@dataclass
class PairedSample:
    source_clean: ImageGrid
    target_clean: ImageGrid
    source_meas: ImageGrid
    target_meas: ImageGrid
    sample_id: int

    def __post_init__(self):
        shapes = {g.shape for g in (self.source_clean, self.target_clean,
                                    self.source_meas, self.target_meas)}
        if len(shapes) != 1:
            raise ValueError(f"grids of sample {self.sample_id} differ in shape: {shapes}")


def make_sample(cfg: PhantomConfig, sample_id: int, deg_source: deg.DegradationOp, deg_target: deg.DegradationOp) -> PairedSample:
    """Regenerate one sample from its id alone (seed = dataset seed + id)."""
    seed = cfg.seed + sample_id
    b = generate_lumpy_background(cfg, make_rng(seed, BACKGROUND))
    # grids are stored as float32; render and degrade from the stored values
    # so that the files are self-consistent
    src, tgt = render_modalities(b.data.astype(np.float32), cfg)
    src = ImageGrid(src.data.astype(np.float32), src.value_range)
    tgt = ImageGrid(tgt.data.astype(np.float32), tgt.value_range)
    src_m = deg.apply(deg_source, src, make_rng(seed, SOURCE_NOISE))
    tgt_m = deg.apply(deg_target, tgt, make_rng(seed, TARGET_NOISE))
    return PairedSample(src, tgt, src_m, tgt_m, sample_id)


def split_indices(n: int) -> tuple[list[int], list[int]]:
    n_train = int(math.floor(TRAIN_FRACTION * n + 1e-9))
    return list(range(n_train)), list(range(n_train, n))


def grid_filename(sample_id: int, kind: str) -> str:
    return f"{sample_id:06d}_{kind}.igrd"


@dataclass
class DatasetManifest:
    phantom: PhantomConfig
    deg_source: deg.DegradationOp
    deg_target: deg.DegradationOp
    n: int
    train: list[int]
    test: list[int]

    @property
    def seed(self) -> int:
        return self.phantom.seed

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "seed": self.phantom.seed,
            "phantom": asdict(self.phantom),
            "degradation": {"source": deg.to_tree(self.deg_source),
                            "target": deg.to_tree(self.deg_target)},
            "n": self.n,
            "split": {"train": self.train, "test": self.test},
            "format": {"grid": "IGRD", "file": "{id:06d}_{kind}.igrd", "kinds": list(KINDS)},
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('version')!r}")
        return cls(
            phantom=PhantomConfig.from_dict(d["phantom"]),
            deg_source=deg.from_tree(d["degradation"]["source"]),
            deg_target=deg.from_tree(d["degradation"]["target"]),
            n=int(d["n"]),
            train=[int(i) for i in d["split"]["train"]],
            test=[int(i) for i in d["split"]["test"]],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def build_dataset(cfg: PhantomConfig, n_samples: int, deg_source: deg.DegradationOp,
                  deg_target: deg.DegradationOp, out_dir, export_pngs: bool = False) -> DatasetManifest:
    """Generate ``n_samples`` paired samples and write them under ``out_dir``.

    The first 80% of ids form the training split, the rest the test split.
    """
    cfg.validate()
    if n_samples < 10:
        raise PhantomConfigError(f"n_samples must be >= 10, got {n_samples}")
    out = Path(out_dir)
    train, test = split_indices(n_samples)
    manifest = DatasetManifest(cfg, deg_source, deg_target, n_samples, train, test)

    try:
        out.mkdir(parents=True, exist_ok=True)
        for i in range(n_samples):
            s = make_sample(cfg, i, deg_source, deg_target)
            for kind in KINDS:
                grid = getattr(s, kind)
                write_grid(out / grid_filename(i, kind), grid, clean=kind.endswith("clean"))
                if export_pngs:
                    (out / "png").mkdir(exist_ok=True)
                    export_png(out / "png" / grid_filename(i, kind).replace(".igrd", ".png"), grid)
        (out / "manifest.json").write_text(manifest.dumps())
    except OSError as exc:
        raise DatasetWriteError(f"cannot write dataset to {out}: {exc}") from exc
    return manifest


@dataclass
class PairedDataset:
    """A dataset loaded into ``(n, H, W)`` float32 stacks, one per grid kind."""

    manifest: DatasetManifest
    source_clean: np.ndarray
    target_clean: np.ndarray
    source_meas: np.ndarray
    target_meas: np.ndarray

    @property
    def train_idx(self) -> np.ndarray:
        return np.asarray(self.manifest.train, dtype=np.int64)

    @property
    def test_idx(self) -> np.ndarray:
        return np.asarray(self.manifest.test, dtype=np.int64)

    def sample(self, i: int) -> PairedSample:
        return PairedSample(ImageGrid(self.source_clean[i]), ImageGrid(self.target_clean[i]),
                            ImageGrid.measured(self.source_meas[i]),
                            ImageGrid.measured(self.target_meas[i]), i)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return DatasetManifest.from_json(json.loads(path.read_text()))


def load_dataset(path) -> PairedDataset:
    root = Path(path)
    manifest = load_manifest(root)
    stacks = {}
    for kind in KINDS:
        stacks[kind] = np.stack([read_grid(root / grid_filename(i, kind)).data
                                 for i in range(manifest.n)])
    return PairedDataset(manifest, **stacks)
