"""Image carrier and on-disk grid format.

Grid files start with a 16-byte header (magic ``IGRD``, u32 width, u32 height,
u32 flags) followed by little-endian float32 pixels in row-major order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"IGRD"
HEADER = struct.Struct("<4sIII")

# flag bits
FLAG_CLEAN = 1  # grid lies in the declared [0, 1] range


class GridFormatError(ValueError):
    pass


@dataclass
class ImageGrid:
    """A 2-D scalar image with a declared value range.

    ``data`` has shape ``(height, width)``. ``np.asarray(grid)`` returns it.
    """

    data: np.ndarray
    value_range: tuple[float, float] = field(default=(0.0, 1.0))

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"ImageGrid needs a 2-D array, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("ImageGrid data contains NaN or Inf")
        lo, hi = self.value_range
        self.value_range = (float(lo), float(hi))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    @classmethod
    def measured(cls, data) -> "ImageGrid":
        """Wrap a measurement whose range is whatever the data spans."""
        data = np.asarray(data)
        return cls(data, (float(data.min()), float(data.max())) if data.size else (0.0, 0.0))


def write_grid(path, grid: ImageGrid | np.ndarray, clean: bool | None = None) -> None:
    data = np.asarray(grid, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("only 2-D grids can be written")
    if clean is None:
        clean = isinstance(grid, ImageGrid) and grid.value_range == (0.0, 1.0)
    flags = FLAG_CLEAN if clean else 0
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, w, h, flags))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_grid(path) -> ImageGrid:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, w, h, flags = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    expected = HEADER.size + 4 * w * h
    if len(raw) != expected:
        raise GridFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(h, w).astype(np.float32)
    if flags & FLAG_CLEAN:
        return ImageGrid(data, (0.0, 1.0))
    return ImageGrid.measured(data)


def export_png(path, grid: ImageGrid | np.ndarray) -> None:
    """Min-max windowed 8-bit PNG, for eyeballing only."""
    from PIL import Image

    data = np.asarray(grid, dtype=np.float64)
    lo, hi = data.min(), data.max()
    scaled = np.zeros_like(data) if hi <= lo else (data - lo) / (hi - lo)
    Image.fromarray(np.round(scaled * 255).astype(np.uint8)).save(path)
