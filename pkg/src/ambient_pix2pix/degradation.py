"""Measurement operators mapping clean images to simulated noisy measurements.

Operators are small frozen dataclasses that serialize to a canonical JSON
tree, e.g.::

    {"compose": [{"blur": {"sigma": 1.0}}, {"gauss": {"mean": 0.0, "std": 0.05}}]}

The same tree drives both the numpy path (:func:`apply`) used to build
datasets and the torch path (:func:`apply_tensor`) used inside the training
graph of the ambient model.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .grid import ImageGrid
from .rng import make_rng

MAX_DEPTH = 8


class DegradationError(ValueError):
    pass


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class AdditiveGaussian:
    mean: float = 0.0
    std: float = 0.05

    def __post_init__(self):
        if not (self.std >= 0 and math.isfinite(self.std)):
            raise DegradationError(f"noise std must be finite and >= 0, got {self.std}")
        if not math.isfinite(self.mean):
            raise DegradationError("noise mean must be finite")


@dataclass(frozen=True)
class GaussianBlur:
    sigma: float = 1.0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise DegradationError(f"blur sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Compose:
    ops: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not self.ops:
            raise DegradationError("Compose needs at least one operator")
        if depth(self) > MAX_DEPTH:
            raise DegradationError(f"operator tree deeper than {MAX_DEPTH}")


DegradationOp = Union[Identity, AdditiveGaussian, GaussianBlur, Compose]


def depth(op: DegradationOp) -> int:
    if isinstance(op, Compose):
        return 1 + max(depth(o) for o in op.ops)
    return 1


def to_tree(op: DegradationOp) -> dict:
    if isinstance(op, Identity):
        return {"identity": {}}
    if isinstance(op, AdditiveGaussian):
        return {"gauss": {"mean": float(op.mean), "std": float(op.std)}}
    if isinstance(op, GaussianBlur):
        return {"blur": {"sigma": float(op.sigma)}}
    if isinstance(op, Compose):
        return {"compose": [to_tree(o) for o in op.ops]}
    raise TypeError(f"not a degradation operator: {op!r}")


def from_tree(tree, _level: int = 1) -> DegradationOp:
    if _level > MAX_DEPTH:
        raise DegradationError(f"operator tree deeper than {MAX_DEPTH}")
    if not isinstance(tree, dict) or len(tree) != 1:
        raise DegradationError(f"operator node must be a single-key object, got {tree!r}")
    (tag, body), = tree.items()
    try:
        if tag == "identity":
            if body not in ({}, None):
                raise DegradationError("identity takes no parameters")
            return Identity()
        if tag == "gauss":
            _check_keys(body, {"mean", "std"})
            return AdditiveGaussian(float(body.get("mean", 0.0)), float(body["std"]))
        if tag == "blur":
            _check_keys(body, {"sigma"})
            return GaussianBlur(float(body["sigma"]))
        if tag == "compose":
            if not isinstance(body, list):
                raise DegradationError("compose expects a list")
            return Compose(tuple(from_tree(t, _level + 1) for t in body))
    except (KeyError, TypeError) as exc:
        raise DegradationError(f"malformed {tag!r} node: {exc}") from exc
    raise DegradationError(f"unknown operator {tag!r}")


def _check_keys(body, allowed):
    if not isinstance(body, dict):
        raise DegradationError(f"parameters must be an object, got {body!r}")
    extra = set(body) - allowed
    if extra:
        raise DegradationError(f"unknown parameters {sorted(extra)}")


def dumps(op: DegradationOp) -> str:
    return json.dumps(to_tree(op), sort_keys=True)


def loads(text: str) -> DegradationOp:
    return from_tree(json.loads(text))


def has_noise(op: DegradationOp) -> bool:
    if isinstance(op, AdditiveGaussian):
        return True
    if isinstance(op, Compose):
        return any(has_noise(o) for o in op.ops)
    return False


# -- numpy path ---------------------------------------------------------------

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian truncated at ``ceil(3*sigma)``."""
    if sigma <= 0:
        return np.ones(1)
    radius = int(math.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(over="ignore"):  # sigma -> 0 degenerates to a delta
        k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def blur_array(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with whole-sample reflect padding.

    Works on ``(..., H, W)`` arrays and returns float64.
    """
    img = np.asarray(img, dtype=np.float64)
    k = gaussian_kernel1d(sigma)
    r = len(k) // 2
    if r == 0:
        return img.copy()
    out = img
    for axis in (-2, -1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(i, i + n)
            acc += w * padded[tuple(sl)]
        out = acc
    return out


def apply_array(op: DegradationOp, img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if isinstance(op, Identity):
        return img.copy()
    if isinstance(op, AdditiveGaussian):
        if op.std == 0:
            return img + op.mean
        return img + rng.normal(op.mean, op.std, size=img.shape)
    if isinstance(op, GaussianBlur):
        return blur_array(img, op.sigma)
    if isinstance(op, Compose):
        for o in op.ops:
            img = apply_array(o, img, rng)
        return img
    raise TypeError(f"not a degradation operator: {op!r}")


def apply(op: DegradationOp, img: ImageGrid, rng: np.random.Generator) -> ImageGrid:
    """Degrade one grid. ``rng`` is consumed only by noise operators."""
    out = apply_array(op, np.asarray(img), rng)
    if isinstance(op, Identity):
        return ImageGrid(out, img.value_range)
    return ImageGrid.measured(out)


def apply_batch(op: DegradationOp, imgs, seed: int, start: int = 0) -> list[ImageGrid]:
    """Degrade a list of grids, image ``i`` drawing from stream ``start + i``.

    Splitting a batch into pieces (passing the matching ``start`` offsets)
    gives the same outputs as one call on the whole batch.
    """
    return [apply(op, img, make_rng(seed, start + i)) for i, img in enumerate(imgs)]


# -- torch path (training graph) -----------------------------------------------

def apply_tensor(op: DegradationOp, y, generator=None):
    """Apply ``op`` to an ``(N, C, H, W)`` tensor, differentiably.

    Noise is drawn from ``generator`` independently of ``y``, so gradients
    pass straight through the additive term. Blur is a fixed convolution.
    """
    import torch
    import torch.nn.functional as F

    if isinstance(op, Identity):
        return y
    if isinstance(op, AdditiveGaussian):
        if op.std == 0:
            return y + op.mean
        eps = torch.randn(y.shape, generator=generator, dtype=y.dtype, device=y.device)
        return y + op.mean + op.std * eps
    if isinstance(op, GaussianBlur):
        k = gaussian_kernel1d(op.sigma)
        r = len(k) // 2
        if r == 0:
            return y
        kt = torch.as_tensor(k, dtype=y.dtype, device=y.device)
        c = y.shape[1]
        out = F.pad(y, (r, r, r, r), mode="reflect")
        out = F.conv2d(out, kt.view(1, 1, -1, 1).repeat(c, 1, 1, 1), groups=c)
        out = F.conv2d(out, kt.view(1, 1, 1, -1).repeat(c, 1, 1, 1), groups=c)
        return out
    if isinstance(op, Compose):
        for o in op.ops:
            y = apply_tensor(o, y, generator)
        return y
    raise TypeError(f"not a degradation operator: {op!r}")
