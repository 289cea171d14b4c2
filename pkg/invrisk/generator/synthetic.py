"""
Synthetic instances standing in for image datasets
"""
import logging
import math

import numpy as np

from invrisk.errors import ConfigError
from invrisk.model.experiment_model import DataKind, Instance

log = logging.getLogger("invrisk")

# offset between the two gaussian classes along a seeded direction, before normalization
CLASS_SEPARATION = 1.5
_SMOOTH_BAND = (0.0, 1.0)


def _gaussian(index: int, m: int, seed: int, direction: np.ndarray) -> Instance:
    label = index % 2
    rng = np.random.default_rng(seed ^ index)
    v = rng.standard_normal(m) + (1.0 if label else -1.0) * CLASS_SEPARATION * direction
    return Instance(index, v / np.linalg.norm(v), label, seed ^ index)


def _waves(rng: np.random.Generator, u: np.ndarray, v: np.ndarray, band: tuple[float, float]) -> np.ndarray:
    out = np.zeros_like(u)
    for _ in range(2):
        fu, fv = rng.uniform(*band, size=2) * rng.choice([-1.0, 1.0], size=2)
        out += np.cos(2.0 * np.pi * (fu * u + fv * v) + rng.uniform(0.0, 2.0 * np.pi))
    scale = np.abs(out).max()
    return out / scale if scale > 0 else out


def _grid(index: int, side: int, seed: int, texture: float | None) -> Instance:
    rng = np.random.default_rng(seed ^ index)
    level = rng.uniform(0.0, 1.0) if texture is None else texture
    u, v = np.meshgrid(np.arange(side) / side, np.arange(side) / side, indexing='ij')
    smooth = _waves(rng, u, v, _SMOOTH_BAND)
    textured = _waves(rng, u, v, (side / 4.0, side / 2.0))
    image = (1.0 - level) * smooth + level * textured
    lo, hi = image.min(), image.max()
    image = (image - lo) / (hi - lo) if hi > lo else np.full_like(image, 0.5)
    return Instance(index, image.reshape(-1), int(level >= 0.5), seed ^ index)


def generate_synthetic(kind: DataKind | str,
                       n: int,
                       m: int,
                       seed: int,
                       texture: float | None = None) -> list[Instance]:
    """
    Generates n instances of width m.
    gaussian: unit-norm draws from two classes shifted along a seeded direction.
    grid: sqrt(m) x sqrt(m) images in [0, 1] mixing smooth and near-Nyquist waves;
    texture sets the high-frequency share (random per instance when None) and
    the label is 1 for texture >= 0.5.

    :param kind: synthetic_gaussian or synthetic_grid
    :param n: instance count
    :param m: instance width
    :param seed: base seed; instance i uses seed ^ i
    :param texture: grid only
    """
    try:
        kind = DataKind(kind)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if m < 2:
        raise ConfigError("instance width must be >= 2")
    if n < 1:
        raise ConfigError("instance count must be >= 1")
    match kind:
        case DataKind.SYNTHETIC_GAUSSIAN:
            direction = np.random.default_rng(seed).standard_normal(m)
            direction /= np.linalg.norm(direction)
            instances = [_gaussian(i, m, seed, direction) for i in range(n)]
        case DataKind.SYNTHETIC_GRID:
            side = math.isqrt(m)
            if side * side != m:
                raise ConfigError(f"grid instances need a perfect square width, got {m}")
            instances = [_grid(i, side, seed, texture) for i in range(n)]
        case _:
            raise ConfigError(f"{kind.value} is not a synthetic kind")
    log.debug("generated %d %s instances of width %d", n, kind.value, m)
    return instances
