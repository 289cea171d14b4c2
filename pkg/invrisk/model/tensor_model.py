"""
Numeric data model: dense tensors and singular value decompositions
"""
import math
from typing import NamedTuple

import numpy as np

from invrisk.errors import ConfigError


class Tensor(object):
    """
    Dense real array, row-major, 64-bit
    """

    def __init__(self, shape: list[int], data):
        """

        :param shape: positive dimension sizes
        :param data: row-major values, length product(shape)
        """
        shape = [int(dim) for dim in shape]
        if any(dim <= 0 for dim in shape):
            raise ConfigError(f"non positive dimension in {shape}")
        values = np.ascontiguousarray(data, dtype=np.float64).reshape(-1)
        if math.prod(shape) != values.size:
            raise ConfigError(f"shape {shape} does not hold {values.size} values")
        if not np.all(np.isfinite(values)):
            raise ConfigError("tensor values must be finite")
        self.shape = shape
        self.data = values

    @classmethod
    def from_array(cls, array) -> 'Tensor':
        array = np.asarray(array, dtype=np.float64)
        return cls(list(array.shape), array.reshape(-1))

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def rows(self) -> list[np.ndarray]:
        """
        Splits the tensor along its first axis into flattened instances
        """
        if self.ndim == 1:
            return [self.data.copy()]
        return [row.reshape(-1) for row in self.array()]

    def __eq__(self, other):
        return (isinstance(other, Tensor)
                and self.shape == other.shape
                and self.data.tobytes() == other.data.tobytes())


class SvdBundle(NamedTuple):
    """
    Thin decomposition a = u diag(sigma) vt, sigma non-increasing
    """
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def d(self) -> int:
        return self.sigma.size

    @property
    def p(self) -> int:
        return self.u.shape[0]

    @property
    def m(self) -> int:
        return self.vt.shape[1]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt
