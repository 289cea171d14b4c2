"""
Attack model
"""
from __future__ import annotations

from enum import Enum
from typing import NamedTuple

import numpy as np

from invrisk.errors import ConfigError

DEFAULT_TIERS = (100, 500, 2000)


class Distance(Enum):
    L2 = "l2"
    COSINE = "cosine"


class Init(Enum):
    ZEROS = "zeros"
    GAUSSIAN = "gaussian"


class RankKAttacker(NamedTuple):
    """
    Best rank-k approximation of the pseudoinverse of a Jacobian
    """
    a_star: np.ndarray
    k: int


class AttackConfig(object):
    """
    Gradient / embedding matching attack settings
    """

    def __init__(self,
                 distance: Distance | str = Distance.L2,
                 tv_weight: float = 0.0,
                 iters: int = 2000,
                 step_size: float = 0.01,
                 seed: int = 0,
                 init: Init | str = Init.ZEROS,
                 tiers: list[int] | tuple[int, ...] = DEFAULT_TIERS):
        """

        :param distance: l2 (DLG) or cosine (IG)
        :param tv_weight: total variation prior weight
        :param iters: optimizer iterations
        :param step_size: moment-based optimizer step
        :param seed:
        :param init: starting point
        :param tiers: iteration budgets of the attacker tiers, ascending
        """
        try:
            self.distance = Distance(distance)
            self.init = Init(init)
            iters, tv_weight, step_size, seed = int(iters), float(tv_weight), float(step_size), int(seed)
            tiers = tuple(int(t) for t in tiers)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid attack configuration: {e}") from e
        if iters < 1:
            raise ConfigError("iters must be >= 1")
        if tv_weight < 0:
            raise ConfigError("tv_weight must be >= 0")
        if step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if not tiers or any(t < 1 for t in tiers) or list(tiers) != sorted(set(tiers)):
            raise ConfigError(f"tiers must be distinct positive ascending counts, got {tiers}")
        self.tv_weight = tv_weight
        self.iters = iters
        self.step_size = step_size
        self.seed = seed
        self.tiers = tiers

    def with_seed(self, seed: int) -> AttackConfig:
        return AttackConfig(self.distance, self.tv_weight, self.iters, self.step_size, seed, self.init, self.tiers)

    def to_dict(self) -> dict:
        return {
            'distance': self.distance.value,
            'tv_weight': self.tv_weight,
            'iters': self.iters,
            'step_size': self.step_size,
            'seed': self.seed,
            'init': self.init.value,
            'tiers': list(self.tiers)
        }

    @staticmethod
    def from_dict(data: dict) -> AttackConfig:
        if not isinstance(data, dict):
            raise ConfigError("attack configuration must be a mapping")
        known = {'distance', 'tv_weight', 'iters', 'step_size', 'seed', 'init', 'tiers'}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"invalid attack keys {sorted(unknown)}")
        return AttackConfig(**data)


class AttackResult(NamedTuple):
    """
    Outcome of a matching attack.
    trajectory holds (iteration, objective) pairs at checkpoints, iteration 0
    being the starting point; snapshots maps checkpoint iterations to x_hat.
    """
    x_hat: np.ndarray
    trajectory: list[tuple[int, float]]
    final_objective: float
    snapshots: dict[int, np.ndarray]
