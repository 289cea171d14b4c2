"""
Defense model
"""
from __future__ import annotations

from enum import Enum
from typing import NamedTuple

import numpy as np

from invrisk.errors import ConfigError


class DefenseKind(Enum):
    DNP = "dnp"
    GNP = "gnp"
    ENP = "enp"
    PRUNE = "prune"
    DROPOUT = "dropout"
    INVL_DNP = "invl_dnp"
    INVL_GNP = "invl_gnp"
    INVL_ENP = "invl_enp"

    @property
    def is_noise(self) -> bool:
        return self not in (DefenseKind.PRUNE, DefenseKind.DROPOUT)

    @property
    def is_adaptive(self) -> bool:
        return self.value.startswith("invl_")

    @property
    def data_level(self) -> bool:
        """
        True when the defense perturbs the input rather than the shared vector
        """
        return self in (DefenseKind.DNP, DefenseKind.INVL_DNP)


class TruncationRule(Enum):
    MASS = "mass"
    COUNT = "count"


class DefenseSpec(object):
    """
    A defense and its strength: noise variance delta for noise kinds,
    drop ratio lam for prune / dropout
    """

    def __init__(self,
                 kind: DefenseKind | str,
                 delta: float | None = None,
                 lam: float | None = None,
                 spectral_keep: float = 0.95,
                 spectral_skip: float = 0.60,
                 seed: int = 0,
                 truncation: TruncationRule | str = TruncationRule.MASS,
                 reuse_jacobian: bool = False):
        try:
            self.kind = DefenseKind(kind)
            self.truncation = TruncationRule(truncation)
            delta = float(delta) if delta is not None else None
            lam = float(lam) if lam is not None else None
            spectral_keep, spectral_skip, seed = float(spectral_keep), float(spectral_skip), int(seed)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid defense: {e}") from e
        if self.kind.is_noise:
            if lam is not None:
                raise ConfigError(f"{self.kind.value} takes delta, not lambda")
            if delta is None or not delta > 0:
                raise ConfigError(f"{self.kind.value} requires delta > 0")
        else:
            if delta is not None:
                raise ConfigError(f"{self.kind.value} takes lambda, not delta")
            if lam is None or not 0.0 <= lam <= 1.0:
                raise ConfigError(f"{self.kind.value} requires lambda in [0, 1], got {lam}")
        if not 0.0 < spectral_keep <= 1.0:
            raise ConfigError("spectral_keep must be in (0, 1]")
        if not 0.0 <= spectral_skip < spectral_keep:
            raise ConfigError("spectral_skip must be in [0, spectral_keep)")
        self.delta = delta
        self.lam = lam
        self.spectral_keep = spectral_keep
        self.spectral_skip = spectral_skip
        self.seed = seed
        self.reuse_jacobian = bool(reuse_jacobian)

    @property
    def strength(self) -> float:
        return self.delta if self.kind.is_noise else self.lam

    def with_strength(self, value: float, seed: int | None = None) -> DefenseSpec:
        """
        Same defense at another delta / lambda (and optionally seed)
        """
        delta, lam = (value, None) if self.kind.is_noise else (None, value)
        return DefenseSpec(self.kind, delta, lam, self.spectral_keep, self.spectral_skip,
                           self.seed if seed is None else seed, self.truncation, self.reuse_jacobian)

    def to_dict(self) -> dict:
        out = {
            'kind': self.kind.value,
            'seed': self.seed
        }
        if self.kind.is_noise:
            out['delta'] = self.delta
        else:
            out['lambda'] = self.lam
        if self.kind.is_adaptive:
            out['spectral_keep'] = self.spectral_keep
            out['truncation'] = self.truncation.value
            if self.kind != DefenseKind.INVL_DNP:
                out['spectral_skip'] = self.spectral_skip
            else:
                out['reuse_jacobian'] = self.reuse_jacobian
        return out

    @staticmethod
    def from_dict(data: dict) -> DefenseSpec:
        if not isinstance(data, dict):
            raise ConfigError("defense configuration must be a mapping")
        kwargs = {}
        for key, val in data.items():
            match key:
                case ('kind' | 'delta' | 'spectral_keep' | 'spectral_skip' | 'seed' | 'truncation'
                      | 'reuse_jacobian'):
                    kwargs[key] = val
                case 'lambda' | 'lam':
                    kwargs['lam'] = val
                case _:
                    raise ConfigError(f"invalid defense key {key}")
        if 'kind' not in kwargs:
            raise ConfigError("defense kind missing")
        return DefenseSpec(**kwargs)


class AdaptiveNoise(NamedTuple):
    """
    Spectrally truncated noise; eps is the Gaussian draw it was derived from
    """
    eps_hat: np.ndarray
    kept_indices: range
    energy: float
    eps: np.ndarray


class DefendedShare(NamedTuple):
    """
    A defended vector with what the defense did to it: the added noise for
    noise kinds, the dropped entries for prune / dropout
    """
    defended: np.ndarray
    noise: np.ndarray | None
    dropped: np.ndarray | None
