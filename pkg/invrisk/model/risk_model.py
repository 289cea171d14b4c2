"""
Risk model: spectral profiles, risk reports and calibration
"""
from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from invrisk.errors import ConfigError

DEFAULT_BETA = 5.0


class RiskBand(Enum):
    MINIMAL = "minimal"
    MODERATE = "moderate"
    HIGH = "high"


class BoundKind(Enum):
    """
    Which upper bound feeds the estimator
    """
    RANK_K = "rank_k"
    DNP = "dnp"
    GNP = "gnp"


class ScoringMode(Enum):
    SIGMOID = "sigmoid"
    INVERSE = "inverse"


class SpectralProfile(NamedTuple):
    """
    Singular values of a Jacobian and the projections of an instance
    (and optionally of a noise vector) onto its singular vectors
    """
    sigma: np.ndarray
    proj_x: np.ndarray
    proj_noise_v: np.ndarray | None
    proj_noise_u: np.ndarray | None
    m: int
    p: int
    rank: int

    @property
    def d(self) -> int:
        return self.sigma.size


class RiskThresholds(NamedTuple):
    low: float = 0.15
    high: float = 0.45

    def band(self, score: float) -> RiskBand:
        if score < self.low:
            return RiskBand.MINIMAL
        if score > self.high:
            return RiskBand.HIGH
        return RiskBand.MODERATE


class Calibration(NamedTuple):
    alpha: float
    beta: float = DEFAULT_BETA

    def to_dict(self) -> dict:
        return {'alpha': self.alpha, 'beta': self.beta}

    @staticmethod
    def from_dict(data: dict) -> Calibration:
        try:
            cal = Calibration(float(data['alpha']), float(data.get('beta', DEFAULT_BETA)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed calibration: {e}") from e
        if cal.beta <= 0:
            raise ConfigError("beta must be > 0")
        return cal

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))

    @staticmethod
    def load(path: str | Path) -> Calibration:
        try:
            return Calibration.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed calibration file {path}: {e}") from e


class RiskReport(NamedTuple):
    """
    Per-instance estimator output.
    tau holds tau_0..tau_d, p_weights P_1..P_d
    """
    tau: np.ndarray
    p_weights: np.ndarray
    weighted_bound: float
    invre: float
    band: RiskBand

    def to_dict(self) -> dict:
        return {
            'tau': self.tau.tolist(),
            'p_weights': self.p_weights.tolist(),
            'weighted_bound': self.weighted_bound,
            'invre': self.invre,
            'band': self.band.value
        }
