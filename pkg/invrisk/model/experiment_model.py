"""
Experiment model: datasets, configuration and run records
"""
from __future__ import annotations

import hashlib
import json
from enum import Enum
from typing import NamedTuple

import numpy as np

from invrisk.errors import ConfigError
from invrisk.model.attack_model import AttackConfig
from invrisk.model.defense_model import DefenseSpec
from invrisk.model.map_model import SharedMapSpec
from invrisk.model.metrics_model import CorrelationResult, QualityScore
from invrisk.model.risk_model import RiskThresholds, ScoringMode, DEFAULT_BETA

REPORT_SCHEMA = 1


class DataKind(Enum):
    SYNTHETIC_GAUSSIAN = "synthetic_gaussian"
    SYNTHETIC_GRID = "synthetic_grid"
    TENSOR_FILE = "tensor_file"


class Instance(NamedTuple):
    """
    One data instance with its class label and the seed it was derived from
    """
    index: int
    x: np.ndarray
    label: int
    seed: int


class DatasetSpec(object):

    def __init__(self,
                 kind: DataKind | str,
                 m: int | None = None,
                 path: str | None = None,
                 labels: str | None = None,
                 texture: float | None = None):
        """

        :param kind: synthetic_gaussian, synthetic_grid or tensor_file
        :param m: instance width (synthetic kinds)
        :param path: IVT1 file, one instance per leading index (tensor_file)
        :param labels: optional IVT1 file of class labels (tensor_file)
        :param texture: fixed texture level in [0, 1] for grids; random per instance if None
        """
        try:
            self.kind = DataKind(kind)
            m = int(m) if m is not None else None
            texture = float(texture) if texture is not None else None
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid dataset: {e}") from e
        match self.kind:
            case DataKind.TENSOR_FILE:
                if not path:
                    raise ConfigError("tensor_file datasets need a path")
            case _:
                if m is None or m < 2:
                    raise ConfigError("synthetic datasets need m >= 2")
        if texture is not None and not 0.0 <= texture <= 1.0:
            raise ConfigError("texture must be in [0, 1]")
        self.m = m
        self.path = path
        self.labels = labels
        self.texture = texture

    def to_dict(self) -> dict:
        out = {'kind': self.kind.value}
        for key in ('m', 'path', 'labels', 'texture'):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    @staticmethod
    def from_dict(data: dict) -> DatasetSpec:
        unknown = set(data) - {'kind', 'm', 'path', 'labels', 'texture'}
        if unknown:
            raise ConfigError(f"invalid dataset keys {sorted(unknown)}")
        if 'kind' not in data:
            raise ConfigError("dataset kind missing")
        return DatasetSpec(**data)


class ExperimentConfig(object):
    """
    Everything a run needs; built by invrisk.harness.config
    """

    def __init__(self,
                 map_spec: SharedMapSpec,
                 dataset: DatasetSpec,
                 n_instances: int,
                 seed: int = 0,
                 attack: AttackConfig | None = None,
                 defense: DefenseSpec | None = None,
                 calibration: str | None = None,
                 grid: list[float] | None = None,
                 scoring: ScoringMode = ScoringMode.SIGMOID,
                 beta: float = DEFAULT_BETA,
                 thresholds: RiskThresholds = RiskThresholds(),
                 output_dir: str = "invrisk-out",
                 warmup_steps: int = 0,
                 warmup_lr: float = 0.1,
                 source: dict | None = None):
        if n_instances < 1:
            raise ConfigError("n_instances must be >= 1")
        if beta <= 0:
            raise ConfigError("beta must be > 0")
        if warmup_steps < 0 or warmup_lr <= 0:
            raise ConfigError("warm-up needs steps >= 0 and lr > 0")
        self.map_spec = map_spec
        self.dataset = dataset
        self.n_instances = int(n_instances)
        self.seed = int(seed)
        self.attack = attack
        self.defense = defense
        self.calibration = calibration
        self.grid = list(grid) if grid else []
        self.scoring = scoring
        self.beta = float(beta)
        self.thresholds = thresholds
        self.output_dir = output_dir
        self.warmup_steps = int(warmup_steps)
        self.warmup_lr = float(warmup_lr)
        self.source = source or {}

    def fingerprint(self) -> str:
        """
        Digest of the configuration document the run was built from
        """
        canonical = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def instance_seed(self, index: int) -> int:
        return self.seed ^ index


class InstanceRecord(object):
    """
    Per-instance results; fields are filled by the pipeline stages that ran
    """

    def __init__(self, index: int, seed: int, label: int):
        self.index = index
        self.seed = seed
        self.label = label
        self.invre: float | None = None
        self.band: str | None = None
        self.weighted_bound: float | None = None
        self.tau_summary: dict | None = None
        self.tiers: list[dict] = []
        self.quality: QualityScore | None = None
        self.expected_mse: float | None = None

    def to_dict(self) -> dict:
        out = {'index': self.index, 'seed': self.seed, 'label': self.label}
        if self.invre is not None:
            out.update({'invre': self.invre, 'band': self.band,
                        'weighted_bound': self.weighted_bound, 'tau': self.tau_summary})
        if self.tiers:
            out['tiers'] = self.tiers
            out['expected_mse'] = self.expected_mse
            out['quality'] = self.quality.to_dict()
        return out


class SweepRow(NamedTuple):
    defense_param: float
    mean_invre: float
    mean_mse: float | None
    mean_psnr: float | None
    mean_ssim: float | None
    utility_proxy: float | None
    mean_noise_energy: float
    mean_bound: float
    mean_ic_lower_bound: float | None = None
    mean_reduced_rank: float | None = None


class RunRecord(object):
    """
    Result document of one run
    """

    def __init__(self, config: ExperimentConfig, version: str):
        self.config = config
        self.version = version
        self.instances: list[InstanceRecord] = []
        self.calibration: dict | None = None
        self.tier_weights: list[float] | None = None
        self.correlations: dict[str, CorrelationResult] = {}
        self.sweep: list[SweepRow] = []
        self.sweep_kind: str | None = None
        self.utility_kind: str | None = None
        self.timestamp: str | None = None

    def to_dict(self) -> dict:
        out = {
            'schema': REPORT_SCHEMA,
            'toolkit_version': self.version,
            'config_fingerprint': self.config.fingerprint(),
            'seed': self.config.seed,
            'timestamp': self.timestamp,
            'instances': [rec.to_dict() for rec in self.instances],
            'aggregate': {}
        }
        if self.calibration is not None:
            out['calibration'] = self.calibration
        if self.tier_weights is not None:
            out['tier_weights'] = self.tier_weights
        if self.correlations:
            out['aggregate']['correlations'] = {name: res.to_dict() for name, res in self.correlations.items()}
        if self.sweep:
            out['aggregate']['sweep'] = {
                'defense': self.sweep_kind,
                'utility_proxy_kind': self.utility_kind,
                'rows': [row._asdict() for row in self.sweep]
            }
        return out
