"""
Experiment configuration: environment defaults and JSON / TOML config documents
"""
import json
import logging
import os
from pathlib import Path

import toml
from dotenv import load_dotenv

from invrisk.errors import ConfigError
from invrisk.model.attack_model import AttackConfig
from invrisk.model.defense_model import DefenseSpec
from invrisk.model.experiment_model import DataKind, DatasetSpec, ExperimentConfig, REPORT_SCHEMA
from invrisk.model.map_model import Loss, MapMode, Network, SharedMapSpec
from invrisk.model.risk_model import DEFAULT_BETA, RiskThresholds, ScoringMode

load_dotenv()

INVRISK_THREADS = int(os.getenv('INVRISK_THREADS', 0))
INVRISK_LOG_LEVEL = os.getenv('INVRISK_LOG_LEVEL', "INFO")
INVRISK_SEED = int(os.getenv('INVRISK_SEED', 0))

log = logging.getLogger("invrisk")

DEFAULT_INSTANCES = 10
DEFAULT_WIDTH = 64
DEFAULT_HIDDEN = 16
DEFAULT_CLASSES = 2

_TOP_KEYS = {'schema', 'seed', 'n_instances', 'dataset', 'map', 'attack', 'defense',
             'sweep', 'calibration', 'scoring', 'output_dir'}
_MAP_KEYS = {'mode', 'loss', 'cut', 'network'}
_NETWORK_KEYS = {'path', 'dims', 'activations', 'init_seed', 'warmup_steps', 'warmup_lr'}
_SCORING_KEYS = {'mode', 'beta', 'low', 'high'}


def read_document(path: str | Path) -> dict:
    """
    Reads a JSON (.json) or TOML (.toml) configuration document
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {path} not found")
    text = path.read_text()
    try:
        match path.suffix.lower():
            case ".json":
                document = json.loads(text)
            case ".toml":
                document = toml.loads(text)
            case _:
                raise ConfigError(f"unsupported configuration format {path.suffix}")
    except (json.JSONDecodeError, toml.TomlDecodeError) as e:
        raise ConfigError(f"malformed configuration {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"configuration {path} is not a mapping")
    return document


def merge(base: dict, overriding: dict) -> dict:
    """
    Recursive merge, values of overriding win
    """
    merged = dict(base)
    for key, val in overriding.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], val)
        else:
            merged[key] = val
    return merged


def _check_keys(section: str, data, known: set):
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a mapping")
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"invalid {section} keys {sorted(unknown)}")


def _cast(cast, value, what: str):
    try:
        return cast(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what} {value!r}") from e


def _require_file(path: str, what: str) -> str:
    if not Path(str(path)).is_file():
        raise ConfigError(f"{what} file {path} not found")
    return path


def _build_network(data: dict, width: int | None) -> Network:
    _check_keys("map.network", data, _NETWORK_KEYS)
    if 'path' in data:
        return Network.load(_require_file(data['path'], "network"))
    if width is None and 'dims' not in data:
        raise ConfigError("network dims are required for tensor_file datasets")
    dims = _cast(list, data.get('dims', [width, DEFAULT_HIDDEN, DEFAULT_CLASSES]), "network dims")
    activations = data.get('activations', ["tanh"] * (len(dims) - 2) + ["identity"])
    try:
        return Network.initialize([_cast(int, d, "network width") for d in dims], activations,
                                  _cast(int, data.get('init_seed', 0), "init_seed"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid network: {e}") from e


def _build_map(data: dict, width: int | None) -> tuple[SharedMapSpec, int, float]:
    _check_keys("map", data, _MAP_KEYS)
    network_data = data.get('network', {})
    network = _build_network(network_data, width)
    if width is not None and network.input_width != width:
        raise ConfigError(f"network input width {network.input_width} != instance width {width}")
    try:
        mode = MapMode(data.get('mode', MapMode.VFL_EMBEDDING.value))
        match mode:
            case MapMode.HFL_GRADIENT:
                # relabelled per instance by the runner
                spec = SharedMapSpec(mode, network, Loss(data.get('loss', Loss.CROSS_ENTROPY.value)), 0)
            case MapMode.VFL_EMBEDDING:
                spec = SharedMapSpec(mode, network, cut=_cast(int, data.get('cut', 1), "cut"))
    except ValueError as e:
        raise ConfigError(f"invalid map: {e}") from e
    return (spec, _cast(int, network_data.get('warmup_steps', 0), "warmup_steps"),
            _cast(float, network_data.get('warmup_lr', 0.1), "warmup_lr"))


def _build_scoring(data: dict) -> tuple[ScoringMode, float, RiskThresholds]:
    _check_keys("scoring", data, _SCORING_KEYS)
    try:
        mode = ScoringMode(data.get('mode', ScoringMode.SIGMOID.value))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    defaults = RiskThresholds()
    thresholds = RiskThresholds(_cast(float, data.get('low', defaults.low), "low band edge"),
                                _cast(float, data.get('high', defaults.high), "high band edge"))
    if not 0.0 <= thresholds.low <= thresholds.high:
        raise ConfigError(f"invalid risk band edges {thresholds}")
    return mode, _cast(float, data.get('beta', DEFAULT_BETA), "beta"), thresholds


def build_config(document: dict) -> ExperimentConfig:
    """
    Validates a configuration document and builds the experiment it describes

    :param document: merged configuration document
    :raises ConfigError:
    """
    _check_keys("configuration", document, _TOP_KEYS)
    schema = document.get('schema', REPORT_SCHEMA)
    if schema != REPORT_SCHEMA:
        raise ConfigError(f"unsupported configuration schema {schema}")

    dataset_data = document.get('dataset', {})
    _check_keys("dataset", dataset_data, {'kind', 'm', 'path', 'labels', 'texture'})
    dataset_data = dict(dataset_data)
    dataset_data.setdefault('kind', DataKind.SYNTHETIC_GRID.value)
    if dataset_data['kind'] != DataKind.TENSOR_FILE.value:
        dataset_data.setdefault('m', DEFAULT_WIDTH)
    dataset = DatasetSpec.from_dict(dataset_data)
    if dataset.kind == DataKind.TENSOR_FILE:
        _require_file(dataset.path, "dataset")
        if dataset.labels:
            _require_file(dataset.labels, "labels")

    map_spec, warmup_steps, warmup_lr = _build_map(document.get('map', {}), dataset.m)

    attack = AttackConfig.from_dict(document['attack']) if document.get('attack') is not None else None
    defense = DefenseSpec.from_dict(document['defense']) if document.get('defense') is not None else None

    sweep = document.get('sweep', {})
    _check_keys("sweep", sweep, {'grid'})
    grid = [_cast(float, v, "sweep grid value") for v in _cast(list, sweep.get('grid', []), "sweep grid")]

    calibration = document.get('calibration')
    if calibration is not None:
        _require_file(calibration, "calibration")

    scoring, beta, thresholds = _build_scoring(document.get('scoring', {}))

    config = ExperimentConfig(map_spec,
                              dataset,
                              _cast(int, document.get('n_instances', DEFAULT_INSTANCES), "n_instances"),
                              seed=_cast(int, document.get('seed', INVRISK_SEED), "seed"),
                              attack=attack,
                              defense=defense,
                              calibration=calibration,
                              grid=grid,
                              scoring=scoring,
                              beta=beta,
                              thresholds=thresholds,
                              output_dir=str(document.get('output_dir', "invrisk-out")),
                              warmup_steps=warmup_steps,
                              warmup_lr=warmup_lr,
                              source=document)
    log.debug("configuration %s: %s map, %d instances", config.fingerprint(),
              map_spec.mode.value, config.n_instances)
    return config


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """
    Builds the experiment configuration from command line overrides and an
    optional configuration file; file values take precedence over overrides

    :param path: JSON or TOML file
    :param overrides: partial document built from command line flags
    """
    document = overrides or {}
    if path is not None:
        document = merge(document, read_document(path))
    return build_config(document)
