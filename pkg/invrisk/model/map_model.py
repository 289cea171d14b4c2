"""
Shared map model: small dense networks and the map the attacker observes
"""
from __future__ import annotations

import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from invrisk.errors import ConfigError

log = logging.getLogger("invrisk")

NETWORK_FORMAT_VERSION = 1


class Activation(Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


class Loss(Enum):
    SQUARED_ERROR = "squared_error"
    CROSS_ENTROPY = "cross_entropy"


class MapMode(Enum):
    HFL_GRADIENT = "hfl_gradient"
    VFL_EMBEDDING = "vfl_embedding"


class DenseLayer(NamedTuple):
    """
    Affine layer followed by an element-wise activation
    """
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            'type': "dense",
            'dims': [self.fan_out, self.fan_in],
            'weights': self.weights.reshape(-1).tolist(),
            'bias': self.bias.tolist(),
            'activation': self.activation.value
        }

    @staticmethod
    def from_dict(data: dict) -> DenseLayer:
        if data.get('type', "dense") != "dense":
            raise ConfigError(f"unsupported layer type {data.get('type')}")
        try:
            fan_out, fan_in = (int(v) for v in data['dims'])
            weights = np.asarray(data['weights'], dtype=np.float64).reshape(fan_out, fan_in)
            bias = np.asarray(data['bias'], dtype=np.float64).reshape(fan_out)
            activation = Activation(data.get('activation', "identity"))
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"malformed layer: {e}") from e
        return DenseLayer(weights, bias, activation)


class Network(object):
    """
    Immutable feed-forward network of dense layers.
    Parameters are vectorized in layer order, each layer contributing its
    weights row-major followed by its bias.
    """

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ConfigError("a network needs at least one layer")
        for prev, layer in zip(layers, layers[1:]):
            if layer.fan_in != prev.fan_out:
                raise ConfigError(f"layer dimensions do not chain: {prev.fan_out} -> {layer.fan_in}")
        frozen = []
        for layer in layers:
            weights = np.array(layer.weights, dtype=np.float64)
            bias = np.array(layer.bias, dtype=np.float64)
            if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
                raise ConfigError("network parameters must be finite")
            weights.setflags(write=False)
            bias.setflags(write=False)
            frozen.append(DenseLayer(weights, bias, Activation(layer.activation)))
        self.layers = tuple(frozen)

    @classmethod
    def initialize(cls,
                   dims: list[int],
                   activations: list[Activation | str],
                   seed: int = 0) -> Network:
        """
        Seeded uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)]

        :param dims: layer widths, input first
        :param activations: one activation per layer
        :param seed:
        """
        if len(dims) < 2 or len(activations) != len(dims) - 1:
            raise ConfigError("need len(dims) - 1 activations and at least two dims")
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            bound = 1.0 / math.sqrt(fan_in)
            layers.append(DenseLayer(rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                                     rng.uniform(-bound, bound, size=fan_out),
                                     Activation(act)))
        return cls(layers)

    @property
    def input_width(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_width(self) -> int:
        return self.layers[-1].fan_out

    @property
    def dims(self) -> list[int]:
        return [self.input_width] + [layer.fan_out for layer in self.layers]

    @property
    def param_count(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)

    def parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([layer.weights.reshape(-1), layer.bias])
                               for layer in self.layers])

    def with_parameters(self, theta: np.ndarray) -> Network:
        """
        Returns a copy of this network carrying the supplied parameter vector
        """
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.param_count:
            raise ConfigError(f"expected {self.param_count} parameters, got {theta.size}")
        layers = []
        offset = 0
        for layer in self.layers:
            w_size = layer.weights.size
            weights = theta[offset:offset + w_size].reshape(layer.weights.shape)
            offset += w_size
            bias = theta[offset:offset + layer.bias.size]
            offset += layer.bias.size
            layers.append(DenseLayer(weights, bias, layer.activation))
        return Network(layers)

    def to_dict(self) -> dict:
        return {
            'version': NETWORK_FORMAT_VERSION,
            'layers': [layer.to_dict() for layer in self.layers]
        }

    @staticmethod
    def from_dict(data: dict) -> Network:
        version = data.get('version', NETWORK_FORMAT_VERSION)
        if version != NETWORK_FORMAT_VERSION:
            raise ConfigError(f"unsupported network version {version}")
        return Network([DenseLayer.from_dict(layer) for layer in data.get('layers', [])])

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @staticmethod
    def load(path: str | Path) -> Network:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed network file {path}: {e}") from e
        return Network.from_dict(data)


class SharedMapSpec(object):
    """
    The map x -> F(x) observed by the attacker: parameter gradients (hfl)
    or the activations at a cut layer (vfl)
    """

    def __init__(self,
                 mode: MapMode | str,
                 network: Network,
                 loss: Loss | str | None = None,
                 label: int | list | np.ndarray | None = None,
                 cut: int | None = None):
        """

        :param mode: hfl_gradient or vfl_embedding
        :param network: the model
        :param loss: hfl only
        :param label: class index (cross_entropy) or target vector (squared_error); hfl only
        :param cut: number of layers of the bottom model; vfl only
        """
        self.mode = MapMode(mode)
        self.network = network
        self.loss = Loss(loss) if loss is not None else None
        self.cut = cut
        self.label = label
        match self.mode:
            case MapMode.HFL_GRADIENT:
                if self.loss is None or label is None:
                    raise ConfigError("hfl mode requires a loss and a label")
                if self.loss == Loss.SQUARED_ERROR:
                    width = network.output_width
                    if isinstance(label, (int, np.integer)) and width > 1:
                        # class index, encoded one-hot
                        if not 0 <= label < width:
                            raise ConfigError(f"class index {label} out of range [0, {width})")
                        target = np.zeros(width)
                        target[int(label)] = 1.0
                    else:
                        target = np.atleast_1d(np.asarray(label, dtype=np.float64))
                    if target.size != width:
                        raise ConfigError(f"target width {target.size} != output width {width}")
                    self.label = target
                else:
                    self.label = int(label)
                    if not 0 <= self.label < network.output_width:
                        raise ConfigError(f"class index {self.label} out of range [0, {network.output_width})")
            case MapMode.VFL_EMBEDDING:
                if cut is None or not 0 < cut <= len(network.layers):
                    raise ConfigError(f"vfl mode requires 0 < cut <= {len(network.layers)}, got {cut}")

    @property
    def input_width(self) -> int:
        return self.network.input_width

    @property
    def output_width(self) -> int:
        match self.mode:
            case MapMode.HFL_GRADIENT:
                return self.network.param_count
            case MapMode.VFL_EMBEDDING:
                return self.network.layers[self.cut - 1].fan_out

    def with_label(self, label) -> SharedMapSpec:
        """
        Same map for another label (hfl); vfl specs are returned unchanged
        """
        if self.mode == MapMode.VFL_EMBEDDING:
            return self
        return SharedMapSpec(self.mode, self.network, self.loss, label, self.cut)

    def with_network(self, network: Network) -> SharedMapSpec:
        return SharedMapSpec(self.mode, network, self.loss, self.label, self.cut)


class Jacobian(NamedTuple):
    """
    Matrix of partial derivatives dF_i/dx_j at one instance
    """
    g: np.ndarray
    mode: MapMode
    fingerprint: str

    @property
    def p(self) -> int:
        return self.g.shape[0]

    @property
    def m(self) -> int:
        return self.g.shape[1]
