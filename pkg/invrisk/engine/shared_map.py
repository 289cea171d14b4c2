"""
Shared maps F(x) and their Jacobians G_x = dF/dx.

hfl: F(x) is the flattened parameter gradient of the loss at x; its Jacobian is
obtained by pushing input tangents forward through the network and then
through the backward pass (forward-over-reverse).
vfl: F(x) is the activation vector at the cut layer; its Jacobian follows the
layerwise chain rule.
"""
import hashlib
import logging

import numpy as np
from scipy.special import logsumexp, softmax

from invrisk.errors import ConfigError, NumericError, ShapeError
from invrisk.model.map_model import Activation, Jacobian, Loss, MapMode, Network, SharedMapSpec

log = logging.getLogger("invrisk")

FD_STEP = 1e-5


def _act(kind: Activation, z: np.ndarray) -> np.ndarray:
    match kind:
        case Activation.TANH:
            return np.tanh(z)
        case Activation.RELU:
            return np.maximum(z, 0.0)
        case Activation.IDENTITY:
            return z


def _act_d1(kind: Activation, z: np.ndarray) -> np.ndarray:
    match kind:
        case Activation.TANH:
            return 1.0 - np.tanh(z) ** 2
        case Activation.RELU:
            # subgradient 0 at z == 0
            return (z > 0.0).astype(np.float64)
        case Activation.IDENTITY:
            return np.ones_like(z)


def _act_d2(kind: Activation, z: np.ndarray) -> np.ndarray:
    match kind:
        case Activation.TANH:
            t = np.tanh(z)
            return -2.0 * t * (1.0 - t ** 2)
        case Activation.RELU | Activation.IDENTITY:
            return np.zeros_like(z)


def fingerprint(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype=np.float64).tobytes()).hexdigest()[:16]


def _check_input(spec: SharedMapSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != spec.input_width:
        raise ShapeError(f"expected an input of length {spec.input_width}, got shape {x.shape}")
    return x


def _propagate(network: Network, x: np.ndarray, depth: int | None = None):
    """
    Forward pass keeping activations a_0..a_depth and pre-activations z_1..z_depth
    """
    layers = network.layers if depth is None else network.layers[:depth]
    activations = [x]
    pre = []
    for layer in layers:
        z = layer.weights @ activations[-1] + layer.bias
        pre.append(z)
        activations.append(_act(layer.activation, z))
    return activations, pre


def _loss_terms(spec: SharedMapSpec, y: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Loss value and its gradient with respect to the network output
    """
    match spec.loss:
        case Loss.SQUARED_ERROR:
            residual = y - spec.label
            return 0.5 * float(residual @ residual), residual
        case Loss.CROSS_ENTROPY:
            probs = softmax(y)
            grad = probs.copy()
            grad[spec.label] -= 1.0
            return float(logsumexp(y) - y[spec.label]), grad
        case _:
            raise ConfigError(f"unsupported loss {spec.loss}")


def _backprop(network: Network, pre: list[np.ndarray], grad_y: np.ndarray) -> list[np.ndarray]:
    """
    Returns dL/dz for every layer, first layer first
    """
    layers = network.layers
    delta = grad_y * _act_d1(layers[-1].activation, pre[-1])
    deltas = [delta]
    for idx in range(len(layers) - 1, 0, -1):
        delta = (layers[idx].weights.T @ delta) * _act_d1(layers[idx - 1].activation, pre[idx - 1])
        deltas.append(delta)
    deltas.reverse()
    return deltas


def _parameter_gradient(spec: SharedMapSpec, x: np.ndarray) -> np.ndarray:
    activations, pre = _propagate(spec.network, x)
    _, grad_y = _loss_terms(spec, activations[-1])
    deltas = _backprop(spec.network, pre, grad_y)
    return np.concatenate([np.concatenate([np.outer(delta, a_in).reshape(-1), delta])
                           for delta, a_in in zip(deltas, activations[:-1])])


def forward(spec: SharedMapSpec, x) -> np.ndarray:
    """
    Evaluates the shared map

    :param spec: the map
    :param x: input instance
    :return: flattened parameter gradient (hfl) or cut-layer activations (vfl)
    """
    x = _check_input(spec, x)
    match spec.mode:
        case MapMode.VFL_EMBEDDING:
            activations, _ = _propagate(spec.network, x, spec.cut)
            return activations[-1]
        case MapMode.HFL_GRADIENT:
            return _parameter_gradient(spec, x)


def loss_value(spec: SharedMapSpec, x) -> float:
    """
    Training loss at x (hfl specs only)
    """
    if spec.mode != MapMode.HFL_GRADIENT:
        raise ConfigError("loss is only defined for hfl specs")
    x = _check_input(spec, x)
    activations, _ = _propagate(spec.network, x)
    return _loss_terms(spec, activations[-1])[0]


def _vfl_jacobian(spec: SharedMapSpec, x: np.ndarray) -> np.ndarray:
    _, pre = _propagate(spec.network, x, spec.cut)
    g = np.eye(x.size)
    for layer, z in zip(spec.network.layers[:spec.cut], pre):
        g = _act_d1(layer.activation, z)[:, None] * (layer.weights @ g)
    return g


def _hfl_jacobian(spec: SharedMapSpec, x: np.ndarray) -> np.ndarray:
    layers = spec.network.layers
    activations, pre = _propagate(spec.network, x)

    # input tangents of activations (A) and pre-activations (Z)
    tan_a = [np.eye(x.size)]
    tan_z = []
    for layer, z in zip(layers, pre):
        tz = layer.weights @ tan_a[-1]
        tan_z.append(tz)
        tan_a.append(_act_d1(layer.activation, z)[:, None] * tz)

    y = activations[-1]
    _, grad_y = _loss_terms(spec, y)
    match spec.loss:
        case Loss.SQUARED_ERROR:
            tan_grad_y = tan_a[-1]
        case Loss.CROSS_ENTROPY:
            probs = softmax(y)
            tan_grad_y = probs[:, None] * (tan_a[-1] - (probs @ tan_a[-1])[None, :])

    last = layers[-1]
    delta = grad_y * _act_d1(last.activation, pre[-1])
    tan_delta = (_act_d1(last.activation, pre[-1])[:, None] * tan_grad_y
                 + (grad_y * _act_d2(last.activation, pre[-1]))[:, None] * tan_z[-1])
    blocks = []
    for idx in range(len(layers) - 1, -1, -1):
        a_in, tan_a_in = activations[idx], tan_a[idx]
        # d(delta a_in^T)/dx, laid out row-major over (out, in)
        tan_w = tan_delta[:, None, :] * a_in[None, :, None] + delta[:, None, None] * tan_a_in[None, :, :]
        blocks.append(np.vstack([tan_w.reshape(-1, x.size), tan_delta]))
        if idx == 0:
            break
        prev = layers[idx - 1]
        back = layers[idx].weights.T @ delta
        tan_back = layers[idx].weights.T @ tan_delta
        d1 = _act_d1(prev.activation, pre[idx - 1])
        delta = back * d1
        tan_delta = d1[:, None] * tan_back + (back * _act_d2(prev.activation, pre[idx - 1]))[:, None] * tan_z[idx - 1]
    blocks.reverse()
    return np.vstack(blocks)


def jacobian(spec: SharedMapSpec, x) -> Jacobian:
    """
    Analytic Jacobian of the shared map at x

    :param spec:
    :param x:
    :return: p x m Jacobian
    """
    x = _check_input(spec, x)
    match spec.mode:
        case MapMode.VFL_EMBEDDING:
            g = _vfl_jacobian(spec, x)
        case MapMode.HFL_GRADIENT:
            g = _hfl_jacobian(spec, x)
    if not np.all(np.isfinite(g)):
        raise NumericError("jacobian has non finite entries")
    return Jacobian(g, spec.mode, fingerprint(x))


def jacobian_fd(spec: SharedMapSpec, x, h: float = FD_STEP) -> Jacobian:
    """
    Central-difference Jacobian, used as an oracle for jacobian()
    """
    if h <= 0:
        raise ValueError("step must be > 0")
    x = _check_input(spec, x)
    columns = []
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        columns.append((forward(spec, x + step) - forward(spec, x - step)) / (2.0 * h))
    return Jacobian(np.column_stack(columns), spec.mode, fingerprint(x))


def class_center_jacobian(spec: SharedMapSpec,
                          centers: list,
                          labels: list | None = None) -> Jacobian:
    """
    Element-wise mean of the Jacobians at the class centers.

    :param spec: the map
    :param centers: one input per class
    :param labels: optional class label per center; hfl specs are relabelled for each center
    """
    if not centers:
        raise ValueError("at least one center is required")
    if labels is not None and len(labels) != len(centers):
        raise ShapeError("one label per center is required")
    total = None
    for idx, center in enumerate(centers):
        center_spec = spec.with_label(labels[idx]) if labels is not None else spec
        g = jacobian(center_spec, center).g
        total = g if total is None else total + g
    mean_center = np.mean([np.asarray(c, dtype=np.float64) for c in centers], axis=0)
    return Jacobian(total / len(centers), spec.mode, fingerprint(mean_center))


def train_steps(spec: SharedMapSpec,
                instances: list[np.ndarray],
                labels: list,
                steps: int,
                lr: float = 0.1) -> Network:
    """
    A few full-batch gradient steps on (instances, labels), to move the network
    away from its initialization

    :return: the updated network
    """
    if spec.mode != MapMode.HFL_GRADIENT:
        raise ConfigError("training needs an hfl spec carrying a loss")
    if len(instances) != len(labels) or not instances:
        raise ShapeError("one label per instance is required")
    network = spec.network
    theta = network.parameters()
    for step in range(steps):
        grad = np.zeros_like(theta)
        loss = 0.0
        for x, label in zip(instances, labels):
            labelled = spec.with_network(network).with_label(label)
            grad += forward(labelled, x)
            loss += loss_value(labelled, x)
        theta = theta - lr * grad / len(instances)
        network = network.with_parameters(theta)
        log.debug("warm-up step %d, mean loss %.6f", step, loss / len(instances))
    return network
