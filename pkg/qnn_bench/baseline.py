"""Parameter-matched classical dense network.

input(dim²) -> hidden(2, tanh) -> output(1, tanh) gives 13, 23 and 37
parameters for dim 2, 3 and 4. It trains on the same loss as the QNN,
1 - l·ŷ, with inputs presented as ±1 features.
"""
import logging
import time
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, validator

from .core.config import config
from .data import BinarizedImage, DatasetSplit, expand_multiplicity
from .metrics import EpochMetrics, accuracy
from .models import InvalidArgumentError

LayerGradient = Tuple[np.ndarray, np.ndarray]


class Activation(str, Enum):
    tanh = "tanh"
    identity = "identity"


class DenseLayer(BaseModel):
    weights: np.ndarray
    biases: np.ndarray
    activation: Activation = Activation.tanh

    class Config:
        arbitrary_types_allowed = True

    @validator("biases")
    def one_bias_per_output(cls, v: np.ndarray, values):
        weights = values.get("weights")
        if weights is not None and v.shape != (weights.shape[0],):
            raise ValueError(f"biases of shape {v.shape} do not match weights {weights.shape}")
        return v

    def activate(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z) if self.activation == Activation.tanh else z

    def derivative(self, a: np.ndarray) -> np.ndarray:
        # in terms of the activation output
        return 1.0 - a ** 2 if self.activation == Activation.tanh else np.ones_like(a)


class DenseNet(BaseModel):
    layers: List[DenseLayer]

    @property
    def input_size(self) -> int:
        return self.layers[0].weights.shape[1]

    def clone(self) -> "DenseNet":
        return DenseNet(
            layers=[
                DenseLayer(
                    weights=layer.weights.copy(),
                    biases=layer.biases.copy(),
                    activation=layer.activation,
                )
                for layer in self.layers
            ]
        )


def build_fair(dim: int, seed: int = config.DEFAULT_SEED) -> DenseNet:
    if dim not in config.SUPPORTED_DIMS:
        raise InvalidArgumentError(f"{dim} is not a supported input dimension")
    rng = np.random.default_rng(seed)
    scale = config.FAIR_INIT_SCALE
    sizes = [dim * dim, config.FAIR_HIDDEN_WIDTH, 1]
    layers = [
        DenseLayer(
            weights=rng.uniform(-scale, scale, size=(n_out, n_in)),
            biases=np.zeros(n_out),
            activation=Activation.tanh,
        )
        for n_in, n_out in zip(sizes[:-1], sizes[1:])
    ]
    net = DenseNet(layers=layers)
    logging.debug("Built fair %dx%d network with %d parameters", dim, dim, parameter_count(net))
    return net


def parameter_count(net: DenseNet) -> int:
    return sum(layer.weights.size + layer.biases.size for layer in net.layers)


def bits_to_features(bits: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(bits, dtype=np.float64).reshape(-1) - 1.0


def _activations(net: DenseNet, X: np.ndarray) -> List[np.ndarray]:
    if X.ndim != 2 or X.shape[1] != net.input_size:
        raise InvalidArgumentError(f"expected {net.input_size} features, got shape {X.shape}")
    outputs = [X]
    for layer in net.layers:
        outputs.append(layer.activate(outputs[-1] @ layer.weights.T + layer.biases))
    return outputs


def forward_batch(net: DenseNet, X: np.ndarray) -> np.ndarray:
    return _activations(net, np.asarray(X, dtype=np.float64))[-1][:, 0]


def forward(net: DenseNet, features: np.ndarray) -> float:
    return float(forward_batch(net, np.asarray(features, dtype=np.float64).reshape(1, -1))[0])


def loss_and_gradient(
    net: DenseNet, X: np.ndarray, y: np.ndarray
) -> Tuple[float, List[LayerGradient]]:
    """Mean of 1 - y·ŷ over the batch and its gradient per layer, by backpropagation."""
    outputs = _activations(net, np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    prediction = outputs[-1][:, 0]
    loss = float(np.mean(1.0 - y * prediction))
    upstream = (-y / len(y)).reshape(-1, 1)
    grads: List[LayerGradient] = []
    for layer, a_in, a_out in zip(reversed(net.layers), reversed(outputs[:-1]), reversed(outputs[1:])):
        delta = upstream * layer.derivative(a_out)
        grads.append((delta.T @ a_in, delta.sum(axis=0)))
        upstream = delta @ layer.weights
    grads.reverse()
    return loss, grads


def _features_and_labels(images: Sequence[BinarizedImage]) -> Tuple[np.ndarray, np.ndarray]:
    X = np.array([bits_to_features(image.bits) for image in images])
    y = np.array([image.label for image in images], dtype=np.float64)
    return X, y


def evaluate_fair(net: DenseNet, images: Sequence[BinarizedImage]) -> float:
    X, y = _features_and_labels(images)
    return accuracy(forward_batch(net, X), y)


def train_fair(
    net: DenseNet,
    split: DatasetSplit,
    epochs: int,
    batch_size: int,
    r: float,
    seed: int,
) -> Tuple[DenseNet, List[EpochMetrics]]:
    if not split.train or not split.test:
        raise InvalidArgumentError("cannot train on a split with an empty train or test set")
    if epochs < 1 or batch_size < 1 or r <= 0:
        raise InvalidArgumentError(
            f"epochs ({epochs}), batch size ({batch_size}) and learning rate ({r}) must be positive"
        )
    net = net.clone()
    X, y = _features_and_labels(expand_multiplicity(split.train))
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(y), batch_size):
            batch = order[start:start + batch_size]
            loss, grads = loss_and_gradient(net, X[batch], y[batch])
            for layer, (d_weights, d_biases) in zip(net.layers, grads):
                layer.weights = layer.weights - r * d_weights
                layer.biases = layer.biases - r * d_biases
            losses.append(loss)
        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            test_accuracy=evaluate_fair(net, split.test),
            wall_time=time.perf_counter() - started,
        )
        logging.info(
            "fair epoch %d/%d: train loss %.4f, test accuracy %.4f",
            epoch, epochs, metrics.train_loss, metrics.test_accuracy,
        )
        history.append(metrics)
    return net, history
