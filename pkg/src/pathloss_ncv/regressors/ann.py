"""One-hidden-layer perceptron (6 -> H tanh -> 1 linear) trained by mini-batch SGD."""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator

from pathloss_ncv.exceptions import DivergenceError, HyperparameterError
from pathloss_ncv.types import Dataset, coerce_array, serialize_array

logger = logging.getLogger(__name__)


class AnnModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    family: Literal["ANN"] = "ANN"
    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    output_weights: np.ndarray
    output_bias: float
    loss_history: list[float] = Field(default_factory=list)

    @field_validator("hidden_weights", mode="before")
    def weights_to_array(cls, v):
        return coerce_array(v, np.float64, ndim=2)

    @field_validator("hidden_bias", "output_weights", mode="before")
    def vectors_to_array(cls, v):
        return coerce_array(v, np.float64, ndim=1)

    @field_serializer("hidden_weights", "hidden_bias", "output_weights")
    def arrays_to_lists(self, array: np.ndarray):
        return serialize_array(array)

    @property
    def hidden_units(self) -> int:
        return int(self.hidden_bias.shape[0])

    def __eq__(self, other):
        if not isinstance(other, AnnModel):
            return False
        return (
            np.array_equal(self.hidden_weights, other.hidden_weights)
            and np.array_equal(self.hidden_bias, other.hidden_bias)
            and np.array_equal(self.output_weights, other.output_weights)
            and self.output_bias == other.output_bias
        )


class AnnGradients(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    output_weights: np.ndarray
    output_bias: float


def init_ann(
    n_inputs: int, hidden_units: int, rng: np.random.Generator, output_bias: float = 0.0
) -> AnnModel:
    """Glorot-uniform weights, zero hidden biases."""
    limit_hidden = np.sqrt(6.0 / (n_inputs + hidden_units))
    limit_output = np.sqrt(6.0 / (hidden_units + 1))
    return AnnModel(
        hidden_weights=rng.uniform(-limit_hidden, limit_hidden, (n_inputs, hidden_units)),
        hidden_bias=np.zeros(hidden_units),
        output_weights=rng.uniform(-limit_output, limit_output, hidden_units),
        output_bias=output_bias,
    )


def ann_predict(model: AnnModel, features: np.ndarray) -> np.ndarray:
    hidden = np.tanh(np.atleast_2d(features) @ model.hidden_weights + model.hidden_bias)
    return hidden @ model.output_weights + model.output_bias


def _backprop(
    weights: list, features: np.ndarray, targets: np.ndarray
) -> tuple[float, list]:
    w1, b1, w2, b2 = weights
    hidden = np.tanh(features @ w1 + b1)
    residual = hidden @ w2 + b2 - targets
    loss = float(np.mean(residual**2))
    d_out = 2.0 * residual / features.shape[0]
    d_hidden = np.outer(d_out, w2) * (1.0 - hidden**2)
    grads = [features.T @ d_hidden, d_hidden.sum(axis=0), hidden.T @ d_out, d_out.sum()]
    return loss, grads


def loss_and_gradients(
    model: AnnModel, features: np.ndarray, targets: np.ndarray
) -> tuple[float, AnnGradients]:
    """Mean squared error of the network on a batch and its exact gradients."""
    weights = [
        model.hidden_weights,
        model.hidden_bias,
        model.output_weights,
        model.output_bias,
    ]
    loss, (g1, gb1, g2, gb2) = _backprop(
        weights, np.atleast_2d(features), np.asarray(targets, dtype=np.float64)
    )
    grads = AnnGradients(
        hidden_weights=g1, hidden_bias=gb1, output_weights=g2, output_bias=float(gb2)
    )
    return loss, grads


def ann_fit(
    train: Dataset,
    hidden_units: int = 16,
    learning_rate: float = 0.01,
    epochs: int = 200,
    batch_size: int = 32,
    seed: int = 0,
) -> AnnModel:
    """Trains the network on (already normalized) features.

    The output bias starts at the mean training target so optimization starts
    from the constant predictor. One generator seeded with `seed` draws the
    initial weights and then the per-epoch shuffles. A non-finite loss raises
    DivergenceError. Zero epochs return the initial network.
    """
    if hidden_units < 1 or learning_rate <= 0 or epochs < 0 or batch_size < 1:
        raise HyperparameterError(
            f"Invalid ANN hyperparameters hidden_units={hidden_units}, learning_rate={learning_rate}, epochs={epochs}, batch_size={batch_size}."
        )
    rng = np.random.default_rng(seed)
    features = np.asarray(train.features)
    targets = np.asarray(train.targets)
    n = train.n
    initial = init_ann(
        features.shape[1], hidden_units, rng, output_bias=float(targets.mean())
    )
    weights = [
        initial.hidden_weights.copy(),
        initial.hidden_bias.copy(),
        initial.output_weights.copy(),
        initial.output_bias,
    ]
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                batch = order[start : start + batch_size]
                loss, grads = _backprop(weights, features[batch], targets[batch])
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"ANN loss became non-finite in epoch {epoch} (learning_rate={learning_rate})."
                    )
                weights = [w - learning_rate * g for w, g in zip(weights, grads)]
            w1, b1, w2, b2 = weights
            epoch_loss = float(
                np.mean((np.tanh(features @ w1 + b1) @ w2 + b2 - targets) ** 2)
            )
            if not np.isfinite(epoch_loss):
                raise DivergenceError(
                    f"ANN training loss became non-finite after epoch {epoch} (learning_rate={learning_rate})."
                )
            history.append(epoch_loss)
    if history:
        logger.debug("ANN trained for %d epochs, final MSE %.4g", epochs, history[-1])
    w1, b1, w2, b2 = weights
    return AnnModel(
        hidden_weights=w1,
        hidden_bias=b1,
        output_weights=w2,
        output_bias=float(b2),
        loss_history=history,
    )
