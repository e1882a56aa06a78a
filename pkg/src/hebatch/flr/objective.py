"""Logistic-regression objectives: the exact forms and their quadratic
Taylor replacements that keep everything inside Paillier's add/scale set.

Labels are +-1 throughout. The fore gradient is the per-instance residue
0.25 * theta.x - 0.5 * y; multiplied against the feature matrix it yields
the approximate gradient, which is what the encrypted path evaluates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class MiniBatch:
    ids: tuple
    features: np.ndarray  # (s, d)
    labels: np.ndarray | None = None  # +-1, guest/homogeneous side only

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) < 1:
            raise ValueError("features must be a non-empty (s, d) matrix")
        if self.labels is not None and not np.all(np.abs(self.labels) == 1.0):
            raise ValueError("labels must be strictly in {-1, +1}")

    @property
    def size(self) -> int:
        return len(self.features)


@dataclass
class ModelState:
    theta: np.ndarray
    learning_rate: float = 0.15
    epoch: int = 0

    def step(self, gradient: np.ndarray) -> None:
        self.theta = self.theta - self.learning_rate * np.asarray(gradient)


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def exact_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(1/s) sum_i (sigmoid(y_i theta.x_i) - 1) y_i x_i."""
    z = y * (X @ theta)
    return ((sigmoid(z) - 1.0) * y) @ X / len(y)


def exact_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    z = y * (X @ theta)
    return float(np.logaddexp(0.0, -z).mean())


def taylor_fore_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 0.25 * (X @ theta) - 0.5 * y


def taylor_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return taylor_fore_gradient(theta, X, y) @ X / len(y)


def taylor_gradient_from_fore(fore: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-party gradient slice given an already-computed fore gradient."""
    return fore @ X / len(X)


def taylor_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ValueError("loss set is empty")
    z = X @ theta
    return float(np.mean(LOG2 - 0.5 * y * z + 0.125 * z * z))


def taylor_loss_terms(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-instance quadratic loss terms (before averaging)."""
    return LOG2 - 0.5 * y * z + 0.125 * z * z


@dataclass
class EpochTrace:
    losses: list[float]
    gradients: list[np.ndarray]
    theta: np.ndarray


class CentralizedTaylorTrainer:
    """Plaintext oracle: the same batch schedule and update rule as the
    federated run, on the joined dataset, with no encryption anywhere."""

    def __init__(self, X: np.ndarray, y: np.ndarray, batches, learning_rate: float,
                 loss_indices=None):
        self.X = X
        self.y = y
        self.batches = list(batches)
        self.learning_rate = learning_rate
        self.loss_indices = (np.arange(len(y)) if loss_indices is None
                             else np.asarray(loss_indices))

    def train(self, epochs: int) -> EpochTrace:
        theta = np.zeros(self.X.shape[1])
        losses, gradients = [], []
        last_grad = np.zeros_like(theta)
        for _ in range(epochs):
            for idx in self.batches:
                Xb, yb = self.X[idx], self.y[idx]
                grad = taylor_gradient(theta, Xb, yb)
                theta = theta - self.learning_rate * grad
                last_grad = grad
            losses.append(taylor_loss(theta, self.X[self.loss_indices],
                                      self.y[self.loss_indices]))
            gradients.append(last_grad)
        return EpochTrace(losses, gradients, theta)
