"""Logistic regression over the 7-feature vectors, fit by gradient descent.

Features are standardized with training mean/std (constant columns get std 1)
and the objective is mean binary cross-entropy plus ``l2/2 * |w|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, NumericError


@dataclass
class LrModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def zeros(cls, n_features: int = 7) -> "LrModel":
        return cls(np.zeros(n_features), 0.0, np.zeros(n_features), np.ones(n_features))

    def to_dict(self) -> dict:
        return {
            "weights": [float(x) for x in self.weights],
            "bias": float(self.bias),
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
        }

    @classmethod
    def from_dict(cls, d) -> "LrModel":
        return cls(np.array(d["weights"]), float(d["bias"]), np.array(d["mean"]), np.array(d["std"]))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def objective(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Loss and gradient in standardized space; ``theta = [w..., b]``."""
    w, b = theta[:-1], theta[-1]
    z = Z @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w @ w
    r = (_sigmoid(z) - y) / len(y)
    grad = np.concatenate([Z.T @ r + l2 * w, [r.sum()]])
    return float(loss), grad


def lr_train(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-2,
    max_iter: int = 50_000,
    tol: float = 1e-10,
) -> LrModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError(f"lr_train: features {X.shape} vs labels {y.shape}")
    if len(np.unique(y)) < 2:
        raise DataError("lr_train: training labels contain a single class")
    mean, std = standardize(X)
    Z = (X - mean) / std
    # step 1/L with L bounding the Hessian of the smooth objective
    aug = np.hstack([Z, np.ones((len(Z), 1))])
    L = 0.25 * np.linalg.eigvalsh(aug.T @ aug / len(Z)).max() + l2
    step = 1.0 / L
    theta = np.zeros(Z.shape[1] + 1)
    for _ in range(max_iter):
        _, grad = objective(theta, Z, y, l2)
        if not np.all(np.isfinite(grad)):
            raise NumericError("lr_train: non-finite gradient")
        if np.linalg.norm(grad) < tol:
            break
        theta -= step * grad
    return LrModel(theta[:-1].copy(), float(theta[-1]), mean, std)


def lr_predict(model: LrModel, features: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return _sigmoid(((X - model.mean) / model.std) @ model.weights + model.bias)
