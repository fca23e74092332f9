"""Deterministic linear classifier trained by subgradient descent on hinge loss.

Training walks samples in their given order with a fixed learning-rate
schedule, so two fits on the same arrays produce bit-identical weights.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np


class LinearBinaryClassifier:
    def __init__(self, weights: np.ndarray, bias: float):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)

    @classmethod
    def fit(
        cls,
        samples: Sequence[Sequence[float]],
        labels: Sequence[int],
        *,
        epochs: int = 120,
        lr: float = 0.5,
        reg: float = 1e-4,
    ) -> "LinearBinaryClassifier":
        """Labels are +1 / -1.  No shuffling: order is part of the contract."""
        x = np.asarray(samples, dtype=np.float64)
        y = np.asarray(labels, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError("samples/labels shape mismatch")
        if not set(np.unique(y)) <= {-1.0, 1.0}:
            raise ValueError("labels must be +1 or -1")
        w = np.zeros(x.shape[1], dtype=np.float64)
        b = 0.0
        for epoch in range(epochs):
            step = lr / (1.0 + 0.05 * epoch)
            for i in range(x.shape[0]):
                margin = y[i] * (float(w @ x[i]) + b)
                w *= 1.0 - step * reg
                if margin < 1.0:
                    w += step * y[i] * x[i]
                    b += step * y[i]
        return cls(w, b)

    def decision(self, features: Sequence[float]) -> float:
        f = np.asarray(features, dtype=np.float64)
        return float(self.weights @ f) + self.bias

    def confidence(self, features: Sequence[float]) -> float:
        """Squashes the margin into (0, 1); 0.5 sits on the boundary."""
        return 1.0 / (1.0 + math.exp(-self.decision(features)))

    def predict(self, features: Sequence[float]) -> bool:
        return self.decision(features) >= 0.0

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearBinaryClassifier":
        return cls(np.asarray(data["weights"], dtype=np.float64), data["bias"])
