"""Single-hidden-layer maneuver classifier (23 -> 27 tanh -> 3 softmax)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .features import N_FEATURES, Standardizer

N_HIDDEN = 27
N_CLASSES = 3


class DegenerateTrainingSet(ValueError):
    pass


@dataclass(frozen=True)
class ManeuverProbabilities:
    p_lcl: float
    p_flw: float
    p_lcr: float

    def __post_init__(self):
        vals = self.as_array()
        if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12) or abs(vals.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability simplex point: {vals}")

    @classmethod
    def from_array(cls, p) -> "ManeuverProbabilities":
        return cls(float(p[0]), float(p[1]), float(p[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.p_lcl, self.p_flw, self.p_lcr])


@dataclass
class MlpModel:
    W1: np.ndarray  # (hidden, in)
    b1: np.ndarray
    W2: np.ndarray  # (classes, hidden)
    b2: np.ndarray
    scaler: Standardizer
    loss_history: list = field(default_factory=list)
    class_prior: Optional[np.ndarray] = None  # training label frequencies

    def __post_init__(self):
        if self.class_prior is not None:
            self.class_prior = np.asarray(self.class_prior, dtype=float)
            if self.class_prior.shape != (N_CLASSES,) or np.any(self.class_prior <= 0):
                raise ValueError("class_prior needs one positive entry per maneuver")
        if self.W1.shape != (N_HIDDEN, N_FEATURES) or self.b1.shape != (N_HIDDEN,):
            raise ValueError("hidden layer must be 23 -> 27")
        if self.W2.shape != (N_CLASSES, N_HIDDEN) or self.b2.shape != (N_CLASSES,):
            raise ValueError("output layer must be 27 -> 3")

    @classmethod
    def zeros(cls) -> "MlpModel":
        return cls(np.zeros((N_HIDDEN, N_FEATURES)), np.zeros(N_HIDDEN), np.zeros((N_CLASSES, N_HIDDEN)),
                   np.zeros(N_CLASSES), Standardizer(np.zeros(N_FEATURES), np.ones(N_FEATURES)))

    def params(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def predict_proba(self, X) -> np.ndarray:
        Z = self.scaler.transform(np.atleast_2d(X))
        return _forward(self.params(), Z)[0]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def posterior(self, X) -> np.ndarray:
        """Class probabilities under the training label frequencies.

        Training reweights classes by inverse frequency, which inflates the
        rare lane-change classes; multiplying by the prior undoes that for
        uses that need calibrated probabilities, such as expert gating.
        """
        P = self.predict_proba(X)
        if self.class_prior is None:
            return P
        P = P * self.class_prior
        return P / P.sum(axis=1, keepdims=True)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(p, Z):
    H = np.tanh(Z @ p["W1"].T + p["b1"])
    return _softmax(H @ p["W2"].T + p["b2"]), H


def classify_maneuver(mlp: MlpModel, features) -> ManeuverProbabilities:
    probs = mlp.predict_proba(features)[0]
    return ManeuverProbabilities.from_array(probs / probs.sum())


def loss_and_grad(params: Dict[str, np.ndarray], Z: np.ndarray, y: np.ndarray, w: np.ndarray,
                  l2: float = 0.0):
    """Weighted mean cross-entropy of standardized inputs ``Z`` and its gradient.

    ``l2`` adds ``0.5 * l2 * |W|^2`` over both weight matrices (biases are not decayed).
    """
    P, H = _forward(params, Z)
    n = len(y)
    wsum = w.sum()
    loss = -float(np.sum(w * np.log(np.clip(P[np.arange(n), y], 1e-300, None)))) / wsum
    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G *= (w / wsum)[:, None]
    grads = {"W2": G.T @ H, "b2": G.sum(axis=0)}
    GH = (G @ params["W2"]) * (1.0 - H * H)
    grads["W1"] = GH.T @ Z
    grads["b1"] = GH.sum(axis=0)
    if l2:
        loss += 0.5 * l2 * float(np.sum(params["W1"] ** 2) + np.sum(params["W2"] ** 2))
        grads["W1"] = grads["W1"] + l2 * params["W1"]
        grads["W2"] = grads["W2"] + l2 * params["W2"]
    return loss, grads


def class_weights(y: np.ndarray) -> np.ndarray:
    counts = np.bincount(y, minlength=N_CLASSES).astype(float)
    return (len(y) / (N_CLASSES * counts))[y]


def train_mlp(X, y, seed: int = 0, epochs: int = 200, learning_rate: float = 0.01,
              batch_size: int = 256, l2: float = 0.0, scaler: Optional[Standardizer] = None) -> MlpModel:
    """Adam on inverse-frequency weighted cross-entropy; deterministic per seed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[1] != N_FEATURES or len(X) != len(y):
        raise DegenerateTrainingSet("expected an (n, 23) feature matrix with one label per row")
    if not np.all(np.isfinite(X)):
        raise DegenerateTrainingSet("non-finite features")
    if np.any(np.bincount(y, minlength=N_CLASSES)[:N_CLASSES] == 0) or y.min() < 0 or y.max() >= N_CLASSES:
        raise DegenerateTrainingSet("every maneuver class needs at least one sample")

    rng = np.random.default_rng(seed)
    scaler = scaler or Standardizer.fit(X)
    Z = scaler.transform(X)
    w = class_weights(y)
    lim1 = np.sqrt(6.0 / (N_FEATURES + N_HIDDEN))
    lim2 = np.sqrt(6.0 / (N_HIDDEN + N_CLASSES))
    p = {
        "W1": rng.uniform(-lim1, lim1, (N_HIDDEN, N_FEATURES)),
        "b1": np.zeros(N_HIDDEN),
        "W2": rng.uniform(-lim2, lim2, (N_CLASSES, N_HIDDEN)),
        "b2": np.zeros(N_CLASSES),
    }
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(v) for k, v in p.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = len(y)
    bs = min(batch_size, n)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, g = loss_and_grad(p, Z[idx], y[idx], w[idx], l2)
            step += 1
            for k in p:
                m[k] = b1 * m[k] + (1 - b1) * g[k]
                v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
                mhat = m[k] / (1 - b1**step)
                vhat = v[k] / (1 - b2**step)
                p[k] = p[k] - learning_rate * mhat / (np.sqrt(vhat) + eps)
        history.append(loss_and_grad(p, Z, y, w, l2)[0])
    prior = np.bincount(y, minlength=N_CLASSES) / n
    return MlpModel(p["W1"], p["b1"], p["W2"], p["b2"], scaler, history, prior)


def balanced_accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    recalls = [np.mean(y_pred[y_true == c] == c) for c in range(N_CLASSES) if np.any(y_true == c)]
    return float(np.mean(recalls))
