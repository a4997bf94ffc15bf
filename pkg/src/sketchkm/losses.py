"""Lipschitz losses with batched values/subgradients, and evaluation metrics.

Batched functions take predictions ``Z`` of shape (n, d) and targets ``Y``
of shape (n, d), or (n, 1) for the pinball family, whose scalar target is
broadcast against the d quantile predictions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("square", "huber", "eps_insensitive", "pinball")


@dataclass(frozen=True)
class LossSpec:
    family: str
    kappa: float = 1.0
    epsilon: float = 0.0
    taus: tuple = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}")
        if self.family == "huber" and not self.kappa > 0:
            raise ValueError("huber kappa must be positive")
        if self.family == "eps_insensitive" and self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.family == "pinball":
            t = np.asarray(self.taus, dtype=np.float64)
            if t.size < 1 or np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) <= 0):
                raise ValueError("pinball levels must be strictly increasing in (0, 1)")
            object.__setattr__(self, "taus", tuple(float(v) for v in t))

    @classmethod
    def square(cls):
        return cls("square")

    @classmethod
    def huber(cls, kappa):
        return cls("huber", kappa=float(kappa))

    @classmethod
    def eps_insensitive(cls, epsilon):
        return cls("eps_insensitive", epsilon=float(epsilon))

    @classmethod
    def pinball(cls, taus):
        return cls("pinball", taus=tuple(taus))

    @property
    def output_dim(self):
        return len(self.taus) if self.family == "pinball" else None

    def lipschitz(self, d=1):
        """Lipschitz constant in the prediction (None for the square loss)."""
        if self.family == "huber":
            return self.kappa
        if self.family == "eps_insensitive":
            return 1.0
        if self.family == "pinball":
            t = np.asarray(self.taus)
            return float(np.max(np.maximum(t, 1 - t)) * np.sqrt(t.size))
        return None

    def to_dict(self):
        return {"family": self.family, "kappa": self.kappa,
                "epsilon": self.epsilon, "taus": list(self.taus)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], kappa=d.get("kappa", 1.0),
                   epsilon=d.get("epsilon", 0.0), taus=tuple(d.get("taus", ())))


def _prep(spec, Z, Y):
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if spec.family == "pinball":
        d = len(spec.taus)
        if Z.shape[1] != d:
            raise ValueError(f"pinball loss with {d} levels got {Z.shape[1]} predictions")
        if Y.shape[1] not in (1, d):
            raise ValueError("pinball target must be scalar per sample")
    elif Z.shape != Y.shape:
        raise ValueError(f"shape mismatch: predictions {Z.shape} vs targets {Y.shape}")
    if Z.shape[0] != Y.shape[0]:
        raise ValueError("prediction/target sample counts differ")
    return Z, Y


def pinball_residual(taus, R):
    """Sum over levels of tau_j r_j (r_j >= 0) or (tau_j - 1) r_j (r_j < 0)."""
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(taus, dtype=np.float64)
    return np.sum(np.where(R >= 0, t * R, (t - 1.0) * R), axis=-1)


def values(spec: LossSpec, Z, Y) -> np.ndarray:
    """Per-sample losses, shape (n,)."""
    Z, Y = _prep(spec, Z, Y)
    if spec.family == "pinball":
        # residual target - prediction, so level tau estimates the tau-quantile
        return pinball_residual(spec.taus, Y - Z)
    U = Z - Y
    if spec.family == "square":
        return 0.5 * np.sum(U * U, axis=1)
    nrm = np.sqrt(np.sum(U * U, axis=1))
    if spec.family == "huber":
        k = spec.kappa
        return np.where(nrm <= k, 0.5 * nrm * nrm, k * (nrm - 0.5 * k))
    return np.maximum(nrm - spec.epsilon, 0.0)


def subgradients(spec: LossSpec, Z, Y) -> np.ndarray:
    """Per-sample subgradients with respect to the predictions, shape (n, d)."""
    Z, Y = _prep(spec, Z, Y)
    if spec.family == "pinball":
        t = np.asarray(spec.taus)
        R = Y - Z
        return np.where(R > 0, -t, np.where(R < 0, 1.0 - t, 0.0))
    U = Z - Y
    if spec.family == "square":
        return U
    nrm = np.sqrt(np.sum(U * U, axis=1, keepdims=True))
    safe = np.where(nrm > 0, nrm, 1.0)
    if spec.family == "huber":
        return np.where(nrm <= spec.kappa, U, spec.kappa * U / safe)
    return np.where(nrm > spec.epsilon, U / safe, 0.0)


def loss_value(spec: LossSpec, z, y) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return float(values(spec, z[None, :], y[None, :])[0])


def loss_subgradient(spec: LossSpec, z, y) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return subgradients(spec, z[None, :], y[None, :])[0]


# ---------------------------------------------------------------- metrics

METRICS = ("relative_mse", "pinball", "crossing", "rrmse", "arrmse")


def relative_mse(pred, target):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    denom = np.sum((target - target.mean()) ** 2)
    if denom <= 0:
        raise ValueError("targets have zero variance")
    return float(np.sum((pred - target) ** 2) / denom)


def rrmse(pred, target, train_mean):
    """Per-target relative RMSE against the constant train-mean predictor."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64).T).T
    target = np.atleast_2d(np.asarray(target, dtype=np.float64).T).T
    mean = np.asarray(train_mean, dtype=np.float64).reshape(1, -1)
    denom = np.sum((mean - target) ** 2, axis=0)
    if np.any(denom <= 0):
        raise ValueError("a target equals its training mean everywhere")
    return np.sqrt(np.sum((pred - target) ** 2, axis=0) / denom)


def arrmse(pred, target, train_mean):
    return float(np.mean(rrmse(pred, target, train_mean)))


def pinball_test_loss(pred, target, taus):
    """Summed joint pinball loss over test points."""
    spec = LossSpec.pinball(taus)
    return float(np.sum(values(spec, pred, target)))


def crossing_loss(pred):
    """Mean over points of sum_j max(0, q_j - q_{j+1}) for level-sorted quantiles."""
    Q = np.asarray(pred, dtype=np.float64)
    if Q.ndim != 2:
        raise ValueError("quantile predictions must be (n, d)")
    if Q.shape[1] < 2:
        return 0.0
    return float(np.mean(np.sum(np.maximum(0.0, Q[:, :-1] - Q[:, 1:]), axis=1)))


def metric(kind, predictions, targets=None, baseline=None, taus=None):
    """Dispatch for the metric names in ``METRICS``.

    ``baseline`` is the per-target training mean (rrmse/arrmse); ``taus`` the
    quantile levels (pinball).
    """
    if kind == "relative_mse":
        return relative_mse(predictions, targets)
    if kind == "pinball":
        return pinball_test_loss(predictions, targets, taus)
    if kind == "crossing":
        return crossing_loss(predictions)
    if kind == "rrmse":
        return rrmse(predictions, targets, baseline)
    if kind == "arrmse":
        return arrmse(predictions, targets, baseline)
    raise ValueError(f"unknown metric {kind!r}")
