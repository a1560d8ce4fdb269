"""Regression losses (squared, binary cross-entropy, log-likelihood) and
the population excess-risk quantities built from them.

Scalar losses broadcast over numpy arrays. Population quantities take a
cost-sensitive instance (anything with ``context_probs`` of shape ``(X,)``
and ``cost_mass`` of shape ``(X, A, M + 1)``) and are computed exactly.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .dist import GridDist, bernoulli_hellinger_sq, hellinger_sq_mass, mean_mass, to_grid_index

CLAMP = 1e-12
FLOOR = 1e-12


class LossKind(str, Enum):
    Sq = "sq"
    Bce = "bce"
    Mle = "mle"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown loss {value!r}; expected one of sq, bce, mle") from None

    @property
    def distributional(self) -> bool:
        return self is LossKind.Mle


def sq_loss(pred, target):
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    out = d * d
    return float(out) if out.ndim == 0 else out


def _xlogy(x, y):
    # 0 * log(anything) = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0, 0.0, x * np.log(y))


def bce_loss(pred, target):
    """Cross-entropy of ``target`` under ``pred``; targets need not be binary.

    Predictions are clamped to ``[1e-12, 1 - 1e-12]``.
    """
    p = np.clip(np.asarray(pred, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(target, dtype=np.float64)
    out = -_xlogy(y, p) - _xlogy(1.0 - y, 1.0 - p)
    return float(out) if out.ndim == 0 else out


def mle_loss(pred: GridDist, target: float) -> float:
    """Negative log mass at the grid point of ``target`` (floored at 1e-12)."""
    k = to_grid_index(target, pred.M)
    return float(-np.log(max(pred.mass[k], FLOOR)))


def mle_loss_mass(mass: np.ndarray, index) -> np.ndarray:
    """Array form: ``mass[..., index]`` with the same floor."""
    picked = np.take_along_axis(mass, np.asarray(index)[..., None], axis=-1)[..., 0]
    return -np.log(np.maximum(picked, FLOOR))


def _means(instance) -> np.ndarray:
    return mean_mass(instance.cost_mass)


def excess_sq_risk(f: np.ndarray, instance) -> float:
    """Sum over actions of ``E_x (f(x, a) - mean cost(x, a))^2``."""
    gap = np.asarray(f, dtype=np.float64) - _means(instance)
    return float(instance.context_probs @ (gap * gap).sum(axis=1))


def delta_ber(f: np.ndarray, instance) -> float:
    h = bernoulli_hellinger_sq(_means(instance), np.asarray(f, dtype=np.float64))
    return float(instance.context_probs @ h.sum(axis=1))


def delta_dis(p: np.ndarray, instance) -> float:
    """Expected squared Hellinger distance between ``p`` and the true costs.

    ``p`` is an array of masses with shape ``(X, A, M + 1)``.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != instance.cost_mass.shape:
        raise ValueError(f"hypothesis shape {p.shape} does not match instance {instance.cost_mass.shape}")
    h = hellinger_sq_mass(instance.cost_mass, p)
    return float(instance.context_probs @ h.sum(axis=1))


def exponentiated_excess(loss, hypothesis: np.ndarray, instance) -> float:
    """``-sum_a ln E[exp(loss(truth, c)/2 - loss(hyp, c)/2)]``, exactly.

    For ``Bce`` the hypothesis is a table of means of shape ``(X, A)`` and
    the truth predicts the mean cost. For ``Mle`` it is a table of masses of
    shape ``(X, A, M + 1)`` and the truth is the cost distribution itself.
    """
    loss = LossKind.parse(loss)
    C = instance.cost_mass
    M = C.shape[-1] - 1
    y = np.arange(M + 1) / M
    d = instance.context_probs
    if loss is LossKind.Bce:
        f = np.asarray(hypothesis, dtype=np.float64)
        cbar = mean_mass(C)
        expo = 0.5 * bce_loss(cbar[..., None], y) - 0.5 * bce_loss(f[..., None], y)
    elif loss is LossKind.Mle:
        p = np.asarray(hypothesis, dtype=np.float64)
        if p.shape != C.shape:
            raise ValueError("hypothesis shape does not match instance")
        expo = 0.5 * np.log(np.maximum(p, FLOOR)) - 0.5 * np.log(np.maximum(C, FLOOR))
    else:
        raise ValueError("exponentiated excess is defined for bce and mle only")
    inner = np.sum(C * np.exp(expo), axis=-1)  # (X, A)
    per_action = d @ inner
    return float(-np.sum(np.log(per_action)))
