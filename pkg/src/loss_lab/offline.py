"""Pessimistic offline RL over the greedy policies of a finite class."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_simplex
from .classes import RlDistClass, RlMeanClass, greedy_policies
from .losses import LossKind
from .mdp import Policy, TabularMdp, TransitionData, sample_transitions, visitation_dist
from .online import default_beta
from .regression import rl_residuals


def behavior_distribution(mdp: TabularMdp, behavior: Policy, uniform_mix: float = 0.0) -> np.ndarray:
    """Per-step state-action distribution of a behavior policy, optionally
    with its actions mixed toward uniform, shape ``(H, X, A)``.
    """
    if not 0.0 <= uniform_mix <= 1.0:
        raise ValueError("uniform_mix must lie in [0, 1]")
    probs = (1.0 - uniform_mix) * behavior.probs + uniform_mix / mdp.A
    return visitation_dist(mdp, Policy(probs))


def generate_offline(mdp: TabularMdp, nu, n: int, seed) -> TransitionData:
    """``n`` i.i.d. tuples per step with ``(x, a) ~ nu_h``.

    ``nu`` is an ``(H, X, A)`` array or a behavior :class:`Policy` (whose
    visitation distribution is used).
    """
    if isinstance(nu, Policy):
        nu = visitation_dist(mdp, nu)
    nu = np.asarray(nu, dtype=np.float64)
    if nu.shape != (mdp.H, mdp.X, mdp.A):
        raise ValueError("nu must have shape (H, X, A)")
    nu = check_simplex(nu.reshape(mdp.H, -1), "nu")
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = TransitionData(mdp.H, mdp.M)
    for h in range(mdp.H):
        xa = rng.choice(mdp.X * mdp.A, size=n, p=nu[h] / nu[h].sum())
        x, a = np.divmod(xa, mdp.A)
        c, xp, u = sample_transitions(mdp, h, x, a, rng)
        out.add(h, x, a, c, xp, u)
    return out


def _pessimistic(cls, data: TransitionData, x1: int, loss, beta: float, mode: str):
    policies = greedy_policies(cls)
    start = cls.means[:, 0, x1].min(axis=1)
    diagnostics = []
    best = None
    for i, pi in enumerate(policies):
        worst = rl_residuals(cls, data, loss, pi, mode).max(axis=1)
        space = np.flatnonzero(worst <= beta)
        if space.size == 0:
            diagnostics.append({"policy": i, "skipped": True, "space_size": 0})
            continue
        member = int(space[np.argmax(start[space])])
        est = float(start[member])
        diagnostics.append({"policy": i, "skipped": False, "space_size": int(space.size), "member": member, "estimate": est})
        if best is None or est < best[1]:
            best = (i, est)
    if best is None:
        raise RuntimeError("every policy has an empty version space")
    skipped = sum(d["skipped"] for d in diagnostics)
    if skipped:
        warnings.warn(f"{skipped} of {len(policies)} policies had empty version spaces and were skipped", stacklevel=3)
    return policies[best[0]], best[1], {"policies": policies, "per_policy": diagnostics, "chosen": best[0], "beta": beta}


def _beta(H, cls, beta, delta):
    return default_beta(H, len(cls), delta) if beta is None else float(beta)


def run_pessimistic(mdp: TabularMdp, cls: RlMeanClass, data: TransitionData, loss="sq", beta: float | None = None, delta: float = 0.05):
    """For each greedy policy of the class, take the member with the highest
    predicted initial cost among those fitting that policy's TD targets;
    return the policy whose pessimistic estimate is lowest.

    Returns ``(policy, estimate, diagnostics)``.
    """
    loss = LossKind.parse(loss)
    if loss.distributional or cls.distributional:
        raise ValueError("run_pessimistic takes a value class with the sq or bce loss")
    return _pessimistic(cls, data, mdp.x1, loss, _beta(mdp.H, cls, beta, delta), "sampled")


def run_pessimistic_dist(
    mdp: TabularMdp, cls: RlDistClass, data: TransitionData, beta: float | None = None, delta: float = 0.05, mode: str = "sampled"
):
    """Distributional version with log-loss version spaces."""
    if not cls.distributional:
        raise ValueError("run_pessimistic_dist takes a distribution class")
    return _pessimistic(cls, data, mdp.x1, LossKind.Mle, _beta(mdp.H, cls, beta, delta), mode)


class PessimisticOfflineRL(BaseEstimator):
    """Estimator front end: ``fit`` on a :class:`TransitionData`, ``predict``
    the learned policy's action for ``(h, x)`` pairs.

    ``hypotheses`` is an array of value tuples ``(N, H, X, A)`` for the sq
    and bce losses or of distribution tuples ``(N, H, X, A, M + 1)`` for mle.
    """

    def __init__(self, hypotheses=None, loss="sq", beta=None, delta=0.05, x1=0):
        self.hypotheses = hypotheses
        self.loss = loss
        self.beta = beta
        self.delta = delta
        self.x1 = x1

    def fit(self, data: TransitionData, y=None):
        loss = LossKind.parse(self.loss)
        cls = RlDistClass(self.hypotheses) if loss.distributional else RlMeanClass(self.hypotheses)
        beta = _beta(cls.H, cls, self.beta, self.delta)
        pi, est, diag = _pessimistic(cls, data, self.x1, loss, beta, "sampled")
        self.policy_ = pi
        self.value_estimate_ = est
        self.diagnostics_ = diag
        self.beta_ = beta
        return self

    def predict(self, X):
        """``X`` holds ``(h, x)`` rows; returns the greedy action per row."""
        X = np.asarray(X, dtype=np.int64).reshape(-1, 2)
        return self.policy_.act[X[:, 0], X[:, 1]]
