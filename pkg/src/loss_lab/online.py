"""Optimistic online RL over finite classes with version spaces, for the
sq and bce losses on value classes and the log loss on distribution classes.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .classes import check_completeness
from .losses import LossKind
from .mdp import (
    Policy,
    TabularMdp,
    TransitionData,
    exact_q_star,
    greedy_policy,
    policy_value,
    policy_variance,
    rollout,
)
from .regression import rl_residuals


class EmptyVersionSpaceError(RuntimeError):
    pass


def default_beta(H: int, size: int, delta: float) -> float:
    return 2.0 * math.log(H * size / delta)


@dataclass
class OnlineConfig:
    K: int
    loss: LossKind | str = LossKind.Sq
    beta: float | None = None
    ua_flag: bool = False
    delta: float = 0.05
    seed: int = 0
    mle_targets: str = "sampled"
    check_completeness: bool = True

    def __post_init__(self):
        self.loss = LossKind.parse(self.loss)
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.mle_targets not in ("sampled", "expected"):
            raise ValueError("mle_targets must be 'sampled' or 'expected'")

    def resolve_beta(self, H: int, size: int) -> float:
        return default_beta(H, size, self.delta) if self.beta is None else float(self.beta)


@dataclass
class RunRecord:
    """Per-round trace of one run. ``values`` are exact policy values."""

    vstar: float
    seed: int
    policy_ids: list = field(default_factory=list)
    values: list = field(default_factory=list)
    variances: list = field(default_factory=list)
    witnesses: list = field(default_factory=list)
    space_sizes: list = field(default_factory=list)
    plan_seconds: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def log(self, pid, value, variance, witness, size, plan):
        self.policy_ids.append(pid)
        self.values.append(value)
        self.variances.append(variance)
        self.witnesses.append(witness)
        self.space_sizes.append(size)
        self.plan_seconds.append(plan)

    @property
    def K(self) -> int:
        return len(self.values)

    @property
    def regret(self) -> np.ndarray:
        return np.asarray(self.values) - self.vstar

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def average_regret(self) -> float:
        return float(self.cumulative_regret[-1] / self.K) if self.K else 0.0


def td_target(kind: str, next_table, c: float, xp: int, u: float | None = None, M: int | None = None) -> float:
    """One regression target.

    ``star``: ``c + min_a g(x', a)``. ``dist_star``: ``c + Z`` with ``Z``
    drawn from ``g(x', a')`` at the table's own mean-greedy ``a'``, by
    inverting the CDF at ``u`` and snapping ``c`` to the grid. ``next_table``
    is ``None`` past the horizon.
    """
    if kind == "star":
        return c if next_table is None else c + float(np.min(next_table[xp]))
    if kind != "dist_star":
        raise ValueError("kind must be 'star' or 'dist_star'")
    if next_table is None:
        return c
    M = next_table.shape[-1] - 1 if M is None else M
    row = next_table[xp]
    a = int(np.argmin(row @ (np.arange(M + 1) / M)))
    if u is None:
        u = np.random.default_rng().random()
    cdf = np.cumsum(row[a])
    z = min(int((cdf < u * cdf[-1]).sum()), M)
    return min(int(round(c * M)) + z, M) / M


def rl_version_space(cls, data: TransitionData, loss, beta: float, mode: str = "sampled", rule: Policy | None = None):
    """Member indices whose TD-loss excess is at most ``beta`` at every step."""
    res = rl_residuals(cls, data, loss, rule, mode)
    worst = res.max(axis=1)
    space = np.flatnonzero(worst <= beta)
    if space.size == 0:
        best = int(np.argmin(worst))
        raise EmptyVersionSpaceError(f"version space is empty; member {best} has the smallest residual {worst[best]:.6g}")
    return space


class _PolicyCache:
    def __init__(self, mdp: TabularMdp, means: np.ndarray):
        self.mdp = mdp
        self.means = means
        self._pi = {}
        self._eval = {}

    def policy(self, i: int) -> Policy:
        if i not in self._pi:
            self._pi[i] = greedy_policy(self.means[i])
        return self._pi[i]

    def evaluate(self, pi: Policy):
        key = pi.key()
        if key not in self._eval:
            self._eval[key] = (policy_value(self.mdp, pi), policy_variance(self.mdp, pi))
        return self._eval[key]


def _warn_incomplete(mdp, cls, kind):
    holds, gap, _ = check_completeness(mdp, cls, kind)
    if not holds:
        warnings.warn(f"class is not closed under the {kind} backup (gap {gap:.3g})", stacklevel=3)


def _run(mdp: TabularMdp, cls, cfg: OnlineConfig, kind: str) -> RunRecord:
    if cls.members.shape[1:4] != (mdp.H, mdp.X, mdp.A):
        raise ValueError("class shape does not match the MDP")
    if cfg.check_completeness:
        _warn_incomplete(mdp, cls, kind)
    beta = cfg.resolve_beta(mdp.H, len(cls))
    _, _, vstar = exact_q_star(mdp)
    rec = RunRecord(vstar=vstar, seed=cfg.seed)
    means = cls.means
    start = means[:, 0, mdp.x1].min(axis=1)
    cache = _PolicyCache(mdp, means)
    data = TransitionData(mdp.H, mdp.M)
    round_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.K)
    t_run = time.perf_counter()
    for k in range(cfg.K):
        t0 = time.perf_counter()
        space = rl_version_space(cls, data, cfg.loss, beta, cfg.mle_targets)
        pick = int(space[np.argmin(start[space])])
        pi = cache.policy(pick)
        plan = time.perf_counter() - t0
        value, var = cache.evaluate(pi)
        rec.log(pick, value, var, float(start[pick]), int(space.size), plan)
        data.extend(rollout(mdp, pi, cfg.ua_flag, np.random.default_rng(round_seeds[k])))
    rec.wall_seconds = time.perf_counter() - t_run
    return rec


def run_optimistic(mdp: TabularMdp, cls, cfg: OnlineConfig) -> RunRecord:
    """Each round: keep members within ``beta`` of the best TD loss, play
    the greedy policy of the one with the lowest predicted initial cost.
    """
    if cfg.loss.distributional or cls.distributional:
        raise ValueError("run_optimistic takes a value class with the sq or bce loss")
    return _run(mdp, cls, cfg, "star")


def run_optimistic_dist(mdp: TabularMdp, cls, cfg: OnlineConfig) -> RunRecord:
    """Distributional version: log-loss version spaces, mean-greedy play."""
    if not cls.distributional:
        raise ValueError("run_optimistic_dist takes a distribution class")
    if cfg.loss is not LossKind.Mle:
        cfg = OnlineConfig(**{**cfg.__dict__, "loss": LossKind.Mle})
    return _run(mdp, cls, cfg, "dist_star")
