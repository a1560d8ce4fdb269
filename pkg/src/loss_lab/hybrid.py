"""Fitted-Q iteration on offline plus online data. No version spaces."""

from __future__ import annotations

import time
import warnings

import numpy as np

from .losses import LossKind
from .mdp import TabularMdp, TransitionData, exact_q_star, greedy_policy, rollout
from .online import OnlineConfig, RunRecord, _PolicyCache
from .regression import fit_step, table_means


def fqi_fit(cls, data: TransitionData, loss, mode: str = "sampled") -> np.ndarray:
    """Backward per-step ERM over each step's distinct tables, with targets
    built from the table already fitted one step later.
    """
    loss = LossKind.parse(loss)
    if loss.distributional != cls.distributional:
        raise ValueError(f"loss {loss.value} does not match the class type")
    fitted = [None] * cls.H
    nxt = None
    for h in range(cls.H - 1, -1, -1):
        rows = data.step(h)
        if rows["x"].size == 0:
            raise ValueError(f"no data at step {h}")
        tables, _ = cls.slice(h)
        fitted[h] = tables[fit_step(tables, rows, data.M, nxt, None, loss, mode)]
        nxt = fitted[h]
    return np.stack(fitted)


def _run(mdp: TabularMdp, cls, cfg: OnlineConfig, offline: TransitionData) -> RunRecord:
    if cls.members.shape[1:4] != (mdp.H, mdp.X, mdp.A):
        raise ValueError("class shape does not match the MDP")
    short = min(offline.size(h) for h in range(mdp.H))
    if short < cfg.K:
        warnings.warn(f"offline data has {short} tuples at some step, fewer than K = {cfg.K}", stacklevel=3)
    _, _, vstar = exact_q_star(mdp)
    rec = RunRecord(vstar=vstar, seed=cfg.seed)
    cache = _PolicyCache(mdp, None)
    data = offline.copy()
    round_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.K)
    t_run = time.perf_counter()
    for k in range(cfg.K):
        t0 = time.perf_counter()
        f = fqi_fit(cls, data, cfg.loss, cfg.mle_targets)
        means = table_means(f, cls.distributional)
        pi = greedy_policy(means)
        plan = time.perf_counter() - t0
        value, var = cache.evaluate(pi)
        rec.log(-1, value, var, float(means[0, mdp.x1].min()), 0, plan)
        data.extend(rollout(mdp, pi, cfg.ua_flag, np.random.default_rng(round_seeds[k])))
    rec.wall_seconds = time.perf_counter() - t_run
    return rec


def run_fqi_hybrid(mdp: TabularMdp, cls, cfg: OnlineConfig, offline: TransitionData) -> RunRecord:
    """Each round: fit on offline data plus all online data so far, play greedily."""
    if cfg.loss.distributional or cls.distributional:
        raise ValueError("run_fqi_hybrid takes a value class with the sq or bce loss")
    return _run(mdp, cls, cfg, offline)


def run_dist_fqi_hybrid(mdp: TabularMdp, cls, cfg: OnlineConfig, offline: TransitionData) -> RunRecord:
    """Distributional version: log-loss fits, mean-greedy play."""
    if not cls.distributional:
        raise ValueError("run_dist_fqi_hybrid takes a distribution class")
    if cfg.loss is not LossKind.Mle:
        cfg = OnlineConfig(**{**cfg.__dict__, "loss": LossKind.Mle})
    return _run(mdp, cls, cfg, offline)
