"""Empirical TD regression losses for finite RL classes.

Every loss is evaluated against all distinct step-``h`` tables of a class
at once, for every distinct step-``h+1`` table used to build targets. The
result is a matrix ``L[g, j]``; version spaces and fitted-Q steps are both
read off it.
"""

from __future__ import annotations

import numpy as np

from .dist import mean_mass
from .losses import CLAMP, FLOOR, LossKind
from .mdp import Policy, TransitionData, next_state_dists


def next_values(next_tables: np.ndarray, probs: np.ndarray | None) -> np.ndarray:
    """Continuation value per next state for each table, ``(J, X)``.

    ``probs=None`` takes the minimum over actions; otherwise the step's
    action probabilities ``(X, A)`` average the table.
    """
    if probs is None:
        return next_tables.min(axis=-1)
    return np.einsum("xa,jxa->jx", probs, next_tables)


def next_dists(next_tables: np.ndarray, probs: np.ndarray | None) -> np.ndarray:
    """Continuation distribution per next state, ``(J, X, M + 1)``.

    With ``probs=None`` each table acts greedily on its own means.
    """
    return np.stack([next_state_dists(t, probs) for t in next_tables])


def _rule_probs(rule: Policy | None, h: int):
    if rule is None or h + 1 >= rule.probs.shape[0]:
        return None
    return rule.probs[h + 1]


def mean_targets(rows: dict, M: int, next_tables: np.ndarray | None, probs, loss: LossKind) -> np.ndarray:
    """Regression targets ``c + v(x')`` for every row and next table, ``(n, J)``."""
    c = rows["c"] / M
    if next_tables is None:
        tau = c[:, None]
    else:
        tau = c[:, None] + next_values(next_tables, probs)[:, rows["xp"]].T
    if loss is LossKind.Bce:
        tau = np.clip(tau, 0.0, 1.0)
    return tau


def mean_loss_matrix(tables: np.ndarray, rows: dict, M: int, next_tables, probs, loss) -> np.ndarray:
    """Summed sq or bce loss of each table (rows) against each target set (columns).

    Rows are first reduced to per-(x, a) counts and target sums, so the
    cost is linear in the data for each target set plus a small matrix
    product over tables.
    """
    loss = LossKind.parse(loss)
    G, X, A = tables.shape
    J = 1 if next_tables is None else len(next_tables)
    if rows["x"].size == 0:
        return np.zeros((G, J))
    tau = mean_targets(rows, M, next_tables, probs, loss)  # (n, J)
    xa = rows["x"] * A + rows["a"]
    idx = (xa[:, None] * J + np.arange(J)).ravel()
    S = np.bincount(idx, weights=tau.ravel(), minlength=X * A * J).reshape(X * A, J)
    cnt = np.bincount(xa, minlength=X * A).astype(np.float64)
    g = tables.reshape(G, -1)
    if loss is LossKind.Sq:
        Q = np.bincount(idx, weights=(tau * tau).ravel(), minlength=X * A * J).reshape(X * A, J)
        return ((g * g) @ cnt)[:, None] - 2.0 * g @ S + Q.sum(axis=0)[None, :]
    if loss is LossKind.Bce:
        p = np.clip(g, CLAMP, 1.0 - CLAMP)
        return -(np.log(p) @ S + np.log1p(-p) @ (cnt[:, None] - S))
    raise ValueError("mean classes take the sq or bce loss")


def dist_target_counts(rows: dict, M: int, X: int, A: int, next_tables, probs, mode: str = "sampled") -> np.ndarray:
    """Histogram of distributional targets per target set, ``(J, X * A * (M + 1))``.

    ``sampled``: each row's target is ``c + Z`` with ``Z`` drawn from the
    continuation distribution by inverting its CDF at the row's stored
    uniform. ``expected``: each row contributes the whole shifted
    continuation distribution (the expected log loss).
    """
    width = X * A * (M + 1)
    base = (rows["x"] * A + rows["a"]) * (M + 1)
    c = rows["c"]
    if next_tables is None:
        counts = np.bincount(base + c, minlength=width).astype(np.float64)
        return counts[None]
    cont = next_dists(next_tables, probs)  # (J, X, M + 1)
    out = np.zeros((len(cont), width))
    if mode == "sampled":
        cdf = np.cumsum(cont, axis=-1)
        xp, u = rows["xp"], rows["u"]
        groups = [(x, np.flatnonzero(xp == x)) for x in np.unique(xp)]
        z = np.empty(xp.size, dtype=np.int64)
        for j in range(len(cont)):
            for x, sel in groups:
                z[sel] = np.searchsorted(cdf[j, x], u[sel] * cdf[j, x, -1], side="left")
            t = np.minimum(c + np.minimum(z, M), M)
            out[j] = np.bincount(base + t, minlength=width)
        return out
    if mode != "expected":
        raise ValueError("mode must be 'sampled' or 'expected'")
    key = np.stack([rows["x"], rows["a"], c, rows["xp"]], axis=1)
    uniq, mult = np.unique(key, axis=0, return_counts=True)
    for (x, a, ci, xp), m in zip(uniq, mult):
        start = (x * A + a) * (M + 1)
        for j in range(len(cont)):
            shifted = np.zeros(M + 1)
            shifted[ci:] = cont[j, xp, : M + 1 - ci]
            shifted[M] += cont[j, xp, M + 1 - ci :].sum()
            out[j, start : start + M + 1] += m * shifted
    return out


def dist_loss_matrix(tables: np.ndarray, rows: dict, M: int, next_tables, probs, mode: str = "sampled") -> np.ndarray:
    G, X, A = tables.shape[:3]
    J = 1 if next_tables is None else len(next_tables)
    if rows["x"].size == 0:
        return np.zeros((G, J))
    counts = dist_target_counts(rows, M, X, A, next_tables, probs, mode)
    hit = np.flatnonzero(counts.any(axis=0))
    nll = -np.log(np.maximum(tables.reshape(G, -1)[:, hit], FLOOR))
    return nll @ counts[:, hit].T


def loss_matrix(cls, data: TransitionData, h: int, loss, rule: Policy | None = None, mode: str = "sampled") -> np.ndarray:
    """``L[g, j]``: loss of distinct step-h table ``g`` with targets from
    distinct step-(h+1) table ``j`` (a single column at the last step).
    """
    loss = LossKind.parse(loss)
    if loss.distributional != cls.distributional:
        raise ValueError(f"loss {loss.value} does not match the class type")
    tables, _ = cls.slice(h)
    nxt = cls.slice(h + 1)[0] if h + 1 < cls.H else None
    rows = data.step(h)
    probs = _rule_probs(rule, h)
    if loss.distributional:
        return dist_loss_matrix(tables, rows, data.M, nxt, probs, mode)
    return mean_loss_matrix(tables, rows, data.M, nxt, probs, loss)


def rl_residuals(cls, data: TransitionData, loss, rule: Policy | None = None, mode: str = "sampled") -> np.ndarray:
    """Per-member, per-step excess of the empirical TD loss over the best
    step-h table for the member's own next-step targets, ``(N, H)``.
    """
    res = np.zeros((len(cls), cls.H))
    for h in range(cls.H):
        L = loss_matrix(cls, data, h, loss, rule, mode)
        gap = L - L.min(axis=0, keepdims=True)
        _, gi = cls.slice(h)
        ji = cls.slice(h + 1)[1] if h + 1 < cls.H else np.zeros(len(cls), dtype=np.int64)
        res[:, h] = gap[gi, ji]
    return res


def fit_step(tables: np.ndarray, rows: dict, M: int, nxt_table, probs, loss, mode: str = "sampled") -> int:
    """Index of the empirical-loss minimizer among ``tables`` (lowest index on ties)."""
    loss = LossKind.parse(loss)
    nxt = None if nxt_table is None else nxt_table[None]
    if loss.distributional:
        L = dist_loss_matrix(tables, rows, M, nxt, probs, mode)
    else:
        L = mean_loss_matrix(tables, rows, M, nxt, probs, loss)
    return int(np.argmin(L[:, 0]))


def table_means(tables: np.ndarray, distributional: bool) -> np.ndarray:
    return mean_mass(tables) if distributional else tables
