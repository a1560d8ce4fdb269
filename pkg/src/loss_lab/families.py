"""Instance families indexed by sample size (CSC) or number of rounds (RL)
on which the loss functions separate in rate.

Each family pairs a true instance with a tiny realizable class: the truth
plus decoys. A decoy agrees with the data except on an action whose error
a given loss can or cannot see at the relevant scale, and its greedy
policy is suboptimal by a known gap.
"""

from __future__ import annotations

import math

import numpy as np

from .classes import RlDistClass, RlMeanClass, chain_class, closed_product_class
from .csc import CscDistClass, CscInstance, MeanClass
from .dist import mean_mass
from .losses import bce_loss, sq_loss
from .mdp import TabularMdp, dist_backup_from_next, next_state_dists, random_mdp


def _point(M: int, value: float) -> np.ndarray:
    out = np.zeros(M + 1)
    out[int(round(value * M))] = 1.0
    return out


def _coin(M: int, p: float) -> np.ndarray:
    out = np.zeros(M + 1)
    out[0], out[M] = 1.0 - p, p
    return out


def _mix_up(M: int, base: np.ndarray, w: float) -> np.ndarray:
    """``base`` with weight ``w`` moved to the top grid point."""
    out = (1.0 - w) * base
    out[..., M] += w
    return out


def _mix_down(M: int, base: np.ndarray, w: float) -> np.ndarray:
    out = (1.0 - w) * base
    out[..., 0] += w
    return out


# -- cost-sensitive classification --------------------------------------------

def csc_small_cost_family(n: int) -> tuple[CscInstance, MeanClass]:
    """Optimal cost about ``5/(8n)``.

    A common context has a rare-event action (mean ``1/(8n)``), a sure cost
    ``~1/(8 sqrt n)`` and a sure cost ``1/(4n)``. A context of probability
    ``1/n`` has a fair coin. The first decoy predicts 0 for that coin and
    overshoots the common context slightly, so one lucky row buys it the sq
    loss and it plays the ``1/sqrt n`` action. The second decoy triples the
    rare-event mean and plays the ``1/(4n)`` action; ruling it out takes
    ``Theta(1)`` events, which bce needs and sq also needs.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    M = 8 * n
    mu = 1.0 / (8 * n)
    nu = max(round(M / (8.0 * math.sqrt(n))), 3) / M
    eps = 1.0 / (4.0 * math.sqrt(n))
    C = np.zeros((2, 3, M + 1))
    C[0, 0] = _coin(M, mu)
    C[0, 1] = _point(M, nu)
    C[0, 2] = _point(M, 2 * mu)
    C[1, 0] = _coin(M, 0.5)
    C[1, 1] = _point(M, 0.5)
    C[1, 2] = _point(M, 1.0)
    inst = CscInstance(np.array([1.0 - 1.0 / n, 1.0 / n]), C)
    truth = inst.means
    decoy_sq = np.array([[eps, nu, eps], [0.0, 0.5, 1.0]])
    decoy_rare = np.array([[3 * mu, nu, 2 * mu], [0.5, 0.5, 1.0]])
    return inst, MeanClass(np.stack([truth, decoy_sq, decoy_rare]))


def csc_zero_variance_family(n: int, gap_scale: float = 0.5, noise_shift: float = 0.8, fine_gap: float = 0.5):
    """Optimal cost 1/2 with zero variance; returns ``(instance, dist class)``.

    Context A has a noisy suboptimal coin (mean 3/4); context B has three
    sure costs ``1/2``, ``1/2 + e`` and ``1/2 + g`` with ``e = gap_scale /
    sqrt n`` and ``g = fine_gap / n``. The first decoy shifts the coin's mean
    by ``noise_shift / sqrt n`` and moves every B prediction by about
    ``e / 2`` so that it plays the ``e`` action: mean-based losses only see a
    squared error of order ``1/n`` there, while the log loss sees a mass
    shift of order ``e``. The second decoy shifts the coin the other way and moves
    weight ``~2g`` of the best sure cost to 1, so it plays the ``g`` action.
    The mean class is the class of means.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    M = 16 * n
    e = round(M * gap_scale / math.sqrt(n)) / M
    g = round(M * fine_gap / n) / M
    if not 0 < g < e < 0.25:
        raise ValueError("gap parameters out of range for this n")
    eta = noise_shift / math.sqrt(n)
    if eta > 0.25:
        raise ValueError(f"noise shift {eta:.3g} pushes the coin out of [0, 1]; increase n or lower noise_shift")
    C = np.zeros((2, 3, M + 1))
    C[0, 0] = _coin(M, 0.75)
    C[0, 1] = _point(M, 0.5)
    C[0, 2] = _point(M, 1.0)
    C[1, 0] = _point(M, 0.5)
    C[1, 1] = _point(M, 0.5 + e)
    C[1, 2] = _point(M, 0.5 + g)
    inst = CscInstance(np.array([0.5, 0.5]), C)

    # decoy one: B means become 1/2 + e/2 (+ a grid step on actions 0 and 2)
    target = 0.5 + e / 2
    step = 1.0 / M
    d1 = C.copy()
    d1[0, 0] = _coin(M, 0.75 + eta)
    d1[1, 0] = _mix_up(M, C[1, 0], (target + step - 0.5) / 0.5)
    d1[1, 1] = _mix_down(M, C[1, 1], (0.5 + e - target) / (0.5 + e))
    d1[1, 2] = _mix_up(M, C[1, 2], (target + step - 0.5 - g) / (0.5 - g))

    d2 = C.copy()
    d2[0, 0] = _coin(M, 0.75 - eta)
    d2[1, 0] = _mix_up(M, C[1, 0], (g + step) / 0.5)
    return inst, CscDistClass(np.stack([C, d1, d2]))


def csc_mean_class(dist_class: CscDistClass) -> MeanClass:
    return MeanClass(dist_class.means)


# -- online RL ------------------------------------------------------------------

def _two_step_mdp(M: int, good: np.ndarray, bad: np.ndarray) -> TabularMdp:
    """Start state 0 steers to state 1 (action 0) or state 2 (action 1);
    the step-2 cost depends only on the state.
    """
    X, A = 3, 2
    trans = np.zeros((2, X, A, X))
    trans[0, :, :, 0] = 1.0
    trans[0, 0, 0] = np.eye(X)[1]
    trans[0, 0, 1] = np.eye(X)[2]
    trans[1, :, :, 0] = 1.0
    cost = np.zeros((2, X, A, M + 1))
    cost[..., 0] = 1.0
    cost[1, 1] = good
    cost[1, 2] = bad
    return TabularMdp(trans, cost, 0)


def _mean_chain(mdp: TabularMdp, last: np.ndarray) -> np.ndarray:
    first = mdp.cost_mean[0] + mdp.trans[0] @ last.min(axis=-1)
    return np.stack([first, last])


def _dist_chain(mdp: TabularMdp, last: np.ndarray) -> np.ndarray:
    first = dist_backup_from_next(mdp, 0, next_state_dists(last, None))
    return np.stack([first, last])


def _largest_gap(K: int, beta: float, per_play, M: int, base: float, hi: float) -> float:
    """Largest grid gap ``d <= hi`` with ``K * per_play(d) <= 0.95 beta``."""
    best = 1
    for k in range(1, int(hi * M) + 1):
        if K * per_play(k / M) <= 0.95 * beta:
            best = k
        else:
            break
    return best / M


def online_small_cost_family(K: int, delta: float = 0.05, M: int = 1024):
    """Two-step MDP with ``V* = 1/(2K)``; returns ``(mdp, mean class)``.

    Action 0 leads to a rare unit cost, action 1 to a sure cost ``nu``. The
    decoy claims the sure cost is 0. Under sq loss each visit reveals only
    ``nu^2``, and ``nu`` is set so that K visits stay inside the version
    space, so the decoy is played every round. Under bce each visit costs it
    ``~ nu ln(1e12)``.
    """
    beta = 2.0 * math.log(2 * 2 / delta)
    mu = 1.0 / (2 * K)
    nu = _largest_gap(K, beta, lambda d: sq_loss(0.0, d), M, 0.0, 1.0)
    mdp = _two_step_mdp(M, _coin(M, mu), _point(M, nu))
    truth = mdp.cost_mean[1]
    decoy = truth.copy()
    decoy[2] = 0.0
    members = np.stack([_mean_chain(mdp, decoy), _mean_chain(mdp, truth)])
    return mdp, RlMeanClass(members)


def online_zero_variance_family(K: int, delta: float = 0.05, M: int = 1024):
    """Deterministic two-step MDP with ``V* = 1/2``; returns ``(mdp, dist class)``.

    Action 1 leads to a sure cost ``1/2 + gap``. The decoy moves part of
    that point mass to 0 so its mean is just below ``1/2``. The bce residual
    per visit is about ``2 gap^2`` and ``gap`` keeps K visits inside the
    version space; the log-loss residual per visit is about ``2 gap``.
    """
    beta = 2.0 * math.log(2 * 2 / delta)
    low = 0.5 - 1.0 / M

    def per_play(d):
        return bce_loss(low, 0.5 + d) - bce_loss(0.5 + d, 0.5 + d)

    gap = _largest_gap(K, beta, per_play, M, 0.5, 0.45)
    mdp = _two_step_mdp(M, _point(M, 0.5), _point(M, 0.5 + gap))
    truth = mdp.cost_mass[1]
    decoy = truth.copy()
    decoy[2] = _mix_down(M, truth[2], 1.0 - low / (0.5 + gap))
    members = np.stack([_dist_chain(mdp, decoy), _dist_chain(mdp, truth)])
    return mdp, RlDistClass(members)


# -- hybrid RL: classification families behind a random first step --------------------

def embed_csc(instance: CscInstance, tables: np.ndarray, distributional: bool):
    """Two-step MDP whose first step (one dummy state, cost 0) draws the
    context and whose second step is the classification problem.

    ``tables`` are per-member mean tables ``(N, X, A)`` or mass tables
    ``(N, X, A, M + 1)``. Returns ``(mdp, class)``; first-step tables are the
    backups of the second-step ones, so the class is complete.
    """
    X, A, M = instance.X, instance.A, instance.M
    trans = np.zeros((2, X, A, X))
    trans[0] = instance.context_probs
    trans[1, :, :, 0] = 1.0
    cost = np.zeros((2, X, A, M + 1))
    cost[0, ..., 0] = 1.0
    cost[1] = instance.cost_mass
    mdp = TabularMdp(trans, cost, 0)
    chain = _dist_chain if distributional else _mean_chain
    members = np.stack([chain(mdp, np.asarray(t, dtype=np.float64)) for t in tables])
    return mdp, (RlDistClass(members) if distributional else RlMeanClass(members))


def hybrid_small_cost_family(K: int):
    inst, cls = csc_small_cost_family(K)
    return embed_csc(inst, cls.values, False)


def hybrid_zero_variance_family(K: int, distributional: bool, **kw):
    inst, dcls = csc_zero_variance_family(K, **kw)
    return embed_csc(inst, dcls.mass if distributional else mean_mass(dcls.mass), distributional)


# -- random instances ---------------------------------------------------------------

def random_rl_family(
    H: int = 3, X: int = 4, A: int = 2, M: int = 12, seed=0, terminals: int = 2,
    distributional: bool = False, closed: bool = False, noise: float = 0.3,
):
    """Random MDP with a realizable class grown from last-step tables.

    The seed tables are the true last-step costs plus ``terminals - 1``
    perturbations. ``closed=False`` gives a chain class (complete under the
    optimality backup); ``closed=True`` gives the closed product class
    (complete under every backup the algorithms apply).
    """
    rng = np.random.default_rng(seed)
    build = closed_product_class if closed else chain_class
    # Both class types are drawn every time so the MDP does not depend on
    # which one is requested; closed classes can exceed the size cap, in
    # which case the whole instance is redrawn.
    for _ in range(100):
        mdp = random_mdp(H, X, A, M, rng)
        cap = M // H
        low = np.zeros((terminals - 1, X, A, M + 1))
        low[..., : cap + 1] = rng.dirichlet(np.ones(cap + 1), size=(terminals - 1, X, A))
        shift = noise / H * rng.uniform(-1, 1, size=(terminals - 1, X, A))
        mass = np.concatenate([mdp.cost_mass[-1][None], (1 - noise) * mdp.cost_mass[-1] + noise * low])
        means = np.concatenate([mdp.cost_mean[-1][None], np.clip(mdp.cost_mean[-1] + shift, 0.0, 1.0 / H)])
        try:
            built = (build(mdp, means), build(mdp, mass, distributional=True))
        except ValueError:
            continue
        return mdp, built[1] if distributional else built[0]
    raise RuntimeError("no random instance produced a class within the size cap")
