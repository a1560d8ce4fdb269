"""Independent oracles shared by the tests.

Everything here enumerates or loops explicitly instead of calling the
package's dynamic-programming or vectorized code.
"""

import itertools

import numpy as np
import pytest

from loss_lab.mdp import TabularMdp


def enumerate_return_dist(mdp: TabularMdp, probs: np.ndarray, h: int, x: int, a: int) -> dict:
    """Law of the total cost from ``(h, x, a)`` by walking every path.

    Returns ``{grid index: probability}``; costs are grid indices, so the
    sum is exact in integer arithmetic.
    """
    out = {}

    def walk(t, s, act, acc, w):
        for c in np.flatnonzero(mdp.cost_mass[t, s, act]):
            pc = w * mdp.cost_mass[t, s, act, c]
            total = acc + int(c)
            if t == mdp.H - 1:
                key = min(total, mdp.M)
                out[key] = out.get(key, 0.0) + pc
                continue
            for y in np.flatnonzero(mdp.trans[t, s, act]):
                py = pc * mdp.trans[t, s, act, y]
                for b in np.flatnonzero(probs[t + 1, y]):
                    walk(t + 1, y, b, total, py * probs[t + 1, y, b])

    walk(h, x, a, 0, 1.0)
    return out


def enumerate_q(mdp: TabularMdp, probs: np.ndarray) -> np.ndarray:
    Q = np.zeros((mdp.H, mdp.X, mdp.A))
    for h, x, a in itertools.product(range(mdp.H), range(mdp.X), range(mdp.A)):
        dist = enumerate_return_dist(mdp, probs, h, x, a)
        Q[h, x, a] = sum(k * p for k, p in dist.items()) / mdp.M
    return Q


def all_deterministic_policies(H, X, A):
    for flat in itertools.product(range(A), repeat=H * X):
        yield np.eye(A)[np.array(flat).reshape(H, X)]


def grid_mdp(rng, H, X, A, M) -> TabularMdp:
    """Random MDP whose per-step costs sit on grid points ``<= 1/H``."""
    cap = M // H
    trans = rng.dirichlet(np.ones(X), size=(H, X, A))
    cost = np.zeros((H, X, A, M + 1))
    cost[..., : cap + 1] = rng.dirichlet(np.full(cap + 1, 0.5), size=(H, X, A))
    return TabularMdp(trans, cost, int(rng.integers(X)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
