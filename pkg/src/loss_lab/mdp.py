"""Finite-horizon tabular MDPs with grid-valued costs.

Steps are indexed ``h = 0 .. H-1`` in code. A value tuple ``f`` is an array of
shape ``(H, X, A)`` and a distribution tuple ``p`` has shape
``(H, X, A, M + 1)``; the step after the last is the zero function (or the
point mass at zero). All argmins break ties toward the lowest action.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_float_array, check_index_array, check_simplex, frozen
from .dist import convolve_mass, mean_mass, variance_mass

RETURN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite-horizon MDP.

    Parameters
    ----------
    trans : array of shape (H, X, A, X)
        ``trans[h, x, a]`` is the next-state distribution.
    cost_mass : array of shape (H, X, A, M + 1)
        Grid distribution of the cost paid at ``(h, x, a)``.
    x1 : int
        Fixed initial state.
    """

    trans: np.ndarray
    cost_mass: np.ndarray
    x1: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        P = check_simplex(as_float_array(self.trans, "trans", 4), "trans")
        C = check_simplex(as_float_array(self.cost_mass, "cost_mass", 4), "cost_mass")
        H, X, A, X2 = P.shape
        if X2 != X or C.shape[:3] != (H, X, A):
            raise ValueError(f"trans {P.shape} and cost_mass {C.shape} are inconsistent")
        if not 0 <= int(self.x1) < X:
            raise ValueError("x1 out of range")
        M = C.shape[-1] - 1
        top = np.array([np.max(np.nonzero(C[h].reshape(-1, M + 1).any(axis=0))[0]) for h in range(H)])
        if top.sum() > M * (1.0 + RETURN_TOL):
            raise ValueError(
                f"the largest possible return is {top.sum() / M:.6g} > 1; scale costs so returns stay in [0, 1]"
            )
        object.__setattr__(self, "trans", frozen(P))
        object.__setattr__(self, "cost_mass", frozen(C))
        object.__setattr__(self, "x1", int(self.x1))

    @property
    def H(self) -> int:
        return self.trans.shape[0]

    @property
    def X(self) -> int:
        return self.trans.shape[1]

    @property
    def A(self) -> int:
        return self.trans.shape[2]

    @property
    def M(self) -> int:
        return self.cost_mass.shape[-1] - 1

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = frozen(fn())
        return self._cache[key]

    @property
    def cost_mean(self) -> np.ndarray:
        return self._memo("cost_mean", lambda: mean_mass(self.cost_mass))

    @property
    def cost_var(self) -> np.ndarray:
        return self._memo("cost_var", lambda: variance_mass(self.cost_mass))

    @property
    def cost_cdf(self) -> np.ndarray:
        return self._memo("cost_cdf", lambda: np.cumsum(self.cost_mass, axis=-1))

    @property
    def trans_cdf(self) -> np.ndarray:
        return self._memo("trans_cdf", lambda: np.cumsum(self.trans, axis=-1))

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "X": self.X,
            "A": self.A,
            "grid_M": self.M,
            "trans": self.trans.tolist(),
            "cost_mass": self.cost_mass.tolist(),
            "x1": self.x1,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        missing = [k for k in ("H", "X", "A", "grid_M", "trans", "cost_mass", "x1") if k not in doc]
        if missing:
            raise ValueError(f"MDP document is missing fields: {missing}")
        mdp = cls(np.array(doc["trans"], dtype=float), np.array(doc["cost_mass"], dtype=float), int(doc["x1"]))
        if (mdp.H, mdp.X, mdp.A, mdp.M) != (doc["H"], doc["X"], doc["A"], doc["grid_M"]):
            raise ValueError("declared sizes do not match the tables")
        return mdp

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-step action distributions, shape ``(H, X, A)``.

    Deterministic policies are one-hot; :attr:`act` recovers the table.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = check_simplex(as_float_array(self.probs, "probs", 3), "probs")
        object.__setattr__(self, "probs", frozen(p))

    @classmethod
    def deterministic(cls, act, A: int) -> "Policy":
        act = np.asarray(act, dtype=np.int64)
        check_index_array(act, A, "act")
        probs = np.zeros(act.shape + (A,))
        np.put_along_axis(probs, act[..., None], 1.0, axis=-1)
        return cls(probs)

    @classmethod
    def uniform(cls, H: int, X: int, A: int) -> "Policy":
        return cls(np.full((H, X, A), 1.0 / A))

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    @property
    def act(self) -> np.ndarray:
        if not self.is_deterministic:
            raise ValueError("policy is stochastic")
        return np.argmax(self.probs, axis=-1)

    def key(self) -> bytes:
        return self.probs.tobytes()

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.key())


def greedy_policy(f: np.ndarray) -> Policy:
    """Greedy policy of a value tuple ``(H, X, A)`` or a distribution tuple."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 4:
        f = mean_mass(f)
    return Policy.deterministic(np.argmin(f, axis=-1), f.shape[-1])


def _next_values(mdp: TabularMdp, pi: Policy, f_next: np.ndarray, h: int) -> np.ndarray:
    """``E[f_{h+1}(x', pi_{h+1}(x'))]`` for every (x, a) at step h."""
    v = np.einsum("xa,xa->x", pi.probs[h + 1], f_next)
    return mdp.trans[h] @ v


def exact_q_pi(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """Q-function tuple of ``pi`` by backward recursion."""
    Q = np.zeros((mdp.H, mdp.X, mdp.A))
    Q[-1] = mdp.cost_mean[-1]
    for h in range(mdp.H - 2, -1, -1):
        Q[h] = mdp.cost_mean[h] + _next_values(mdp, pi, Q[h + 1], h)
    return Q


def policy_value(mdp: TabularMdp, pi: Policy) -> float:
    Q = exact_q_pi(mdp, pi)
    return float(pi.probs[0, mdp.x1] @ Q[0, mdp.x1])


def exact_q_star(mdp: TabularMdp) -> tuple[np.ndarray, Policy, float]:
    """Optimal Q tuple, its greedy policy and the optimal value."""
    Q = np.zeros((mdp.H, mdp.X, mdp.A))
    Q[-1] = mdp.cost_mean[-1]
    for h in range(mdp.H - 2, -1, -1):
        Q[h] = mdp.cost_mean[h] + mdp.trans[h] @ Q[h + 1].min(axis=-1)
    pi = greedy_policy(Q)
    return Q, pi, float(Q[0, mdp.x1].min())


def exact_return_dist(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """Return distribution tuple of ``pi`` by distributional backward recursion."""
    H, X, A, M = mdp.H, mdp.X, mdp.A, mdp.M
    p = np.zeros((H, X, A, M + 1))
    p[-1] = mdp.cost_mass[-1]
    for h in range(H - 2, -1, -1):
        nxt = np.einsum("xa,xak->xk", pi.probs[h + 1], p[h + 1])
        mix = np.einsum("yaz,zk->yak", mdp.trans[h], nxt)
        for x in range(X):
            for a in range(A):
                p[h, x, a] = convolve_mass(mix[x, a], mdp.cost_mass[h, x, a])
    return p


def policy_variance(mdp: TabularMdp, pi: Policy) -> float:
    """Variance of the total cost of ``pi`` from the initial state."""
    p = exact_return_dist(mdp, pi)
    start = pi.probs[0, mdp.x1] @ p[0, mdp.x1]
    return float(variance_mass(start))


def policy_variance_ltv(mdp: TabularMdp, pi: Policy) -> float:
    """Same quantity through the law of total variance.

    ``sum_h E_pi[Var(c_h + V_{h+1}(x_{h+1}) | x_h, a_h)]`` plus the spread of
    the first action's value under a stochastic first step. Cost and next
    state are drawn independently given ``(x, a)``.
    """
    Q = exact_q_pi(mdp, pi)
    d = visitation_dist(mdp, pi)
    total = 0.0
    for h in range(mdp.H):
        if h + 1 < mdp.H:
            v = np.einsum("xa,xa->x", pi.probs[h + 1], Q[h + 1])
            m1 = mdp.trans[h] @ v
            spread = mdp.trans[h] @ (v * v) - m1 * m1
        else:
            spread = 0.0
        cond = mdp.cost_var[h] + spread
        if h + 1 < mdp.H:
            # action randomness at the next step
            qv = np.einsum("xa,xa->x", pi.probs[h + 1], Q[h + 1] ** 2) - np.einsum("xa,xa->x", pi.probs[h + 1], Q[h + 1]) ** 2
            cond = cond + mdp.trans[h] @ qv
        total += float(np.sum(d[h] * cond))
    q0 = Q[0, mdp.x1]
    w = pi.probs[0, mdp.x1]
    total += float(w @ (q0 * q0) - (w @ q0) ** 2)
    return max(total, 0.0)


def visitation_dist(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """State-action occupancy at each step, shape ``(H, X, A)``."""
    d = np.zeros((mdp.H, mdp.X, mdp.A))
    s = np.zeros(mdp.X)
    s[mdp.x1] = 1.0
    for h in range(mdp.H):
        d[h] = s[:, None] * pi.probs[h]
        s = np.einsum("xa,xay->y", d[h], mdp.trans[h])
    return d


def coverage_coefficient(mdp: TabularMdp, pi: Policy, nu: np.ndarray) -> float:
    """``max_h max_{x,a} d^pi_h(x, a) / nu_h(x, a)``; infinite off-support."""
    nu = np.asarray(nu, dtype=np.float64)
    if nu.shape != (mdp.H, mdp.X, mdp.A):
        raise ValueError("nu must have shape (H, X, A)")
    check_simplex(nu.reshape(mdp.H, -1), "nu")
    d = visitation_dist(mdp, pi)
    if np.any((d > 0) & (nu <= 0)):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d > 0, d / np.where(nu > 0, nu, 1.0), 0.0)
    return float(r.max())


BACKUP_KINDS = ("pi", "star", "dist_pi", "dist_star")


def bellman_backup(mdp: TabularMdp, kind: str, hyp: np.ndarray, h: int, pi: Policy | None = None) -> np.ndarray:
    """Apply one backup at step ``h`` to the step-``h+1`` part of ``hyp``.

    ``hyp`` is a full tuple; only ``hyp[h + 1]`` is read (the zero function or
    point mass at zero past the horizon).
    """
    if kind not in BACKUP_KINDS:
        raise ValueError(f"kind must be one of {BACKUP_KINDS}")
    if kind.endswith("pi") and pi is None:
        raise ValueError("a policy is required for the pi backups")
    hyp = np.asarray(hyp, dtype=np.float64)
    last = h + 1 >= mdp.H
    if not kind.startswith("dist"):
        if last:
            return mdp.cost_mean[h].copy()
        nxt = hyp[h + 1]
        if kind == "star":
            v = nxt.min(axis=-1)
        else:
            v = np.einsum("xa,xa->x", pi.probs[h + 1], nxt)
        return mdp.cost_mean[h] + mdp.trans[h] @ v
    if last:
        return mdp.cost_mass[h].copy()
    return dist_backup_from_next(mdp, h, next_state_dists(hyp[h + 1], None if kind == "dist_star" else pi.probs[h + 1]))


def next_state_dists(p_next: np.ndarray, probs: np.ndarray | None) -> np.ndarray:
    """Per-state distribution of the continuation, ``(X, M + 1)``.

    With ``probs=None`` the action is the mean-greedy one.
    """
    if probs is None:
        a = np.argmin(mean_mass(p_next), axis=-1)
        return p_next[np.arange(p_next.shape[0]), a]
    return np.einsum("xa,xak->xk", probs, p_next)


def dist_backup_from_next(mdp: TabularMdp, h: int, nxt: np.ndarray) -> np.ndarray:
    mix = np.einsum("yaz,zk->yak", mdp.trans[h], nxt)
    out = np.empty_like(mix)
    for x in range(mdp.X):
        for a in range(mdp.A):
            out[x, a] = convolve_mass(mix[x, a], mdp.cost_mass[h, x, a])
    return out


# -- data collection --------------------------------------------------------

class TransitionData:
    """Per-step transition tuples ``(x, a, c, x')`` with costs as grid indices.

    Each tuple also carries a uniform draw ``u`` fixed at collection time.
    Distributional targets are sampled by inverting a candidate's CDF at
    ``u``, which makes every loss evaluation reproducible.
    """

    FIELDS = ("x", "a", "c", "xp", "u")

    def __init__(self, H: int, M: int):
        self.H = H
        self.M = M
        self._buf = [self._alloc(16) for _ in range(H)]
        self._n = [0] * H

    @staticmethod
    def _alloc(cap: int) -> dict:
        return {k: np.zeros(cap, dtype=np.float64 if k == "u" else np.int64) for k in TransitionData.FIELDS}

    def add(self, h: int, x, a, c, xp, u):
        cols = {k: np.atleast_1d(np.asarray(v)) for k, v in zip(self.FIELDS, (x, a, c, xp, u))}
        m = cols["x"].size
        if any(v.size != m for v in cols.values()):
            raise ValueError("fields must have equal lengths")
        n, buf = self._n[h], self._buf[h]
        cap = buf["x"].size
        if n + m > cap:
            # amortized growth keeps repeated single-tuple appends linear overall
            grown = self._alloc(max(2 * cap, n + m))
            for k in self.FIELDS:
                grown[k][:n] = buf[k][:n]
            self._buf[h] = buf = grown
        for k in self.FIELDS:
            buf[k][n : n + m] = cols[k]
        self._n[h] = n + m

    def extend(self, other: "TransitionData"):
        if (other.H, other.M) != (self.H, self.M):
            raise ValueError("datasets have different shapes")
        for h in range(self.H):
            if other.size(h):
                s = other.step(h)
                self.add(h, *(s[k] for k in self.FIELDS))

    def step(self, h: int) -> dict:
        """Read-only views of the step-``h`` columns."""
        n = self._n[h]
        out = {}
        for k, v in self._buf[h].items():
            view = v[:n]
            view.flags.writeable = False
            out[k] = view
        return out

    def size(self, h: int) -> int:
        return self._n[h]

    def __len__(self):
        return sum(self._n)

    def copy(self) -> "TransitionData":
        out = TransitionData(self.H, self.M)
        out.extend(self)
        return out

    def tuples(self):
        """Iterate ``(h, x, a, c, x')`` with ``c`` as a grid value."""
        for h in range(self.H):
            s = self.step(h)
            for x, a, c, xp in zip(s["x"], s["a"], s["c"], s["xp"]):
                yield h, int(x), int(a), c / self.M, int(xp)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _draw(cdf: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), cdf.size - 1)


def rollout(mdp: TabularMdp, pi: Policy, ua_flag: bool, seed) -> TransitionData:
    """Collect data with ``pi``.

    Without the flag: one trajectory, one tuple per step. With the flag: H
    separate roll-ins, the h-th following ``pi`` for the first h steps and
    then taking a uniformly random action at step h.
    """
    rng = _rng(seed)
    out = TransitionData(mdp.H, mdp.M)
    pcdf = np.cumsum(pi.probs, axis=-1)
    starts = range(mdp.H) if ua_flag else [None]
    for switch in starts:
        x = mdp.x1
        last = mdp.H if switch is None else switch + 1
        for h in range(last):
            if switch is not None and h == switch:
                a = int(rng.integers(mdp.A))
            else:
                a = _draw(pcdf[h, x], rng.random())
            c = _draw(mdp.cost_cdf[h, x, a], rng.random())
            xp = _draw(mdp.trans_cdf[h, x, a], rng.random())
            u = rng.random()
            if switch is None or h == switch:
                out.add(h, x, a, c, xp, u)
            x = xp
    return out


def sample_transitions(mdp: TabularMdp, h: int, x: np.ndarray, a: np.ndarray, rng: np.random.Generator):
    """Vectorized draw of costs and next states for given (x, a) pairs."""
    n = x.size
    c = np.empty(n, dtype=np.int64)
    xp = np.empty(n, dtype=np.int64)
    uc = rng.random(n)
    ux = rng.random(n)
    for xa in np.unique(x * mdp.A + a):
        sel = np.flatnonzero(x * mdp.A + a == xa)
        xi, ai = divmod(int(xa), mdp.A)
        cc = mdp.cost_cdf[h, xi, ai]
        tc = mdp.trans_cdf[h, xi, ai]
        c[sel] = np.minimum(np.searchsorted(cc, uc[sel] * cc[-1], side="right"), mdp.M)
        xp[sel] = np.minimum(np.searchsorted(tc, ux[sel] * tc[-1], side="right"), mdp.X - 1)
    return c, xp, rng.random(n)


# -- generators -------------------------------------------------------------

def random_mdp(H: int, X: int, A: int, M: int, seed, support: int = 3, dirichlet: float = 1.0) -> TabularMdp:
    """Random MDP whose per-step costs sit on grid points at most ``1/H``.

    ``M`` must be a multiple of ``H`` so the per-step cap is a grid point.
    """
    if M % H:
        raise ValueError("M must be a multiple of H")
    rng = _rng(seed)
    cap = M // H
    trans = rng.dirichlet(np.full(X, dirichlet), size=(H, X, A))
    cost = np.zeros((H, X, A, M + 1))
    for h in range(H):
        for x in range(X):
            for a in range(A):
                k = min(support, cap + 1)
                pts = rng.choice(cap + 1, size=k, replace=False)
                cost[h, x, a, pts] = rng.dirichlet(np.ones(k))
    return TabularMdp(trans, cost, int(rng.integers(X)))


def make_low_rank_mdp(d: int, X: int, A: int, H: int, seed, M: int | None = None, max_tries: int = 100):
    """Random MDP whose transitions factor through ``d`` latent features.

    Returns ``(mdp, phi, mu, v)`` with ``trans[h, x, a] = phi[h, x, a] @ mu[h]``
    and ``mean cost[h, x, a] = phi[h, x, a] @ v[h]``. Features lie on the
    simplex, so ``||phi|| <= 1``; each ``mu[h, j]`` is a distribution, so
    ``||mu^T g|| <= sqrt(d) ||g||_inf``; ``||v|| <= sqrt(d)`` after scaling
    costs into ``[0, 1/H]``. Costs are two-point on ``{0, 1/H}``.
    """
    if d < 1 or d > min(X * A, X):
        raise ValueError("need 1 <= d <= min(X*A, X)")
    M = M or 10 * H
    if M % H:
        raise ValueError("M must be a multiple of H")
    rng = _rng(seed)
    top = M // H
    for _ in range(max_tries):
        phi = rng.dirichlet(np.ones(d), size=(H, X, A))
        mu = rng.dirichlet(np.ones(X), size=(H, d))
        v = rng.uniform(0.0, 1.0 / H, size=(H, d))
        phi_ok = np.all(np.linalg.norm(phi, axis=-1) <= 1.0 + 1e-12)
        v_ok = np.all(np.linalg.norm(v, axis=-1) <= math.sqrt(d))
        if phi_ok and v_ok:
            break
    else:
        raise RuntimeError("could not satisfy the low-rank norm constraints")
    trans = np.einsum("hxaj,hjy->hxay", phi, mu)
    mean_cost = np.einsum("hxaj,hj->hxa", phi, v)
    cost = np.zeros((H, X, A, M + 1))
    w = mean_cost * H
    cost[..., 0] = 1.0 - w
    cost[..., top] = w
    return TabularMdp(trans, cost, 0), phi, mu, v


def transition_rank(mdp: TabularMdp, tol: float = 1e-8) -> int:
    """Largest numerical rank over steps of the ``(X*A) x X`` transition matrix."""
    ranks = []
    for h in range(mdp.H):
        s = np.linalg.svd(mdp.trans[h].reshape(mdp.X * mdp.A, mdp.X), compute_uv=False)
        ranks.append(int(np.sum(s > tol)))
    return max(ranks)
