"""Randomized falsification suites for the deterministic inequalities the
learners rely on.

Every suite draws instances, evaluates both sides exactly, and returns a
:class:`SuiteResult` with the violation count and the largest observed
``lhs / rhs`` ratio. Suites whose right side carries a tunable constant
also report the smallest constant that would have covered every draw.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .classes import minimal_beta, pigeonhole_ratio_check, pigeonhole_refined_rhs
from .dist import bernoulli_hellinger_sq, hellinger_sq_mass, mean_mass, tri_disc_mass, variance_mass
from .mdp import Policy, TabularMdp, dist_backup_from_next, exact_q_pi, exact_return_dist, next_state_dists, visitation_dist

TOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    samples: int
    violations: int
    max_ratio: float
    seconds: float = 0.0
    constant: float | None = None
    minimal_constant: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _ratio(lhs: np.ndarray, rhs: np.ndarray) -> float:
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    pos = lhs > TOL
    if not pos.any():
        return 0.0
    with np.errstate(divide="ignore"):
        r = np.where(rhs[pos] > 0, lhs[pos] / np.where(rhs[pos] > 0, rhs[pos], 1.0), np.inf)
    return float(r.max())


def _result(name, lhs, rhs, t0, **kw) -> SuiteResult:
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    bad = int(np.sum(lhs > rhs + 1e-10 * np.maximum(1.0, np.abs(rhs))))
    return SuiteResult(name, int(lhs.size), bad, _ratio(lhs, rhs), time.perf_counter() - t0, **kw)


def _minimal_constant(excess: np.ndarray, scale: np.ndarray) -> float:
    """Smallest ``c >= 0`` with ``excess <= c * scale`` everywhere."""
    need = excess > 1e-12
    if not need.any():
        return 0.0
    if np.any(scale[need] <= 0):
        return math.inf
    return float((excess[need] / scale[need]).max())


# -- pairs of grid distributions -----------------------------------------------

def _dirichlet_rows(rng, alpha: np.ndarray, width: int) -> np.ndarray:
    g = rng.gamma(np.repeat(alpha[:, None], width, axis=1))
    s = g.sum(axis=1)
    dead = s <= 0
    if dead.any():
        g[dead, rng.integers(width, size=int(dead.sum()))] = 1.0
        s = g.sum(axis=1)
    return g / s[:, None]


def random_mass_pairs(n: int, M: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """``n`` pairs of distributions on ``{0, 1/M, .., 1}`` from four regimes:
    independent Dirichlet draws of varied sparsity, near-identical pairs,
    few-atom pairs and two-point pairs on ``{0, 1}``.
    """
    rng = np.random.default_rng(seed)
    W = M + 1
    kind = rng.integers(4, size=n)
    p = np.zeros((n, W))
    q = np.zeros((n, W))

    sel = np.flatnonzero(kind == 0)
    a = 10.0 ** rng.uniform(-2, 1, size=sel.size)
    p[sel] = _dirichlet_rows(rng, a, W)
    q[sel] = _dirichlet_rows(rng, 10.0 ** rng.uniform(-2, 1, size=sel.size), W)

    sel = np.flatnonzero(kind == 1)
    p[sel] = _dirichlet_rows(rng, 10.0 ** rng.uniform(-2, 1, size=sel.size), W)
    r = _dirichlet_rows(rng, 10.0 ** rng.uniform(-2, 1, size=sel.size), W)
    w = 10.0 ** rng.uniform(-5, 0, size=sel.size)[:, None]
    q[sel] = (1 - w) * p[sel] + w * r

    sel = np.flatnonzero(kind == 2)
    for out in (p, q):
        k = rng.integers(1, 4, size=sel.size)
        for i, row in enumerate(sel):
            atoms = rng.choice(W, size=k[i], replace=False)
            out[row, atoms] = rng.dirichlet(np.ones(k[i]))

    sel = np.flatnonzero(kind == 3)
    for out in (p, q):
        t = rng.uniform(size=sel.size) ** 3
        out[sel, 0] = 1 - t
        out[sel, M] = t
    return p, q


def suite_second_order(n: int = 100_000, M: int = 100, seed=0) -> list[SuiteResult]:
    """``|mean p - mean q| <= 6 sd(p) h(p, q) + 8 h^2(p, q)``, with the
    spread taken from the first argument and, separately, from the second.
    """
    t0 = time.perf_counter()
    p, q = random_mass_pairs(n, M, seed)
    h2 = hellinger_sq_mass(p, q)
    gap = np.abs(mean_mass(p) - mean_mass(q))
    out = []
    for label, v in (("first", variance_mass(p)), ("second", variance_mass(q))):
        rhs = 6.0 * np.sqrt(v * h2) + 8.0 * h2
        out.append(_result(f"mean_gap_hellinger[{label}_sd]", gap, rhs, t0))
    return out


def suite_tri_disc(n: int = 100_000, M: int = 100, seed=1) -> list[SuiteResult]:
    """Triangular-discrimination bounds with ``q`` the lower-variance side,
    plus ``2 h^2 <= tri <= 4 h^2``.
    """
    t0 = time.perf_counter()
    p, q = random_mass_pairs(n, M, seed)
    vp, vq = variance_mass(p), variance_mass(q)
    swap = vq > vp
    p, q = np.where(swap[:, None], q, p), np.where(swap[:, None], p, q)
    vp, vq = np.maximum(vp, vq), np.minimum(vp, vq)
    tri = tri_disc_mass(p, q)
    h2 = hellinger_sq_mass(p, q)
    root = np.sqrt(vq * tri)
    return [
        _result("variance_gap_tri", vp - vq, 2.0 * root + tri, t0),
        _result("mean_gap_tri", np.abs(mean_mass(p) - mean_mass(q)), 3.0 * root + 2.0 * tri, t0),
        _result("tri_lower", 2.0 * h2, tri, t0),
        _result("tri_upper", tri, 4.0 * h2, t0),
    ]


def suite_bernoulli_first_order(step: float = 1e-3) -> SuiteResult:
    """``|f - g| <= 8 sqrt(f) h_Ber(f, g) + 20 h_Ber^2(f, g)`` on the full grid."""
    t0 = time.perf_counter()
    k = int(round(1.0 / step))
    grid = np.arange(k + 1) / k
    f, g = np.meshgrid(grid, grid, indexing="ij")
    h2 = bernoulli_hellinger_sq(f, g)
    rhs = 8.0 * np.sqrt(f * h2) + 20.0 * h2
    return _result("bernoulli_first_order", np.abs(f - g), rhs, t0)


# -- small random MDPs and tuples --------------------------------------------------

def _small_mdp(rng) -> TabularMdp:
    """Random MDP with per-step costs in ``[0, 1/H]`` and a random share of
    mass at zero, so values range from tiny to order one.
    """
    H = int(rng.integers(1, 5))
    X = int(rng.integers(1, 4))
    A = int(rng.integers(1, 4))
    M = H * int(rng.integers(2, 6))
    cap = M // H
    trans = rng.dirichlet(np.full(X, 0.5), size=(H, X, A))
    cost = rng.dirichlet(np.full(cap + 1, 0.5), size=(H, X, A))
    zero = rng.uniform(size=(H, X, A, 1)) ** rng.uniform(0.1, 3.0)
    cost = (1 - zero) * cost
    cost[..., 0] += zero[..., 0]
    mass = np.zeros((H, X, A, M + 1))
    mass[..., : cap + 1] = cost
    return TabularMdp(trans, mass, int(rng.integers(X)))


def _random_policy(rng, H, X, A) -> Policy:
    if rng.uniform() < 0.5:
        return Policy.deterministic(rng.integers(A, size=(H, X)), A)
    return Policy(rng.dirichlet(np.full(A, 0.7), size=(H, X)))


def _conditional_sum(mdp: TabularMdp, pi: Policy, per_step: np.ndarray) -> np.ndarray:
    """``D_h(x, a) = sum_{t >= h} E_pi[per_step_t(x_t, a_t) | x_h = x, a_h = a]``."""
    D = np.zeros_like(per_step)
    D[-1] = per_step[-1]
    for h in range(mdp.H - 2, -1, -1):
        v = np.einsum("xa,xa->x", pi.probs[h + 1], D[h + 1])
        D[h] = per_step[h] + mdp.trans[h] @ v
    return D


def _pi_backup(mdp: TabularMdp, pi: Policy, f: np.ndarray, h: int) -> np.ndarray:
    if h + 1 >= mdp.H:
        return mdp.cost_mean[h]
    v = np.einsum("xa,xa->x", pi.probs[h + 1], f[h + 1])
    return mdp.cost_mean[h] + mdp.trans[h] @ v


def _perturbed_values(rng, mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """Value tuple that is exact, mildly or wildly wrong at random."""
    H, X, A = mdp.H, mdp.X, mdp.A
    mode = rng.integers(3)
    if mode == 0:
        return rng.uniform(size=(H, X, A)) ** rng.uniform(0.2, 5.0)
    scale = 10.0 ** rng.uniform(-4, 1)
    f = np.zeros((H, X, A))
    for h in range(H - 1, -1, -1):
        b = _pi_backup(mdp, pi, f, h)
        if mode == 1:
            f[h] = b * np.exp(scale * rng.standard_normal((X, A)))
        else:
            f[h] = b + scale * rng.standard_normal((X, A)) * rng.uniform(size=(X, A))
        f[h] = np.clip(f[h], 0.0, 1.0)
    return f


def suite_self_bounding(n: int = 10_000, seed=2, constant: float = 77.0) -> SuiteResult:
    """``f_h(x, a) <= e Q^pi_h(x, a) + constant * H * D_h(x, a)`` at every
    ``(h, x, a)``, where ``D_h`` sums the Bernoulli Hellinger Bellman errors
    of ``f`` under ``pi`` from ``(h, x, a)`` on, in conditional expectation.

    Also checks the averaged form: the same inequality in expectation over
    the trajectory of ``pi`` from the start state, with the unconditional
    error sum.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    lhs, rhs, excess, scale = [], [], [], []
    avg_bad = 0
    for _ in range(n):
        mdp = _small_mdp(rng)
        pi = _random_policy(rng, mdp.H, mdp.X, mdp.A)
        f = _perturbed_values(rng, mdp, pi)
        Q = exact_q_pi(mdp, pi)
        # backups can exceed 1 by rounding
        err = np.stack([bernoulli_hellinger_sq(f[h], np.clip(_pi_backup(mdp, pi, f, h), 0.0, 1.0)) for h in range(mdp.H)])
        D = _conditional_sum(mdp, pi, err)
        lhs.append(f.ravel())
        rhs.append((math.e * Q + constant * mdp.H * D).ravel())
        excess.append((f - math.e * Q).ravel())
        scale.append((mdp.H * D).ravel())
        d = visitation_dist(mdp, pi)
        total = float(np.sum(d * err))
        for h in range(mdp.H):
            if np.sum(d[h] * f[h]) > math.e * np.sum(d[h] * Q[h]) + constant * mdp.H * total + 1e-10:
                avg_bad += 1
    lhs, rhs = np.concatenate(lhs), np.concatenate(rhs)
    res = _result("self_bounding", lhs, rhs, t0, constant=constant)
    res.samples = n
    res.minimal_constant = _minimal_constant(np.concatenate(excess), np.concatenate(scale))
    res.extra = {"points": int(lhs.size), "averaged_form_violations": avg_bad}
    res.violations += avg_bad
    return res


def _dist_pi_backup(mdp: TabularMdp, pi: Policy, p: np.ndarray, h: int) -> np.ndarray:
    if h + 1 >= mdp.H:
        return mdp.cost_mass[h]
    return dist_backup_from_next(mdp, h, next_state_dists(p[h + 1], pi.probs[h + 1]))


def _perturbed_dists(rng, mdp: TabularMdp, pi: Policy) -> np.ndarray:
    H, X, A, W = mdp.H, mdp.X, mdp.A, mdp.M + 1
    if rng.uniform() < 0.3:
        return rng.dirichlet(np.full(W, 0.3), size=(H, X, A))
    w = 10.0 ** rng.uniform(-4, 0)
    p = np.zeros((H, X, A, W))
    for h in range(H - 1, -1, -1):
        b = _dist_pi_backup(mdp, pi, p, h)
        noise = rng.dirichlet(np.full(W, 0.3), size=(X, A))
        mix = w * rng.uniform(size=(X, A, 1))
        p[h] = (1 - mix) * b + mix * noise
    return p


def suite_variance_change_of_measure(n: int = 10_000, seed=3, constant: float = 8.0) -> SuiteResult:
    """``var(p_h(x, a)) <= 2e var(Z^pi_h(x, a)) + constant * H * D_h(x, a)``
    with ``D_h`` the conditional sum of Hellinger distributional Bellman
    errors. The minimal constant is reported alongside; the value 1 is the
    tightest schedule one could hope for.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    lhs, rhs, excess, scale = [], [], [], []
    for _ in range(n):
        mdp = _small_mdp(rng)
        pi = _random_policy(rng, mdp.H, mdp.X, mdp.A)
        p = _perturbed_dists(rng, mdp, pi)
        Z = exact_return_dist(mdp, pi)
        err = np.stack([hellinger_sq_mass(p[h], _dist_pi_backup(mdp, pi, p, h)) for h in range(mdp.H)])
        D = _conditional_sum(mdp, pi, err)
        vp = variance_mass(p)
        vz = variance_mass(Z)
        lhs.append(vp.ravel())
        rhs.append((2 * math.e * vz + constant * mdp.H * D).ravel())
        excess.append((vp - 2 * math.e * vz).ravel())
        scale.append((mdp.H * D).ravel())
    lhs, rhs = np.concatenate(lhs), np.concatenate(rhs)
    res = _result("variance_change_of_measure", lhs, rhs, t0, constant=constant)
    res.samples = n
    res.minimal_constant = _minimal_constant(np.concatenate(excess), np.concatenate(scale))
    res.extra = {"points": int(lhs.size)}
    return res


def implicit_first_order_c(values: np.ndarray, vstar: float) -> float:
    """Smallest ``c >= 0`` with ``sum(V - V*) <= c sqrt(sum V) + c^2``."""
    S = float(np.sum(values - vstar))
    T = float(np.sum(values))
    if S <= 0:
        return 0.0
    return 0.5 * (-math.sqrt(T) + math.sqrt(T + 4.0 * S))


def suite_implicit_first_order(n: int = 10_000, seed=4) -> SuiteResult:
    """If ``sum(V_k - V*) <= c sqrt(sum V_k) + c^2`` then
    ``sum(V_k - V*) <= c sqrt(2 K V*) + 3 c^2``; checked at the tightest
    ``c`` of each sequence and at a random larger one.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    lhs, rhs = [], []
    for _ in range(n):
        K = int(rng.integers(1, 200))
        vstar = 0.0 if rng.uniform() < 0.1 else 10.0 ** rng.uniform(-6, 0)
        gaps = rng.uniform(size=K) ** rng.uniform(0.2, 8.0) * (1.0 - vstar)
        values = vstar + gaps
        c0 = implicit_first_order_c(values, vstar)
        S = float(np.sum(gaps))
        for c in (c0, c0 * (1.0 + rng.exponential())):
            lhs.append(S)
            rhs.append(c * math.sqrt(2.0 * K * vstar) + 3.0 * c * c)
    res = _result("implicit_first_order", lhs, rhs, t0)
    res.samples = n
    return res


def suite_pigeonhole(n: int = 10_000, seed=5) -> SuiteResult:
    """Pigeonhole bound on random short sequences of functions and
    distributions, at ``beta`` at or above the smallest one the sequence
    admits. The pass/fail count uses the bound with the ``N eps0`` term kept
    (``eps0 = 1/N``); the two-term simplification is tallied separately,
    split by whether ``E N >= 1``, with the factor it would need in place
    of 2 where ``E N >= 1``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    lhs, rhs = [], []
    simple_bad = {"EN>=1": 0, "EN<1": 0}
    simple_factor = 0.0
    for _ in range(n):
        N = int(rng.integers(2, 7))
        S = int(rng.integers(2, 5))
        q = int(rng.integers(1, 3))
        psis = rng.uniform(-1, 1, size=(N, S)) * 10.0 ** rng.uniform(-2, 0, size=(N, 1))
        mus = rng.dirichlet(np.full(S, 0.5), size=N)
        beta = minimal_beta(psis, mus, q) * (1.0 + rng.exponential())
        l, r = pigeonhole_refined_rhs(psis, mus, q, beta, 1.0 / N)
        lhs.append(l)
        rhs.append(r)
        _, r2 = pigeonhole_ratio_check(psis, mus, q, beta)
        E = float(np.abs(mus @ psis.T).max())
        big = E * N >= 1.0
        if l > r2 + 1e-10:
            simple_bad["EN>=1" if big else "EN<1"] += 1
        if big and l > TOL:
            unit = r2 / 2.0
            simple_factor = max(simple_factor, l / unit if unit > 0 else math.inf)
    res = _result("pigeonhole", lhs, rhs, t0)
    res.samples = n
    res.extra = {"simplified_violations": simple_bad, "simplified_factor_needed": simple_factor}
    return res


SUITES = {
    "second_order": suite_second_order,
    "tri_disc": suite_tri_disc,
    "bernoulli_first_order": suite_bernoulli_first_order,
    "self_bounding": suite_self_bounding,
    "variance_change_of_measure": suite_variance_change_of_measure,
    "implicit_first_order": suite_implicit_first_order,
    "pigeonhole": suite_pigeonhole,
}


def verify_all(pairs: int = 100_000, draws: int = 10_000, seed: int = 0, only=None) -> list[SuiteResult]:
    """Run the suites with independent seeds derived from ``seed``."""
    names = list(SUITES) if only is None else list(only)
    seeds = dict(zip(SUITES, np.random.SeedSequence(seed).spawn(len(SUITES))))
    out = []
    for name in names:
        s = seeds[name]
        if name in ("second_order", "tri_disc"):
            r = SUITES[name](pairs, seed=s)
        elif name == "bernoulli_first_order":
            r = SUITES[name]()
        else:
            r = SUITES[name](draws, seed=s)
        out.extend(r if isinstance(r, list) else [r])
    return out
