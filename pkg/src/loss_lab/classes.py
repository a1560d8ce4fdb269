"""Finite hypothesis classes for RL, Bellman-completeness checks, builders
for classes that are complete by construction, and brute-force eluder
dimension.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_float_array, check_simplex, frozen
from .dist import hellinger_sq_mass, mean_mass
from .mdp import Policy, TabularMdp, dist_backup_from_next, greedy_policy, next_state_dists

COMPLETENESS_TOL = 1e-9


def unique_rows(arr: np.ndarray):
    """Distinct entries along axis 0 in order of first appearance.

    Returns ``(uniq, inverse)`` with ``arr[i] == uniq[inverse[i]]``.
    """
    seen: dict[bytes, int] = {}
    first, inverse = [], np.empty(arr.shape[0], dtype=np.int64)
    for i, row in enumerate(np.ascontiguousarray(arr)):
        k = seen.setdefault(row.tobytes(), len(seen))
        if k == len(first):
            first.append(i)
        inverse[i] = k
    return arr[first], inverse


@dataclass(frozen=True, eq=False)
class _RlClass:
    members: np.ndarray
    _slices: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._validate()

    def __len__(self):
        return self.members.shape[0]

    def __getitem__(self, i):
        return self.members[i]

    @property
    def H(self) -> int:
        return self.members.shape[1]

    def slice(self, h: int):
        """``(distinct step-h tables, member -> table index)``; cached."""
        if h not in self._slices:
            self._slices[h] = unique_rows(self.members[:, h])
        return self._slices[h]

    def subset(self, idx):
        return type(self)(self.members[np.asarray(idx)])


class RlMeanClass(_RlClass):
    """Finite set of value tuples, shape ``(N, H, X, A)``."""

    distributional = False

    def _validate(self):
        m = as_float_array(self.members, "members", 4)
        if m.shape[0] == 0:
            raise ValueError("class must be nonempty")
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("values must lie in [0, 1]")
        object.__setattr__(self, "members", frozen(m))

    @property
    def means(self) -> np.ndarray:
        return self.members


class RlDistClass(_RlClass):
    """Finite set of distribution tuples, shape ``(N, H, X, A, M + 1)``."""

    distributional = True

    def _validate(self):
        m = check_simplex(as_float_array(self.members, "members", 5), "members")
        if m.shape[0] == 0:
            raise ValueError("class must be nonempty")
        object.__setattr__(self, "members", frozen(m))
        object.__setattr__(self, "_means", frozen(mean_mass(m)))

    @property
    def M(self) -> int:
        return self.members.shape[-1] - 1

    @property
    def means(self) -> np.ndarray:
        return self._means


def greedy_policies(cls) -> list[Policy]:
    """Distinct greedy policies of the members, in member order."""
    seen = {}
    for f in cls.means:
        pi = greedy_policy(f)
        seen.setdefault(pi.key(), pi)
    return list(seen.values())


def _mean_backup(mdp: TabularMdp, h: int, nxt: np.ndarray | None, probs: np.ndarray | None) -> np.ndarray:
    if nxt is None:
        return mdp.cost_mean[h].copy()
    v = nxt.min(axis=-1) if probs is None else np.einsum("xa,xa->x", probs, nxt)
    return mdp.cost_mean[h] + mdp.trans[h] @ v


def _dist_backup(mdp: TabularMdp, h: int, nxt: np.ndarray | None, probs: np.ndarray | None) -> np.ndarray:
    if nxt is None:
        return mdp.cost_mass[h].copy()
    return dist_backup_from_next(mdp, h, next_state_dists(nxt, probs))


def check_completeness(mdp: TabularMdp, cls, operator_kind: str, policy_set: list[Policy] | None = None):
    """Check closure of the class under a Bellman operator.

    Returns ``(holds, max_violation, witness)``. For mean classes the
    distance is the sup norm; for distribution classes it is the largest
    Hellinger distance over (x, a). ``witness`` describes the worst backup:
    its step, the index of the next-step table and the policy index (or
    ``None`` for the optimality operator).
    """
    kinds = ("star", "pi_all", "dist_star", "dist_pi_all")
    if operator_kind not in kinds:
        raise ValueError(f"operator_kind must be one of {kinds}")
    dist = operator_kind.startswith("dist")
    if dist != cls.distributional:
        raise ValueError("operator kind does not match the class type")
    if operator_kind.endswith("pi_all"):
        policies = policy_set if policy_set is not None else greedy_policies(cls)
        probs_list = [(i, p.probs) for i, p in enumerate(policies)]
    else:
        probs_list = [(None, None)]
    backup = _dist_backup if dist else _mean_backup
    worst = (0.0, None)
    for h in range(mdp.H):
        here, _ = cls.slice(h)
        if h + 1 < mdp.H:
            nxt_tables, _ = cls.slice(h + 1)
            nxt_iter = list(enumerate(nxt_tables))
        else:
            nxt_iter = [(None, None)]
        for j, nxt in nxt_iter:
            for pid, probs in probs_list:
                step_probs = None if probs is None else probs[h + 1] if h + 1 < mdp.H else None
                b = backup(mdp, h, nxt, step_probs)
                if dist:
                    gap = np.sqrt(hellinger_sq_mass(here, b[None])).reshape(len(here), -1).max(axis=1)
                else:
                    gap = np.abs(here - b[None]).reshape(len(here), -1).max(axis=1)
                d = float(gap.min())
                if d > worst[0] or worst[1] is None:
                    worst = (max(d, worst[0]), {"h": h, "next_table": j, "policy": pid, "distance": d})
    return worst[0] <= COMPLETENESS_TOL, worst[0], worst[1]


def chain_class(mdp: TabularMdp, terminal: np.ndarray, distributional: bool = False):
    """Class whose members are optimality-backup chains of terminal tables.

    Member ``j`` has ``f_H = terminal[j]`` and ``f_h = T*_h f_{h+1}`` (the
    distributional optimality backup for distribution classes). Complete
    under the optimality operator whenever ``terminal`` contains the true
    last-step costs.
    """
    terminal = np.asarray(terminal, dtype=np.float64)
    backup = _dist_backup if distributional else _mean_backup
    members = []
    for g in terminal:
        f = [g]
        for h in range(mdp.H - 2, -1, -1):
            f.insert(0, backup(mdp, h, f[0], None))
        members.append(np.stack(f))
    members = np.stack(members)
    if not distributional:
        members = np.clip(members, 0.0, 1.0)
    return RlDistClass(members) if distributional else RlMeanClass(members)


def closed_product_class(
    mdp: TabularMdp,
    terminal: np.ndarray,
    init_rules: list[list[np.ndarray]] | None = None,
    distributional: bool = False,
    max_size: int = 64,
):
    """Product class closed under the optimality backup and every policy
    backup for policies it induces.

    Built backward. ``F_H`` is ``terminal``. ``R_h`` holds step-h action
    rules: the ones given in ``init_rules[h]`` plus the greedy rule of every
    table in ``F_h``. Then ``F_h`` is the set of policy backups of ``F_{h+1}``
    under every rule in ``R_{h+1}``. The class is ``F_1 x ... x F_H``.
    """
    H, X, A = mdp.H, mdp.X, mdp.A
    backup = _dist_backup if distributional else _mean_backup
    init_rules = init_rules or [[] for _ in range(H)]

    def dedup(tables):
        return list(unique_rows(np.stack(tables))[0])

    def rules_of(tables, h):
        rules = [np.asarray(r, dtype=np.int64) for r in init_rules[h]]
        for t in tables:
            means = mean_mass(t) if distributional else t
            rules.append(np.argmin(means, axis=-1))
        return list(unique_rows(np.stack(rules))[0])

    slices = [None] * H
    slices[H - 1] = dedup(list(np.asarray(terminal, dtype=np.float64)))
    rules_next = rules_of(slices[H - 1], H - 1)
    for h in range(H - 2, -1, -1):
        tables = []
        for g in slices[h + 1]:
            for r in rules_next:
                probs = np.eye(A)[r]
                tables.append(backup(mdp, h, g, probs))
        slices[h] = dedup(tables)
        rules_next = rules_of(slices[h], h)
    size = math.prod(len(s) for s in slices)
    if size > max_size:
        raise ValueError(f"closed class would have {size} members (> {max_size}); shrink the seed sets")
    members = np.array([np.stack(combo) for combo in itertools.product(*slices)])
    if not distributional:
        members = np.clip(members, 0.0, 1.0)
    return RlDistClass(members) if distributional else RlMeanClass(members)


# -- eluder dimension -------------------------------------------------------

class EluderBudgetError(RuntimeError):
    """Raised when the exhaustive search would exceed its state budget."""


def _expectations(psi: np.ndarray, mus: np.ndarray) -> np.ndarray:
    psi = np.atleast_2d(np.asarray(psi, dtype=np.float64))
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    if psi.shape[1] != mus.shape[1]:
        raise ValueError("functions and distributions live on different sets")
    return np.abs(mus @ psi.T)  # (n_mu, n_psi)


def _longest_chain(V: np.ndarray, eps: float, q: int, budget: int) -> int:
    # The sum condition depends only on the set of earlier elements, so the
    # search runs over subsets rather than orderings.
    n_mu = V.shape[0]
    big = V > eps
    powq = V**q
    thresh = eps**q
    layer = {0: np.zeros(V.shape[1])}
    best = 0
    explored = 0
    while layer:
        nxt = {}
        for mask, sums in layer.items():
            ok_psi = sums <= thresh
            for m in range(n_mu):
                if mask >> m & 1:
                    continue
                if np.any(big[m] & ok_psi):
                    new = mask | (1 << m)
                    if new not in nxt:
                        nxt[new] = sums + powq[m]
                        explored += 1
                        if explored > budget:
                            raise EluderBudgetError(f"eluder search exceeded {budget} states")
        if nxt:
            best += 1
        layer = nxt
    return best


def eluder_dim_bruteforce(psi, mus, eps: float, q: int = 1, budget: int = 2**20) -> int:
    """Exact eluder dimension of a tiny (functions, distributions) pair.

    Reads the definition with one ``eps' >= eps`` shared by the whole
    sequence. For a fixed sequence the feasible ``eps'`` values form a
    union of intervals whose right ends are the values ``|E_mu psi|``, and
    the constraints only loosen as ``eps'`` grows toward such a value, so it
    suffices to try ``eps'`` just below each of them (and ``eps`` itself).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if q not in (1, 2):
        raise ValueError("q must be 1 or 2")
    V = _expectations(psi, mus)
    cands = sorted({float(v) for v in np.unique(V) if v > eps})
    trials = [eps] + [max(eps, v * (1.0 - 1e-9)) for v in cands]
    return max(_longest_chain(V, e, q, budget) for e in trials)


def minimal_beta(psis, mus, q: int) -> float:
    """Smallest ``beta`` meeting the pigeonhole premise for the sequence."""
    psis = np.atleast_2d(np.asarray(psis, dtype=np.float64))
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    W = np.abs(mus @ psis.T) ** q  # W[i, j] = |E_{mu_i} psi_j|^q
    prefix = np.array([W[:j, j].sum() for j in range(W.shape[0])])
    return float(prefix.max() ** (1.0 / q)) if prefix.size else 0.0


def _pigeonhole_inputs(psis, mus, q, beta, psi_class, mu_class):
    psis = np.atleast_2d(np.asarray(psis, dtype=np.float64))
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    if psis.shape[0] != mus.shape[0]:
        raise ValueError("sequences must have equal length")
    if minimal_beta(psis, mus, q) > beta * (1.0 + 1e-12) + 1e-15:
        raise ValueError("sequence violates the premise for this beta")
    psi_class = psis if psi_class is None else np.atleast_2d(psi_class)
    mu_class = mus if mu_class is None else np.atleast_2d(mu_class)
    envelope = float(_expectations(psi_class, mu_class).max())
    lhs = float(np.abs(np.einsum("ns,ns->n", mus, psis)).sum())
    return psis.shape[0], psi_class, mu_class, envelope, lhs


def pigeonhole_ratio_check(psis, mus, q: int, beta: float, psi_class=None, mu_class=None):
    """``(lhs, rhs)`` of the pigeonhole bound at threshold ``1/N``.

    ``lhs = sum_j |E_{mu_j} psi_j|`` and
    ``rhs = 2 EluDim_q(1/N) (E + beta^q ln(E N))`` with ``E`` the envelope
    over the classes (the sequences themselves by default).
    """
    N, psi_class, mu_class, E, lhs = _pigeonhole_inputs(psis, mus, q, beta, psi_class, mu_class)
    dim = eluder_dim_bruteforce(psi_class, mu_class, 1.0 / N, q)
    rhs = 2.0 * dim * (E + beta**q * math.log(E * N)) if E > 0 else 0.0
    return lhs, rhs


def pigeonhole_refined_rhs(psis, mus, q: int, beta: float, eps0: float, psi_class=None, mu_class=None):
    """``(lhs, rhs)`` with ``rhs = N eps0 + EluDim_q(eps0) (2E + beta^q ln(E / eps0))``."""
    N, psi_class, mu_class, E, lhs = _pigeonhole_inputs(psis, mus, q, beta, psi_class, mu_class)
    dim = eluder_dim_bruteforce(psi_class, mu_class, eps0, q)
    tail = dim * (2.0 * E + beta**q * math.log(E / eps0)) if E > eps0 else 0.0
    return lhs, N * eps0 + tail
