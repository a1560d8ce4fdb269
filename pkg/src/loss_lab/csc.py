"""Cost-sensitive classification: instances, datasets, finite hypothesis
classes, the ERM learners for each loss, pessimistic MLE, and the two
lower-bound instance constructions.

Every argmin/argmax breaks ties toward the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array, check_index_array, check_simplex, check_unit_interval, frozen
from .dist import GridDist, mean_mass, to_grid_index, variance_mass
from .losses import CLAMP, FLOOR, LossKind


@dataclass(frozen=True, eq=False)
class CscInstance:
    """A finite-context, finite-action cost-sensitive classification problem.

    Parameters
    ----------
    context_probs : array of shape (X,)
        Distribution of the context.
    cost_mass : array of shape (X, A, M + 1)
        Grid distribution of the cost of each action in each context.
    """

    context_probs: np.ndarray
    cost_mass: np.ndarray

    def __post_init__(self):
        d = check_simplex(as_float_array(self.context_probs, "context_probs", 1), "context_probs")
        C = check_simplex(as_float_array(self.cost_mass, "cost_mass", 3), "cost_mass")
        if C.shape[0] != d.size:
            raise ValueError("cost_mass and context_probs disagree on the number of contexts")
        object.__setattr__(self, "context_probs", frozen(d))
        object.__setattr__(self, "cost_mass", frozen(C))
        object.__setattr__(self, "_cdf", frozen(np.cumsum(C, axis=-1)))

    @property
    def X(self) -> int:
        return self.cost_mass.shape[0]

    @property
    def A(self) -> int:
        return self.cost_mass.shape[1]

    @property
    def M(self) -> int:
        return self.cost_mass.shape[2] - 1

    @property
    def means(self) -> np.ndarray:
        return mean_mass(self.cost_mass)

    def cost_dist(self, x: int, a: int) -> GridDist:
        return GridDist(self.cost_mass[x, a])

    @classmethod
    def from_dists(cls, context_probs, cost_dists) -> "CscInstance":
        """Build from a nested ``cost_dists[x][a]`` table of :class:`GridDist`."""
        Ms = {c.M for row in cost_dists for c in row}
        if len(Ms) != 1:
            raise ValueError("all cost distributions must share one grid")
        mass = np.array([[c.mass for c in row] for row in cost_dists])
        return cls(context_probs, mass)


@dataclass(frozen=True, eq=False)
class CscDataset:
    """Rows ``(x_i, c_i(1..A))`` with full feedback; costs are grid indices."""

    contexts: np.ndarray
    cost_idx: np.ndarray
    M: int

    def __post_init__(self):
        x = np.asarray(self.contexts, dtype=np.int64)
        c = np.asarray(self.cost_idx, dtype=np.int64)
        if x.ndim != 1 or c.ndim != 2 or c.shape[0] != x.size:
            raise ValueError("contexts must be (n,) and cost_idx (n, A)")
        if c.size and (c.min() < 0 or c.max() > self.M):
            raise ValueError("cost indices must lie on the grid")
        object.__setattr__(self, "contexts", frozen(x))
        object.__setattr__(self, "cost_idx", frozen(c))

    @property
    def n(self) -> int:
        return self.contexts.size

    @property
    def A(self) -> int:
        return self.cost_idx.shape[1]

    @property
    def costs(self) -> np.ndarray:
        return self.cost_idx / self.M

    @property
    def rows(self) -> list:
        return [(int(x), c) for x, c in zip(self.contexts, self.costs)]

    @classmethod
    def from_costs(cls, contexts, costs, M: int) -> "CscDataset":
        costs = np.asarray(costs, dtype=np.float64)
        idx = np.rint(costs * M).astype(np.int64)
        if not np.allclose(idx / M, costs, atol=1e-9):
            raise ValueError("costs must lie on the grid")
        return cls(contexts, idx, M)

    def histogram(self, X: int) -> np.ndarray:
        """Counts of each grid cost per (x, a), shape ``(X, A, M + 1)``."""
        hist = np.zeros((X, self.A, self.M + 1))
        rows = np.repeat(self.contexts, self.A)
        acts = np.tile(np.arange(self.A), self.n)
        np.add.at(hist, (rows, acts, self.cost_idx.ravel()), 1.0)
        return hist


@dataclass(frozen=True, eq=False)
class MeanClass:
    """Finite class of mean-cost tables, shape ``(N, X, A)``."""

    values: np.ndarray

    def __post_init__(self):
        v = check_unit_interval(as_float_array(self.values, "values", 3), "values")
        if v.shape[0] == 0:
            raise ValueError("class must be nonempty")
        object.__setattr__(self, "values", frozen(v))

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        return self.values[i]


@dataclass(frozen=True, eq=False)
class CscDistClass:
    """Finite class of cost-distribution tables, shape ``(N, X, A, M + 1)``."""

    mass: np.ndarray

    def __post_init__(self):
        m = check_simplex(as_float_array(self.mass, "mass", 4), "mass")
        if m.shape[0] == 0:
            raise ValueError("class must be nonempty")
        object.__setattr__(self, "mass", frozen(m))

    def __len__(self):
        return self.mass.shape[0]

    def __getitem__(self, i):
        return self.mass[i]

    @property
    def M(self) -> int:
        return self.mass.shape[-1] - 1

    @property
    def means(self) -> np.ndarray:
        return mean_mass(self.mass)


def sample_dataset(instance: CscInstance, n: int, seed) -> CscDataset:
    """Draw ``n`` i.i.d. rows; identical seeds give identical datasets."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    X, A = instance.X, instance.A
    contexts = rng.choice(X, size=n, p=instance.context_probs)
    u = rng.random((n, A))
    idx = np.empty((n, A), dtype=np.int64)
    for x in range(X):
        rows = np.flatnonzero(contexts == x)
        if rows.size == 0:
            continue
        for a in range(A):
            cdf = instance._cdf[x, a]
            idx[rows, a] = np.minimum(np.searchsorted(cdf, u[rows, a] * cdf[-1], side="right"), instance.M)
    return CscDataset(contexts, idx, instance.M)


def empirical_losses(cls, data: CscDataset, loss) -> np.ndarray:
    """Total empirical loss of every member, summed over rows and actions."""
    loss = LossKind.parse(loss)
    if loss is LossKind.Mle:
        if not isinstance(cls, CscDistClass):
            raise TypeError("mle needs a CscDistClass")
        if cls.M != data.M:
            raise ValueError("class grid and data grid differ")
        hist = data.histogram(cls.mass.shape[1])
        logp = np.log(np.maximum(cls.mass, FLOOR))
        return -np.einsum("nxak,xak->n", logp, hist)
    if not isinstance(cls, MeanClass):
        raise TypeError("sq and bce need a MeanClass")
    return _mean_class_losses(cls.values, data.contexts, data.costs, loss)


def _mean_class_losses(f: np.ndarray, contexts: np.ndarray, costs: np.ndarray, loss: LossKind) -> np.ndarray:
    # both losses are affine in the target, so per-(x, a) sums suffice
    X = f.shape[1]
    counts = np.bincount(contexts, minlength=X).astype(np.float64)
    sums = np.zeros((X, f.shape[2]))
    np.add.at(sums, contexts, costs)
    if loss is LossKind.Sq:
        sq = np.zeros_like(sums)
        np.add.at(sq, contexts, costs * costs)
        per = counts[None, :, None] * f * f - 2.0 * f * sums[None] + sq[None]
    else:
        p = np.clip(f, CLAMP, 1.0 - CLAMP)
        per = -(sums[None] * np.log(p) + (counts[None, :, None] - sums[None]) * np.log(1.0 - p))
    return per.sum(axis=(1, 2))


def erm(cls: MeanClass, data: CscDataset, loss) -> int:
    """Index of the member with the smallest empirical sq or bce loss."""
    loss = LossKind.parse(loss)
    if loss is LossKind.Mle:
        raise ValueError("use mle_fit for the log-likelihood loss")
    return int(np.argmin(empirical_losses(cls, data, loss)))


def mle_fit(cls: CscDistClass, data: CscDataset) -> int:
    return int(np.argmin(empirical_losses(cls, data, LossKind.Mle)))


def mle_version_space(cls: CscDistClass, data: CscDataset, beta: float) -> np.ndarray:
    """Indices whose log-likelihood loss is within ``beta`` of the minimum."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    L = empirical_losses(cls, data, LossKind.Mle)
    return np.flatnonzero(L - L.min() <= beta)


def lemma_beta(A: int, size: int, delta: float = 0.05) -> float:
    """Confidence radius ``2 A ln(A |P| / delta)`` for the pessimistic MLE."""
    return 2.0 * A * math.log(A * size / delta)


def pessimistic_mle(cls: CscDistClass, data: CscDataset, beta: float) -> int:
    """Member of the version space maximizing the summed per-row min mean."""
    space = mle_version_space(cls, data, beta)
    counts = np.bincount(data.contexts, minlength=cls.mass.shape[1]).astype(np.float64)
    objective = cls.means[space].min(axis=2) @ counts
    return int(space[np.argmax(objective)])


def greedy_policy(table: np.ndarray) -> np.ndarray:
    """Per-context argmin of a mean table ``(X, A)`` or mass table ``(X, A, M+1)``."""
    t = np.asarray(table, dtype=np.float64)
    if t.ndim == 3:
        t = mean_mass(t)
    return np.argmin(t, axis=-1)


def policy_value(instance: CscInstance, pi) -> float:
    pi = check_index_array(pi, instance.A, "pi")
    return float(instance.context_probs @ instance.means[np.arange(instance.X), pi])


def policy_cost_variance(instance: CscInstance, pi) -> float:
    """Variance of ``c(pi(x))`` under the joint law of context and cost."""
    pi = check_index_array(pi, instance.A, "pi")
    rows = np.arange(instance.X)
    d = instance.context_probs
    mu = instance.means[rows, pi]
    within = variance_mass(instance.cost_mass[rows, pi])
    vbar = d @ mu
    return float(max(d @ within + d @ (mu - vbar) ** 2, 0.0))


def optimal_policy(instance: CscInstance) -> np.ndarray:
    return greedy_policy(instance.means)


def optimal_value(instance: CscInstance) -> tuple[float, float]:
    """``(V*, variance of the optimal policy's cost)``."""
    pi = optimal_policy(instance)
    return policy_value(instance, pi), policy_cost_variance(instance, pi)


def regret(instance: CscInstance, pi) -> float:
    return policy_value(instance, pi) - optimal_value(instance)[0]


def _is_square(n: int) -> bool:
    r = math.isqrt(n)
    return r * r == n


def build_sq_counterexample(n: int) -> tuple[CscInstance, MeanClass]:
    """Two-context instance on which squared-loss ERM stalls at ``1/sqrt(n)``.

    A rare context (probability ``1/n``) with a fair-coin cost lets a wrong
    hypothesis buy a large squared-loss reduction from a single lucky row,
    while it pays only ``O(1/n)`` in the common context.

    When ``sqrt(n)`` is an integer the grid is ``M = 8n`` and every atom is
    exact. Otherwise the point cost ``1/(8 sqrt n)`` is rounded to a grid of
    ``M = 10**6``.
    """
    if n <= 400:
        raise ValueError("the construction needs n > 400")
    M = 8 * n if _is_square(n) else 10**6
    mu = 1.0 / (8 * n)
    nu = to_grid_index(1.0 / (8.0 * math.sqrt(n)), M) / M
    eps = 1.0 / (4.0 * math.sqrt(n))
    half = M // 2
    C = np.zeros((2, 2, M + 1))
    C[0, 0, 0], C[0, 0, M] = 1.0 - mu, mu
    C[0, 1, to_grid_index(nu, M)] = 1.0
    C[1, 0, 0], C[1, 0, M] = 0.5, 0.5
    C[1, 1, half] = 1.0
    inst = CscInstance(np.array([1.0 - 1.0 / n, 1.0 / n]), C)
    truth = inst.means
    wrong = np.array([[eps, nu], [0.0, 0.5]])
    return inst, MeanClass(np.stack([truth, wrong]))


def build_bce_counterexample(n: int) -> tuple[CscInstance, MeanClass]:
    """One context, a coin with bias ``1/2 + 1/(8 sqrt n)`` against a sure ``1/2``.

    The wrong hypothesis predicts ``1/2`` for both actions and, through the
    lowest-index tie-break, plays the coin.
    """
    if n % 2 == 0:
        raise ValueError("the construction needs odd n")
    eps = 1.0 / (8.0 * math.sqrt(n))
    M = 2
    C = np.zeros((1, 2, M + 1))
    C[0, 0, 0], C[0, 0, M] = 0.5 - eps, 0.5 + eps
    C[0, 1, 1] = 1.0
    inst = CscInstance(np.array([1.0]), C)
    truth = np.array([[0.5 + eps, 0.5]])
    wrong = np.array([[0.5, 0.5]])
    return inst, MeanClass(np.stack([truth, wrong]))


# -- estimator front end ----------------------------------------------------

class _CscPolicyBase(BaseEstimator):
    def predict(self, X):
        """Greedy action for each context id in ``X``."""
        check_is_fitted(self, "policy_")
        X = check_index_array(np.ravel(X), self.policy_.size, "X")
        return self.policy_[X]

    def predict_cost(self, X):
        """Predicted mean cost of every action, shape ``(n, A)``."""
        check_is_fitted(self, "table_")
        X = check_index_array(np.ravel(X), self.table_.shape[0], "X")
        return self.table_[X]

    def value(self, instance: CscInstance) -> float:
        check_is_fitted(self, "policy_")
        return policy_value(instance, self.policy_)


class ERMPolicy(_CscPolicyBase):
    """Empirical risk minimizer over a finite class of mean-cost tables.

    Parameters
    ----------
    hypotheses : MeanClass
    loss : {"sq", "bce"}
    """

    def __init__(self, hypotheses: MeanClass | None = None, loss: str = "sq"):
        self.hypotheses = hypotheses
        self.loss = loss

    def fit(self, X, C):
        if self.hypotheses is None:
            raise ValueError("hypotheses must be set before fit")
        X = check_index_array(np.ravel(X), self.hypotheses.values.shape[1], "X")
        C = as_float_array(C, "C", 2)
        if C.shape[0] != X.size:
            raise ValueError("X and C have different numbers of rows")
        loss = LossKind.parse(self.loss)
        if loss is LossKind.Mle:
            raise ValueError("ERMPolicy handles sq and bce; use MLEPolicy for mle")
        # sq and bce only need per-(x, a) sums of costs, so no grid is required
        losses = _mean_class_losses(self.hypotheses.values, X, C, loss)
        self.losses_ = losses
        self.index_ = int(np.argmin(losses))
        self.table_ = self.hypotheses.values[self.index_]
        self.policy_ = greedy_policy(self.table_)
        return self


class MLEPolicy(_CscPolicyBase):
    """Maximum-likelihood fit over a finite class of cost distributions."""

    def __init__(self, hypotheses: CscDistClass | None = None):
        self.hypotheses = hypotheses

    def fit(self, X, C):
        data = CscDataset.from_costs(np.ravel(X), C, self.hypotheses.M)
        self.losses_ = empirical_losses(self.hypotheses, data, LossKind.Mle)
        self.index_ = int(np.argmin(self.losses_))
        self.table_ = self.hypotheses.means[self.index_]
        self.policy_ = greedy_policy(self.table_)
        return self


class PessimisticMLEPolicy(_CscPolicyBase):
    """Pessimistic selection inside the likelihood version space.

    ``beta=None`` uses ``2 A ln(A |P| / delta)``.
    """

    def __init__(self, hypotheses: CscDistClass | None = None, beta: float | None = None, delta: float = 0.05):
        self.hypotheses = hypotheses
        self.beta = beta
        self.delta = delta

    def fit(self, X, C):
        P = self.hypotheses
        data = CscDataset.from_costs(np.ravel(X), C, P.M)
        beta = self.beta if self.beta is not None else lemma_beta(P.mass.shape[2], len(P), self.delta)
        self.beta_ = beta
        self.version_space_ = mle_version_space(P, data, beta)
        self.index_ = pessimistic_mle(P, data, beta)
        self.table_ = P.means[self.index_]
        self.policy_ = greedy_policy(self.table_)
        return self
