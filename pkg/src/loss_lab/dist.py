"""Distributions on a uniform grid over [0, 1] and the divergences between them.

A :class:`GridDist` stores probability mass at the points ``k / M`` for
``k = 0..M``. The reference measure is counting measure on the grid, so every
"density" is just a mass vector.

Most functions come in two flavours. The ``GridDist`` versions validate their
inputs; the ``*_mass`` versions work on raw arrays whose last axis is the grid
and broadcast over the leading axes, which is what the learners and the
randomized inequality suites use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_GRID = 100
MASS_TOL = 1e-9


class GridMismatchError(ValueError):
    """Raised when two distributions live on different grids."""


@dataclass(frozen=True, eq=False)
class GridDist:
    """Probability mass on the grid ``{0, 1/M, ..., 1}``.

    Parameters
    ----------
    mass : array-like of shape (M + 1,)
        Nonnegative masses summing to one (within ``1e-9``).

    Notes
    -----
    Instances are immutable: the stored array is a read-only copy.
    """

    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=np.float64)
        if m.ndim != 1 or m.size < 2:
            raise ValueError("mass must be a 1-D array with at least two grid points")
        if np.any(m < 0):
            raise ValueError("mass entries must be nonnegative")
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"mass sums to {m.sum():.12g}, expected 1")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def M(self) -> int:
        return self.mass.size - 1

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M

    @classmethod
    def point(cls, value: float, M: int = DEFAULT_GRID) -> "GridDist":
        """Point mass at the grid point nearest to ``value``."""
        m = np.zeros(M + 1)
        m[to_grid_index(value, M)] = 1.0
        return cls(m)

    @classmethod
    def bernoulli(cls, p: float, M: int = DEFAULT_GRID) -> "GridDist":
        """Mass ``1 - p`` at 0 and ``p`` at 1."""
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        m = np.zeros(M + 1)
        m[0] = 1.0 - p
        m[M] += p
        return cls(m)

    @classmethod
    def from_atoms(cls, values, probs, M: int = DEFAULT_GRID) -> "GridDist":
        """Place ``probs`` at ``values`` by linear splitting onto the grid."""
        return cls(project_values(values, probs, M))

    def __eq__(self, other):
        if not isinstance(other, GridDist):
            return NotImplemented
        return self.M == other.M and np.array_equal(self.mass, other.mass)

    def __hash__(self):
        return hash((self.M, self.mass.tobytes()))

    def __repr__(self):
        nz = np.flatnonzero(self.mass)
        atoms = ", ".join(f"{k / self.M:.4g}:{self.mass[k]:.4g}" for k in nz[:6])
        more = ", ..." if nz.size > 6 else ""
        return f"GridDist(M={self.M}, {{{atoms}{more}}})"


def to_grid_index(value: float, M: int) -> int:
    """Index of the grid point nearest to ``value`` (clamped to [0, 1])."""
    return int(np.clip(np.rint(value * M), 0, M))


def project_values(values, probs, M: int) -> np.ndarray:
    """Project a finite distribution on the real line onto the grid.

    Each atom is split between its two neighbouring grid points so that the
    mean is preserved for atoms inside [0, 1]. Atoms outside are clamped to
    the nearest endpoint.
    """
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * M
    w = np.asarray(probs, dtype=np.float64)
    lo = np.floor(v).astype(np.int64)
    lo = np.minimum(lo, M)
    frac = v - lo
    hi = np.minimum(lo + 1, M)
    out = np.zeros(M + 1)
    np.add.at(out, lo, w * (1.0 - frac))
    np.add.at(out, hi, w * frac)
    return out


def _check_grids(p: GridDist, q: GridDist):
    if p.M != q.M:
        raise GridMismatchError(f"grid sizes differ: {p.M} vs {q.M}")


# -- array versions (last axis is the grid) ---------------------------------

def mean_mass(mass: np.ndarray) -> np.ndarray:
    M = mass.shape[-1] - 1
    return mass @ (np.arange(M + 1) / M)


def variance_mass(mass: np.ndarray) -> np.ndarray:
    M = mass.shape[-1] - 1
    y = np.arange(M + 1) / M
    mu = mass @ y
    return np.maximum(mass @ (y * y) - mu * mu, 0.0)


def hellinger_sq_mass(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = np.sqrt(p) - np.sqrt(q)
    return 0.5 * np.sum(d * d, axis=-1)


def tri_disc_mass(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    s = p + q
    num = (p - q) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(s > 0, num / np.where(s > 0, s, 1.0), 0.0)
    return terms.sum(axis=-1)


def bernoulli_hellinger_sq(f, g):
    """Squared Hellinger distance between Bernoulli(f) and Bernoulli(g)."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    a = np.sqrt(f) - np.sqrt(g)
    b = np.sqrt(1.0 - f) - np.sqrt(1.0 - g)
    out = 0.5 * a * a + 0.5 * b * b
    return float(out) if out.ndim == 0 else out


def convolve_mass(p: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Law of ``C + Z`` on the grid, with mass above 1 folded onto 1.

    Both inputs share the grid, so every sum ``k/M + l/M`` is itself a grid
    point and no splitting is needed. Works on the last axis only for 1-D
    inputs; large grids go through an FFT.
    """
    M = p.shape[-1] - 1
    if M > 256:
        n = p.size + c.size - 1
        full = np.fft.irfft(np.fft.rfft(p, n) * np.fft.rfft(c, n), n)
        full = np.maximum(full, 0.0)
    else:
        full = np.convolve(p, c)
    out = full[: M + 1].copy()
    out[M] += full[M + 1:].sum()
    s = out.sum()
    if s > 0:
        out /= s
    return out


# -- GridDist versions -----------------------------------------------------

def mean(p: GridDist) -> float:
    return float(mean_mass(p.mass))


def variance(p: GridDist) -> float:
    return float(variance_mass(p.mass))


def hellinger_sq(p: GridDist, q: GridDist) -> float:
    _check_grids(p, q)
    return float(hellinger_sq_mass(p.mass, q.mass))


def tri_disc(p: GridDist, q: GridDist) -> float:
    """Triangular discrimination, with 0/0 terms counted as zero."""
    _check_grids(p, q)
    return float(tri_disc_mass(p.mass, q.mass))


def shift_convolve_project(p: GridDist, c_dist: GridDist) -> GridDist:
    """Distribution of ``C + Z`` for independent ``C ~ c_dist`` and ``Z ~ p``."""
    _check_grids(p, c_dist)
    return GridDist(convolve_mass(p.mass, c_dist.mass))


def second_order_gap_witness(p: GridDist, q: GridDist) -> tuple[float, float]:
    """Return ``(|mean p - mean q|, 6 sd(p) h(p, q) + 8 h^2(p, q))``.

    The bound uses the spread of the *first* argument.
    """
    _check_grids(p, q)
    lhs, rhs = second_order_gap_mass(p.mass, q.mass)
    return float(lhs), float(rhs)


def second_order_gap_mass(p: np.ndarray, q: np.ndarray):
    h2 = hellinger_sq_mass(p, q)
    lhs = np.abs(mean_mass(p) - mean_mass(q))
    rhs = 6.0 * np.sqrt(variance_mass(p)) * np.sqrt(h2) + 8.0 * h2
    return lhs, rhs


def dtri_inequality_witnesses(p: GridDist, q: GridDist):
    """Both sides of the triangular-discrimination variance and mean bounds.

    The pair is reordered so that ``q`` has the smaller variance. Returns
    ``(var_gap, var_bound, mean_gap, mean_bound)``.
    """
    _check_grids(p, q)
    out = dtri_inequality_mass(p.mass, q.mass)
    return tuple(float(v) for v in out)


def dtri_inequality_mass(p: np.ndarray, q: np.ndarray):
    vp, vq = variance_mass(p), variance_mass(q)
    swap = vp < vq
    lo_var = np.where(swap, vp, vq)
    hi_var = np.where(swap, vq, vp)
    delta = tri_disc_mass(p, q)
    root = np.sqrt(lo_var * delta)
    var_gap = hi_var - lo_var
    var_bound = 2.0 * root + delta
    mean_gap = np.abs(mean_mass(p) - mean_mass(q))
    mean_bound = 3.0 * root + 2.0 * delta
    return var_gap, var_bound, mean_gap, mean_bound
