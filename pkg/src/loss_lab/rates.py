"""Rate exponents from sweeps: ordinary least squares on log-log points."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple  # ((ln x, ln y), ...)

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "points": [list(p) for p in self.points],
        }


def fit_rate(xs, ys) -> RateFit:
    """Fit ``ln y = slope * ln x + intercept``.

    Points with a nonpositive ``y`` are dropped with a warning; fewer than
    three surviving points is an error.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D arrays of equal length")
    if np.any(xs <= 0):
        raise ValueError("sweep values must be positive")
    keep = ys > 0
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} point(s) with nonpositive mean", stacklevel=2)
    if keep.sum() < 3:
        raise ValueError("need at least 3 points with positive mean to fit a rate")
    lx, ly = np.log(xs[keep]), np.log(ys[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0), tuple(zip(lx.tolist(), ly.tolist())))
