import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from loss_lab.dist import (
    GridDist,
    GridMismatchError,
    bernoulli_hellinger_sq,
    convolve_mass,
    dtri_inequality_witnesses,
    hellinger_sq,
    mean,
    project_values,
    second_order_gap_witness,
    shift_convolve_project,
    to_grid_index,
    tri_disc,
    variance,
)

M = 100


def masses(size=M + 1):
    raw = arrays(np.float64, size, elements=st.floats(0, 1, allow_nan=False))
    return raw.filter(lambda a: a.sum() > 1e-6).map(lambda a: a / a.sum())


def test_mean_examples():
    assert mean(GridDist.point(1.0, M)) == 1.0
    assert mean(GridDist.point(0.0, M)) == 0.0
    assert mean(GridDist.bernoulli(0.5, M)) == 0.5


def test_variance_examples():
    assert variance(GridDist.point(0.37, M)) == 0.0
    assert variance(GridDist.bernoulli(0.5, M)) == pytest.approx(0.25)
    assert variance(GridDist.bernoulli(0.1, M)) == pytest.approx(0.09)


def test_hellinger_examples():
    p = GridDist.bernoulli(0.3, M)
    assert hellinger_sq(p, p) == 0.0
    assert hellinger_sq(GridDist.point(0, M), GridDist.point(1, M)) == pytest.approx(1.0)
    assert hellinger_sq(GridDist.bernoulli(0.0, M), GridDist.bernoulli(0.5, M)) == pytest.approx(1 - math.sqrt(0.5))


def test_bernoulli_hellinger_examples():
    assert bernoulli_hellinger_sq(0.5, 0.5) == 0.0
    assert bernoulli_hellinger_sq(0.0, 1.0) == pytest.approx(1.0)
    assert bernoulli_hellinger_sq(0.0, 0.5) == pytest.approx(1 - math.sqrt(0.5))


def test_bernoulli_hellinger_matches_two_point_grid():
    for f, g in [(0.1, 0.7), (0.02, 0.03), (0.9, 0.2)]:
        assert bernoulli_hellinger_sq(f, g) == pytest.approx(hellinger_sq(GridDist.bernoulli(f, 1), GridDist.bernoulli(g, 1)))


def test_tri_disc_examples():
    p = GridDist.bernoulli(0.4, M)
    assert tri_disc(p, p) == 0.0
    assert tri_disc(GridDist.point(0, M), GridDist.point(1, M)) == pytest.approx(2.0)


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        hellinger_sq(GridDist.point(0, 10), GridDist.point(0, 20))


def test_invalid_mass():
    with pytest.raises(ValueError):
        GridDist(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        GridDist(np.array([-0.1, 1.1]))


def test_convolution_examples():
    z = shift_convolve_project(GridDist.point(0, M), GridDist.point(0, M))
    assert z == GridDist.point(0, M)
    s = shift_convolve_project(GridDist.point(0.5, 100), GridDist.point(0.25, 100))
    assert s == GridDist.point(0.75, 100)


def _brute_convolve(p, c):
    Mg = p.size - 1
    out = np.zeros(Mg + 1)
    for i in range(Mg + 1):
        for j in range(Mg + 1):
            out[min(i + j, Mg)] += p[i] * c[j]
    return out


@settings(max_examples=50, deadline=None)
@given(masses(21), masses(21))
def test_convolution_matches_pairwise_enumeration(p, c):
    assert np.allclose(convolve_mass(p, c), _brute_convolve(p, c), atol=1e-12)


def test_large_grid_convolution_matches_enumeration(rng):
    p = rng.dirichlet(np.ones(301))
    c = np.zeros(301)
    c[:40] = rng.dirichlet(np.ones(40))
    assert np.allclose(convolve_mass(p, c), _brute_convolve(p, c), atol=1e-12)


def test_projection_preserves_mean():
    m = project_values([0.123, 0.5, 0.987], [0.2, 0.3, 0.5], 10)
    assert m.sum() == pytest.approx(1.0)
    assert m @ (np.arange(11) / 10) == pytest.approx(0.2 * 0.123 + 0.3 * 0.5 + 0.5 * 0.987)
    assert to_grid_index(1.7, 10) == 10


def test_second_order_examples():
    p = GridDist.bernoulli(0.3, M)
    assert second_order_gap_witness(p, p) == (0.0, 0.0)
    lhs, rhs = second_order_gap_witness(GridDist.point(0, M), GridDist.point(1, M))
    assert (lhs, rhs) == (pytest.approx(1.0), pytest.approx(8.0))


def test_dtri_examples():
    p = GridDist.bernoulli(0.3, M)
    assert dtri_inequality_witnesses(p, p) == (0.0, 0.0, 0.0, 0.0)
    vg, vb, mg, mb = dtri_inequality_witnesses(GridDist.bernoulli(1.0, M), GridDist.point(0, M))
    assert mg == pytest.approx(1.0)
    assert mb == pytest.approx(4.0)


@settings(max_examples=200, deadline=None)
@given(masses(), masses())
def test_divergence_properties(p, q):
    P, Q = GridDist(p), GridDist(q)
    h2 = hellinger_sq(P, Q)
    assert -1e-12 <= h2 <= 1 + 1e-12
    assert h2 == pytest.approx(hellinger_sq(Q, P))
    d = tri_disc(P, Q)
    assert 2 * h2 - 1e-12 <= d <= 4 * h2 + 1e-12
    lhs, rhs = second_order_gap_witness(P, Q)
    assert lhs <= rhs + 1e-12
    vg, vb, mg, mb = dtri_inequality_witnesses(P, Q)
    assert vg <= vb + 1e-12 and mg <= mb + 1e-12
