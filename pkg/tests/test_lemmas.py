import math

import numpy as np
import pytest

from loss_lab.lemmas import (
    SUITES,
    _conditional_sum,
    implicit_first_order_c,
    random_mass_pairs,
    suite_bernoulli_first_order,
    suite_implicit_first_order,
    suite_pigeonhole,
    suite_second_order,
    suite_self_bounding,
    suite_tri_disc,
    suite_variance_change_of_measure,
    verify_all,
)
from loss_lab.mdp import Policy, random_mdp


def test_mass_pairs_are_distributions():
    p, q = random_mass_pairs(500, 30, 0)
    assert p.shape == q.shape == (500, 31)
    assert np.allclose(p.sum(axis=1), 1) and np.allclose(q.sum(axis=1), 1)
    assert p.min() >= 0 and q.min() >= 0


def test_conditional_sum_matches_forward_propagation():
    rng = np.random.default_rng(0)
    mdp = random_mdp(3, 3, 2, 12, 1)
    pi = Policy(rng.dirichlet(np.ones(2), size=(3, 3)))
    delta = rng.random((3, 3, 2))
    D = _conditional_sum(mdp, pi, delta)
    for h in range(3):
        for x in range(3):
            for a in range(2):
                occ = np.zeros((3, 2))
                occ[x, a] = 1.0
                total = delta[h, x, a]
                for t in range(h + 1, 3):
                    s = np.einsum("xa,xay->y", occ, mdp.trans[t - 1])
                    occ = s[:, None] * pi.probs[t]
                    total += float((occ * delta[t]).sum())
                assert D[h, x, a] == pytest.approx(total)


def test_implicit_c_examples():
    assert implicit_first_order_c(np.array([0.5, 0.5]), 0.5) == 0.0
    v = np.array([0.3, 0.6])
    c = implicit_first_order_c(v, 0.1)
    assert c * math.sqrt(v.sum()) + c * c == pytest.approx((v - 0.1).sum())


@pytest.mark.parametrize("suite", [suite_second_order, suite_tri_disc])
def test_pair_suites_small(suite):
    for r in suite(2000, 40, seed=1):
        assert r.passed, r.to_dict()


def test_tri_disc_bounds_are_attained():
    res = {r.name: r for r in suite_tri_disc(2000, 40, seed=2)}
    assert res["tri_upper"].max_ratio == pytest.approx(1.0, abs=1e-9)


def test_bernoulli_grid_suite_coarse():
    r = suite_bernoulli_first_order(step=0.01)
    assert r.passed and r.samples == 101 * 101


@pytest.mark.parametrize("suite", [suite_self_bounding, suite_variance_change_of_measure, suite_implicit_first_order, suite_pigeonhole])
def test_rl_suites_small(suite):
    r = suite(300, seed=3)
    assert r.passed, r.to_dict()
    assert r.samples == 300


def test_verify_all_selects_and_seeds():
    a = verify_all(pairs=500, draws=50, seed=4, only=["second_order", "implicit_first_order"])
    b = verify_all(pairs=500, draws=50, seed=4, only=["second_order", "implicit_first_order"])
    assert [r.name for r in a] == [r.name for r in b]
    assert [r.max_ratio for r in a] == [r.max_ratio for r in b]
    assert set(SUITES) >= {"self_bounding", "pigeonhole"}
