import math

import numpy as np
import pytest

from conftest import all_deterministic_policies, enumerate_q, enumerate_return_dist, grid_mdp
from loss_lab.mdp import (
    Policy,
    TabularMdp,
    TransitionData,
    bellman_backup,
    coverage_coefficient,
    exact_q_pi,
    exact_q_star,
    exact_return_dist,
    make_low_rank_mdp,
    policy_value,
    policy_variance,
    policy_variance_ltv,
    random_mdp,
    rollout,
    transition_rank,
    visitation_dist,
)


def _random_policy(rng, H, X, A):
    return Policy(rng.dirichlet(np.ones(A), size=(H, X)))


def test_q_pi_and_return_dist_match_enumeration(rng):
    for _ in range(5):
        mdp = grid_mdp(rng, 3, 2, 2, 12)
        pi = _random_policy(rng, 3, 2, 2)
        assert np.allclose(exact_q_pi(mdp, pi), enumerate_q(mdp, pi.probs), atol=1e-12)
        p = exact_return_dist(mdp, pi)
        for h, x, a in [(0, 0, 0), (1, 1, 1), (2, 0, 1)]:
            ref = np.zeros(13)
            for k, w in enumerate_return_dist(mdp, pi.probs, h, x, a).items():
                ref[k] += w
            assert np.allclose(p[h, x, a], ref, atol=1e-12)


def test_q_star_matches_policy_enumeration(rng):
    mdp = grid_mdp(rng, 2, 3, 2, 8)
    Q, pi, vstar = exact_q_star(mdp)
    values = [policy_value(mdp, Policy(p)) for p in all_deterministic_policies(2, 3, 2)]
    assert vstar == pytest.approx(min(values), abs=1e-12)
    assert policy_value(mdp, pi) == pytest.approx(vstar, abs=1e-12)


def test_variance_two_routes(rng):
    for _ in range(10):
        mdp = random_mdp(3, 3, 2, 12, rng)
        pi = _random_policy(rng, 3, 3, 2)
        assert policy_variance(mdp, pi) == pytest.approx(policy_variance_ltv(mdp, pi), abs=1e-10)


def test_performance_difference_identity(rng):
    # V(pi) - V(pi*) = sum_h E_{d^pi}[Q*_h(x, a) - min_a' Q*_h(x, a')]
    for _ in range(10):
        mdp = random_mdp(3, 3, 3, 12, rng)
        pi = _random_policy(rng, 3, 3, 3)
        Q, _, vstar = exact_q_star(mdp)
        d = visitation_dist(mdp, pi)
        adv = Q - Q.min(axis=-1, keepdims=True)
        assert policy_value(mdp, pi) - vstar == pytest.approx(float((d * adv).sum()), abs=1e-12)


def test_backups_fix_their_targets(rng):
    mdp = random_mdp(3, 2, 2, 12, rng)
    pi = _random_policy(rng, 3, 2, 2)
    Qpi = exact_q_pi(mdp, pi)
    Qs, pistar, _ = exact_q_star(mdp)
    p = exact_return_dist(mdp, pi)
    for h in range(3):
        assert np.allclose(bellman_backup(mdp, "pi", Qpi, h, pi), Qpi[h])
        assert np.allclose(bellman_backup(mdp, "star", Qs, h), Qs[h])
        assert np.allclose(bellman_backup(mdp, "dist_pi", p, h, pi), p[h])
    pstar = exact_return_dist(mdp, pistar)
    for h in range(3):
        assert np.allclose(bellman_backup(mdp, "dist_star", pstar, h), pstar[h])
    with pytest.raises(ValueError):
        bellman_backup(mdp, "pi", Qpi, 0)


def test_visitation_matches_rollouts(rng):
    mdp = random_mdp(3, 3, 2, 12, 5)
    pi = _random_policy(rng, 3, 3, 2)
    counts = np.zeros((3, 3, 2))
    n = 20000
    gen = np.random.default_rng(0)
    for _ in range(n):
        data = rollout(mdp, pi, False, gen)
        for h, x, a, _, _ in data.tuples():
            counts[h, x, a] += 1
    assert np.allclose(counts / n, visitation_dist(mdp, pi), atol=0.015)


def test_rollout_value_monte_carlo(rng):
    mdp = random_mdp(2, 2, 2, 10, 3)
    pi = _random_policy(rng, 2, 2, 2)
    gen = np.random.default_rng(1)
    totals = [sum(c for *_, c, _ in rollout(mdp, pi, False, gen).tuples()) for _ in range(20000)]
    assert np.mean(totals) == pytest.approx(policy_value(mdp, pi), abs=0.01)


def test_rollout_uniform_action_flag(rng):
    mdp = random_mdp(3, 2, 3, 12, 0)
    pi = Policy.deterministic(np.zeros((3, 2), dtype=int), 3)
    data = rollout(mdp, pi, True, 4)
    assert [data.size(h) for h in range(3)] == [1, 1, 1]
    acts = [rollout(mdp, pi, True, s).step(2)["a"][0] for s in range(200)]
    assert set(acts) == {0, 1, 2}
    a = rollout(mdp, pi, False, 9)
    b = rollout(mdp, pi, False, 9)
    assert list(a.tuples()) == list(b.tuples())


def test_coverage():
    mdp = random_mdp(2, 2, 2, 10, 1)
    pi = Policy.deterministic(np.zeros((2, 2), dtype=int), 2)
    nu = np.full((2, 2, 2), 0.25)
    d = visitation_dist(mdp, pi)
    assert coverage_coefficient(mdp, pi, nu) == pytest.approx(d.max() / 0.25)
    nu_off = np.zeros((2, 2, 2))
    nu_off[:, :, 1] = 0.5
    assert coverage_coefficient(mdp, pi, nu_off) == math.inf


def test_transition_data_growth_and_copy():
    data = TransitionData(2, 10)
    for i in range(100):
        data.add(i % 2, 0, 1, 3, 1, 0.5)
    assert len(data) == 100 and data.size(0) == 50
    other = data.copy()
    other.add(0, 1, 1, 1, 1, 0.1)
    assert data.size(0) == 50 and other.size(0) == 51
    with pytest.raises(ValueError):
        data.add(0, [0, 1], [0], [0], [0], [0])


def test_json_round_trip():
    mdp = random_mdp(2, 3, 2, 8, 2)
    back = TabularMdp.from_json(mdp.to_json())
    assert np.array_equal(back.trans, mdp.trans) and np.array_equal(back.cost_mass, mdp.cost_mass)
    assert back.x1 == mdp.x1


def test_returns_must_fit_in_unit_interval():
    cost = np.zeros((2, 1, 1, 5))
    cost[:, 0, 0, 4] = 1.0
    with pytest.raises(ValueError):
        TabularMdp(np.ones((2, 1, 1, 1)), cost)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_low_rank_generator(d):
    mdp, phi, mu, v = make_low_rank_mdp(d, 5, 2, 3, seed=d)
    ranks = [np.linalg.matrix_rank(mdp.trans[h].reshape(10, 5), tol=1e-8) for h in range(3)]
    assert max(ranks) <= d
    assert transition_rank(mdp) == max(ranks)
    assert np.allclose(mdp.cost_mean, np.einsum("hxaj,hj->hxa", phi, v))
    assert np.all(np.linalg.norm(phi, axis=-1) <= 1 + 1e-12)
