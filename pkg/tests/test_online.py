import warnings

import numpy as np
import pytest

from loss_lab.classes import RlDistClass, RlMeanClass
from loss_lab.families import random_rl_family
from loss_lab.mdp import TransitionData, exact_q_star, exact_return_dist, random_mdp
from loss_lab.online import (
    OnlineConfig,
    default_beta,
    rl_version_space,
    run_optimistic,
    run_optimistic_dist,
    td_target,
)


def test_config_validation():
    with pytest.raises(ValueError):
        OnlineConfig(K=0)
    with pytest.raises(ValueError):
        OnlineConfig(K=1, beta=-1.0)
    with pytest.raises(ValueError):
        OnlineConfig(K=1, delta=1.0)
    with pytest.raises(ValueError):
        OnlineConfig(K=1, loss="l1")
    assert OnlineConfig(K=1).resolve_beta(3, 10) == pytest.approx(default_beta(3, 10, 0.05))
    assert default_beta(3, 10, 0.05) == pytest.approx(2 * np.log(600))


def test_td_target_examples():
    g = np.array([[0.2, 0.1], [0.4, 0.3]])
    assert td_target("star", g, 0.25, 1) == pytest.approx(0.55)
    assert td_target("star", None, 0.25, 0) == 0.25
    d = np.zeros((1, 2, 5))
    d[0, 0, 4] = 1.0
    d[0, 1, 1] = 1.0
    assert td_target("dist_star", d, 0.25, 0, u=0.3) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        td_target("pi", g, 0.0, 0)


def test_empty_data_keeps_every_member():
    cls = RlMeanClass(np.random.default_rng(0).random((5, 2, 2, 2)))
    assert rl_version_space(cls, TransitionData(2, 10), "sq", 0.0).tolist() == list(range(5))


def test_truth_only_class_has_zero_regret():
    mdp = random_mdp(3, 3, 2, 12, 0)
    Q, pi, _ = exact_q_star(mdp)
    rec = run_optimistic(mdp, RlMeanClass(Q[None]), OnlineConfig(K=10, loss="bce"))
    assert np.allclose(rec.regret, 0.0, atol=1e-12)
    dcls = RlDistClass(exact_return_dist(mdp, pi)[None])
    rec = run_optimistic_dist(mdp, dcls, OnlineConfig(K=10, loss="mle"))
    assert np.allclose(rec.regret, 0.0, atol=1e-12)


@pytest.mark.parametrize("loss", ["sq", "bce", "mle"])
def test_runs_are_seeded(loss):
    mdp, cls = random_rl_family(seed=1, terminals=4, distributional=loss == "mle")
    run = run_optimistic_dist if loss == "mle" else run_optimistic
    a = run(mdp, cls, OnlineConfig(K=15, loss=loss, seed=3))
    b = run(mdp, cls, OnlineConfig(K=15, loss=loss, seed=3))
    assert a.policy_ids == b.policy_ids and a.values == b.values
    assert a.K == 15 and np.all(a.regret >= -1e-12)
    assert a.cumulative_regret[-1] == pytest.approx(a.average_regret * 15)


@pytest.mark.parametrize("loss", ["sq", "bce", "mle"])
def test_optimism_and_shrinking_space(loss):
    mdp, cls = random_rl_family(seed=2, terminals=8, distributional=loss == "mle")
    run = run_optimistic_dist if loss == "mle" else run_optimistic
    rec = run(mdp, cls, OnlineConfig(K=60, loss=loss, seed=0))
    assert max(rec.witnesses) <= rec.vstar + 1e-12
    assert rec.space_sizes[0] == len(cls)
    assert rec.space_sizes[-1] <= rec.space_sizes[0]


def test_type_checks_and_incomplete_warning():
    mdp = random_mdp(2, 2, 2, 10, 0)
    dcls = RlDistClass(np.full((1, 2, 2, 2, 11), 1 / 11))
    with pytest.raises(ValueError):
        run_optimistic(mdp, dcls, OnlineConfig(K=1))
    with pytest.raises(ValueError):
        run_optimistic_dist(mdp, RlMeanClass(np.zeros((1, 2, 2, 2))), OnlineConfig(K=1))
    with pytest.raises(ValueError):
        run_optimistic(mdp, RlMeanClass(np.zeros((1, 3, 2, 2))), OnlineConfig(K=1))
    bad = RlMeanClass(np.full((1, 2, 2, 2), 0.9))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        run_optimistic(mdp, bad, OnlineConfig(K=1))
    assert any("not closed" in str(x.message) for x in w)
