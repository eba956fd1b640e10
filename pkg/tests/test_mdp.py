import itertools

import numpy as np
import pytest
from conftest import rand_mdp

from ldx.envs import build_hard_instance, hard_instance_states
from ldx.errors import ConvergenceError, NonUniqueOptimumError, ValidationError
from ldx.mdp import (TabularMdp, as_policy_matrix, gap_stats, policy_values, state_averaged_value,
                     value_iteration)


def policy_iteration_oracle(mdp):
    S, A = mdp.shape
    pi = np.zeros(S, dtype=int)
    while True:
        Ppi = mdp.transitions[np.arange(S), pi]
        V = np.linalg.solve(np.eye(S) - mdp.gamma * Ppi, mdp.reward_means[np.arange(S), pi])
        Q = mdp.reward_means + mdp.gamma * mdp.transitions @ V
        new = np.argmax(Q, axis=1)
        keep = Q[np.arange(S), pi] >= Q[np.arange(S), new] - 1e-12
        new = np.where(keep, pi, new)
        if np.array_equal(new, pi):
            return pi, V
        pi = new


def test_single_state_geometric_value():
    m = TabularMdp(np.ones((1, 1, 1)), [[0.5]], 0.0, False, 0.9)
    assert value_iteration(m, tol=1e-12).V[0] == pytest.approx(5.0, abs=1e-10)


def test_hard_instance_closed_form_q():
    m = build_hard_instance(K=1, L=2, alpha=0.02, gamma=0.9)
    s1, _, _ = hard_instance_states(1, 2)
    rep = value_iteration(m)
    assert rep.Q[s1[0], 0] == pytest.approx(7.8035, abs=5e-5)
    assert rep.Q[s1[0], 1] == pytest.approx(6.7500, abs=5e-5)
    st = gap_stats(m)
    assert st.gaps[s1[0], 1] == pytest.approx(1.0535, abs=1e-4)


def test_value_iteration_matches_policy_iteration(rng):
    for _ in range(20):
        m = rand_mdp(4, 3, rng)
        rep = value_iteration(m, tol=1e-10)
        pi, V = policy_iteration_oracle(m)
        assert np.array_equal(rep.pi_star, pi)
        assert np.max(np.abs(rep.V - V)) < 1e-8
        assert rep.residual <= 1e-10
        assert np.all(rep.Q[np.arange(4), rep.pi_star] >= rep.Q.max(axis=1) - 1e-12)


def test_value_iteration_contraction_rate(rng):
    m = rand_mdp(5, 2, rng, gamma=0.8)
    V = np.zeros(5)
    res = []
    for _ in range(30):
        Vn = (m.reward_means + m.gamma * m.transitions @ V).max(axis=1)
        res.append(np.max(np.abs(Vn - V)))
        V = Vn
    ratios = np.array(res[1:]) / np.array(res[:-1])
    assert np.all(ratios <= m.gamma + 1e-12)


def test_iteration_cap_raises():
    m = TabularMdp(np.ones((1, 1, 1)), [[1.0]], 0.0, False, 0.999)
    with pytest.raises(ConvergenceError):
        value_iteration(m, tol=1e-12, max_iter=10)


def test_invalid_models_rejected():
    with pytest.raises(ValidationError):
        TabularMdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 0.0, False, 0.9)
    with pytest.raises(ValidationError):
        TabularMdp(np.ones((1, 1, 1)), [[0.5]], 0.0, False, 1.0)
    with pytest.raises(ValidationError):
        TabularMdp(np.ones((1, 1, 1)), [[1.5]], 0.0, True, 0.5)
    with pytest.raises(ValidationError):
        TabularMdp(np.ones((1, 1, 1)), [[0.5]], -1.0, False, 0.5)


def test_policy_values_examples():
    loop = TabularMdp(np.ones((1, 1, 1)), [[1.0]], 0.0, False, 0.99)
    assert policy_values(loop, [0])[0][0] == pytest.approx(100.0)
    swap = TabularMdp(np.array([[[0.0, 1.0]], [[1.0, 0.0]]]), [[1.0], [0.0]], 0.0, False, 0.5)
    V, Q = policy_values(swap, np.array([0, 0]))
    assert np.allclose(V, [4 / 3, 2 / 3], atol=1e-12)
    assert np.allclose(Q[:, 0], V)
    assert state_averaged_value(swap, [0, 0]) == pytest.approx(1.0)


def test_policy_values_consistent_with_vi(rng):
    m = rand_mdp(4, 2, rng)
    rep = value_iteration(m)
    V, _ = policy_values(m, rep.pi_star)
    assert np.max(np.abs(V - rep.V)) < 1e-8
    # stochastic policy input
    pi = rng.dirichlet(np.ones(2), size=4)
    V2, Q2 = policy_values(m, pi)
    assert np.allclose(V2, (pi * Q2).sum(axis=1))
    assert state_averaged_value(m, pi) == pytest.approx(V2.mean())


def test_policy_validation():
    m = TabularMdp(np.ones((2, 2, 2)) / 2, np.zeros((2, 2)), 0.0, False, 0.5)
    with pytest.raises(ValidationError):
        as_policy_matrix(m, [0, 2])
    with pytest.raises(ValidationError):
        as_policy_matrix(m, [0])
    with pytest.raises(ValidationError):
        as_policy_matrix(m, [[0.5, 0.6], [1.0, 0.0]])


def test_gap_stats_examples(rng):
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = P[1, :, 0] = 1.0
    m = TabularMdp(P, [[0.5, 0.2], [0.1, 0.3]], 0.0, [[True, True], [True, True]], 0.9)
    st = gap_stats(m)
    assert np.all(st.value_var == 0)
    assert st.reward_var[0, 0] == pytest.approx(0.25)
    m = rand_mdp(4, 3, rng)
    st = gap_stats(m)
    rep = value_iteration(m)
    assert np.all(st.gaps >= 0)
    assert np.all(st.gaps[np.arange(4), st.pi_star] == 0)
    assert np.all(st.gaps[st.suboptimal] > 0)
    assert st.delta_min == pytest.approx(st.gaps[st.suboptimal].min())
    assert st.max_reward_var == pytest.approx(m.reward_var[np.arange(4), st.pi_star].max())
    assert np.allclose(st.gaps, np.where(st.suboptimal, rep.V[:, None] - rep.Q, 0), atol=1e-8)


def test_gap_stats_tie_raises():
    m = TabularMdp(np.ones((1, 2, 1)), [[0.5, 0.5]], 0.0, False, 0.5)
    with pytest.raises(NonUniqueOptimumError) as info:
        gap_stats(m)
    assert info.value.actions == (0, 1)
    st = gap_stats(m, allow_ties=True, gap_floor=1e-6)
    assert st.tied and st.gaps[0, 1] == 1e-6


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_reward_scaling(rng, c):
    m = rand_mdp(3, 2, rng)
    a, b = gap_stats(m), gap_stats(m.replace(reward_means=c * m.reward_means))
    assert np.array_equal(a.pi_star, b.pi_star)
    assert np.allclose(c * a.gaps, b.gaps)
    assert np.allclose(c * a.V, b.V)


def test_all_policies_dominated_by_optimum(rng):
    m = rand_mdp(3, 2, rng)
    V = value_iteration(m).V
    for pi in itertools.product(range(2), repeat=3):
        assert np.all(policy_values(m, np.array(pi))[0] <= V + 1e-8)
