import numpy as np
import pytest
from conftest import rand_mdp

import ldx.lazygradient as lg
from ldx.envs import build_gridworld, build_hard_instance
from ldx.errors import DegenerateAllocationError, ModeError, ValidationError
from ldx.estimator import EmpiricalModel, record_transition
from ldx.envs import StepRecord
from ldx.lazygradient import (RunConfig, Schedule, allocation_to_policy, behavior_policy,
                              default_init_budget, default_schedule, max_coverage_action,
                              plug_in_polytope, run_agent, run_lazygradient)
from ldx.mdp import TabularMdp
from ldx.rate import estimate_pfs


def bandit(means=(0.8, 0.2), var=0.01):
    return TabularMdp(np.ones((1, len(means), 1)), [list(means)], var, False, 0.5)


def test_schedule_examples():
    s = Schedule(t1=5, c_tilde=1.0)
    assert s.update_times(15) == [5, 6, 8, 11, 15]
    assert [s.gap(n) for n in range(1, 5)] == [1, 2, 3, 4]
    assert Schedule(1).num_updates(10) == 4
    assert Schedule(1, alpha=0.25).exploration(16) == 0.5
    assert Schedule(1, c_tilde=0.1).gap(3) == 1  # ceil(0.3) with float-noise guard
    with pytest.raises(ValidationError):
        Schedule(1, alpha=0.6)


def test_default_schedule():
    assert default_init_budget(build_gridworld()) == 450
    assert default_init_budget(rand_mdp(4, 2, np.random.default_rng(0))) == 200
    assert default_init_budget(TabularMdp(np.full((10, 30, 10), 0.1), np.zeros((10, 30)), 0.0,
                                          False, 0.5)) == 900
    s = default_schedule(build_gridworld())
    assert s.t1 == 451 and s.c_tilde == 1.0 and s.alpha == 0.25


def test_allocation_to_policy():
    assert np.allclose(allocation_to_policy(np.array([[0.1, 0.3]])), [[0.25, 0.75]])
    assert np.allclose(allocation_to_policy(np.full((2, 2), 0.25)), 0.5)
    with pytest.raises(DegenerateAllocationError):
        allocation_to_policy(np.array([[0.5, 0.5], [0.0, 0.0]]))


def test_behavior_policy():
    assert np.allclose(behavior_policy(np.array([[1.0, 0.0]]), 16, 0.25, A=2), [[0.75, 0.25]])
    assert np.allclose(behavior_policy(np.array([[1.0, 0.0]]), 1, 0.25), [[0.5, 0.5]])
    pi = behavior_policy(np.array([[1.0, 0.0, 0.0]]), 100, 0.25)
    assert pi.min() >= 100 ** -0.25 / 3 - 1e-15


def test_max_coverage_action():
    m = EmpiricalModel.empty(2, 3)
    picks = {max_coverage_action(m, 0, np.random.default_rng(i)) for i in range(30)}
    assert picks == {0, 1, 2}
    for _ in range(100):
        record_transition(m, StepRecord(0, 1, 0.0, 0))
    assert max_coverage_action(m, 0, np.random.default_rng(0)) in (0, 2)
    a = [max_coverage_action(m, 0, np.random.default_rng(4)) for _ in range(2)]
    assert a[0] == a[1]


def test_plug_in_polytope_fallback():
    P = np.zeros((2, 1, 2))
    P[:, 0, 0] = 1.0
    m = TabularMdp(P, np.zeros((2, 1)), 0.0, False, 0.9)
    poly, rho = plug_in_polytope(m)
    assert rho > 0 and poly.interior.min() >= poly.epsilon


@pytest.mark.parametrize("algo", lg.ALGOS)
def test_budget_exact(algo):
    env = rand_mdp(3, 2, np.random.default_rng(1))
    res = run_agent(env, algo, 400, seed=2)
    assert int(res.visit_counts.sum()) == 400 == res.budget


def test_generative_mode_budget_and_refusal():
    hard = build_hard_instance()
    with pytest.raises(ModeError):
        run_agent(hard, "lazygradient", 400)
    with pytest.raises(ModeError):
        run_agent(hard, "uniform", 400)
    res = run_agent(hard, "lazygradient", 400, mode="generative", seed=1)
    assert res.budget == 400
    assert np.all(res.visit_counts[~hard.admissible] == 0)


def test_determinism():
    env = build_gridworld()
    a = run_agent(env, "lazygradient", 700, seed=4)
    b = run_agent(env, "lazygradient", 700, seed=4)
    assert np.array_equal(a.visit_counts, b.visit_counts) and a.objective_trace == b.objective_trace
    c = run_agent(env, "lazygradient", 700, seed=5)
    assert not np.array_equal(a.visit_counts, c.visit_counts)


def test_snapshots_at_update_times():
    env = rand_mdp(3, 2, np.random.default_rng(3))
    cfg = RunConfig(budget=500, seed=1)
    res = run_lazygradient(env, cfg)
    sched = cfg.resolved(env)
    expected = [t for t in sched.update_times(500) if t > sched.n0]
    assert [t for t, _ in res.behavior_snapshots] == expected
    assert len(res.allocation_trace) == len(expected) == len(res.objective_trace)
    for t, pi in res.behavior_snapshots:
        assert pi.min() >= t ** -0.25 / 2 - 1e-12


def test_persistent_exploration_long_run():
    env = rand_mdp(4, 2, np.random.default_rng(8))
    res = run_agent(env, "lazygradient", 50_000, seed=0)
    assert res.visit_counts.min() >= 1


def test_bandit_pcs():
    env = bandit()
    est = estimate_pfs(env, "lazygradient", 2000, 100)
    assert est.pcs >= 0.95
    assert estimate_pfs(env, "uniform", 2000, 100).pcs >= 0.9


def test_run_config_validation():
    with pytest.raises(ValidationError):
        RunConfig(budget=100, schedule=Schedule(t1=201, n0=200))
    with pytest.raises(ValidationError):
        RunConfig(budget=100, init_policy="greedy")
    with pytest.raises(ValidationError):
        run_agent(bandit(), "uniform", 300, n0=5)
    with pytest.raises(ValidationError):
        run_agent(bandit(), "ppo", 300)


def test_schedule_options_pass_through():
    env = bandit()
    res = run_agent(env, "lazygradient", 300, seed=0, n0=50, c_tilde=2.0, init_policy="uniform")
    times = [t for t, _ in res.behavior_snapshots]
    assert times[0] == 1 and times[1] == 51 and times[2] == 53
