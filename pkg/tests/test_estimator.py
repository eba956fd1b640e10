import numpy as np
import pytest

from ldx.envs import StepRecord, sample_step
from ldx.estimator import (EmpiricalModel, empirical_mdp, record_transition, sample_reward_variance,
                           solver_mdp)
from ldx.mdp import TabularMdp, gap_stats


def test_record_and_counts():
    m = EmpiricalModel.empty(3, 2)
    record_transition(m, StepRecord(0, 1, 0.2, 1))
    assert m.total_steps == 1 and m.pair_counts[0, 1] == 1
    record_transition(m, StepRecord(0, 1, 0.4, 1))
    record_transition(m, StepRecord(0, 1, 0.6, 2))
    assert list(m.transition_counts[0, 1]) == [0, 2, 1]
    P, r, visited = empirical_mdp(m, 0.9)
    assert np.allclose(P[0, 1], [0, 2 / 3, 1 / 3])
    assert r[0, 1] == pytest.approx(0.4)
    assert not visited[1, 0] and np.all(P[1, 0] == 0) and r[1, 0] == 0


def test_reward_mean_two_samples():
    m = EmpiricalModel.empty(1, 1)
    for x in (0.2, 0.4):
        record_transition(m, StepRecord(0, 0, x, 0))
    assert empirical_mdp(m, 0.5)[1][0, 0] == pytest.approx(0.3)
    assert sample_reward_variance(m)[0, 0] == pytest.approx(0.02)


def test_invariants_after_random_records(rng):
    m = EmpiricalModel.empty(4, 3)
    recount = np.zeros((4, 3, 4), dtype=int)
    for _ in range(10_000):
        s, a, s2 = rng.integers(4), rng.integers(3), rng.integers(4)
        record_transition(m, StepRecord(int(s), int(a), float(rng.random()), int(s2)))
        recount[s, a, s2] += 1
    m.check()
    assert np.array_equal(m.transition_counts, recount)
    assert m.total_steps == 10_000
    snap = m.snapshot()
    record_transition(m, StepRecord(0, 0, 0.0, 0))
    assert snap.total_steps == 10_000


def test_solver_mdp_fallbacks():
    mdp, stats = solver_mdp(EmpiricalModel.empty(2, 2), 0.9)
    assert np.all(mdp.transitions == 0.5) and np.all(mdp.reward_means == 0.5)
    assert stats.tied and np.all(mdp.reward_var == 1e-6)


def test_solver_mdp_matches_empirical_when_visited(rng):
    m = EmpiricalModel.empty(2, 2)
    for s in range(2):
        for a in range(2):
            for _ in range(3):
                record_transition(m, StepRecord(s, a, float(rng.random()), int(rng.integers(2))))
    mdp, _ = solver_mdp(m, 0.9)
    P, r, _ = empirical_mdp(m, 0.9)
    assert np.array_equal(mdp.transitions, P) and np.array_equal(mdp.reward_means, r)


def test_consistency_generative(rng):
    P = rng.dirichlet(np.ones(3), size=(3, 2))
    true = TabularMdp(P, rng.uniform(size=(3, 2)), 0.01, False, 0.9)
    m = EmpiricalModel.empty(3, 2)
    for s in range(3):
        for a in range(2):
            for _ in range(100_000 // 6):
                record_transition(m, sample_step(true, s, a, rng))
    mdp, stats = solver_mdp(m, 0.9)
    assert np.max(np.abs(mdp.transitions - true.transitions)) <= 0.02
    assert np.max(np.abs(mdp.reward_means - true.reward_means)) <= 0.02
    gap_stats(mdp, allow_ties=True)
