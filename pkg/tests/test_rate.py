import warnings

import numpy as np
import pytest

from ldx.envs import build_hard_instance, hard_instance_states
from ldx.errors import ValidationError
from ldx.mdp import TabularMdp, value_iteration
from ldx.rate import (PfsEstimate, bernoulli_reward_rate, estimate_pfs, fit_decay_rate,
                      generative_counts, generative_pfs, hard_instance_rate, kl_rate)


def test_kl_values():
    assert kl_rate([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert kl_rate([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.130812, abs=1e-6)
    assert kl_rate([0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.020136, abs=1e-6)
    assert kl_rate([0.5, 0.5], [1.0, 0.0]) == float("inf")
    assert kl_rate([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2))


def test_bernoulli_rate():
    assert bernoulli_reward_rate(0.4, 0.4) == 0.0
    assert bernoulli_reward_rate(0.75, 0.5) == pytest.approx(0.130812, abs=1e-6)
    assert bernoulli_reward_rate(0.3, 0.0) == float("inf")
    for m in np.linspace(0.05, 0.95, 10):
        for y in np.linspace(0.0, 1.0, 21):
            assert bernoulli_reward_rate(y, m) >= (y - m) ** 2 / 2 - 1e-15


def test_kl_convex_and_data_processing(rng):
    for _ in range(50):
        p = rng.dirichlet(np.ones(3))
        x, y = rng.dirichlet(np.ones(3), size=2)
        lam = rng.random()
        assert kl_rate(lam * x + (1 - lam) * y, p) <= lam * kl_rate(x, p) + (1 - lam) * kl_rate(y, p) + 1e-12
        merged = kl_rate([x[0] + x[1], x[2]], [p[0] + p[1], p[2]])
        assert merged <= kl_rate(x, p) + 1e-12
        assert kl_rate(x, p) >= 0


def test_hard_instance_rate():
    exact, lead = hard_instance_rate(0.5, 0.1)
    assert exact == pytest.approx(0.020136, abs=1e-6) and lead == pytest.approx(0.02)
    e0, l0 = hard_instance_rate(0.3, 1e-9)
    assert e0 < 1e-15 and l0 < 1e-15
    with pytest.raises(ValidationError):
        hard_instance_rate(0.95, 0.1)


def test_pfs_estimate_ci():
    assert PfsEstimate(50, 50, 4).format_pcs() == "0.92 ± 0.063"
    assert PfsEstimate(50, 50, 11).format_pcs() == "0.78 ± 0.096"
    assert PfsEstimate(50, 50, 0).format_pcs() == "1.00 ± 0.000"
    with pytest.raises(ValidationError):
        PfsEstimate(1, 5, 6)


def test_estimate_pfs_oracle_agent():
    env = TabularMdp(np.ones((1, 2, 1)), [[0.8, 0.2]], 0.01, False, 0.5)
    pi_star = value_iteration(env).pi_star
    est = estimate_pfs(env, lambda e, T, seed: pi_star, 100, 20)
    assert est.pfs == 0 and est.ci_half == 0
    seeds = []
    estimate_pfs(env, lambda e, T, seed: seeds.append(seed) or pi_star, 10, 3, base_seed=7)
    assert seeds == [7, 8, 9]


def test_fit_decay_rate():
    pts = [(T, np.exp(-0.02 * T)) for T in (100, 200, 300, 400, 500)]
    fit = fit_decay_rate(pts)
    assert fit.slope == pytest.approx(0.02, abs=1e-12) and fit.r_squared == pytest.approx(1.0)
    flat = fit_decay_rate([(T, 0.3) for T in (1, 2, 3)])
    assert abs(flat.slope) < 1e-12
    with pytest.warns(RuntimeWarning):
        f = fit_decay_rate(pts + [(600, 0.0)])
    assert f.points_used == 5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ValidationError):
            fit_decay_rate([(1, 0.5), (2, 0.0), (3, 0.0)])


def test_generative_counts():
    N = generative_counts(np.array([[0.5, 0.25], [0.125, 0.125]]), 10)
    assert N.sum() == 10 and N[0, 0] == 5
    N = generative_counts(np.full(3, 1 / 3), 100)
    assert list(N) == [34, 33, 33]


def test_generative_pfs_deterministic_and_decreasing():
    m = build_hard_instance()
    s1, s2, s3 = hard_instance_states(1, 2)
    w = m.admissible / m.admissible.sum()
    a = generative_pfs(m, w, 600, 2000, seed=1)
    b = generative_pfs(m, w, 600, 2000, seed=1)
    assert a == b
    assert generative_pfs(m, w, 3000, 2000, seed=2).pfs < a.pfs
