import itertools
import os
import sys

import numpy as np
import pytest

from ldx.mdp import TabularMdp

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE_LINES = []


def rand_mdp(S, A, rng, gamma=0.9, mix=0.1):
    """Random ergodic MDP: Dirichlet rows mixed with uniform mass ``mix``."""
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P = (1 - mix) * P + mix / S
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(0, 1, (S, A))
    return TabularMdp(P, r, rng.uniform(0.01, 0.1, (S, A)), False, gamma)


def brute_projection(y, C, b, eps):
    """Exhaustive active-set enumeration: solve the equality QP for every floor subset."""
    n = len(y)
    best = None
    for k in range(n + 1):
        for fixed_idx in itertools.combinations(range(n), k):
            fixed = np.zeros(n, dtype=bool)
            fixed[list(fixed_idx)] = True
            free = ~fixed
            z = np.full(n, eps)
            if free.any():
                Cf = C[:, free]
                rhs = b - C[:, fixed] @ z[fixed]
                m, nf = Cf.shape
                K = np.block([[np.eye(nf), Cf.T], [Cf, np.zeros((m, m))]])
                sol = np.linalg.lstsq(K, np.concatenate([y[free], rhs]), rcond=None)[0]
                z[free] = sol[:nf]
            if np.max(np.abs(C @ z - b)) > 1e-9 or z.min() < eps - 1e-12:
                continue
            d = np.linalg.norm(z - y)
            if best is None or d < best[0]:
                best = (d, z)
    return best[1]


def record_acceptance(label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
