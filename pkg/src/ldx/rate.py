"""Rate functions, Monte Carlo PFS estimates and decay-slope fits."""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._kernels import batch_greedy_kernel
from .errors import ValidationError
from .mdp import gap_stats, value_iteration

Z90 = 1.645


# --------------------------------------------------------------------------
# rate functions


def kl_rate(x, p):
    """KL(x || p) = sum x log(x / p) with 0 log 0 = 0; ``inf`` when x is not absolutely continuous."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != p.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {p.shape}")
    if np.any(x < 0) or np.any(p < 0):
        raise ValidationError("probability vectors must be non-negative")
    pos = x > 0
    if np.any(p[pos] <= 0):
        return float("inf")
    return float(np.sum(x[pos] * np.log(x[pos] / p[pos])))


def bernoulli_reward_rate(y, m):
    """Cramer transform of a Bernoulli(m) reward: the binary KL(y || m)."""
    y, m = float(y), float(m)
    if not 0.0 <= y <= 1.0:
        raise ValidationError(f"y must lie in [0, 1], got {y}")
    if not 0.0 < m < 1.0:
        return 0.0 if y == m else float("inf")
    return kl_rate([y, 1.0 - y], [m, 1.0 - m])


def hard_instance_rate(p, alpha, eps=0.0):
    """Exact and leading-order I1 for moving a self-loop from p to p + alpha + eps.

    Returns ``(exact, leading)`` with leading = d^2 / (2p) + d^2 / (2(1 - p)),
    d = alpha + eps.
    """
    d = float(alpha) + float(eps)
    if not (0.0 < p < 1.0 and d >= 0.0 and p + d < 1.0):
        raise ValidationError(f"need 0 < p < p + alpha + eps < 1, got p={p}, alpha+eps={d}")
    q = p + d
    exact = kl_rate([q, 1.0 - q], [p, 1.0 - p])
    leading = d * d / (2.0 * p) + d * d / (2.0 * (1.0 - p))
    return exact, leading


# --------------------------------------------------------------------------
# PFS estimates


@dataclass(frozen=True)
class PfsEstimate:
    """Failure count out of ``reps`` replications at budget ``budget`` (90% Wald CI)."""

    budget: int
    reps: int
    failures: int

    def __post_init__(self):
        if self.reps < 1 or not 0 <= self.failures <= self.reps:
            raise ValidationError("need reps >= 1 and 0 <= failures <= reps")

    @property
    def pfs(self):
        return self.failures / self.reps

    @property
    def pcs(self):
        return 1.0 - self.pfs

    @property
    def ci_half(self):
        p = self.pfs
        return Z90 * float(np.sqrt(p * (1.0 - p) / self.reps))

    def format_pcs(self):
        return format_interval(self.pcs, self.ci_half)


def format_interval(centre, half, centre_digits=2, half_digits=3):
    """Table style ``"0.92 ± 0.063"``."""
    return f"{centre:.{centre_digits}f} ± {half:.{half_digits}f}"


def _decision(result):
    return np.asarray(getattr(result, "pi_hat", result))


def estimate_pfs(env, agent, T, reps, base_seed=0, pi_star=None):
    """Run ``reps`` seeded replications (seed = base_seed + i) and count wrong policies.

    ``agent`` is an algorithm name understood by :func:`ldx.lazygradient.run_agent`
    or a callable ``agent(env, T, seed)`` returning a policy or a run result.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    if pi_star is None:
        pi_star = value_iteration(env).pi_star
    if isinstance(agent, str):
        from .lazygradient import run_agent

        name = agent

        def agent(env_, T_, seed_):
            return run_agent(env_, name, T_, seed=seed_)

    failures = 0
    for i in range(int(reps)):
        pi_hat = _decision(agent(env, int(T), int(base_seed) + i))
        failures += int(not np.array_equal(pi_hat, pi_star))
    return PfsEstimate(int(T), int(reps), failures)


def generative_counts(omega, T):
    """Per-pair counts tracking ``omega * T`` exactly (largest remainder, ties to lower index)."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
        raise ValidationError("omega must be a probability allocation")
    raw = w.ravel() * T
    base = np.floor(raw).astype(np.int64)
    short = int(T - base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base.reshape(w.shape)


def generative_pfs(mdp, omega, T, reps, seed=0):
    """PFS when every pair (s, a) is sampled exactly ``generative_counts(omega, T)[s, a]`` times.

    Replications are vectorised: next-state counts are multinomial, reward
    sample means are drawn from their exact law (Gaussian mean or Binomial
    frequency), and each empirical model is solved by value iteration.
    """
    N = generative_counts(omega, T)
    if np.any((N == 0) & mdp.admissible):
        raise ValidationError(f"budget {T} leaves an admissible pair unsampled under omega")
    rng = np.random.default_rng(seed)
    S, A = mdp.shape
    P = np.zeros((reps, S, A, S))
    r = np.zeros((reps, S, A))
    for s in range(S):
        for a in range(A):
            n = int(N[s, a])
            if n == 0:
                continue
            P[:, s, a, :] = rng.multinomial(n, mdp.transitions[s, a], size=reps) / n
            m = mdp.reward_means[s, a]
            if mdp.bernoulli[s, a]:
                r[:, s, a] = rng.binomial(n, m, size=reps) / n
            else:
                r[:, s, a] = m + np.sqrt(mdp.reward_var[s, a] / n) * rng.standard_normal(reps)
    pi_star = gap_stats(mdp).pi_star
    greedy = batch_greedy_kernel(P, r, mdp.admissible, mdp.gamma, 1e-10, 1_000_000)
    failures = int(np.sum(np.any(greedy != pi_star[None, :], axis=1)))
    return PfsEstimate(int(T), int(reps), failures)


# --------------------------------------------------------------------------
# decay fits


class DecayFit(NamedTuple):
    slope: float
    r_squared: float
    intercept: float
    points_used: int


def fit_decay_rate(points, reps=None):
    """Least-squares line through (T, -log pfs); returns slope and R^2.

    Points with pfs = 0 (or below ``1 / reps`` when given) are dropped with a
    warning. At least three points must remain.
    """
    pts = [(float(T), float(p)) for T, p in points]
    floor = 1.0 / reps if reps else 0.0
    kept = [(T, p) for T, p in pts if p > 0.0 and p >= floor]
    if len(kept) < len(pts):
        warnings.warn(f"dropped {len(pts) - len(kept)} point(s) with pfs below the rare-event floor",
                      RuntimeWarning, stacklevel=2)
    if len(kept) < 3:
        raise ValidationError("need at least 3 points with pfs in (0, 1)")
    if any(p >= 1.0 for _, p in kept):
        raise ValidationError("pfs values must lie in (0, 1)")
    T = np.array([t for t, _ in kept])
    y = -np.log(np.array([p for _, p in kept]))
    X = np.column_stack([T, np.ones_like(T)])
    (slope, intercept), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ np.array([slope, intercept])
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res <= 1e-24 else 0.0)
    return DecayFit(float(slope), float(r2), float(intercept), len(kept))
