"""The lazy one-step allocation learner and the baseline agents.

Every agent consumes a single continuing trajectory (or, on request, a
generative sampler) of exactly ``T`` steps and returns a :class:`RunResult`
whose ``pi_hat`` is the agent's final decision.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import qlearning_kernel, segment_kernel, value_iteration_kernel
from .allocation import default_epsilon, flow_polytope, initial_state, lazy_step
from .envs import is_communicating
from .errors import ConvergenceError, DegenerateAllocationError, InfeasibleError, ModeError, ValidationError
from .estimator import EmpiricalModel, empirical_mdp, solver_mdp
from .mdp import TabularMdp, value_iteration

ALGOS = ("lazygradient", "uniform", "qlearning", "psrl")
INIT_POLICIES = ("uniform", "max_coverage")
MODES = ("trajectory", "generative")

COVERAGE_WEIGHTS = (1.0, 0.5, 0.25)
GRIDWORLD_INIT_BUDGET = 450

QL_EXPLORE = 0.1
QL_POWER = 0.7

PSRL_MAX_PERIOD = 200
# Normal-Gamma prior on each pair's reward: mean, pseudo-count, shape, rate
PSRL_REWARD_PRIOR = (0.0, 1.0, 1.0, 1.0)

_TIE_TOL = 1e-12


# --------------------------------------------------------------------------
# schedule


def default_init_budget(mdp):
    """n0 = max(30 * ceil(SA / 10), 200), and 450 on the 16-state gridworld."""
    S, A = mdp.shape
    if (S, A) == (16, 4) and mdp.name.startswith("gridworld"):
        return GRIDWORLD_INIT_BUDGET
    return max(30 * math.ceil(S * A / 10), 200)


@dataclass(frozen=True)
class Schedule:
    """Update times t_1 < t_2 < ... with gaps ceil(c * n), plus exploration decay."""

    t1: int
    c_tilde: float = 1.0
    alpha: float = 0.25
    n0: int = 0

    def __post_init__(self):
        if self.t1 < 1:
            raise ValidationError("t1 must be >= 1")
        if not self.c_tilde > 0:
            raise ValidationError("c_tilde must be positive")
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError("alpha must lie in (0, 1/2)")
        if self.n0 < 0:
            raise ValidationError("n0 must be >= 0")

    def gap(self, n):
        """Gamma_n = ceil(c_tilde * n), guarded against float noise in the product."""
        return max(1, math.ceil(round(self.c_tilde * n, 9)))

    def update_times(self, T):
        """All t_n <= T."""
        out = []
        t, n = self.t1, 1
        while t <= T:
            out.append(t)
            t += self.gap(n)
            n += 1
        return out

    def num_updates(self, T):
        """N(T) = max{n : Gamma_1 + ... + Gamma_n <= T}."""
        total, n = 0, 0
        while total + self.gap(n + 1) <= T:
            n += 1
            total += self.gap(n)
        return n

    def exploration(self, t):
        """eps_t = t^(-alpha)."""
        if t < 1:
            raise ValidationError("t must be >= 1")
        return float(t) ** (-self.alpha)


def default_schedule(mdp, c_tilde=1.0, alpha=0.25, n0=None, t1=None):
    n0 = default_init_budget(mdp) if n0 is None else int(n0)
    return Schedule(t1=n0 + 1 if t1 is None else int(t1), c_tilde=c_tilde, alpha=alpha, n0=n0)


@dataclass(frozen=True)
class RunConfig:
    budget: int
    schedule: Schedule = None
    epsilon: float = None
    init_policy: str = "max_coverage"
    seed: int = 0
    mode: str = "trajectory"

    def __post_init__(self):
        if self.init_policy not in INIT_POLICIES:
            raise ValidationError(f"init_policy must be one of {INIT_POLICIES}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.budget < 1:
            raise ValidationError("budget must be >= 1")
        if self.schedule is not None and self.budget <= self.schedule.n0:
            raise ValidationError(f"budget {self.budget} must exceed n0={self.schedule.n0}")

    def resolved(self, mdp):
        sched = default_schedule(mdp) if self.schedule is None else self.schedule
        if self.budget <= sched.n0:
            raise ValidationError(f"budget {self.budget} must exceed n0={sched.n0}")
        return sched


@dataclass
class RunResult:
    pi_hat: np.ndarray
    visit_counts: np.ndarray
    allocation_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    behavior_snapshots: list = field(default_factory=list)
    model: EmpiricalModel = None

    @property
    def budget(self):
        return int(self.visit_counts.sum())


# --------------------------------------------------------------------------
# policies


def allocation_to_policy(omega, admissible=None):
    """pi(a|s) = omega_sa / sum_a' omega_sa' (inadmissible actions get zero)."""
    w = np.asarray(omega, dtype=float)
    if admissible is not None:
        w = np.where(admissible, w, 0.0)
    mass = w.sum(axis=1, keepdims=True)
    bad = np.flatnonzero(~(mass[:, 0] > 0))
    if bad.size:
        raise DegenerateAllocationError(f"state {int(bad[0])} carries no allocation mass")
    return w / mass


def uniform_policy(num_states, num_actions, admissible=None):
    if admissible is None:
        return np.full((num_states, num_actions), 1.0 / num_actions)
    adm = np.asarray(admissible, dtype=float)
    return adm / adm.sum(axis=1, keepdims=True)


def behavior_policy(explore, t, alpha, A=None, admissible=None):
    """eps_t * uniform + (1 - eps_t) * explore with eps_t = t^(-alpha)."""
    if t < 1:
        raise ValidationError("t must be >= 1")
    explore = np.asarray(explore, dtype=float)
    S, A_ = explore.shape
    if A is not None and A != A_:
        raise ValidationError(f"policy has {A_} actions, expected {A}")
    eps = float(t) ** (-alpha)
    return eps * uniform_policy(S, A_, admissible) + (1.0 - eps) * explore


def max_coverage_action(counts, s, rng, admissible=None, weights=COVERAGE_WEIGHTS):
    """Greedy coverage score over the actions at ``s``; exact ties broken uniformly by ``rng``."""
    w1, w2, w3 = weights
    N_sa = counts.pair_counts[s].astype(float)
    N_s = counts.state_counts().astype(float)
    S = N_s.shape[0]
    row_counts = counts.transition_counts[s].astype(float)
    visited = N_sa > 0
    P_hat = np.where(visited[:, None], row_counts / np.maximum(N_sa, 1.0)[:, None], 1.0 / S)
    novelty = 1.0 / (1.0 + N_s)
    score = (w1 / (1.0 + N_sa) + w2 * (P_hat @ novelty)
             + w3 * np.where(P_hat > 0, novelty[None, :], -np.inf).max(axis=1))
    if admissible is not None:
        score = np.where(admissible[s], score, -np.inf)
    best = np.flatnonzero(score >= score.max() - _TIE_TOL)
    return int(best[rng.integers(best.size)]) if best.size > 1 else int(best[0])


# --------------------------------------------------------------------------
# sampling helpers


@dataclass(frozen=True)
class _Sim:
    """Flattened environment arrays the kernels consume."""

    P_cdf: np.ndarray
    r_mean: np.ndarray
    r_std: np.ndarray
    bern: np.ndarray
    admissible: np.ndarray

    @classmethod
    def of(cls, mdp):
        P_cdf = np.cumsum(mdp.transitions, axis=2)
        return cls(np.ascontiguousarray(P_cdf), np.ascontiguousarray(mdp.reward_means),
                   np.ascontiguousarray(np.sqrt(mdp.reward_var)),
                   np.ascontiguousarray(mdp.bernoulli), mdp.admissible)


def _run_segment(sim, model, pi, s, length, rng):
    """Follow stochastic policy ``pi`` for ``length`` steps from ``s``; returns the final state."""
    if length <= 0:
        return s
    u_act, u_next, u_rew = rng.random(length), rng.random(length), rng.random(length)
    z_rew = rng.standard_normal(length)
    pi_cdf = np.ascontiguousarray(np.cumsum(pi, axis=1))
    return int(segment_kernel(sim.P_cdf, pi_cdf, sim.r_mean, sim.r_std, sim.bern, int(s),
                              u_act, u_next, u_rew, z_rew, model.pair_counts,
                              model.transition_counts, model.reward_sum, model.reward_sq_sum))


def _one_hot_policy(S, A, s, a):
    pi = np.zeros((S, A))
    pi[:, 0] = 1.0
    pi[s] = 0.0
    pi[s, a] = 1.0
    return pi


def _sample_pairs(sim, model, q, length, rng):
    """Generative sampling: draw ``length`` pairs from distribution ``q`` over S x A."""
    if length <= 0:
        return
    S, A = q.shape
    flat = np.cumsum(q.ravel())
    flat /= flat[-1]
    idx = np.minimum(np.searchsorted(flat, rng.random(length), side="right"), S * A - 1)
    u_next, u_rew, z_rew = rng.random(length), rng.random(length), rng.standard_normal(length)
    for k in range(length):
        s, a = divmod(int(idx[k]), A)
        # one-step segment from the drawn pair keeps both backends in lockstep
        pi = _one_hot_policy(S, A, s, a)
        segment_kernel(sim.P_cdf, np.cumsum(pi, axis=1), sim.r_mean, sim.r_std, sim.bern, s,
                       np.zeros(1), u_next[k:k + 1], u_rew[k:k + 1], z_rew[k:k + 1],
                       model.pair_counts, model.transition_counts, model.reward_sum,
                       model.reward_sq_sum)


def decision_policy(model, gamma, admissible=None):
    """Greedy policy of value iteration on the raw empirical model.

    Unvisited pairs keep the zero row and zero reward of the plug-in
    convention, so an untried action never beats a tried one with positive
    value; lowest index wins ties.
    """
    P, r, _ = empirical_mdp(model, gamma)
    S, A = model.shape
    adm = np.ones((S, A), dtype=bool) if admissible is None else np.asarray(admissible, dtype=bool)
    V, _, residual = value_iteration_kernel(np.ascontiguousarray(P), np.ascontiguousarray(r), adm,
                                            float(gamma), 1e-10, 1_000_000, np.zeros(S))
    if residual > 1e-10:
        raise ConvergenceError("value iteration on the empirical model did not converge")
    Q = np.where(adm, r + gamma * (P @ V), -np.inf)
    return np.argmax(Q, axis=1)


MIX_FRACTIONS = (1 / 64, 1 / 16, 1 / 4, 1.0)


def plug_in_polytope(mdp_hat, epsilon=None):
    """W^eps of the plug-in model, or of a lightly mixed copy when that is empty.

    A state no visited pair has ever moved into has no inflow, so the plug-in
    polytope is empty. The fallback mixes every row with uniform mass rho,
    trying rho = S*A*eps times 1/64, 1/16, 1/4, 1; at the last value the
    uniform policy's stationary allocation clears the floor. Returns
    ``(poly, rho)``.
    """
    try:
        return flow_polytope(mdp_hat, epsilon), 0.0
    except InfeasibleError:
        pass
    S, A = mdp_hat.shape
    eps = default_epsilon(S, A) if epsilon is None else float(epsilon)
    top = min(1.0, S * A * eps)
    P = mdp_hat.transitions
    for frac in MIX_FRACTIONS:
        rho = top * frac
        mixed = mdp_hat.replace(transitions=(1.0 - rho) * P + rho / S)
        try:
            return flow_polytope(mixed, epsilon), rho
        except InfeasibleError:
            continue
    raise InfeasibleError("flow polytope empty even after uniform mixing")


def _require_trajectory(env):
    if not is_communicating(env):
        raise ModeError(f"{env.name or 'environment'} is not communicating; "
                        "trajectory sampling needs mode='generative'")


# --------------------------------------------------------------------------
# LazyGradient


def run_lazygradient(env, cfg):
    """Run the lazy one-step allocation learner for exactly ``cfg.budget`` samples.

    After ``n0`` initial samples, one projected step is taken on the current
    plug-in model at each scheduled time; the behavior policy mixes the
    normalised allocation with uniform exploration and is held fixed between
    updates. The step size is 1/sqrt(N(T)).
    """
    if not isinstance(env, TabularMdp):
        raise ValidationError("env must be a TabularMdp")
    sched = cfg.resolved(env)
    T = int(cfg.budget)
    generative = cfg.mode == "generative"
    if not generative:
        _require_trajectory(env)
    S, A = env.shape
    adm = env.admissible
    rng = np.random.default_rng(cfg.seed)
    sim = _Sim.of(env)
    model = EmpiricalModel.empty(S, A)
    result = RunResult(pi_hat=None, visit_counts=None, model=model)
    pi_u = uniform_policy(S, A, adm)
    s = 0

    # initialisation phase: n0 samples
    if cfg.init_policy == "uniform":
        result.behavior_snapshots.append((1, pi_u))
        if generative:
            _sample_pairs(sim, model, adm / adm.sum(), sched.n0, rng)
        else:
            s = _run_segment(sim, model, pi_u, s, sched.n0, rng)
    else:
        for _ in range(sched.n0):
            if generative:
                N = np.where(adm, model.pair_counts, np.iinfo(np.int64).max)
                cand = np.flatnonzero(N.ravel() == N.min())
                ps, pa = divmod(int(cand[rng.integers(cand.size)]), A)
                q = np.zeros((S, A))
                q[ps, pa] = 1.0
                _sample_pairs(sim, model, q, 1, rng)
            else:
                a = max_coverage_action(model, s, rng, adm)
                s = _run_segment(sim, model, _one_hot_policy(S, A, s, a), s, 1, rng)

    times = [t for t in sched.update_times(T) if t > sched.n0]
    eta = 1.0 / math.sqrt(max(sched.num_updates(T), 1))
    state = None
    t_now = sched.n0 + 1
    pi = pi_u
    q = adm / adm.sum()
    for k, t_n in enumerate(times):
        # steps before this update keep the previous behavior policy
        gap = t_n - t_now
        if generative:
            _sample_pairs(sim, model, q, gap, rng)
        else:
            s = _run_segment(sim, model, pi, s, gap, rng)
        t_now = t_n
        mdp_hat, stats = solver_mdp(model, env.gamma, adm)
        poly, _ = plug_in_polytope(mdp_hat, cfg.epsilon)
        if state is None:
            state = initial_state(poly, eta)
        state = lazy_step(state, stats, env.gamma, poly)
        explore = allocation_to_policy(state.omega, adm)
        pi = behavior_policy(explore, t_n, sched.alpha, admissible=adm)
        if generative:
            q = pair_law(state.omega, t_n, sched.alpha, adm)
        result.allocation_trace.append(state.omega.copy())
        result.objective_trace.append(state.trace[-1])
        result.behavior_snapshots.append((t_n, pi))
    remaining = T - model.total_steps
    if generative:
        _sample_pairs(sim, model, q, remaining, rng)
    else:
        _run_segment(sim, model, pi, s, remaining, rng)
    result.visit_counts = model.pair_counts.copy()
    result.pi_hat = decision_policy(model, env.gamma, adm)
    return result


def pair_law(omega, t, alpha, admissible):
    """Generative analogue of the behavior policy: eps_t * uniform + (1 - eps_t) * omega over pairs."""
    adm = np.asarray(admissible, dtype=float)
    w = np.where(admissible, omega, 0.0)
    eps = float(t) ** (-alpha)
    return eps * adm / adm.sum() + (1.0 - eps) * w / w.sum()


# --------------------------------------------------------------------------
# baselines


def run_baseline(env, algo, T, seed=0):
    """Run a baseline agent for exactly ``T`` trajectory steps."""
    if algo not in ("uniform", "qlearning", "psrl"):
        raise ValidationError(f"unknown baseline {algo!r}")
    T = int(T)
    if T < 1:
        raise ValidationError("T must be >= 1")
    _require_trajectory(env)
    rng = np.random.default_rng(seed)
    S, A = env.shape
    sim = _Sim.of(env)
    model = EmpiricalModel.empty(S, A)
    result = RunResult(pi_hat=None, visit_counts=None, model=model)
    if algo == "uniform":
        pi = uniform_policy(S, A, env.admissible)
        result.behavior_snapshots.append((1, pi))
        _run_segment(sim, model, pi, 0, T, rng)
        result.pi_hat = decision_policy(model, env.gamma, env.admissible)
    elif algo == "qlearning":
        if not env.admissible.all():
            raise ModeError("Q-learning baseline needs every action admissible")
        Q = np.zeros((S, A))
        u = [rng.random(T) for _ in range(4)]
        z = rng.standard_normal(T)
        qlearning_kernel(sim.P_cdf, sim.r_mean, sim.r_std, sim.bern, env.gamma, QL_EXPLORE,
                         QL_POWER, 0, u[0], u[1], u[2], u[3], z, Q, model.pair_counts,
                         model.transition_counts, model.reward_sum, model.reward_sq_sum)
        result.pi_hat = np.argmax(Q, axis=1)
    else:
        _run_psrl(env, sim, model, T, rng, result)
    result.visit_counts = model.pair_counts.copy()
    return result


def psrl_period(gamma):
    return min(math.ceil(1.0 / (1.0 - gamma)), PSRL_MAX_PERIOD)


def _reward_posterior(model):
    """Normal-Gamma posterior parameters (mu, kappa, alpha, beta) per pair."""
    mu0, k0, a0, b0 = PSRL_REWARD_PRIOR
    N = model.pair_counts.astype(float)
    safe = np.maximum(N, 1.0)
    mean = np.where(N > 0, model.reward_sum / safe, 0.0)
    ss = np.maximum(model.reward_sq_sum - N * mean**2, 0.0)
    kappa = k0 + N
    mu = (k0 * mu0 + N * mean) / kappa
    alpha = a0 + 0.5 * N
    beta = b0 + 0.5 * ss + k0 * N * (mean - mu0) ** 2 / (2.0 * kappa)
    return mu, kappa, alpha, beta


def _run_psrl(env, sim, model, T, rng, result):
    S, A = env.shape
    period = psrl_period(env.gamma)
    s, t = 0, 0
    while t < T:
        counts = model.transition_counts.astype(float)
        P = rng.gamma(1.0 + counts)
        P /= P.sum(axis=2, keepdims=True)
        mu, kappa, alpha, beta = _reward_posterior(model)
        tau = rng.gamma(alpha, 1.0 / beta)
        r = mu + rng.standard_normal((S, A)) / np.sqrt(kappa * tau)
        sampled = TabularMdp(P, r, 0.0, False, env.gamma, admissible=env.admissible)
        greedy = value_iteration(sampled).pi_star
        pi = np.zeros((S, A))
        pi[np.arange(S), greedy] = 1.0
        result.behavior_snapshots.append((t + 1, pi))
        length = min(period, T - t)
        s = _run_segment(sim, model, pi, s, length, rng)
        t += length
    counts = model.transition_counts.astype(float) + 1.0
    P_mean = counts / counts.sum(axis=2, keepdims=True)
    mu, _, _, _ = _reward_posterior(model)
    result.pi_hat = value_iteration(
        TabularMdp(P_mean, mu, 0.0, False, env.gamma, admissible=env.admissible)).pi_star


# --------------------------------------------------------------------------
# uniform entry point


def run_agent(env, algo, T, seed=0, mode="trajectory", **options):
    """Dispatch to LazyGradient or a baseline; ``options`` feed :class:`RunConfig`."""
    if algo == "lazygradient":
        sched = options.pop("schedule", None)
        if sched is None and options:
            keys = {k: options.pop(k) for k in ("c_tilde", "alpha", "n0", "t1") if k in options}
            sched = default_schedule(env, **keys) if keys else None
        cfg = RunConfig(budget=int(T), schedule=sched, seed=seed, mode=mode, **options)
        return run_lazygradient(env, cfg)
    if algo in ("uniform", "qlearning", "psrl"):
        if options:
            raise ValidationError(f"baseline {algo!r} takes no options, got {sorted(options)}")
        if mode != "trajectory":
            raise ModeError("baselines run in trajectory mode only")
        return run_baseline(env, algo, T, seed)
    raise ValidationError(f"unknown algo {algo!r}; expected one of {ALGOS}")
