"""Tabular discounted MDPs: representation, exact planning and gap statistics."""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import value_iteration_kernel
from .errors import ConvergenceError, NonUniqueOptimumError, ValidationError

ROW_TOL = 1e-12
TIE_TOL = 1e-9
DENSE_SOLVE_MAX_STATES = 2000


def _frozen(x, dtype=float):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP with per-pair reward noise.

    ``reward_var`` holds the Gaussian noise variance of each pair; pairs flagged
    in ``bernoulli`` instead draw rewards in {0, 1} with the stated mean.
    ``admissible`` marks which actions may be taken at each state; inadmissible
    columns are ignored by planning and by the gap statistics.
    """

    transitions: np.ndarray
    reward_means: np.ndarray
    reward_var: np.ndarray
    bernoulli: np.ndarray
    gamma: float
    admissible: np.ndarray = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        P = _frozen(self.transitions)
        r = _frozen(self.reward_means)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValidationError(f"transitions must be S x A x S, got shape {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise ValidationError("need at least one state and one action")
        if r.shape != (S, A):
            raise ValidationError(f"reward_means must be {S} x {A}, got {r.shape}")
        var = _frozen(np.broadcast_to(np.asarray(self.reward_var, dtype=float), (S, A)))
        bern = _frozen(np.broadcast_to(np.asarray(self.bernoulli, dtype=bool), (S, A)), bool)
        adm = np.ones((S, A), dtype=bool) if self.admissible is None else self.admissible
        adm = _frozen(np.broadcast_to(np.asarray(adm, dtype=bool), (S, A)), bool)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "reward_means", r)
        object.__setattr__(self, "reward_var", var)
        object.__setattr__(self, "bernoulli", bern)
        object.__setattr__(self, "admissible", adm)
        object.__setattr__(self, "gamma", float(self.gamma))
        self.validate()

    def validate(self):
        P = self.transitions
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ValidationError("transition probabilities must be finite and non-negative")
        rows = P.sum(axis=2)
        bad = np.argwhere(np.abs(rows - 1.0) > ROW_TOL)
        if bad.size:
            s, a = bad[0]
            raise ValidationError(f"transition row ({s}, {a}) sums to {rows[s, a]!r}, not 1")
        if not np.all(np.isfinite(self.reward_means)):
            raise ValidationError("reward means must be finite")
        if np.any(self.reward_var < 0) or not np.all(np.isfinite(self.reward_var)):
            raise ValidationError("reward noise variances must be finite and >= 0")
        m = self.reward_means[self.bernoulli]
        if np.any((m < 0) | (m > 1)):
            raise ValidationError("Bernoulli reward means must lie in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError(f"discount must lie in [0, 1), got {self.gamma}")
        if not self.admissible.any(axis=1).all():
            raise ValidationError("every state needs at least one admissible action")

    @property
    def num_states(self):
        return self.transitions.shape[0]

    @property
    def num_actions(self):
        return self.transitions.shape[1]

    @property
    def shape(self):
        return self.transitions.shape[:2]

    def reward_variance(self):
        """Per-pair reward variance implied by the noise descriptor."""
        m = self.reward_means
        return np.where(self.bernoulli, m * (1.0 - m), self.reward_var)

    def replace(self, **changes):
        kw = dict(transitions=self.transitions, reward_means=self.reward_means,
                  reward_var=self.reward_var, bernoulli=self.bernoulli, gamma=self.gamma,
                  admissible=self.admissible, name=self.name)
        kw.update(changes)
        return TabularMdp(**kw)

    def __eq__(self, other):
        if not isinstance(other, TabularMdp):
            return NotImplemented
        return (self.gamma == other.gamma
                and np.array_equal(self.transitions, other.transitions)
                and np.array_equal(self.reward_means, other.reward_means)
                and np.array_equal(self.reward_var, other.reward_var)
                and np.array_equal(self.bernoulli, other.bernoulli)
                and np.array_equal(self.admissible, other.admissible))

    __hash__ = None


def as_policy_matrix(mdp, pi):
    """Return ``pi`` as an S x A row-stochastic matrix.

    Accepts either a length-S vector of action indices or an S x A matrix.
    """
    S, A = mdp.shape
    pi = np.asarray(pi)
    if pi.ndim == 1:
        if pi.shape != (S,):
            raise ValidationError(f"deterministic policy must have length {S}, got {pi.shape}")
        if not np.issubdtype(pi.dtype, np.integer):
            if not np.all(pi == np.round(pi)):
                raise ValidationError("deterministic policy entries must be integers")
            pi = pi.astype(np.int64)
        if np.any((pi < 0) | (pi >= A)):
            raise ValidationError(f"action indices must lie in [0, {A})")
        M = np.zeros((S, A))
        M[np.arange(S), pi] = 1.0
        return M
    if pi.shape != (S, A):
        raise ValidationError(f"stochastic policy must be {S} x {A}, got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > ROW_TOL):
        raise ValidationError("stochastic policy rows must be non-negative and sum to 1")
    return pi.astype(float)


@dataclass(frozen=True)
class ValueReport:
    V: np.ndarray
    Q: np.ndarray
    pi_star: np.ndarray
    iterations: int
    residual: float


def bellman_backup(mdp, V):
    """One application of the Bellman optimality operator; returns (TV, Q)."""
    Q = mdp.reward_means + mdp.gamma * (mdp.transitions @ np.asarray(V, dtype=float))
    Qm = np.where(mdp.admissible, Q, -np.inf)
    return Qm.max(axis=1), Q


def greedy(mdp, Q):
    """Greedy action per state, lowest index on ties, inadmissible actions skipped."""
    return np.argmax(np.where(mdp.admissible, Q, -np.inf), axis=1)


def value_iteration(mdp, tol=1e-10, max_iter=1_000_000):
    """Solve the Bellman optimality equation by successive approximation.

    Stops once the sup-norm change between sweeps is at most ``tol`` and
    raises :class:`ConvergenceError` if ``max_iter`` sweeps do not suffice.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    V, iters, residual = value_iteration_kernel(
        mdp.transitions, mdp.reward_means, mdp.admissible, mdp.gamma, tol, max_iter,
        np.zeros(mdp.num_states))
    if residual > tol:
        raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")
    Q = mdp.reward_means + mdp.gamma * (mdp.transitions @ V)
    return ValueReport(V=V, Q=Q, pi_star=greedy(mdp, Q), iterations=int(iters),
                       residual=float(residual))


def policy_values(mdp, pi):
    """Exact V and Q of a stationary policy."""
    M = as_policy_matrix(mdp, pi)
    S = mdp.num_states
    P_pi = np.einsum("sa,sap->sp", M, mdp.transitions)
    r_pi = np.einsum("sa,sa->s", M, mdp.reward_means)
    if S <= DENSE_SOLVE_MAX_STATES:
        V = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, r_pi)
    else:
        V = np.zeros(S)
        for _ in range(1_000_000):
            Vn = r_pi + mdp.gamma * (P_pi @ V)
            done = np.max(np.abs(Vn - V)) <= 1e-12 * (1.0 - mdp.gamma)
            V = Vn
            if done:
                break
        else:
            raise ConvergenceError("iterative policy evaluation did not converge")
    Q = mdp.reward_means + mdp.gamma * (mdp.transitions @ V)
    return V, Q


def state_averaged_value(mdp, pi):
    V, _ = policy_values(mdp, pi)
    return float(np.mean(V))


@dataclass(frozen=True)
class GapStats:
    """Everything the surrogate objective needs about one model.

    ``suboptimal`` marks the admissible pairs other than the optimal action;
    the surrogate maximum runs over exactly these pairs.
    """

    gaps: np.ndarray
    reward_var: np.ndarray
    value_var: np.ndarray
    max_reward_var: float
    max_value_var: float
    delta_min: float
    pi_star: np.ndarray
    suboptimal: np.ndarray
    V: np.ndarray
    tied: bool = False


def gap_stats(mdp, tie_tol=TIE_TOL, allow_ties=False, gap_floor=0.0):
    """Optimality gaps and variance statistics along the optimal policy.

    With ``allow_ties`` the lowest-index action wins ties, the result carries
    ``tied=True`` and tied gaps are raised to ``gap_floor``; otherwise a tie
    raises :class:`NonUniqueOptimumError`.
    """
    report = value_iteration(mdp)
    pi = report.pi_star
    V, Q = policy_values(mdp, pi)
    S, A = mdp.shape
    opt = np.zeros((S, A), dtype=bool)
    opt[np.arange(S), pi] = True
    sub = mdp.admissible & ~opt
    gaps = np.where(sub, V[:, None] - Q, 0.0)
    tied = False
    close = sub & (gaps <= tie_tol)
    if close.any():
        s = int(np.argwhere(close)[0][0])
        if not allow_ties:
            tied_actions = [int(pi[s])] + [int(a) for a in np.flatnonzero(close[s])]
            raise NonUniqueOptimumError(s, sorted(tied_actions))
        tied = True
    gaps = np.where(sub, np.maximum(gaps, gap_floor), 0.0)
    centred = V[None, None, :] - np.einsum("sap,p->sa", mdp.transitions, V)[:, :, None]
    value_var = np.einsum("sap,sap->sa", mdp.transitions, centred**2)
    reward_var = mdp.reward_variance()
    rows = np.arange(S)
    return GapStats(
        gaps=gaps,
        reward_var=reward_var,
        value_var=value_var,
        max_reward_var=float(reward_var[rows, pi].max()),
        max_value_var=float(value_var[rows, pi].max()),
        delta_min=float(gaps[sub].min()) if sub.any() else float("inf"),
        pi_star=pi,
        suboptimal=sub,
        V=V,
        tied=tied,
    )
