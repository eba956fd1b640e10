"""Convex surrogate allocation problem over the Bellman-flow polytope.

Allocations are S x A arrays whose flattened order is ``s * A + a``.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleError, NumericalError, PositivityError, ValidationError
from .mdp import gap_stats

FEAS_TOL = 1e-8
MAX_EPS_HALVINGS = 10


def default_epsilon(num_states, num_actions):
    return min(1e-3, 1.0 / (2 * num_states * num_actions))


# --------------------------------------------------------------------------
# surrogate objective


def _check_positive(omega, stats):
    S = omega.shape[0]
    w_opt = omega[np.arange(S), stats.pi_star]
    if np.any(w_opt <= 0) or np.any(omega[stats.suboptimal] <= 0):
        raise PositivityError("allocation must be strictly positive on every pair in L_sa")
    return w_opt


def _terms(omega, stats, gamma):
    omega = np.asarray(omega, dtype=float).reshape(stats.gaps.shape)
    w_opt = _check_positive(omega, stats)
    s_o = int(np.argmin(w_opt))
    w_o = w_opt[s_o]
    head = (1 + gamma) ** 2 * (stats.max_reward_var + gamma**2 * stats.max_value_var) / (1 - gamma) ** 2
    tail = stats.reward_var + gamma**2 * stats.value_var
    with np.errstate(divide="ignore"):
        scale = np.where(stats.suboptimal, 2.0 / np.where(stats.suboptimal, stats.gaps, 1.0) ** 2, 0.0)
    return omega, s_o, w_o, head, tail, scale


def surrogate_values(omega, stats, gamma):
    """Per-pair L_sa (zero off the suboptimal pairs)."""
    omega, _, w_o, head, tail, scale = _terms(omega, stats, gamma)
    safe = np.where(stats.suboptimal, omega, 1.0)
    return np.where(stats.suboptimal, scale * (head / w_o + tail / safe), 0.0)


def surrogate_objective(omega, stats, gamma):
    """F(omega) = max over suboptimal pairs of L_sa, with the lexicographically first argmax."""
    L = surrogate_values(omega, stats, gamma)
    if not stats.suboptimal.any():
        return 0.0, None
    masked = np.where(stats.suboptimal, L, -np.inf)
    flat = int(np.argmax(masked))
    s, a = divmod(flat, L.shape[1])
    return float(masked[s, a]), (s, a)


def surrogate_subgradient(omega, stats, gamma):
    """A subgradient of F at ``omega`` (S x A array).

    Differentiates the first maximising L_sa; the omega_o term is charged to the
    first state attaining the minimum optimal-action mass.
    """
    omega, s_o, w_o, head, tail, scale = _terms(omega, stats, gamma)
    g = np.zeros_like(omega)
    _, pair = surrogate_objective(omega, stats, gamma)
    if pair is None:
        return g
    s, a = pair
    g[s, a] -= scale[s, a] * tail[s, a] / omega[s, a] ** 2
    g[s_o, stats.pi_star[s_o]] -= scale[s, a] * head / w_o**2
    return g


# --------------------------------------------------------------------------
# flow polytope


def flow_matrix(P):
    """Phi - P^T: row s, column (s', a') holds 1{s = s'} - P(s | s', a')."""
    S, A, _ = P.shape
    Phi = np.repeat(np.eye(S), A, axis=1)
    return Phi - P.reshape(S * A, S).T


def _uniform_stationary_point(P):
    S, A, _ = P.shape
    Pu = P.mean(axis=1)
    M = np.vstack([Pu.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    d = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return np.repeat(d / A, A)


def _max_floor_point(C, b):
    """Point of {C x = b} maximising its smallest coordinate (LP)."""
    n = C.shape[1]
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_eq = np.hstack([C, np.zeros((C.shape[0], 1))])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b,
                  bounds=[(0, None)] * n + [(None, None)], method="highs")
    if res.status != 0:
        return None, -np.inf
    return res.x[:n], float(res.x[-1])


@dataclass(frozen=True, eq=False)
class FlowPolytope:
    """W^eps: simplex, flow balance under one model, and a floor eps on every pair."""

    flow: np.ndarray
    epsilon: float
    interior: np.ndarray
    num_actions: int
    mdp_hash: str
    eq_matrix: np.ndarray = field(repr=False, default=None)
    eq_rhs: np.ndarray = field(repr=False, default=None)

    @property
    def size(self):
        return self.flow.shape[1]

    def residual(self, x):
        x = np.asarray(x, dtype=float).ravel()
        eq = np.max(np.abs(self.eq_matrix @ x - self.eq_rhs))
        floor = max(0.0, float(np.max(self.epsilon - x)))
        return float(max(eq, floor))

    def contains(self, x, tol=FEAS_TOL):
        return self.residual(x) <= tol


def _mdp_hash(P):
    return hashlib.sha256(np.ascontiguousarray(P).tobytes()).hexdigest()[:16]


def flow_polytope(mdp, epsilon=None):
    """Build W^eps for ``mdp`` and certify it is nonempty.

    Certification tries the uniform policy's stationary allocation, then the
    allocation maximising the smallest coordinate. When neither clears the
    floor, eps is halved, at most ten times.
    """
    P = mdp.transitions
    S, A, _ = P.shape
    eps = default_epsilon(S, A) if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValidationError("epsilon must be positive")
    flow = flow_matrix(P)
    C = np.vstack([flow, np.ones((1, S * A))])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    candidates = [_uniform_stationary_point(P)]
    lp_point = None
    for _ in range(MAX_EPS_HALVINGS + 1):
        for x in candidates:
            if np.max(np.abs(C @ x - b)) <= 1e-10 and x.min() >= eps:
                return FlowPolytope(flow, eps, x, A, _mdp_hash(P), C, b)
        if lp_point is None:
            lp_point, _ = _max_floor_point(C, b)
            if lp_point is not None:
                candidates.append(lp_point)
            continue
        eps /= 2.0
    raise InfeasibleError(f"flow polytope empty down to epsilon={eps * 2:.3e}")


def _eqp(y, C, b, fixed, eps):
    """Project y onto {C z = b, z_i = eps for i in fixed}; returns (z, multipliers on fixed)."""
    free = ~fixed
    z = np.empty_like(y)
    z[fixed] = eps
    Cf = C[:, free]
    rhs = b - C[:, fixed] @ z[fixed]
    zf = y[free] - np.linalg.lstsq(Cf, Cf @ y[free] - rhs, rcond=None)[0]
    for _ in range(2):
        # iterative refinement: y may be far from the polytope
        zf -= np.linalg.lstsq(Cf, Cf @ zf - rhs, rcond=None)[0]
    z[free] = zf
    nu = np.linalg.lstsq(Cf.T, y[free] - z[free], rcond=None)[0] if free.any() else np.zeros(len(b))
    lam = z - y + C.T @ nu
    return z, lam


def project_flow_polytope(x, poly, active_hint=None, max_iter=None):
    """Euclidean projection onto W^eps by a primal active-set method.

    Starts from the certified interior point (or from ``active_hint``, a
    boolean mask of floors guessed to be active, when that guess is primal
    feasible). Returns an S x A array.
    """
    y = np.asarray(x, dtype=float).ravel()
    n = poly.size
    if y.shape != (n,):
        raise ValidationError(f"expected {n} coordinates, got {y.shape}")
    A = poly.num_actions
    if poly.contains(y, tol=1e-12):
        return y.reshape(-1, A).copy()
    C, b, eps = poly.eq_matrix, poly.eq_rhs, poly.epsilon
    max_iter = 20 * n + 100 if max_iter is None else max_iter
    work = np.zeros(n, dtype=bool)
    z = poly.interior.copy()
    if active_hint is not None:
        hint = np.asarray(active_hint, dtype=bool).ravel()
        cand, _ = _eqp(y, C, b, hint, eps)
        if cand.min() >= eps - 1e-12 and np.max(np.abs(C @ cand - b)) <= 1e-10:
            z, work = np.maximum(cand, eps), hint.copy()
    work |= z <= eps + 1e-14
    z[work] = eps
    for _ in range(max_iter):
        target, lam = _eqp(y, C, b, work, eps)
        p = target - z
        if np.max(np.abs(p)) <= 1e-13:
            lam_w = np.where(work, lam, np.inf)
            i = int(np.argmin(lam_w))
            if lam_w[i] >= -1e-12:
                out = np.maximum(target, eps)
                res = poly.residual(out)
                if res > FEAS_TOL:
                    raise NumericalError("projection ended off the polytope", res)
                return out.reshape(-1, A)
            work[i] = False
            continue
        step = 1.0
        block = -1
        neg = (~work) & (p < 0)
        if neg.any():
            ratios = (eps - z[neg]) / p[neg]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                step = max(float(ratios[k]), 0.0)
                block = int(np.flatnonzero(neg)[k])
        z = z + step * p
        if block >= 0:
            work[block] = True
            z[block] = eps
    raise NumericalError("active-set projection hit its iteration cap", poly.residual(z))


# --------------------------------------------------------------------------
# lazy projected subgradient


@dataclass(frozen=True)
class SolverState:
    """Current iterate ``x``, Polyak average ``omega`` and update count ``n``."""

    x: np.ndarray
    omega: np.ndarray
    n: int
    eta: float
    trace: tuple = ()


def initial_state(poly, eta):
    S_A = poly.size
    x0 = project_flow_polytope(np.full(S_A, 1.0 / S_A), poly)
    return SolverState(x=x0, omega=x0.copy(), n=0, eta=float(eta))


def normalized_direction(g):
    """``g / ||g||``, or zeros for a zero subgradient."""
    norm = float(np.linalg.norm(g))
    return np.zeros_like(g) if norm == 0.0 or not np.isfinite(norm) else g / norm


def lazy_step(state, stats, gamma, poly, subgradient=None):
    """One projected subgradient step followed by the 1/n Polyak average.

    The step moves a distance ``eta`` along the normalised subgradient. F
    blows up like 1/omega^2 near the floor, so raw subgradients span many
    orders of magnitude and a fixed eta either stalls or jumps between
    vertices; the normalised step keeps the 1/sqrt(N) schedule meaningful.
    """
    g = surrogate_subgradient(state.x, stats, gamma) if subgradient is None else subgradient
    d = normalized_direction(np.asarray(g, dtype=float))
    if not np.any(d):
        x = state.x.copy()
    else:
        x = project_flow_polytope(state.x - state.eta * d, poly,
                                  active_hint=state.x.ravel() <= poly.epsilon + 1e-12)
    n = state.n + 1
    omega = x.copy() if n == 1 else ((n - 1) / n) * state.omega + (1.0 / n) * x
    F, _ = surrogate_objective(omega, stats, gamma)
    return replace(state, x=x, omega=omega, n=n, trace=state.trace + (F,))


def solve_allocation(mdp, epsilon=None, iters=5000, stats=None):
    """Minimise the surrogate over W^eps for a known model.

    Runs ``iters`` lazy steps with the constant step 1/sqrt(iters) and returns
    ``(omega, F(omega))`` for the Polyak average.
    """
    stats = gap_stats(mdp) if stats is None else stats
    poly = flow_polytope(mdp, epsilon)
    state = initial_state(poly, 1.0 / np.sqrt(iters))
    for _ in range(iters):
        state = lazy_step(state, stats, mdp.gamma, poly)
    F, _ = surrogate_objective(state.omega, stats, mdp.gamma)
    return state.omega, F
