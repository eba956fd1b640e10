"""Linear MDPs: features, design matrices and allocation objectives.

Pairs are flattened in the order ``s * A + a`` throughout, matching the
tabular allocation layout.
"""

from dataclasses import dataclass

import numpy as np

from .allocation import flow_polytope, initial_state, normalized_direction, project_flow_polytope
from .errors import NumericalError, RepresentationError, ValidationError
from .mdp import ROW_TOL, TabularMdp, gap_stats

RIDGE = 1e-8
LINEAR_TOL = 1e-9
MAX_CONDITION = 1e14
VARIANTS = ("theorem5", "surrogate1", "surrogate2")


@dataclass(frozen=True, eq=False)
class LinearMdp:
    """P(s'|s,a) = phi(s,a) . mu[:, s'] and r(s,a) = phi(s,a) . theta.

    ``reward_var`` is the Gaussian noise variance, a scalar or one value per pair.
    """

    phi: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    gamma: float
    reward_var: object = 0.0

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        mu = np.array(self.mu, dtype=float)
        theta = np.array(self.theta, dtype=float).ravel()
        if phi.ndim != 2 or mu.ndim != 2:
            raise ValidationError("phi must be SA x d and mu d x S")
        d = phi.shape[1]
        if mu.shape[0] != d or theta.shape != (d,):
            raise ValidationError(f"feature dimension mismatch: phi {phi.shape}, mu {mu.shape}, "
                                  f"theta {theta.shape}")
        S = mu.shape[1]
        if S < 1 or phi.shape[0] % S:
            raise ValidationError(f"phi has {phi.shape[0]} rows, not a multiple of S={S}")
        var = np.array(np.broadcast_to(np.asarray(self.reward_var, dtype=float), (phi.shape[0],)))
        for name, arr in (("phi", phi), ("mu", mu), ("theta", theta), ("reward_var", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def num_states(self):
        return self.mu.shape[1]

    @property
    def num_actions(self):
        return self.phi.shape[0] // self.num_states

    @property
    def dim(self):
        return self.phi.shape[1]


def one_hot_embedding(mdp):
    """Tabular model as a linear MDP with d = SA indicator features."""
    S, A = mdp.shape
    return LinearMdp(phi=np.eye(S * A), mu=mdp.transitions.reshape(S * A, S),
                     theta=mdp.reward_means.ravel(), gamma=mdp.gamma,
                     reward_var=mdp.reward_variance().ravel())


def validate_linear(lin):
    """Check the representation invariants and return the induced tabular model."""
    S, A = lin.num_states, lin.num_actions
    norms = np.linalg.norm(lin.phi, axis=1)
    bad = np.flatnonzero(norms > 1.0 + LINEAR_TOL)
    if bad.size:
        s, a = divmod(int(bad[0]), A)
        raise RepresentationError(f"||phi({s}, {a})|| = {norms[bad[0]]:.6g} exceeds 1")
    P = lin.phi @ lin.mu
    for k in range(S * A):
        row = P[k]
        if np.any(row < -LINEAR_TOL) or abs(row.sum() - 1.0) > LINEAR_TOL:
            s, a = divmod(k, A)
            raise RepresentationError(f"phi({s}, {a}) . mu is not a probability row "
                                      f"(sum {row.sum():.12g}, min {row.min():.3g})")
    r = lin.phi @ lin.theta
    out = np.flatnonzero((r < -LINEAR_TOL) | (r > 1.0 + LINEAR_TOL))
    if out.size:
        s, a = divmod(int(out[0]), A)
        raise RepresentationError(f"r({s}, {a}) = {r[out[0]]:.6g} outside [0, 1]")
    P = np.maximum(P, 0.0)
    sums = P.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > ROW_TOL):
        P = P / sums
    r = np.clip(r, 0.0, 1.0)
    return TabularMdp(P.reshape(S, A, S), r.reshape(S, A), lin.reward_var.reshape(S, A), False, lin.gamma)


@dataclass(frozen=True)
class DesignMatrix:
    """Lambda(omega) = sum_sa omega_sa phi phi^T; ``ridge`` is added only if Lambda is singular."""

    matrix: np.ndarray
    ridge: float = RIDGE
    ridged: bool = False

    def regularized(self):
        M = self.matrix
        return M + self.ridge * np.eye(M.shape[0]) if self.ridged else M

    def inverse(self):
        M = self.regularized()
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise NumericalError("design matrix is singular beyond the ridge", float(cond))
        return np.linalg.inv(M)


def design_matrix(lin, omega, ridge=RIDGE):
    w = np.asarray(omega, dtype=float).ravel()
    if w.shape != (lin.phi.shape[0],):
        raise ValidationError(f"allocation has {w.size} entries, expected {lin.phi.shape[0]}")
    M = (lin.phi * w[:, None]).T @ lin.phi
    M = 0.5 * (M + M.T)
    lam_min = float(np.linalg.eigvalsh(M)[0]) if M.size else 0.0
    return DesignMatrix(M, ridge, ridged=lam_min <= ridge)


# --------------------------------------------------------------------------
# objectives


def _pairs(lin, stats):
    """Suboptimal pair indices and the matching optimal-pair indices."""
    A = lin.num_actions
    sub = np.flatnonzero(stats.suboptimal.ravel())
    opt = (sub // A) * A + stats.pi_star[sub // A]
    return sub, opt


def _objective_parts(lin, omega, variant, stats):
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    Linv = design_matrix(lin, omega).inverse()
    phi = lin.phi
    sub, opt = _pairs(lin, stats)
    gaps = stats.gaps.ravel()[sub]
    if variant == "surrogate2":
        V = phi[sub]
        scale = np.full(sub.size, stats.delta_min**2)
    else:
        V = phi[sub] - phi[opt]
        scale = gaps**2
    q = np.einsum("kd,de,ke->k", V, Linv, V)
    return Linv, sub, opt, V, q, scale


def linear_surrogate_objective(lin, omega, variant="surrogate1", stats=None):
    """Value of ``variant`` at ``omega`` (larger is better).

    theorem5: min over suboptimal (s, a) of (1-g)^2/6 * (D_sa / (||phi_sa - phi_s*|| + 2g/(1-g) * max ||phi||))^2;
    surrogate1: min of D_sa^2 / ||phi_sa - phi_s*||^2; surrogate2: min of D_min^2 / ||phi_sa||^2;
    norms are in the inverse design matrix.
    """
    value, _ = _objective_and_supergradient(lin, omega, variant, stats, need_grad=False)
    return value


def _objective_and_supergradient(lin, omega, variant, stats, need_grad=True):
    if stats is None:
        stats = gap_stats(validate_linear(lin))
    Linv, sub, opt, V, q, scale = _objective_parts(lin, omega, variant, stats)
    if sub.size == 0:
        return float("inf"), np.zeros(lin.phi.shape[0])
    phi = lin.phi
    g = lin.gamma
    if variant == "theorem5":
        adm = np.flatnonzero(stats.suboptimal.ravel() | _optimal_mask(lin, stats))
        qa = np.einsum("kd,de,ke->k", phi[adm], Linv, phi[adm])
        j = int(np.argmax(qa))
        k_fac = 2.0 * g / (1.0 - g)
        denom = np.sqrt(q) + k_fac * np.sqrt(qa[j])
        terms = (1.0 - g) ** 2 / 6.0 * scale / denom**2
    else:
        terms = scale / q
    i = int(np.argmin(terms))
    value = float(terms[i])
    if not need_grad:
        return value, None
    # d(v^T Linv v)/d omega_k = -(phi_k^T Linv v)^2
    dq = -(phi @ (Linv @ V[i])) ** 2
    if variant == "theorem5":
        dqa = -(phi @ (Linv @ phi[adm[j]])) ** 2
        dD = dq / (2.0 * np.sqrt(q[i])) + k_fac * dqa / (2.0 * np.sqrt(qa[j]))
        grad = -2.0 * value / denom[i] * dD
    else:
        grad = -scale[i] / q[i] ** 2 * dq
    return value, grad


def _optimal_mask(lin, stats):
    S, A = lin.num_states, lin.num_actions
    m = np.zeros((S, A), dtype=bool)
    m[np.arange(S), stats.pi_star] = True
    return m.ravel()


def linear_supergradient(lin, omega, variant="surrogate1", stats=None):
    """A supergradient of the (concave) objective at ``omega``, as a flat SA vector."""
    _, grad = _objective_and_supergradient(lin, omega, variant, stats)
    return grad


def quadratic_form_gradient(lin, omega, v):
    """Gradient of v^T Lambda(omega)^{-1} v: entry sa is -(phi_sa^T Lambda^{-1} v)^2."""
    Linv = design_matrix(lin, omega).inverse()
    return -(lin.phi @ (Linv @ np.asarray(v, dtype=float))) ** 2


def quadratic_form(lin, omega, v):
    v = np.asarray(v, dtype=float)
    return float(v @ design_matrix(lin, omega).inverse() @ v)


def solve_linear_allocation(lin, variant="surrogate1", epsilon=None, iters=2000):
    """Maximise ``variant`` over W^eps of the induced model by projected supergradient ascent.

    Uses normalised steps of length 1/sqrt(iters) and returns the Polyak
    average of the iterates as an S x A allocation.
    """
    mdp = validate_linear(lin)
    stats = gap_stats(mdp)
    poly = flow_polytope(mdp, epsilon)
    state = initial_state(poly, 1.0 / np.sqrt(iters))
    x = state.x.ravel()
    omega = x.copy()
    for n in range(1, iters + 1):
        _, grad = _objective_and_supergradient(lin, x, variant, stats)
        d = normalized_direction(grad)
        if np.any(d):
            x = project_flow_polytope(x + state.eta * d, poly,
                                      active_hint=x <= poly.epsilon + 1e-12).ravel()
        omega = x.copy() if n == 1 else ((n - 1) / n) * omega + x / n
    return omega.reshape(mdp.shape)
