"""Concrete environments and sampled interaction."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mdp import TabularMdp

# gridworld
GRID_SIDE = 4
GRID_MIX = 0.02
GRID_GOAL_REWARD = 1.0
GRID_REWARD_CLIP = (-0.08, 0.20)
GRID_VAR_RANGE = (0.006, 0.02)
GRID_DEFAULT_SEED = 0

# launch case study
LAUNCH_DEFAULT_STATES = 50
LAUNCH_DISCOUNTS = 6
LAUNCH_EXPOSURES = 5
LAUNCH_REWARD_CLIP = (0.06, 0.40)
LAUNCH_MIX = 0.02
LAUNCH_VAR_RANGE = (0.005, 0.02)

_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


@dataclass(frozen=True)
class EnvSpec:
    """Recipe for a built-in environment."""

    kind: str
    seed: int = 0
    num_states: int = LAUNCH_DEFAULT_STATES
    K: int = 1
    L: int = 2
    alpha: float = 0.02
    gamma: float = 0.9
    p: float = None
    path: str = None

    def build(self):
        if self.kind == "gridworld":
            return build_gridworld(self.seed)
        if self.kind == "launch":
            return build_launch_env(self.num_states, self.seed)
        if self.kind == "hard_instance":
            return build_hard_instance(self.K, self.L, p=self.p, alpha=self.alpha, gamma=self.gamma)
        if self.kind == "file":
            from .specfile import load_mdp
            return load_mdp(self.path)
        raise ValidationError(f"unknown environment kind {self.kind!r}")


@dataclass(frozen=True)
class StepRecord:
    s: int
    a: int
    r: float
    s_next: int


# --------------------------------------------------------------------------
# gridworld


def _cell(s):
    return divmod(s, GRID_SIDE)


def _neighbour(s, a):
    row, col = _cell(s)
    dr, dc = _MOVES[a]
    r2, c2 = row + dr, col + dc
    if 0 <= r2 < GRID_SIDE and 0 <= c2 < GRID_SIDE:
        return r2 * GRID_SIDE + c2
    return s


def _distance(s, goal):
    (r1, c1), (r2, c2) = _cell(s), _cell(goal)
    return abs(r1 - r2) + abs(c1 - c2)


def gridworld_preferred_actions():
    """The action that heads for the goal at each state (right along a row, then down)."""
    S = GRID_SIDE * GRID_SIDE
    pref = np.zeros(S, dtype=np.int64)
    for s in range(S):
        row, col = _cell(s)
        if s == S - 1:
            pref[s] = 0
        elif col < GRID_SIDE - 1 and (row % 2 == 0 or row == GRID_SIDE - 1):
            pref[s] = 1
        elif row < GRID_SIDE - 1:
            pref[s] = 2
        else:
            pref[s] = 1
    return pref


def _away(s, goal):
    """Neighbour farther from the goal, trying left before up."""
    for a in (3, 0):
        nb = _neighbour(s, a)
        if nb != s and _distance(nb, goal) > _distance(s, goal):
            return nb
    return s


def build_gridworld(seed=GRID_DEFAULT_SEED):
    """4x4 stochastic gridworld: start at the top-left cell, goal at bottom-right.

    The preferred action moves toward the goal with probability 0.80 (0.12
    stay, 0.08 to the other neighbours). Any other action stays with 0.55,
    steps away from the goal with 0.30 (left if possible, else up) and
    follows its own direction with 0.15. At the goal the preferred action
    self-loops with 0.95 and returns to the start with 0.05; the other
    actions stay with 0.55 and return to the start with 0.45. Every row is
    then mixed with 2% uniform mass.
    """
    rng = np.random.default_rng(seed)
    side = GRID_SIDE
    S, A = side * side, 4
    start, goal = 0, S - 1
    pref = gridworld_preferred_actions()
    base = np.zeros((S, A, S))
    r = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            row = base[s, a]
            if s == goal:
                if a == pref[s]:
                    row[goal] += 0.95
                    row[start] += 0.05
                else:
                    row[goal] += 0.55
                    row[start] += 0.45
                r[s, a] = GRID_GOAL_REWARD
                continue
            if a == pref[s]:
                toward = _neighbour(s, a)
                row[toward] += 0.80
                row[s] += 0.12
                others = sorted({_neighbour(s, b) for b in range(A)} - {toward, s})
                for nb in others or [s]:
                    row[nb] += 0.08 / max(len(others), 1)
            else:
                row[s] += 0.55
                row[_away(s, goal)] += 0.30
                row[_neighbour(s, a)] += 0.15
            progress = (2 * (side - 1)) - _distance(s, goal)
            reward = -0.04 + 0.012 * progress
            if a == pref[s]:
                reward += 0.03
                if _neighbour(s, a) == goal:
                    reward += 0.05
            r[s, a] = reward
    r = r + np.where(np.arange(S)[:, None] == goal, 0.0, rng.uniform(-0.005, 0.005, size=(S, A)))
    r[:goal] = np.clip(r[:goal], *GRID_REWARD_CLIP)
    P = (1.0 - GRID_MIX) * base + GRID_MIX / S
    P = P / P.sum(axis=2, keepdims=True)
    var = rng.uniform(*GRID_VAR_RANGE, size=(S, A))
    return TabularMdp(P, r, var, False, 0.99, name=f"gridworld(seed={seed})")


# --------------------------------------------------------------------------
# product-launch case study


def build_launch_env(num_states=LAUNCH_DEFAULT_STATES, seed=0):
    """Procedural product-launch experiment with a 6 x 5 (discount, exposure) action grid.

    Each context sits on a latent axis in [0, 1] that blends price sensitivity
    and inventory pressure. Purchase likelihood is a logistic score of how well
    the discount matches the context; the mean reward is margin times
    likelihood minus exposure and inventory costs, clipped to [0.06, 0.40].
    Actions drift the context along the axis; rows carry 2% uniform mixing.
    """
    if num_states < 2:
        raise ValidationError("launch environment needs num_states >= 2")
    rng = np.random.default_rng(seed)
    S = int(num_states)
    A = LAUNCH_DISCOUNTS * LAUNCH_EXPOSURES
    ctx = np.sort(rng.uniform(0.0, 1.0, size=S))
    ctx[0], ctx[-1] = 0.0, 1.0
    inventory = rng.uniform(0.0, 1.0, size=S)
    discounts = np.linspace(0.0, 0.5, LAUNCH_DISCOUNTS)
    exposures = np.linspace(0.0, 1.0, LAUNCH_EXPOSURES)
    d = np.repeat(discounts, LAUNCH_EXPOSURES)[None, :]
    e = np.tile(exposures, LAUNCH_DISCOUNTS)[None, :]
    c = ctx[:, None]
    match = -8.0 * (d - 0.5 * c) ** 2
    score = 1.0 / (1.0 + np.exp(-(3.0 * match + 2.5 * e * (1.0 - 0.5 * c) - 0.5)))
    margin = 0.9 - d
    r = (margin * score - 0.1 * e - 0.08 * inventory[:, None] * (1.0 - score)
         + 0.02 * rng.standard_normal((S, A)))
    r = np.clip(r, *LAUNCH_REWARD_CLIP)

    pos = np.arange(S)
    drift = (1.5 * e - 2.0 * d - 0.3 + 0.6 * (score - 0.5))
    P = np.zeros((S, A, S))
    spread = 1.5 + 0.5 * rng.uniform(size=(S, A))
    for s in range(S):
        centre = s + drift[s] * S / 10.0
        logits = -0.5 * ((pos[None, :] - centre[:, None]) / spread[s][:, None]) ** 2
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        P[s] = w / w.sum(axis=1, keepdims=True)
    P = (1.0 - LAUNCH_MIX) * P + LAUNCH_MIX / S
    P = P / P.sum(axis=2, keepdims=True)
    var = rng.uniform(*LAUNCH_VAR_RANGE, size=(S, A))
    return TabularMdp(P, r, var, False, 0.99, name=f"launch(S={S},seed={seed})")


# --------------------------------------------------------------------------
# decoupled hard instance


def hard_instance_p(gamma):
    """Self-loop probability (4*gamma - 1) / (3*gamma) used by default."""
    if not 0.25 < gamma < 1.0:
        raise ValidationError("default p requires gamma in (1/4, 1)")
    return (4.0 * gamma - 1.0) / (3.0 * gamma)


def hard_instance_states(K, L):
    """Index maps (first-layer, second-layer, absorbing) of the hard instance."""
    s1 = np.arange(K)
    s2 = K + np.arange(K * L).reshape(K, L)
    s3 = K + K * L + np.arange(K * L).reshape(K, L)
    return s1, s2, s3


def build_hard_instance(K=1, L=2, p=None, alpha=0.02, gamma=0.9):
    """Decoupled 3KL-pair instance.

    First-layer states offer L actions leading deterministically to
    second-layer states; those self-loop with probability p (p + alpha behind
    action 0) with reward 1 and otherwise fall into absorbing zero-reward
    states. Second- and third-layer states admit only action 0; the other
    action columns duplicate it and are marked inadmissible.
    """
    if K < 1 or L < 1:
        raise ValidationError("K and L must be >= 1")
    if p is None:
        p = hard_instance_p(gamma)
    if not (0.0 < p < p + alpha < 1.0):
        raise ValidationError(f"need 0 < p < p + alpha < 1, got p={p}, alpha={alpha}")
    if not 0.0 <= gamma < 1.0:
        raise ValidationError("gamma must lie in [0, 1)")
    s1, s2, s3 = hard_instance_states(K, L)
    S, A = K + 2 * K * L, L
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    adm = np.zeros((S, A), dtype=bool)
    for i in range(K):
        for j in range(L):
            P[s1[i], j, s2[i, j]] = 1.0
            adm[s1[i], j] = True
            stay = p + alpha if j == 0 else p
            P[s2[i, j], :, s2[i, j]] = stay
            P[s2[i, j], :, s3[i, j]] = 1.0 - stay
            r[s2[i, j], :] = 1.0
            adm[s2[i, j], 0] = True
            P[s3[i, j], :, s3[i, j]] = 1.0
            adm[s3[i, j], 0] = True
    return TabularMdp(P, r, 0.0, False, gamma, admissible=adm,
                      name=f"hard_instance(K={K},L={L},p={p!r},alpha={alpha!r})")


# --------------------------------------------------------------------------
# structure checks and sampling


def is_communicating(mdp, threshold=0.0):
    """True when every stationary deterministic policy yields one recurrent class.

    Checked conservatively: a transition s -> s' counts only if every admissible
    action reaches s' with probability above ``threshold``; the resulting graph
    must be strongly connected.
    """
    P = np.where(mdp.admissible[:, :, None], mdp.transitions, np.inf)
    reach = P.min(axis=1) > threshold
    S = mdp.num_states

    def closure(adj):
        seen = np.zeros(S, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u] & ~seen):
                seen[v] = True
                stack.append(v)
        return seen.all()

    return bool(closure(reach) and closure(reach.T))


def sample_reward(mdp, s, a, rng):
    if mdp.bernoulli[s, a]:
        return float(rng.random() < mdp.reward_means[s, a])
    return float(mdp.reward_means[s, a] + np.sqrt(mdp.reward_var[s, a]) * rng.standard_normal())


def sample_step(mdp, s, a, rng):
    """Draw one transition and reward from pair (s, a)."""
    s_next = int(rng.choice(mdp.num_states, p=mdp.transitions[s, a]))
    return StepRecord(s=int(s), a=int(a), r=sample_reward(mdp, s, a, rng), s_next=s_next)
