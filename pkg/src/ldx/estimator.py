"""Visit counts and plug-in estimates built from a sampled trajectory."""

from dataclasses import dataclass

import numpy as np

from .mdp import TabularMdp, gap_stats

VAR_FLOOR = 1e-6
UNVISITED_REWARD = 0.5
GAP_FLOOR = 1e-6


@dataclass
class EmpiricalModel:
    """Sufficient statistics of all transitions seen so far.

    Mutated in place by :func:`record_transition` and the trajectory kernels;
    :meth:`snapshot` returns an independent copy.
    """

    pair_counts: np.ndarray
    transition_counts: np.ndarray
    reward_sum: np.ndarray
    reward_sq_sum: np.ndarray

    @classmethod
    def empty(cls, num_states, num_actions):
        S, A = num_states, num_actions
        return cls(np.zeros((S, A), dtype=np.int64), np.zeros((S, A, S), dtype=np.int64),
                   np.zeros((S, A)), np.zeros((S, A)))

    @property
    def shape(self):
        return self.pair_counts.shape

    @property
    def total_steps(self):
        return int(self.pair_counts.sum())

    def state_counts(self):
        return self.pair_counts.sum(axis=1)

    def snapshot(self):
        return EmpiricalModel(self.pair_counts.copy(), self.transition_counts.copy(),
                              self.reward_sum.copy(), self.reward_sq_sum.copy())

    def check(self):
        assert np.all(self.pair_counts >= 0) and np.all(self.transition_counts >= 0)
        assert np.array_equal(self.transition_counts.sum(axis=2), self.pair_counts)


def record_transition(model, rec):
    """Add one :class:`~ldx.envs.StepRecord` to ``model`` (in place) and return it."""
    model.pair_counts[rec.s, rec.a] += 1
    model.transition_counts[rec.s, rec.a, rec.s_next] += 1
    model.reward_sum[rec.s, rec.a] += rec.r
    model.reward_sq_sum[rec.s, rec.a] += rec.r * rec.r
    return model


def empirical_mdp(model, gamma):
    """Raw plug-in estimate: unvisited pairs get an all-zero row and zero reward.

    Returns ``(transitions, reward_means, visited)``; the zero rows make this
    unsuitable as a :class:`TabularMdp`, see :func:`solver_mdp`.
    """
    N = model.pair_counts
    visited = N > 0
    safe = np.maximum(N, 1)
    P = np.where(visited[:, :, None], model.transition_counts / safe[:, :, None], 0.0)
    r = np.where(visited, model.reward_sum / safe, 0.0)
    return P, r, visited


def sample_reward_variance(model):
    """Unbiased per-pair reward variance, floored; pairs with < 2 visits take the floor."""
    N = model.pair_counts.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = model.reward_sum / N
        var = (model.reward_sq_sum - N * mean**2) / (N - 1.0)
    var = np.where(N >= 2, var, VAR_FLOOR)
    return np.maximum(var, VAR_FLOOR)


def regularized_mdp(model, gamma, admissible=None):
    P, r, visited = empirical_mdp(model, gamma)
    S, A = model.shape
    P = np.where(visited[:, :, None], P, 1.0 / S)
    r = np.where(visited, r, UNVISITED_REWARD)
    return TabularMdp(P, r, sample_reward_variance(model), False, gamma, admissible=admissible)


def solver_mdp(model, gamma, admissible=None):
    """Regularised plug-in model plus its gap statistics.

    Unvisited pairs fall back to a uniform row and reward 0.5, reward
    variances are floored at 1e-6, and a tied optimum is broken toward the
    lowest action index (``stats.tied`` is set, tied gaps floored at 1e-6).
    """
    mdp = regularized_mdp(model, gamma, admissible)
    return mdp, gap_stats(mdp, allow_ties=True, gap_floor=GAP_FLOOR)
