"""Hot inner loops, each in a compiled-loop form and a vectorised numpy form.

The loop forms are compiled by numba when available; the public dispatchers
at the bottom pick one according to :mod:`ldx._accel`. Both forms consume the
same pre-drawn random numbers, so a run is bit-identical under either backend.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit

# --------------------------------------------------------------------------
# value iteration


@njit
def _vi_loops(P, r, adm, gamma, tol, max_iter, V0):
    S, A = r.shape
    V = V0.copy()
    Vn = np.empty(S)
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        residual = 0.0
        for s in range(S):
            best = -np.inf
            for a in range(A):
                if not adm[s, a]:
                    continue
                q = 0.0
                for sp in range(S):
                    q += P[s, a, sp] * V[sp]
                q = r[s, a] + gamma * q
                if q > best:
                    best = q
            Vn[s] = best
            d = abs(best - V[s])
            if d > residual:
                residual = d
        for s in range(S):
            V[s] = Vn[s]
        if residual <= tol:
            break
    return V, it, residual


def _vi_numpy(P, r, adm, gamma, tol, max_iter, V0):
    V = V0.copy()
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        Q = r + gamma * (P @ V)
        Q[~adm] = -np.inf
        Vn = Q.max(axis=1)
        residual = float(np.max(np.abs(Vn - V)))
        V = Vn
        if residual <= tol:
            break
    return V, it, residual


@njit
def _batch_greedy_loops(P, r, adm, gamma, tol, max_iter):
    n, S, A = r.shape
    out = np.empty((n, S), dtype=np.int64)
    Q = np.empty(A)
    for b in range(n):
        V, _, _ = _vi_loops(P[b], r[b], adm, gamma, tol, max_iter, np.zeros(S))
        for s in range(S):
            best = -np.inf
            arg = 0
            for a in range(A):
                if not adm[s, a]:
                    Q[a] = -np.inf
                    continue
                q = 0.0
                for sp in range(S):
                    q += P[b, s, a, sp] * V[sp]
                Q[a] = r[b, s, a] + gamma * q
                if Q[a] > best:
                    best = Q[a]
                    arg = a
            out[b, s] = arg
    return out


def _batch_greedy_numpy(P, r, adm, gamma, tol, max_iter):
    n, S, A = r.shape
    V = np.zeros((n, S))
    active = np.ones(n, dtype=bool)
    it = 0
    while active.any() and it < max_iter:
        it += 1
        idx = np.flatnonzero(active)
        Q = r[idx] + gamma * np.einsum("bsap,bp->bsa", P[idx], V[idx])
        Q[:, ~adm] = -np.inf
        Vn = Q.max(axis=2)
        res = np.max(np.abs(Vn - V[idx]), axis=1)
        V[idx] = Vn
        active[idx[res <= tol]] = False
    Q = r + gamma * np.einsum("bsap,bp->bsa", P, V)
    Q[:, ~adm] = -np.inf
    return np.argmax(Q, axis=2)


# --------------------------------------------------------------------------
# trajectory segment under a fixed stochastic policy


@njit
def _segment_loops(P_cdf, pi_cdf, r_mean, r_std, bern, s0, u_act, u_next, u_rew, z_rew,
                   pair_counts, trans_counts, reward_sum, reward_sq):
    S, A = r_mean.shape
    s = s0
    for t in range(u_act.shape[0]):
        a = 0
        while a < A - 1 and pi_cdf[s, a] <= u_act[t]:
            a += 1
        sp = 0
        while sp < S - 1 and P_cdf[s, a, sp] <= u_next[t]:
            sp += 1
        if bern[s, a]:
            rew = 1.0 if u_rew[t] < r_mean[s, a] else 0.0
        else:
            rew = r_mean[s, a] + r_std[s, a] * z_rew[t]
        pair_counts[s, a] += 1
        trans_counts[s, a, sp] += 1
        reward_sum[s, a] += rew
        reward_sq[s, a] += rew * rew
        s = sp
    return s


def _segment_numpy(P_cdf, pi_cdf, r_mean, r_std, bern, s0, u_act, u_next, u_rew, z_rew,
                   pair_counts, trans_counts, reward_sum, reward_sq):
    S, A = r_mean.shape
    s = int(s0)
    for t in range(u_act.shape[0]):
        a = min(int(np.searchsorted(pi_cdf[s], u_act[t], side="right")), A - 1)
        sp = min(int(np.searchsorted(P_cdf[s, a], u_next[t], side="right")), S - 1)
        if bern[s, a]:
            rew = 1.0 if u_rew[t] < r_mean[s, a] else 0.0
        else:
            rew = r_mean[s, a] + r_std[s, a] * z_rew[t]
        pair_counts[s, a] += 1
        trans_counts[s, a, sp] += 1
        reward_sum[s, a] += rew
        reward_sq[s, a] += rew * rew
        s = sp
    return s


# --------------------------------------------------------------------------
# tabular Q-learning on a trajectory


@njit
def _qlearning_loops(P_cdf, r_mean, r_std, bern, gamma, explore, power, s0,
                     u_greedy, u_act, u_next, u_rew, z_rew,
                     Q, pair_counts, trans_counts, reward_sum, reward_sq):
    S, A = r_mean.shape
    s = s0
    for t in range(u_act.shape[0]):
        if u_greedy[t] < explore:
            a = min(int(u_act[t] * A), A - 1)
        else:
            a = 0
            for b in range(1, A):
                if Q[s, b] > Q[s, a]:
                    a = b
        sp = 0
        while sp < S - 1 and P_cdf[s, a, sp] <= u_next[t]:
            sp += 1
        if bern[s, a]:
            rew = 1.0 if u_rew[t] < r_mean[s, a] else 0.0
        else:
            rew = r_mean[s, a] + r_std[s, a] * z_rew[t]
        lr = 1.0 / (1.0 + pair_counts[s, a]) ** power
        target = rew + gamma * np.max(Q[sp])
        Q[s, a] += lr * (target - Q[s, a])
        pair_counts[s, a] += 1
        trans_counts[s, a, sp] += 1
        reward_sum[s, a] += rew
        reward_sq[s, a] += rew * rew
        s = sp
    return s


def _qlearning_numpy(P_cdf, r_mean, r_std, bern, gamma, explore, power, s0,
                     u_greedy, u_act, u_next, u_rew, z_rew,
                     Q, pair_counts, trans_counts, reward_sum, reward_sq):
    S, A = r_mean.shape
    s = int(s0)
    for t in range(u_act.shape[0]):
        if u_greedy[t] < explore:
            a = min(int(u_act[t] * A), A - 1)
        else:
            a = int(np.argmax(Q[s]))
        sp = min(int(np.searchsorted(P_cdf[s, a], u_next[t], side="right")), S - 1)
        if bern[s, a]:
            rew = 1.0 if u_rew[t] < r_mean[s, a] else 0.0
        else:
            rew = r_mean[s, a] + r_std[s, a] * z_rew[t]
        lr = 1.0 / (1.0 + pair_counts[s, a]) ** power
        target = rew + gamma * np.max(Q[sp])
        Q[s, a] += lr * (target - Q[s, a])
        pair_counts[s, a] += 1
        trans_counts[s, a, sp] += 1
        reward_sum[s, a] += rew
        reward_sq[s, a] += rew * rew
        s = sp
    return s


# --------------------------------------------------------------------------
# dispatch

if HAVE_NUMBA:
    value_iteration_kernel = _vi_loops
    batch_greedy_kernel = _batch_greedy_loops
    segment_kernel = _segment_loops
    qlearning_kernel = _qlearning_loops
else:
    value_iteration_kernel = _vi_numpy
    batch_greedy_kernel = _batch_greedy_numpy
    segment_kernel = _segment_numpy
    qlearning_kernel = _qlearning_numpy
