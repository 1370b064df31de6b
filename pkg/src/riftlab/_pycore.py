"""Pure-numpy implementations of the hot kernels.

Signatures and random-number consumption match the compiled ``_core`` module
exactly, so both backends produce identical integer outputs for identical
uniform draws.  Floating accumulations agree to rounding.
"""

from __future__ import annotations

import numpy as np

CAUSE_ESTOP = 0
CAUSE_TERMINAL = 1
CAUSE_HORIZON = 2


def _logsumexp_rows(x):
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def soft_bellman(P, r, offset, gamma, alpha, q0, tol, max_iters):
    """Iterate ``q <- r + gamma * P @ V(q)`` with ``V = alpha * lse((q + offset) / alpha)``.

    Returns ``(q, iterations, residual)`` where ``residual`` is the sup-norm of the
    last update.  ``P`` may be sub-stochastic.
    """
    S, A = r.shape
    Pm = P.reshape(S * A, S)
    q = np.array(q0, dtype=np.float64, copy=True)
    residual = np.inf
    it = 0
    while it < max_iters:
        it += 1
        v = alpha * _logsumexp_rows((q + offset) / alpha)
        q_new = r + gamma * (Pm @ v).reshape(S, A)
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        if residual <= tol:
            break
    return q, it, residual


def _sample(cum, u):
    # first index with u < cum[idx], capped at the last index
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def rollout_batch(cum_pi, cum_T, R, phi, terminal, cum_d, uniforms):
    """Simulate e-stop rollouts in lock step.

    ``uniforms`` has shape ``(E, 1 + 3 * H)``: column 0 picks the initial state,
    step ``t`` uses columns ``1 + 3t`` (action), ``2 + 3t`` (next state) and
    ``3 + 3t`` (e-stop).
    """
    E = uniforms.shape[0]
    H = (uniforms.shape[1] - 1) // 3
    S, A = cum_pi.shape
    term = terminal.astype(bool)

    s = _sample(np.broadcast_to(cum_d, (E, S)), uniforms[:, 0])
    active = ~term[s]
    cause = np.where(active, CAUSE_HORIZON, CAUSE_TERMINAL).astype(np.int64)
    lengths = np.zeros(E, dtype=np.int64)
    returns = np.zeros(E)

    st = np.zeros((E, H), dtype=np.int64)
    ac = np.zeros((E, H), dtype=np.int64)
    nx = np.zeros((E, H), dtype=np.int64)
    es = np.zeros((E, H), dtype=np.int64)
    rw = np.zeros((E, H))

    for t in range(H):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s_i = s[idx]
        a_i = _sample(cum_pi[s_i], uniforms[idx, 1 + 3 * t])
        sp_i = _sample(cum_T[s_i, a_i], uniforms[idx, 2 + 3 * t])
        e_i = (uniforms[idx, 3 + 3 * t] < phi[s_i, a_i]).astype(np.int64)
        r_i = R[s_i, a_i, sp_i]
        st[idx, t] = s_i
        ac[idx, t] = a_i
        nx[idx, t] = sp_i
        es[idx, t] = e_i
        rw[idx, t] = r_i
        returns[idx] += r_i
        lengths[idx] += 1
        s[idx] = sp_i
        stopped = e_i == 1
        ended = ~stopped & term[sp_i]
        cause[idx[stopped]] = CAUSE_ESTOP
        cause[idx[ended]] = CAUSE_TERMINAL
        active[idx[stopped | ended]] = False

    mask = np.arange(H)[None, :] < lengths[:, None]
    return (st[mask], ac[mask], nx[mask], es[mask], rw[mask], lengths, cause, returns)


def mc_occupancy(cum_pi, cum_T, cum_d, gamma, uniforms):
    """Accumulate per-episode discounted occupancy sums and sums of squares.

    ``uniforms`` has shape ``(E, 1 + 2 * H)``; step ``t`` uses columns ``1 + 2t``
    (action) and ``2 + 2t`` (next state).  Each episode contributes
    ``x[s, a] = (1 - gamma) * sum_t gamma**t [s_t = s, a_t = a]``.
    """
    E = uniforms.shape[0]
    H = (uniforms.shape[1] - 1) // 2
    S, A = cum_pi.shape
    x = np.zeros((E, S * A))
    rows = np.arange(E)
    s = _sample(np.broadcast_to(cum_d, (E, S)), uniforms[:, 0])
    w = 1.0 - gamma
    for t in range(H):
        a = _sample(cum_pi[s], uniforms[:, 1 + 2 * t])
        x[rows, s * A + a] += w
        s = _sample(cum_T[s, a], uniforms[:, 2 + 2 * t])
        w *= gamma
    return x.sum(axis=0), (x * x).sum(axis=0)
