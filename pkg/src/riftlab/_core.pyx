# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_pycore`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()

DEF CAUSE_ESTOP = 0
DEF CAUSE_TERMINAL = 1
DEF CAUSE_HORIZON = 2


cdef inline Py_ssize_t _pick(const double[:] cum, double u) noexcept nogil:
    cdef Py_ssize_t n = cum.shape[0]
    cdef Py_ssize_t k = 0
    while k < n - 1 and u >= cum[k]:
        k += 1
    return k


def soft_bellman(const double[:, :, :] P, const double[:, :] r, const double[:, :] offset,
                 double gamma, double alpha, q0, double tol, long max_iters):
    cdef Py_ssize_t S = r.shape[0], A = r.shape[1]
    cdef Py_ssize_t s, a, sp, k, row
    cdef double m, acc, diff, residual = np.inf
    cdef long it = 0
    # Gridworld dynamics have a handful of successors per row, so iterate over
    # the non-zeros only (compressed rows, built once).
    Pm = np.asarray(P).reshape(S * A, S)
    nz_rows, nz_cols = np.nonzero(Pm)
    ptr_arr = np.zeros(S * A + 1, dtype=np.int64)
    np.cumsum(np.bincount(nz_rows, minlength=S * A), out=ptr_arr[1:])
    cdef long long[:] ptr = ptr_arr
    cdef long long[:] col = nz_cols.astype(np.int64)
    cdef double[:] val = np.ascontiguousarray(Pm[nz_rows, nz_cols], dtype=np.float64)
    q_arr = np.array(q0, dtype=np.float64, copy=True)
    qn_arr = np.empty((S, A), dtype=np.float64)
    v_arr = np.empty(S, dtype=np.float64)
    cdef double[:, :] q = q_arr
    cdef double[:, :] qn = qn_arr
    cdef double[:] v = v_arr
    with nogil:
        while it < max_iters:
            it += 1
            for s in range(S):
                m = (q[s, 0] + offset[s, 0]) / alpha
                for a in range(1, A):
                    if (q[s, a] + offset[s, a]) / alpha > m:
                        m = (q[s, a] + offset[s, a]) / alpha
                acc = 0.0
                for a in range(A):
                    acc += exp((q[s, a] + offset[s, a]) / alpha - m)
                v[s] = alpha * (m + log(acc))
            residual = 0.0
            for s in range(S):
                for a in range(A):
                    row = s * A + a
                    acc = 0.0
                    for k in range(ptr[row], ptr[row + 1]):
                        acc += val[k] * v[col[k]]
                    qn[s, a] = r[s, a] + gamma * acc
                    diff = fabs(qn[s, a] - q[s, a])
                    if diff > residual:
                        residual = diff
            for s in range(S):
                for a in range(A):
                    q[s, a] = qn[s, a]
            if residual <= tol:
                break
    return q_arr, it, residual


def rollout_batch(const double[:, :] cum_pi, const double[:, :, :] cum_T, const double[:, :, :] R,
                  const double[:, :] phi, const unsigned char[:] terminal, const double[:] cum_d,
                  const double[:, :] uniforms):
    cdef Py_ssize_t E = uniforms.shape[0]
    cdef Py_ssize_t H = (uniforms.shape[1] - 1) // 3
    cdef Py_ssize_t i, t, n = 0, s, a, sp
    cdef long e
    st_arr = np.empty(E * H, dtype=np.int64)
    ac_arr = np.empty(E * H, dtype=np.int64)
    nx_arr = np.empty(E * H, dtype=np.int64)
    es_arr = np.empty(E * H, dtype=np.int64)
    rw_arr = np.empty(E * H, dtype=np.float64)
    len_arr = np.zeros(E, dtype=np.int64)
    cause_arr = np.empty(E, dtype=np.int64)
    ret_arr = np.zeros(E, dtype=np.float64)
    cdef long long[:] st = st_arr
    cdef long long[:] ac = ac_arr
    cdef long long[:] nx = nx_arr
    cdef long long[:] es = es_arr
    cdef double[:] rw = rw_arr
    cdef long long[:] lengths = len_arr
    cdef long long[:] cause = cause_arr
    cdef double[:] returns = ret_arr
    with nogil:
        for i in range(E):
            s = _pick(cum_d, uniforms[i, 0])
            if terminal[s]:
                cause[i] = CAUSE_TERMINAL
                continue
            cause[i] = CAUSE_HORIZON
            for t in range(H):
                a = _pick(cum_pi[s], uniforms[i, 1 + 3 * t])
                sp = _pick(cum_T[s, a], uniforms[i, 2 + 3 * t])
                e = 1 if uniforms[i, 3 + 3 * t] < phi[s, a] else 0
                st[n] = s
                ac[n] = a
                nx[n] = sp
                es[n] = e
                rw[n] = R[s, a, sp]
                returns[i] += R[s, a, sp]
                lengths[i] += 1
                n += 1
                s = sp
                if e == 1:
                    cause[i] = CAUSE_ESTOP
                    break
                if terminal[sp]:
                    cause[i] = CAUSE_TERMINAL
                    break
    return (st_arr[:n], ac_arr[:n], nx_arr[:n], es_arr[:n], rw_arr[:n], len_arr, cause_arr, ret_arr)


def mc_occupancy(const double[:, :] cum_pi, const double[:, :, :] cum_T, const double[:] cum_d,
                 double gamma, const double[:, :] uniforms):
    cdef Py_ssize_t E = uniforms.shape[0]
    cdef Py_ssize_t H = (uniforms.shape[1] - 1) // 2
    cdef Py_ssize_t A = cum_pi.shape[1]
    cdef Py_ssize_t SA = cum_pi.shape[0] * A
    cdef Py_ssize_t i, t, k, s, a, j
    cdef double w
    tot_arr = np.zeros(SA, dtype=np.float64)
    sq_arr = np.zeros(SA, dtype=np.float64)
    x_arr = np.zeros(SA, dtype=np.float64)
    touched_arr = np.empty(H, dtype=np.int64)
    cdef double[:] tot = tot_arr
    cdef double[:] sq = sq_arr
    cdef double[:] x = x_arr
    cdef long long[:] touched = touched_arr
    with nogil:
        for i in range(E):
            s = _pick(cum_d, uniforms[i, 0])
            w = 1.0 - gamma
            k = 0
            for t in range(H):
                a = _pick(cum_pi[s], uniforms[i, 1 + 2 * t])
                j = s * A + a
                if x[j] == 0.0:
                    touched[k] = j
                    k += 1
                x[j] += w
                s = _pick(cum_T[s, a], uniforms[i, 2 + 2 * t])
                w *= gamma
            for t in range(k):
                j = touched[t]
                tot[j] += x[j]
                sq[j] += x[j] * x[j]
                x[j] = 0.0
    return tot_arr, sq_arr
