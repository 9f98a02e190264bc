# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Every kernel writes each output element from exactly one thread with a
fixed inner summation order, so results do not depend on the thread count.
The pure-numpy twins live in :mod:`parspeech._fallback`.
"""

from cython.parallel cimport prange
from libc.math cimport exp, log, INFINITY
from libc.stdint cimport int64_t

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    """
    #include <string.h>
    #include <stdint.h>

    static inline void ps_atomic_min_f64(double *addr, double val) {
        int64_t *p = (int64_t *)addr;
        int64_t old_bits = __atomic_load_n(p, __ATOMIC_RELAXED);
        double old;
        memcpy(&old, &old_bits, sizeof(double));
        while (val < old) {
            int64_t new_bits;
            memcpy(&new_bits, &val, sizeof(double));
            if (__atomic_compare_exchange_n(p, &old_bits, new_bits, 0,
                                            __ATOMIC_RELAXED, __ATOMIC_RELAXED))
                break;
            memcpy(&old, &old_bits, sizeof(double));
        }
    }

    static inline void ps_atomic_min_i64(int64_t *p, int64_t val) {
        int64_t old = __atomic_load_n(p, __ATOMIC_RELAXED);
        while (val < old) {
            if (__atomic_compare_exchange_n(p, &old, val, 0,
                                            __ATOMIC_RELAXED, __ATOMIC_RELAXED))
                break;
        }
    }

    static inline int ps_atomic_claim(signed char *p) {
        return __atomic_exchange_n(p, (signed char)1, __ATOMIC_RELAXED) == 0;
    }

    static inline int64_t ps_atomic_fetch_add(int64_t *p, int64_t v) {
        return __atomic_fetch_add(p, v, __ATOMIC_RELAXED);
    }
    """
    void ps_atomic_min_f64(double *addr, double val) nogil
    void ps_atomic_min_i64(int64_t *p, int64_t val) nogil
    int ps_atomic_claim(signed char *p) nogil
    int64_t ps_atomic_fetch_add(int64_t *p, int64_t v) nogil


BACKEND = "compiled"


cdef inline double _mixture_loglik(const double[:, ::1] means,
                                   const double[:, ::1] ivars,
                                   const double[::1] logconst,
                                   const double[::1] x,
                                   double *scratch) noexcept nogil:
    cdef Py_ssize_t g, d
    cdef Py_ssize_t n_comp = means.shape[0]
    cdef Py_ssize_t dim = means.shape[1]
    cdef double acc, diff, best = -INFINITY, total = 0.0
    for g in range(n_comp):
        acc = 0.0
        for d in range(dim):
            diff = x[d] - means[g, d]
            acc = acc + diff * diff * ivars[g, d]
        scratch[g] = logconst[g] - 0.5 * acc
        if scratch[g] > best:
            best = scratch[g]
    if best == -INFINITY:
        return -INFINITY
    for g in range(n_comp):
        total = total + exp(scratch[g] - best)
    return best + log(total)


def gmm_batch_loglik(const double[:, :, ::1] means,
                     const double[:, :, ::1] ivars,
                     const double[:, ::1] logconst,
                     const int64_t[::1] ids,
                     const double[::1] x,
                     double[::1] out,
                     int n_threads=1):
    """Mixture log-likelihood of ``x`` under each model listed in ``ids``."""
    cdef Py_ssize_t n = ids.shape[0]
    cdef Py_ssize_t n_comp = means.shape[1]
    cdef Py_ssize_t i
    if n == 0:
        return
    cdef double[:, ::1] scratch = np.empty((n, max(n_comp, 1)))
    for i in prange(n, nogil=True, num_threads=max(n_threads, 1), schedule="static"):
        out[i] = _mixture_loglik(means[ids[i]], ivars[ids[i]], logconst[ids[i]],
                                 x, &scratch[i, 0])


def component_logpdf(const double[:, ::1] X,
                     const double[:, ::1] means,
                     const double[:, ::1] ivars,
                     const double[::1] logconst,
                     double[:, ::1] out,
                     int n_threads=1):
    """Weighted per-component log densities, ``out[t, g]``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_comp = means.shape[0]
    cdef Py_ssize_t dim = means.shape[1]
    cdef Py_ssize_t t, g, d
    cdef double acc, diff
    for t in prange(n, nogil=True, num_threads=max(n_threads, 1), schedule="static"):
        for g in range(n_comp):
            acc = 0.0
            for d in range(dim):
                diff = X[t, d] - means[g, d]
                acc = acc + diff * diff * ivars[g, d]
            out[t, g] = logconst[g] - 0.5 * acc


def traverse_emitting(const int64_t[::1] active_states,
                      const double[::1] active_costs,
                      const int64_t[::1] offsets,
                      const int64_t[::1] dst,
                      const int64_t[::1] ilabel,
                      const double[::1] weight,
                      const int64_t[::1] arc_id,
                      const double[::1] obs_cost,
                      double[::1] best_cost,
                      int64_t[::1] best_arc,
                      signed char[::1] touched_flag,
                      int64_t[::1] touched,
                      int n_threads=1):
    """Expand emitting arcs of the active tokens into ``best_cost``.

    First pass: atomic minimum on destination cost. Second pass: among arcs
    whose candidate equals the settled minimum, atomic minimum on arc id.
    Returns the number of newly touched states appended to ``touched``.
    """
    cdef Py_ssize_t n_active = active_states.shape[0]
    cdef Py_ssize_t i
    cdef int64_t a, s, d, slot
    cdef double cand
    cdef int64_t n_touched = 0
    cdef int nt = max(n_threads, 1)

    for i in prange(n_active, nogil=True, num_threads=nt, schedule="static"):
        s = active_states[i]
        for a in range(offsets[s], offsets[s + 1]):
            d = dst[a]
            cand = (active_costs[i] + weight[a]) + obs_cost[ilabel[a]]
            ps_atomic_min_f64(&best_cost[d], cand)
            if ps_atomic_claim(&touched_flag[d]):
                slot = ps_atomic_fetch_add(&n_touched, 1)
                touched[slot] = d

    for i in prange(n_active, nogil=True, num_threads=nt, schedule="static"):
        s = active_states[i]
        for a in range(offsets[s], offsets[s + 1]):
            d = dst[a]
            cand = (active_costs[i] + weight[a]) + obs_cost[ilabel[a]]
            if cand == best_cost[d]:
                ps_atomic_min_i64(&best_arc[d], arc_id[a])

    return n_touched


def epsilon_closure(const int64_t[::1] topo_states,
                    const int64_t[::1] offsets,
                    const int64_t[::1] dst,
                    const double[::1] weight,
                    const int64_t[::1] arc_id,
                    double[::1] best_cost,
                    int64_t[::1] best_arc,
                    signed char[::1] touched_flag,
                    int64_t[::1] touched,
                    int64_t n_touched):
    """Relax epsilon arcs once, sources visited in topological order."""
    cdef Py_ssize_t i
    cdef int64_t a, s, d
    cdef double cand
    with nogil:
        for i in range(topo_states.shape[0]):
            s = topo_states[i]
            if best_cost[s] == INFINITY:
                continue
            for a in range(offsets[s], offsets[s + 1]):
                d = dst[a]
                cand = best_cost[s] + weight[a]
                if cand < best_cost[d] or (cand == best_cost[d] and arc_id[a] < best_arc[d]):
                    best_cost[d] = cand
                    best_arc[d] = arc_id[a]
                if touched_flag[d] == 0:
                    touched_flag[d] = 1
                    touched[n_touched] = d
                    n_touched = n_touched + 1
    return n_touched


def min_duration_viterbi(const double[:, ::1] cost, int64_t min_len):
    """Best labelling of ``cost`` (frames x clusters, negative log) where
    every run of one label lasts at least ``min_len`` frames.

    Returns ``(labels, total_cost)``.
    """
    cdef Py_ssize_t T = cost.shape[0]
    cdef Py_ssize_t C = cost.shape[1]
    cdef Py_ssize_t t, k, j, start
    cdef int64_t L = min_len
    cdef double[:, ::1] prefix = np.zeros((C, T + 1))
    cdef double[:, ::1] entry = np.full((C, T), INFINITY)
    cdef int64_t[:, ::1] entry_from = np.full((C, T), -1, dtype=np.int64)
    cdef signed char[:, ::1] from_chain = np.zeros((C, T), dtype=np.int8)
    cdef double[::1] last = np.full(C, INFINITY)
    cdef double[::1] prev_last = np.full(C, INFINITY)
    cdef int64_t[::1] labels = np.full(T, -1, dtype=np.int64)
    cdef double best, chain, stay, b1, b2
    cdef int64_t i1, i2

    if T == 0 or C == 0:
        return np.asarray(labels), 0.0
    if L < 1:
        L = 1
    with nogil:
        for k in range(C):
            for t in range(T):
                prefix[k, t + 1] = prefix[k, t] + cost[t, k]
        for t in range(T):
            if t == 0:
                for k in range(C):
                    entry[k, 0] = 0.0
            else:
                # best and second-best previous last states give min over j != k
                b1 = INFINITY
                b2 = INFINITY
                i1 = -1
                i2 = -1
                for j in range(C):
                    if prev_last[j] < b1:
                        b2 = b1
                        i2 = i1
                        b1 = prev_last[j]
                        i1 = j
                    elif prev_last[j] < b2:
                        b2 = prev_last[j]
                        i2 = j
                for k in range(C):
                    if k != i1:
                        entry[k, t] = b1
                        entry_from[k, t] = i1
                    else:
                        entry[k, t] = b2
                        entry_from[k, t] = i2
            for k in range(C):
                stay = prev_last[k] + cost[t, k]
                chain = INFINITY
                if t >= L - 1:
                    start = t - L + 1
                    chain = entry[k, start] + (prefix[k, t + 1] - prefix[k, start])
                if chain < stay:
                    last[k] = chain
                    from_chain[k, t] = 1
                else:
                    last[k] = stay
                    from_chain[k, t] = 0
            for k in range(C):
                prev_last[k] = last[k]

        best = INFINITY
        k = -1
        for j in range(C):
            if last[j] < best:
                best = last[j]
                k = j
        t = T - 1
        while k >= 0 and t >= 0:
            if from_chain[k, t]:
                start = t - L + 1
                for j in range(start, t + 1):
                    labels[j] = k
                if start == 0:
                    break
                k = entry_from[k, start]
                t = start - 1
            else:
                labels[t] = k
                t = t - 1
    return np.asarray(labels), best
