"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Signatures and tie rules match the compiled versions. The observation
kernels split their work across a thread pool because numpy drops the GIL
inside elementwise loops; traversal runs on one thread because numpy
scatter-min is not safe to share.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BACKEND = "python"

_BLOCK = 2048


def _chunks(n, n_threads):
    n_threads = max(1, min(int(n_threads), n))
    edges = np.linspace(0, n, n_threads + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_chunks(fn, n, n_threads):
    parts = _chunks(n, n_threads)
    if len(parts) <= 1:
        for a, b in parts:
            fn(a, b)
        return
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        list(pool.map(lambda ab: fn(*ab), parts))


def _logsumexp_rows(a):
    # components summed left to right, as in the compiled kernel
    best = a.max(axis=-1)
    safe = np.where(np.isfinite(best), best, 0.0)
    total = np.zeros(a.shape[:-1])
    for g in range(a.shape[-1]):
        total += np.exp(a[..., g] - safe)
    with np.errstate(divide="ignore"):
        out = safe + np.log(total)
    return np.where(np.isneginf(best), -np.inf, out)


def gmm_batch_loglik(means, ivars, logconst, ids, x, out, n_threads=1):
    ids = np.asarray(ids)
    if ids.size == 0:
        return

    def work(a, b):
        for lo in range(a, b, _BLOCK):
            hi = min(lo + _BLOCK, b)
            sel = ids[lo:hi]
            diff = x - means[sel]
            acc = (diff * diff * ivars[sel]).sum(axis=-1)
            out[lo:hi] = _logsumexp_rows(logconst[sel] - 0.5 * acc)

    _run_chunks(work, ids.size, n_threads)


def component_logpdf(X, means, ivars, logconst, out, n_threads=1):
    def work(a, b):
        for lo in range(a, b, _BLOCK):
            hi = min(lo + _BLOCK, b)
            diff = X[lo:hi, None, :] - means[None, :, :]
            out[lo:hi] = logconst - 0.5 * (diff * diff * ivars).sum(axis=-1)

    _run_chunks(work, X.shape[0], n_threads)


def _expand_arcs(states, offsets):
    starts = offsets[states]
    counts = offsets[states + 1] - starts
    owner = np.repeat(np.arange(states.size), counts)
    total = int(counts.sum())
    first = np.repeat(np.cumsum(counts) - counts, counts)
    arcs = np.repeat(starts, counts) + (np.arange(total) - first)
    return owner, arcs


def traverse_emitting(active_states, active_costs, offsets, dst, ilabel, weight, arc_id,
                      obs_cost, best_cost, best_arc, touched_flag, touched, n_threads=1):
    owner, arcs = _expand_arcs(np.asarray(active_states), offsets)
    if arcs.size == 0:
        return 0
    d = dst[arcs]
    cand = (active_costs[owner] + weight[arcs]) + obs_cost[ilabel[arcs]]
    np.minimum.at(best_cost, d, cand)
    win = cand == best_cost[d]
    np.minimum.at(best_arc, d[win], arc_id[arcs][win])
    fresh = np.unique(d[touched_flag[d] == 0])
    touched_flag[fresh] = 1
    touched[: fresh.size] = fresh
    return int(fresh.size)


def epsilon_closure(topo_states, offsets, dst, weight, arc_id, best_cost, best_arc,
                    touched_flag, touched, n_touched):
    for s in topo_states:
        c = best_cost[s]
        if c == np.inf:
            continue
        for a in range(offsets[s], offsets[s + 1]):
            t = dst[a]
            cand = c + weight[a]
            if cand < best_cost[t] or (cand == best_cost[t] and arc_id[a] < best_arc[t]):
                best_cost[t] = cand
                best_arc[t] = arc_id[a]
            if touched_flag[t] == 0:
                touched_flag[t] = 1
                touched[n_touched] = t
                n_touched += 1
    return n_touched


def min_duration_viterbi(cost, min_len):
    T, C = cost.shape
    labels = np.full(T, -1, dtype=np.int64)
    if T == 0 or C == 0:
        return labels, 0.0
    L = max(int(min_len), 1)
    prefix = np.zeros((C, T + 1))
    np.cumsum(cost.T, axis=1, out=prefix[:, 1:])
    entry = np.full((C, T), np.inf)
    entry_from = np.full((C, T), -1, dtype=np.int64)
    from_chain = np.zeros((C, T), dtype=bool)
    prev_last = np.full(C, np.inf)
    entry[:, 0] = 0.0
    for t in range(T):
        if t > 0:
            i1 = int(np.argmin(prev_last))
            b1 = prev_last[i1]
            if b1 == np.inf:
                i1 = -1
            rest = prev_last.copy()
            if i1 >= 0:
                rest[i1] = np.inf
            i2 = int(np.argmin(rest))
            b2 = rest[i2]
            if b2 == np.inf:
                i2 = -1
            entry[:, t] = b1
            entry_from[:, t] = i1
            if i1 >= 0:
                entry[i1, t] = b2
                entry_from[i1, t] = i2
        stay = prev_last + cost[t]
        if t >= L - 1:
            start = t - L + 1
            chain = entry[:, start] + (prefix[:, t + 1] - prefix[:, start])
        else:
            chain = np.full(C, np.inf)
        take = chain < stay
        from_chain[:, t] = take
        prev_last = np.where(take, chain, stay)
    best = float(prev_last.min())
    k = int(np.argmin(prev_last)) if best < np.inf else -1
    t = T - 1
    while k >= 0 and t >= 0:
        if from_chain[k, t]:
            start = t - L + 1
            labels[start : t + 1] = k
            if start == 0:
                break
            k = int(entry_from[k, start])
            t = start - 1
        else:
            labels[t] = k
            t -= 1
    return labels, best
