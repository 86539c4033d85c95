"""Compiled kernels for the triadic process.

State is a bundle of flat arrays (see ``init_arrays``). Kernels that may
grow ``items`` or ``hist`` return the (possibly reallocated) arrays; the
caller must rebind them.

Registry layout: ``items`` is a dense array of packed open triples
``(lo << 42) | (hi << 21) | apex`` with swap-remove. Entries whose missing
edge was added by another triple are left in place and discarded when
drawn; ``xt`` holds the exact per-pair open counts, so ``fcnt`` and the
open total ``meta[M_Q]`` stay exact regardless.

After the first phase-2 round the registry becomes implicit: the open
triples are exactly those spanning two edges, at least one of which is in
``fresh`` (the edges added by the latest round).
"""

import numpy as np
from numba import njit
from numba.cpython.unsafe.numbers import trailing_zeros

from ._hashing import (
    ALL,
    ONE,
    ZERO,
    oracle_key,
    outcome,
    popcount,
    randbelow,
    round_key,
    sort3,
    triple_code,
)

M_NITEMS = 0
M_Q = 1
M_STEP = 2
M_ROUND = 3
M_EDGES = 4
M_MODE = 5
M_SAMPLES = 6
M_HLEN = 7
M_V0 = 8
M_HMODE = 9
M_STALE = 10
META_SIZE = 12

MODE_EXPLICIT = 0
MODE_FRESH = 1

HIST_NONE = 0
HIST_SUCCESS = 1
HIST_ALL = 2

HIST_COLS = 7

_MASK21 = (1 << 21) - 1


@njit(cache=True)
def enc_item(lo, hi, apex):
    return (np.int64(lo) << 42) | (np.int64(hi) << 21) | np.int64(apex)


@njit(cache=True)
def dec_item(it):
    return (it >> 42) & _MASK21, (it >> 21) & _MASK21, it & _MASK21


@njit(cache=True)
def has_edge(adj, u, v):
    return (adj[u, v >> 6] >> np.uint64(v & 63)) & ONE != ZERO


@njit(cache=True)
def set_edge(adj, u, v):
    adj[u, v >> 6] |= ONE << np.uint64(v & 63)
    adj[v, u >> 6] |= ONE << np.uint64(u & 63)


@njit(cache=True)
def _low_mask(bit):
    # bits strictly below ``bit`` within a word
    if bit == 0:
        return ZERO
    return ALL >> np.uint64(64 - bit)


@njit(cache=True)
def _push_item(items, meta, it):
    k = meta[M_NITEMS]
    if k == items.shape[0]:
        grown = np.empty(max(64, 2 * k), np.int64)
        grown[:k] = items[:k]
        items = grown
    items[k] = it
    meta[M_NITEMS] = k + 1
    return items


@njit(cache=True)
def _push_hist(hist, meta, idx, a, b, c, ok, e1, e2):
    k = meta[M_HLEN]
    if k == hist.shape[0]:
        grown = np.empty((max(64, 2 * k), hist.shape[1]), np.int64)
        grown[:k] = hist[:k]
        hist = grown
    hist[k, 0] = idx
    hist[k, 1] = a
    hist[k, 2] = b
    hist[k, 3] = c
    hist[k, 4] = ok
    hist[k, 5] = e1
    hist[k, 6] = e2
    meta[M_HLEN] = k + 1
    return hist


@njit(cache=True)
def init_arrays(n, v0, order_seed, track_sampled, hist_mode):
    W = (n + 63) >> 6
    adj = np.zeros((n, W), np.uint64)
    deg = np.ones(n, np.int64)
    fcnt = np.full(n, n - 2, np.int64)
    xt = np.zeros((n, n), np.int32)
    n_open = (n - 1) * (n - 2) // 2
    items = np.empty(max(64, n_open + n), np.int64)
    meta = np.zeros(META_SIZE, np.int64)
    rng = np.zeros(1, np.uint64)
    rng[0] = np.uint64(order_seed)
    fresh = np.zeros((n, W), np.uint64)
    if track_sampled:
        sampled = np.zeros(n * n * n, np.uint8)
    else:
        sampled = np.zeros(0, np.uint8)
    hist = np.empty((64 if hist_mode != HIST_NONE else 0, HIST_COLS), np.int64)

    for u in range(n):
        if u != v0:
            set_edge(adj, u, v0)
    deg[v0] = n - 1
    fcnt[v0] = 0
    k = 0
    for a in range(n):
        if a == v0:
            continue
        for b in range(a + 1, n):
            if b == v0:
                continue
            items[k] = enc_item(a, b, v0)
            xt[a, b] = 1
            xt[b, a] = 1
            k += 1
    meta[M_NITEMS] = k
    meta[M_Q] = k
    meta[M_EDGES] = n - 1
    meta[M_V0] = v0
    meta[M_HMODE] = hist_mode
    meta[M_MODE] = MODE_EXPLICIT
    return adj, deg, fcnt, xt, items, meta, rng, fresh, sampled, hist


@njit(cache=True)
def apply_edge(adj, deg, fcnt, xt, items, meta, u, v):
    """Add edge ``uv`` in explicit-registry mode; return (closed, opened, items)."""
    closed = np.int64(xt[u, v])
    if closed:
        fcnt[u] -= closed
        fcnt[v] -= closed
        meta[M_Q] -= closed
        xt[u, v] = 0
        xt[v, u] = 0
    W = adj.shape[1]
    need = 0
    for k in range(W):
        need += popcount(adj[u, k] ^ adj[v, k])
    k0 = meta[M_NITEMS]
    if k0 + need > items.shape[0]:
        grown = np.empty(max(64, 2 * (k0 + need)), np.int64)
        grown[:k0] = items[:k0]
        items = grown
    opened = 0
    for side in range(2):
        if side == 0:
            a, b = u, v
        else:
            a, b = v, u
        # x in N(a) \ N(b): triple {x, a, b} gains its second edge
        for k in range(W):
            word = adj[a, k] & ~adj[b, k]
            while word:
                x = (k << 6) + trailing_zeros(word)
                word &= word - ONE
                if x == b:
                    continue
                if x < b:
                    items[k0 + opened] = enc_item(x, b, a)
                else:
                    items[k0 + opened] = enc_item(b, x, a)
                xt[x, b] += 1
                xt[b, x] += 1
                fcnt[x] += 1
                fcnt[b] += 1
                opened += 1
    meta[M_NITEMS] = k0 + opened
    meta[M_Q] += opened
    set_edge(adj, u, v)
    deg[u] += 1
    deg[v] += 1
    meta[M_EDGES] += 1
    return closed, opened, items


@njit(cache=True)
def step(adj, deg, fcnt, xt, items, meta, rng, key, p, sampled, hist):
    """One phase-1 sample.

    Returns ``(status, ok, lo, hi, apex, closed, opened, items, hist)`` with
    status 0 on a sample and 1 when no open triple is left.
    """
    n = adj.shape[0]
    if meta[M_Q] == 0:
        meta[M_NITEMS] = 0
        return 1, False, -1, -1, -1, 0, 0, items, hist
    while True:
        m = meta[M_NITEMS]
        idx = randbelow(rng, m)
        it = items[idx]
        items[idx] = items[m - 1]
        meta[M_NITEMS] = m - 1
        lo, hi, apex = dec_item(it)
        if not has_edge(adj, lo, hi):
            break
        meta[M_STALE] += 1
    xt[lo, hi] -= 1
    xt[hi, lo] -= 1
    fcnt[lo] -= 1
    fcnt[hi] -= 1
    meta[M_Q] -= 1
    meta[M_STEP] += 1
    meta[M_SAMPLES] += 1
    a, b, c = sort3(lo, hi, apex)
    if sampled.shape[0]:
        sampled[(a * n + b) * n + c] = 1
    ok = outcome(key, triple_code(a, b, c), p)
    closed = 1
    opened = 0
    if ok:
        cl, opened, items = apply_edge(adj, deg, fcnt, xt, items, meta, lo, hi)
        closed += cl
    hmode = meta[M_HMODE]
    if hmode == HIST_ALL or (hmode == HIST_SUCCESS and ok):
        e1 = lo if ok else -1
        e2 = hi if ok else -1
        hist = _push_hist(hist, meta, meta[M_STEP], a, b, c, np.int64(ok), e1, e2)
    return 0, ok, lo, hi, apex, closed, opened, items, hist


@njit(cache=True)
def run_steps(adj, deg, fcnt, xt, items, meta, rng, key, p, sampled, hist, max_steps):
    """Iterate ``step``; return (steps, stalled, items, hist)."""
    n = adj.shape[0]
    full = n * (n - 1) // 2
    taken = 0
    stalled = False
    while taken < max_steps:
        if meta[M_EDGES] == full:
            break
        status, ok, lo, hi, apex, cl, op, items, hist = step(
            adj, deg, fcnt, xt, items, meta, rng, key, p, sampled, hist
        )
        if status == 1:
            stalled = True
            break
        taken += 1
    if meta[M_Q] == 0 and meta[M_EDGES] != full:
        meta[M_NITEMS] = 0
        stalled = True
    return taken, stalled, items, hist


@njit(cache=True)
def _fresh_mask(adj, fresh, w, a, k):
    # candidates v for the open triple (apex w, missing av) counted from fresh edge wa
    m = adj[w, k] & ~adj[a, k]
    ka = a >> 6
    if k < ka:
        m &= ~fresh[w, k]
    elif k == ka:
        bit = a & 63
        m &= ~(fresh[w, k] & _low_mask(bit))
        m &= ~(ONE << np.uint64(bit))
    return m


@njit(cache=True)
def count_open_fresh(adj, fresh):
    n, W = adj.shape
    total = 0
    for w in range(n):
        for kf in range(W):
            fw = fresh[w, kf]
            while fw:
                a = (kf << 6) + trailing_zeros(fw)
                fw &= fw - ONE
                for k in range(W):
                    total += popcount(_fresh_mask(adj, fresh, w, a, k))
    return total


@njit(cache=True)
def open_items_fresh(adj, fresh):
    """Materialise the implicit open set as packed items (small instances)."""
    n, W = adj.shape
    out = np.empty(count_open_fresh(adj, fresh), np.int64)
    j = 0
    for w in range(n):
        for kf in range(W):
            fw = fresh[w, kf]
            while fw:
                a = (kf << 6) + trailing_zeros(fw)
                fw &= fw - ONE
                for k in range(W):
                    m = _fresh_mask(adj, fresh, w, a, k)
                    while m:
                        v = (k << 6) + trailing_zeros(m)
                        m &= m - ONE
                        if a < v:
                            out[j] = enc_item(a, v, w)
                        else:
                            out[j] = enc_item(v, a, w)
                        j += 1
    return out


@njit(cache=True)
def _tilde_row_fresh(adj, fresh, u):
    n, W = adj.shape
    row = np.zeros(n, np.int64)
    for x in range(n):
        if x == u or has_edge(adj, u, x):
            continue
        s = 0
        for k in range(W):
            s += popcount((fresh[u, k] & adj[x, k]) | (adj[u, k] & fresh[x, k]))
        row[x] = s
    return row


@njit(cache=True)
def tilde_row(adj, fresh, xt, meta, u):
    """Open-triple counts X~(u, x) for every x."""
    if meta[M_MODE] == MODE_EXPLICIT:
        return xt[u].astype(np.int64)
    return _tilde_row_fresh(adj, fresh, u)


@njit(cache=True)
def f_counts_fresh(adj, fresh):
    n = adj.shape[0]
    out = np.zeros(n, np.int64)
    for u in range(n):
        out[u] = _tilde_row_fresh(adj, fresh, u).sum()
    return out


@njit(cache=True)
def max_codegree(adj, v0):
    n, W = adj.shape
    best = 0
    for u in range(n):
        if u == v0:
            continue
        for v in range(u + 1, n):
            if v == v0:
                continue
            s = 0
            for k in range(W):
                s += popcount(adj[u, k] & adj[v, k])
            if s > best:
                best = s
    return best


@njit(cache=True)
def _record(toadd, lo, hi):
    """Mark pair lo-hi for addition; return True if it was not yet marked."""
    w = lo >> 6
    bit = ONE << np.uint64(lo & 63)
    if toadd[hi, w] & bit:
        return False
    toadd[hi, w] |= bit
    toadd[lo, hi >> 6] |= ONE << np.uint64(hi & 63)
    return True


@njit(cache=True)
def count_two_edge(adj):
    """Number of vertex triples spanning exactly two edges."""
    n, W = adj.shape
    total = 0
    for w in range(n):
        for ka in range(W):
            aw = adj[w, ka]
            while aw:
                a = (ka << 6) + trailing_zeros(aw)
                aw &= aw - ONE
                for k in range(ka, W):
                    m = adj[w, k] & ~adj[a, k]
                    if k == ka:
                        m &= ~(_low_mask(a & 63) | (ONE << np.uint64(a & 63)))
                    total += popcount(m)
    return total


@njit(cache=True)
def do_round(adj, deg, fcnt, xt, items, meta, fresh, key, p, override_p, sampled, hist):
    """One phase-2 round.

    With ``override_p < 0`` every open triple is queried against the oracle.
    Otherwise every triple spanning exactly two edges gets a fresh draw at
    ``override_p`` keyed by the round index.

    Returns ``(q_before, sampled_count, success_count, new_edges, q_after,
    items, hist)``.
    """
    n, W = adj.shape
    q_before = meta[M_Q]
    toadd = np.zeros((n, W), np.uint64)
    hmode = meta[M_HMODE]
    # record buffers are sized up front: reassigning arrays inside the sweep
    # loops costs a refcount round-trip per triple
    cap = 0
    if hmode != HIST_NONE:
        cap = count_two_edge(adj) if override_p >= 0.0 else q_before
    rec_pair = np.empty(cap, np.int64)
    rec_code = np.empty(cap, np.int64)
    rec_ok = np.empty(cap, np.int64)
    nrec = 0
    n_sampled = 0
    n_success = 0
    track = sampled.shape[0] > 0

    if override_p >= 0.0:
        rkey = round_key(key, meta[M_ROUND])
        for w in range(n):
            for ka in range(W):
                aw = adj[w, ka]
                while aw:
                    a = (ka << 6) + trailing_zeros(aw)
                    aw &= aw - ONE
                    for k in range(ka, W):
                        m = adj[w, k] & ~adj[a, k]
                        if k == ka:
                            m &= ~(_low_mask(a & 63) | (ONE << np.uint64(a & 63)))
                        while m:
                            v = (k << 6) + trailing_zeros(m)
                            m &= m - ONE
                            x, y, z = sort3(a, v, w)
                            code = triple_code(x, y, z)
                            n_sampled += 1
                            if track:
                                sampled[(x * n + y) * n + z] = 1
                            ok = outcome(rkey, code, override_p)
                            if ok:
                                n_success += 1
                                _record(toadd, a, v)
                            if hmode == HIST_ALL or (hmode == HIST_SUCCESS and ok):
                                rec_pair[nrec] = a * n + v
                                rec_code[nrec] = code
                                rec_ok[nrec] = 1 if ok else 0
                                nrec += 1
    elif meta[M_MODE] == MODE_EXPLICIT:
        for idx in range(meta[M_NITEMS]):
            lo, hi, apex = dec_item(items[idx])
            if has_edge(adj, lo, hi):
                continue
            x, y, z = sort3(lo, hi, apex)
            code = triple_code(x, y, z)
            n_sampled += 1
            if track:
                sampled[(x * n + y) * n + z] = 1
            ok = outcome(key, code, p)
            if ok:
                n_success += 1
                _record(toadd, lo, hi)
            if hmode == HIST_ALL or (hmode == HIST_SUCCESS and ok):
                rec_pair[nrec] = lo * n + hi
                rec_code[nrec] = code
                rec_ok[nrec] = 1 if ok else 0
                nrec += 1
    else:
        for w in range(n):
            for kf in range(W):
                fw = fresh[w, kf]
                while fw:
                    a = (kf << 6) + trailing_zeros(fw)
                    fw &= fw - ONE
                    for k in range(W):
                        m = _fresh_mask(adj, fresh, w, a, k)
                        while m:
                            v = (k << 6) + trailing_zeros(m)
                            m &= m - ONE
                            x, y, z = sort3(a, v, w)
                            code = triple_code(x, y, z)
                            n_sampled += 1
                            if track:
                                sampled[(x * n + y) * n + z] = 1
                            ok = outcome(key, code, p)
                            if ok:
                                n_success += 1
                                _record(toadd, min(a, v), max(a, v))
                            if hmode == HIST_ALL or (hmode == HIST_SUCCESS and ok):
                                rec_pair[nrec] = min(a, v) * n + max(a, v)
                                rec_code[nrec] = code
                                rec_ok[nrec] = 1 if ok else 0
                                nrec += 1

    # simultaneous application; equivalent to adding the edges one by one in
    # canonical order because all sampling decisions are already fixed
    new2 = 0
    for u in range(n):
        for k in range(W):
            nw = toadd[u, k]
            fresh[u, k] = nw
            if nw:
                adj[u, k] |= nw
                c = popcount(nw)
                deg[u] += c
                new2 += c
    new_edges = new2 // 2
    meta[M_EDGES] += new_edges
    meta[M_ROUND] += 1
    meta[M_SAMPLES] += n_sampled
    meta[M_MODE] = MODE_FRESH
    meta[M_NITEMS] = 0
    q_after = count_open_fresh(adj, fresh)
    meta[M_Q] = q_after

    if nrec:
        order = np.argsort(rec_code[:nrec], kind="mergesort")
        order = order[np.argsort(rec_pair[:nrec][order], kind="mergesort")]
        stamp = meta[M_SAMPLES]
        last = -1
        for j in range(nrec):
            r = order[j]
            pair = rec_pair[r]
            code = rec_code[r]
            ok = rec_ok[r]
            e1 = -1
            e2 = -1
            if ok and pair != last:
                e1 = pair // n
                e2 = pair % n
                last = pair
            hist = _push_hist(
                hist, meta, stamp, (code >> 42) & _MASK21, (code >> 21) & _MASK21, code & _MASK21, ok, e1, e2
            )
    return q_before, n_sampled, n_success, new_edges, q_after, items, hist


@njit(cache=True)
def run_trial(n, p, seed, order_seed, v0, phase1_steps, sprinkle_p, max_rounds):
    """Full run without checkpoints or history.

    ``sprinkle_p < 0`` selects standard phase 2; otherwise rounds after the
    first use the sprinkling draw at ``sprinkle_p``.

    Returns ``(final_edges, steps, rounds, phase1_stalled, truncated)``.
    """
    adj, deg, fcnt, xt, items, meta, rng, fresh, sampled, hist = init_arrays(
        n, v0, order_seed, False, HIST_NONE
    )
    key = oracle_key(seed)
    full = n * (n - 1) // 2
    steps, stalled, items, hist = run_steps(
        adj, deg, fcnt, xt, items, meta, rng, key, p, sampled, hist, phase1_steps
    )
    rounds = 0
    truncated = False
    if meta[M_EDGES] != full and meta[M_Q] > 0:
        while meta[M_EDGES] != full:
            if sprinkle_p < 0.0 and meta[M_Q] == 0:
                break
            if rounds >= max_rounds:
                truncated = True
                break
            override = sprinkle_p if (sprinkle_p >= 0.0 and rounds > 0) else -1.0
            res = do_round(adj, deg, fcnt, xt, items, meta, fresh, key, p, override, sampled, hist)
            items = res[5]
            rounds += 1
            if override >= 0.0 and res[1] == 0:
                break
    return meta[M_EDGES], steps, rounds, stalled, truncated


@njit(cache=True)
def run_batch(n, p, seeds, order_seeds, v0, phase1_steps, sprinkle_p, max_rounds):
    m = seeds.shape[0]
    out = np.zeros((m, 5), np.int64)
    for i in range(m):
        e, s, r, st, tr = run_trial(
            n, p, seeds[i], order_seeds[i], v0, phase1_steps, sprinkle_p, max_rounds
        )
        out[i, 0] = e
        out[i, 1] = s
        out[i, 2] = r
        out[i, 3] = st
        out[i, 4] = tr
    return out
