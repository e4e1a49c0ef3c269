"""Compiled kernels shared by all modules.

Data layout (chosen so hot loops touch a handful of flat arrays):

* a site is ``d + 1`` consecutive int64 values ``x_1, ..., x_d, n`` stored
  in some array at some base offset;
* an environment is a pair ``(ienv, fenv)`` of int64/float64 vectors built by
  ``pack_environment``;
* the path-length cache and the search stack live in one int64 vector
  ``mem`` built by ``new_mem``.

Everything random is a pure function of a 64-bit seed and integer
coordinates, so results never depend on query order or cache state.

The cache stores the absolute reach ``R(s) = n + l(s)`` of open sites: a
lower bound after a successful search, or the exact value once the whole
finite subtree below ``s`` has been explored.
"""

import numpy as np
from numba import njit

M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
GOLD = np.uint64(0x9E3779B97F4A7C15)
SITE_KEY = np.uint64(0xD6E8FEB86659FD93)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0

# stream tags; seeds used for different purposes never share a tag
STREAM_PERC = np.uint64(1)
STREAM_IID = np.uint64(2)
STREAM_BETA = np.uint64(3)
STREAM_MDEP = np.uint64(4)
STREAM_MK_REG = np.uint64(5)
STREAM_MK_NU = np.uint64(6)
STREAM_MK_Q = np.uint64(7)
STREAM_PERM = np.uint64(8)

W_CONSTANT = 0
W_IID = 1
W_MARKOV = 2
W_BERGER = 3
W_MDEP = 4

# walker status codes
OK = 0
DEAD_END = 1
BUDGET = 2

# ienv header
I_PSEED, I_WSEED, I_H, I_WKIND, I_NN, I_D, I_NOV, I_OFF, I_OVK, I_OVO, I_NSTATE, I_FULL, I_FVAL, I_FMAT, I_FOVW = range(15)
IENV_HEADER = 16
# fenv header: p, then three weight parameters
F_P, F_PAR = 0, 1
FENV_HEADER = 4
# mem header
(M_GEN, M_COUNT, M_MASK, M_SLACK, M_CLEARS, M_SEARCHES, M_PUSHES, M_FUNNEL, M_ROW, M_TAB, M_SITES, M_IDX, M_BEST,
 M_ORDER, M_SCORES, M_DEPTH) = range(16)
MEM_HEADER = 16


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@njit(cache=True, inline="always")
def to_unit(h):
    return np.float64(h >> S11) * INV53


@njit(cache=True, inline="always")
def hash_at(seed, stream, arr, base, d1):
    h = mix64(seed ^ (stream * GOLD))
    for i in range(d1):
        h = mix64((h ^ np.uint64(arr[base + i])) + GOLD)
    return h


@njit(cache=True, inline="always")
def hash_pair(seed, stream, a, b):
    h = mix64(seed ^ (stream * GOLD))
    h = mix64((h ^ np.uint64(a)) + GOLD)
    return mix64((h ^ np.uint64(b)) + GOLD)


@njit(cache=True, inline="always")
def hash_one(seed, stream, a):
    h = mix64(seed ^ (stream * GOLD))
    return mix64((h ^ np.uint64(a)) + GOLD)


# ---------------------------------------------------------------- environment


@njit(cache=True, inline="always")
def override_row(ienv, arr, base):
    nov = ienv[I_NOV]
    d1 = ienv[I_D] + 1
    kb = ienv[I_OVK]
    for r in range(nov):
        hit = True
        for c in range(d1):
            if ienv[kb + r * d1 + c] != arr[base + c]:
                hit = False
                break
        if hit:
            return r
    return -1


@njit(cache=True, inline="always")
def is_open(ienv, fenv, arr, base):
    if ienv[I_NOV] > 0:
        r = override_row(ienv, arr, base)
        if r >= 0:
            st = ienv[ienv[I_OVO] + r]
            if st >= 0:
                return st == 1
    p = fenv[F_P]
    if p >= 1.0:
        return True
    if p <= 0.0:
        return False
    return to_unit(hash_at(np.uint64(ienv[I_PSEED]), STREAM_PERC, arr, base, ienv[I_D] + 1)) < p


@njit(cache=True, inline="always")
def _categorical(fenv, base, ns, u):
    acc = 0.0
    for j in range(ns):
        acc += fenv[base + j]
        if u < acc:
            return j
    return ns - 1


@njit(cache=True)
def markov_state(seed, x_key, n, rho, fenv, mat_base, ns):
    """Stationary Markov chain value at time ``n`` for the chain keyed by ``x_key``.

    The kernel splits as ``P = rho * nu + (1 - rho) * Q``. Looking back from
    ``n`` to the last time the ``rho``-coin fired gives a draw from ``nu``
    there; the remaining steps follow ``Q``. This samples the chain started
    in the infinite past, hence in its stationary law. Rows ``0..ns-1`` of
    the matrix block hold ``Q``, row ``ns`` holds ``nu``.
    """
    t = n
    while to_unit(hash_pair(seed, STREAM_MK_REG, x_key, t)) >= rho:
        t -= 1
    state = _categorical(fenv, mat_base + ns * ns, ns, to_unit(hash_pair(seed, STREAM_MK_NU, x_key, t)))
    for s in range(t + 1, n + 1):
        state = _categorical(fenv, mat_base + state * ns, ns, to_unit(hash_pair(seed, STREAM_MK_Q, x_key, s)))
    return state


@njit(cache=True)
def mdep_weight(seed, w, a, b, arr, base, d1):
    """Mean of i.i.d. uniforms over the sup-norm window of radius ``w``, mapped to ``[a, b]``."""
    side = 2 * w + 1
    total = 1
    for _ in range(d1):
        total *= side
    probe = np.empty(d1, dtype=np.int64)
    acc = 0.0
    for code in range(total):
        c = code
        for i in range(d1):
            probe[i] = arr[base + i] + (c % side) - w
            c //= side
        acc += to_unit(hash_at(seed, STREAM_MDEP, probe, 0, d1))
    return a + (b - a) * acc / total


@njit(cache=True, inline="always")
def weight_raw(seed, ienv, fenv, arr, base):
    kind = ienv[I_WKIND]
    d1 = ienv[I_D] + 1
    if kind == W_CONSTANT:
        return fenv[F_PAR]
    if kind == W_IID:
        a = fenv[F_PAR]
        return a + (fenv[F_PAR + 1] - a) * to_unit(hash_at(seed, STREAM_IID, arr, base, d1))
    if kind == W_BERGER:
        x = arr[base]
        beta = np.int64(to_unit(hash_one(seed, STREAM_BETA, arr[base + d1 - 1])) * 3.0)
        if beta > 2:
            beta = 2
        return np.float64((beta + 3 * abs(x) + x) % 3 + 1)
    if kind == W_MARKOV:
        key = SITE_KEY
        for i in range(d1 - 1):
            key = mix64((key ^ np.uint64(arr[base + i])) + GOLD)
        st = markov_state(seed, np.int64(key), arr[base + d1 - 1], fenv[F_PAR], fenv, ienv[I_FMAT], ienv[I_NSTATE])
        return fenv[ienv[I_FVAL] + st]
    return mdep_weight(seed, np.int64(fenv[F_PAR]), fenv[F_PAR + 1], fenv[F_PAR + 2], arr, base, d1)


@njit(cache=True, inline="always")
def weight(ienv, fenv, arr, base):
    if ienv[I_NOV] > 0:
        r = override_row(ienv, arr, base)
        if r >= 0:
            w = fenv[ienv[I_FOVW] + r]
            if not np.isnan(w):
                return w
    return weight_raw(np.uint64(ienv[I_WSEED]), ienv, fenv, arr, base)


@njit(cache=True)
def weights_of_sites(ienv, fenv, sites):
    d1 = sites.shape[1]
    flat = sites.ravel()
    out = np.empty(sites.shape[0])
    for i in range(sites.shape[0]):
        out[i] = weight(ienv, fenv, flat, i * d1)
    return out


@njit(cache=True, nogil=True)
def field_samples(seeds, ienv, fenv, sites):
    """Weights at ``sites`` (rows) for each field realization ``seeds[i]``; overrides ignored."""
    d1 = sites.shape[1]
    flat = sites.ravel()
    out = np.empty((seeds.shape[0], sites.shape[0]))
    for i in range(seeds.shape[0]):
        for j in range(sites.shape[0]):
            out[i, j] = weight_raw(seeds[i], ienv, fenv, flat, j * d1)
    return out


@njit(cache=True)
def open_of_sites(ienv, fenv, sites):
    d1 = sites.shape[1]
    flat = sites.ravel()
    out = np.empty(sites.shape[0], dtype=np.bool_)
    for i in range(sites.shape[0]):
        out[i] = is_open(ienv, fenv, flat, i * d1)
    return out


# ---------------------------------------------------------------------- cache


@njit(cache=True, inline="always")
def key_hash(arr, base, d1):
    h = SITE_KEY
    for i in range(d1):
        h = mix64((h ^ np.uint64(arr[base + i])) + GOLD)
    return h


@njit(cache=True, inline="always")
def memo_find(mem, arr, base, d1):
    """Table offset of the row for the site, and whether it is live."""
    gen = mem[M_GEN]
    mask = mem[M_MASK]
    row = mem[M_ROW]
    tab = mem[M_TAB]
    i = np.int64(key_hash(arr, base, d1) & np.uint64(mask))
    while True:
        off = tab + i * row
        if mem[off + d1 + 1] != gen:
            return off, False
        hit = True
        for c in range(d1):
            if mem[off + c] != arr[base + c]:
                hit = False
                break
        if hit:
            return off, True
        i = (i + 1) & mask


@njit(cache=True)
def memo_clear(mem):
    mem[M_GEN] += 1
    mem[M_COUNT] = 0
    mem[M_CLEARS] += 1


@njit(cache=True, inline="always")
def memo_store(mem, arr, base, d1, value, exact_flag):
    off, found = memo_find(mem, arr, base, d1)
    if found:
        if mem[off + d1 + 2] == 1:
            return
        if exact_flag:
            mem[off + d1] = value
            mem[off + d1 + 2] = 1
        elif value > mem[off + d1]:
            mem[off + d1] = value
        return
    if 2 * (mem[M_COUNT] + 1) > mem[M_MASK] + 1:
        memo_clear(mem)
        off, found = memo_find(mem, arr, base, d1)
    for c in range(d1):
        mem[off + c] = arr[base + c]
    mem[off + d1] = value
    mem[off + d1 + 1] = mem[M_GEN]
    mem[off + d1 + 2] = 1 if exact_flag else 0
    mem[M_COUNT] += 1


@njit(cache=True, inline="always")
def _set_child(ienv, src, sbase, k, dst, dbase):
    d = ienv[I_D]
    ob = ienv[I_OFF] + k * d
    for c in range(d):
        dst[dbase + c] = src[sbase + c] + ienv[ob + c]
    dst[dbase + d] = src[sbase + d] + 1


@njit(cache=True, inline="always")
def _search_order(ienv, mem, sbase, obase):
    """Child order for the search: steps toward the nearest multiple of ``funnel`` first.

    Searches started at nearby sites then run into the same channels and
    reuse each other's cached results. Answers do not depend on the order.
    """
    nn = ienv[I_NN]
    d = ienv[I_D]
    funnel = mem[M_FUNNEL]
    scb = mem[M_SCORES]
    for k in range(nn):
        sc = 0
        ob = ienv[I_OFF] + k * d
        for c in range(d):
            r = mem[sbase + c] % funnel
            if 2 * r > funnel:
                pref = 1
            elif r == 0:
                pref = 0
            else:
                pref = -1
            sc += abs(ienv[ob + c] - pref)
        mem[scb + k] = sc
        mem[obase + k] = k
    for i in range(1, nn):
        j = i
        while j > 0 and mem[scb + mem[obase + j - 1]] > mem[scb + mem[obase + j]]:
            t = mem[obase + j - 1]
            mem[obase + j - 1] = mem[obase + j]
            mem[obase + j] = t
            j -= 1


@njit(cache=True)
def reach_query(ienv, fenv, mem, arr, base, a_min):
    """Decide whether an open path from the site reaches time ``a_min``.

    Returns ``(True, lower bound on the reach)`` on success, otherwise
    ``(False, exact reach)``; a closed site has reach ``n - 1``. A fresh
    search aims ``slack`` layers beyond ``a_min`` so that later queries from
    the same region are answered from the cache.
    """
    d = ienv[I_D]
    d1 = d + 1
    if not is_open(ienv, fenv, arr, base):
        return False, arr[base + d] - 1
    off, found = memo_find(mem, arr, base, d1)
    if found:
        if mem[off + d1] >= a_min:
            return True, mem[off + d1]
        if mem[off + d1 + 2] == 1:
            return False, mem[off + d1]
    if arr[base + d] >= a_min:
        return True, arr[base + d]
    a_goal = a_min + mem[M_SLACK]
    mem[M_SEARCHES] += 1
    nn = ienv[I_NN]
    sb = mem[M_SITES]
    ib = mem[M_IDX]
    bb = mem[M_BEST]
    ob = mem[M_ORDER]
    for c in range(d1):
        mem[sb + c] = arr[base + c]
    mem[ib] = 0
    mem[bb] = arr[base + d]
    _search_order(ienv, mem, sb, ob)
    top = 0
    hit = False
    hit_value = np.int64(0)
    while top >= 0:
        cur = sb + top * d1
        if mem[ib + top] < nn:
            k = mem[ob + top * nn + mem[ib + top]]
            mem[ib + top] += 1
            nxt = cur + d1
            _set_child(ienv, mem, cur, k, mem, nxt)
            if not is_open(ienv, fenv, mem, nxt):
                continue
            off, found = memo_find(mem, mem, nxt, d1)
            if found:
                v = mem[off + d1]
                if v >= a_min:
                    hit = True
                    hit_value = v
                    break
                if mem[off + d1 + 2] == 1:
                    if v > mem[bb + top]:
                        mem[bb + top] = v
                    continue
            tn = mem[nxt + d]
            if tn >= a_goal:
                hit = True
                hit_value = tn
                break
            # before descending, look for a successor already known to reach far enough
            probe = nxt + d1
            for kk in range(nn):
                _set_child(ienv, mem, nxt, kk, mem, probe)
                off2, found2 = memo_find(mem, mem, probe, d1)
                if found2 and mem[off2 + d1] >= a_min:
                    hit = True
                    hit_value = mem[off2 + d1]
                    break
            top += 1
            if hit:
                break
            mem[M_PUSHES] += 1
            mem[ib + top] = 0
            mem[bb + top] = tn
            _search_order(ienv, mem, nxt, ob + top * nn)
        else:
            v = mem[bb + top]
            memo_store(mem, mem, cur, d1, v, True)
            top -= 1
            if v >= a_min:
                hit = True
                hit_value = v
                break
            if top >= 0 and v > mem[bb + top]:
                mem[bb + top] = v
    if not hit:
        return False, mem[bb]
    for lev in range(top + 1):
        memo_store(mem, mem, sb + lev * d1, d1, hit_value, False)
    return True, hit_value


@njit(cache=True)
def path_length(ienv, fenv, mem, arr, base):
    """Longest open path length from the site clipped at the horizon (-1 if closed)."""
    h = ienv[I_H]
    n = arr[base + ienv[I_D]]
    ok, v = reach_query(ienv, fenv, mem, arr, base, n + h)
    if ok:
        return h
    return v - n


@njit(cache=True)
def in_backbone(ienv, fenv, mem, arr, base):
    if ienv[I_FULL] == 1:
        return True
    ok, v = reach_query(ienv, fenv, mem, arr, base, arr[base + ienv[I_D]] + ienv[I_H])
    return ok


@njit(cache=True, nogil=True)
def path_lengths_of_sites(ienv, fenv, mem, sites):
    d1 = sites.shape[1]
    flat = sites.ravel()
    out = np.empty(sites.shape[0], dtype=np.int64)
    for i in range(sites.shape[0]):
        out[i] = path_length(ienv, fenv, mem, flat, i * d1)
    return out


@njit(cache=True, nogil=True)
def backbone_of_sites(ienv, fenv, mem, sites):
    d1 = sites.shape[1]
    flat = sites.ravel()
    out = np.empty(sites.shape[0], dtype=np.bool_)
    for i in range(sites.shape[0]):
        out[i] = in_backbone(ienv, fenv, mem, flat, i * d1)
    return out


# --------------------------------------------------------------------- walker
# a walker scratch vector ``ch`` holds the nn children rows; ``wts``/``used`` are per child


@njit(cache=True, inline="always")
def next_in_permutation(walk_seed, pos, d1, rank, wts, used, nn):
    """Element at position ``rank`` of the weighted permutation at ``pos``.

    Positions are filled in order by selection without replacement with
    probability proportional to the remaining weights; ``used`` marks the
    children already placed.
    """
    total = 0.0
    last = -1
    for k in range(nn):
        if used[k] == 0:
            total += wts[k]
            last = k
    h = mix64(hash_at(walk_seed, STREAM_PERM, pos, 0, d1) ^ (np.uint64(rank + 1) * GOLD))
    u = to_unit(h) * total
    acc = 0.0
    for k in range(nn):
        if used[k] == 0:
            acc += wts[k]
            if u < acc:
                used[k] = 1
                return k
    used[last] = 1
    return last


@njit(cache=True, inline="always")
def _prepare_children(ienv, fenv, pos, ch, wts, used):
    nn = ienv[I_NN]
    d1 = ienv[I_D] + 1
    for k in range(nn):
        _set_child(ienv, pos, 0, k, ch, k * d1)
        wts[k] = weight(ienv, fenv, ch, k * d1)
        used[k] = 0


@njit(cache=True)
def sample_permutation(ienv, fenv, walk_seed, pos):
    nn = ienv[I_NN]
    d1 = ienv[I_D] + 1
    ch = np.empty(nn * d1, dtype=np.int64)
    wts = np.empty(nn)
    used = np.zeros(nn, dtype=np.int64)
    _prepare_children(ienv, fenv, pos, ch, wts, used)
    out = np.empty(nn, dtype=np.int64)
    for r in range(nn):
        out[r] = next_in_permutation(walk_seed, pos, d1, r, wts, used, nn)
    return out


@njit(cache=True)
def walk_step(ienv, fenv, mem, walk_seed, pos, ch, wts, used):
    """One step of the walk: the first backbone element of the permutation at ``pos``.

    Returns ``(status, chosen child, first, dmax)``: ``first`` tells whether
    the chosen child heads the permutation, ``dmax`` is the largest clipped
    path length among the children ranked before it (-1 if there are none).
    """
    nn = ienv[I_NN]
    d = ienv[I_D]
    d1 = d + 1
    h = ienv[I_H]
    _prepare_children(ienv, fenv, pos, ch, wts, used)
    dmax = np.int64(-1)
    for r in range(nn):
        k = next_in_permutation(walk_seed, pos, d1, r, wts, used, nn)
        if ienv[I_FULL] == 1:
            return OK, k, r == 0, dmax
        zb = k * d1
        ok, v = reach_query(ienv, fenv, mem, ch, zb, ch[zb + d] + h)
        if ok:
            return OK, k, r == 0, dmax
        lz = v - ch[zb + d]
        if lz > dmax:
            dmax = lz
    return DEAD_END, -1, False, dmax


@njit(cache=True, inline="always")
def _move(ienv, pos, k):
    d = ienv[I_D]
    ob = ienv[I_OFF] + k * d
    for c in range(d):
        pos[c] += ienv[ob + c]
    pos[d] += 1


@njit(cache=True, nogil=True)
def run_walk(ienv, fenv, mem, walk_seed, start, steps, record):
    """Advance ``steps`` steps; returns (status, steps done, final site, path rows)."""
    nn = ienv[I_NN]
    d1 = ienv[I_D] + 1
    ch = np.empty(nn * d1, dtype=np.int64)
    wts = np.empty(nn)
    used = np.zeros(nn, dtype=np.int64)
    pos = start.copy()
    path = np.empty((steps + 1 if record else 1, d1), dtype=np.int64)
    path[0] = pos
    for t in range(steps):
        status, k, first, dmax = walk_step(ienv, fenv, mem, walk_seed, pos, ch, wts, used)
        if status != OK:
            return status, t, pos, path
        _move(ienv, pos, k)
        if record:
            path[t + 1] = pos
    return OK, steps, pos, path


@njit(cache=True, nogil=True)
def run_walks_endpoints(ienv, fenv, mem, seeds, start, steps):
    """Endpoints and status of independent walks (one per seed) in one environment."""
    d1 = start.shape[0]
    out = np.empty((seeds.shape[0], d1), dtype=np.int64)
    status = np.zeros(seeds.shape[0], dtype=np.int64)
    for i in range(seeds.shape[0]):
        st, t, pos, path = run_walk(ienv, fenv, mem, seeds[i], start, steps, False)
        out[i] = pos
        status[i] = st
    return out, status


@njit(cache=True, nogil=True)
def local_path(ienv, fenv, mem, walk_seed, start, k):
    """Local path of length ``k``: step j takes the first permutation element in ``M_{k-j-1}``."""
    nn = ienv[I_NN]
    d1 = ienv[I_D] + 1
    ch = np.empty(nn * d1, dtype=np.int64)
    wts = np.empty(nn)
    used = np.zeros(nn, dtype=np.int64)
    vals = np.empty(nn, dtype=np.int64)
    pos = start.copy()
    path = np.empty((k + 1, d1), dtype=np.int64)
    path[0] = pos
    for j in range(1, k + 1):
        q = k - j - 1
        _prepare_children(ienv, fenv, pos, ch, wts, used)
        best = np.int64(-2)
        if q >= 0:
            for c in range(nn):
                lv = path_length(ienv, fenv, mem, ch, c * d1)
                vals[c] = lv if lv < q else q
                if vals[c] > best:
                    best = vals[c]
        for r in range(nn):
            c = next_in_permutation(walk_seed, pos, d1, r, wts, used, nn)
            if q < 0 or vals[c] == best:
                _move(ienv, pos, c)
                break
        path[j] = pos
    return path


@njit(cache=True, nogil=True)
def local_path_positions(ienv, fenv, mem, seeds, start, k, at):
    """Site of the local path of length ``k`` at time index ``at``, one row per walk seed."""
    out = np.empty((seeds.shape[0], start.shape[0]), dtype=np.int64)
    for i in range(seeds.shape[0]):
        path = local_path(ienv, fenv, mem, seeds[i], start, k)
        out[i] = path[at]
    return out


# --------------------------------------------------------------- regeneration


@njit(cache=True)
def is_s2m(ienv, fenv, mem, pos, m):
    """True iff every backbone path from ``pos`` is back at its space point after ``2m`` steps."""
    d = ienv[I_D]
    d1 = d + 1
    nn = ienv[I_NN]
    cap = 1
    for _ in range(d):
        cap *= 4 * m + 1
    cur = np.empty(cap * d1, dtype=np.int64)
    nxt = np.empty(cap * d1, dtype=np.int64)
    for c in range(d1):
        cur[c] = pos[c]
    ncur = 1
    for j in range(2 * m):
        nnext = 0
        for a in range(ncur):
            for k in range(nn):
                pb = nnext * d1
                _set_child(ienv, cur, a * d1, k, nxt, pb)
                dup = False
                for b in range(nnext):
                    same = True
                    for c in range(d):
                        if nxt[b * d1 + c] != nxt[pb + c]:
                            same = False
                            break
                    if same:
                        dup = True
                        break
                if dup:
                    continue
                if in_backbone(ienv, fenv, mem, nxt, pb):
                    nnext += 1
        if nnext == 0:
            return False
        cur, nxt = nxt, cur
        ncur = nnext
    if ncur != 1:
        return False
    for c in range(d):
        if cur[c] != pos[c]:
            return False
    return True


@njit(cache=True, nogil=True)
def s2m_of_sites(ienv, fenv, mem, sites, m):
    """Per site: -1 if not in the backbone, else 1 if the site is in S_2m and 0 otherwise."""
    d1 = sites.shape[1]
    flat = sites.ravel()
    out = np.empty(sites.shape[0], dtype=np.int64)
    row = np.empty(d1, dtype=np.int64)
    for i in range(sites.shape[0]):
        if not in_backbone(ienv, fenv, mem, flat, i * d1):
            out[i] = -1
            continue
        for c in range(d1):
            row[c] = flat[i * d1 + c]
        out[i] = 1 if is_s2m(ienv, fenv, mem, row, m) else 0
    return out


# walker state vector: [t, t_last_regen, blocked, prev_dmax, prev_first, status, checks]
WS_T, WS_TLAST, WS_BLK, WS_PD, WS_PF, WS_STATUS, WS_CHECKS = range(7)


@njit(cache=True)
def new_state():
    st = np.zeros(7, dtype=np.int64)
    st[WS_PD] = -1
    return st


@njit(cache=True)
def walker_tick(ienv, fenv, mem, walk_seed, state, pos, m, ch, wts, used, regen_on):
    """Check the regeneration condition at the current time, then take one step.

    The local path of length j ends on the walk itself (hence on the
    backbone) exactly when the step into time j took the head of its
    permutation and no step i <= j - 2 had a permutation predecessor with
    clipped path length >= j - i - 2. Only such times can be regeneration
    candidates. Returns the regeneration time decided at this tick, or -1.
    """
    t = state[WS_T]
    decided = np.int64(-1)
    if regen_on and t >= state[WS_TLAST]:
        caught_up = t == 0 or (state[WS_PF] == 1 and state[WS_BLK] <= t)
        if caught_up:
            state[WS_CHECKS] += 1
            if is_s2m(ienv, fenv, mem, pos, m):
                decided = t + 2 * m
                state[WS_TLAST] = decided
    status, k, first, dmax = walk_step(ienv, fenv, mem, walk_seed, pos, ch, wts, used)
    if status != OK:
        state[WS_STATUS] = status
        return decided
    if t >= 1:
        b = (t - 1) + state[WS_PD] + 3
        if b > state[WS_BLK]:
            state[WS_BLK] = b
    state[WS_PD] = dmax
    state[WS_PF] = 1 if first else 0
    _move(ienv, pos, k)
    state[WS_T] = t + 1
    return decided


@njit(cache=True, nogil=True)
def run_regenerations(ienv, fenv, mem, walk_seed, start, m, count, budget):
    """Regeneration times and the walk's position there, up to ``count`` or ``budget`` steps.

    Returns (status, times, marks, steps, checks). A time decided at tick j
    equals j + 2m and the walk is then back at its space point of time j.
    """
    nn = ienv[I_NN]
    d1 = ienv[I_D] + 1
    ch = np.empty(nn * d1, dtype=np.int64)
    wts = np.empty(nn)
    used = np.zeros(nn, dtype=np.int64)
    pos = start.copy()
    here = start.copy()
    st = new_state()
    times = np.empty(count, dtype=np.int64)
    marks = np.empty((count, d1 - 1), dtype=np.int64)
    found = 0
    status = BUDGET
    while st[WS_T] < budget:
        for c in range(d1):
            here[c] = pos[c]
        dec = walker_tick(ienv, fenv, mem, walk_seed, st, pos, m, ch, wts, used, True)
        if dec >= 0:
            times[found] = dec
            for c in range(d1 - 1):
                marks[found, c] = here[c]
            found += 1
            if found == count:
                status = OK
                break
        if st[WS_STATUS] != OK:
            status = st[WS_STATUS]
            break
    return status, times[:found], marks[:found], st[WS_T], st[WS_CHECKS]


@njit(cache=True, nogil=True)
def run_pair(ienv_a, fenv_a, mem_a, ienv_b, fenv_b, mem_b, seed_a, seed_b, start_a, start_b, m, count, budget):
    """Two walks in lockstep; their regeneration times and the common ones.

    Returns (status, sim_times, sim_marks_a, sim_marks_b, times_a, times_b, steps).
    """
    nn = ienv_a[I_NN]
    d1 = ienv_a[I_D] + 1
    d = d1 - 1
    ch_a = np.empty(nn * d1, dtype=np.int64)
    ch_b = np.empty(nn * d1, dtype=np.int64)
    w_a = np.empty(nn)
    w_b = np.empty(nn)
    u_a = np.zeros(nn, dtype=np.int64)
    u_b = np.zeros(nn, dtype=np.int64)
    pa = start_a.copy()
    pb = start_b.copy()
    ha = start_a.copy()
    hb = start_b.copy()
    sa = new_state()
    sb = new_state()
    ta = np.empty(64, dtype=np.int64)
    tb = np.empty(64, dtype=np.int64)
    na = 0
    nb = 0
    sim = np.empty(count, dtype=np.int64)
    ma = np.empty((count, d), dtype=np.int64)
    mb = np.empty((count, d), dtype=np.int64)
    ns = 0
    status = BUDGET
    while sa[WS_T] < budget:
        for c in range(d1):
            ha[c] = pa[c]
            hb[c] = pb[c]
        da = walker_tick(ienv_a, fenv_a, mem_a, seed_a, sa, pa, m, ch_a, w_a, u_a, True)
        db = walker_tick(ienv_b, fenv_b, mem_b, seed_b, sb, pb, m, ch_b, w_b, u_b, True)
        if da >= 0:
            if na == ta.shape[0]:
                ta = np.concatenate((ta, np.empty(na, dtype=np.int64)))
            ta[na] = da
            na += 1
        if db >= 0:
            if nb == tb.shape[0]:
                tb = np.concatenate((tb, np.empty(nb, dtype=np.int64)))
            tb[nb] = db
            nb += 1
        if da >= 0 and db >= 0:
            sim[ns] = da
            for c in range(d):
                ma[ns, c] = ha[c]
                mb[ns, c] = hb[c]
            ns += 1
            if ns == count:
                status = OK
                break
        if sa[WS_STATUS] != OK:
            status = sa[WS_STATUS]
            break
        if sb[WS_STATUS] != OK:
            status = sb[WS_STATUS]
            break
    return status, sim[:ns], ma[:ns], mb[:ns], ta[:na], tb[:nb], sa[WS_T]


@njit(cache=True, inline="always")
def _whitened_norm(umat, v):
    best = 0.0
    for i in range(umat.shape[0]):
        acc = 0.0
        for j in range(umat.shape[1]):
            acc += umat[i, j] * v[j]
        if abs(acc) > best:
            best = abs(acc)
    return best


@njit(cache=True, nogil=True)
def pair_annulus(ienv_a, fenv_a, mem_a, ienv_b, fenv_b, mem_b, seed_a, seed_b, start_a, start_b, m, umat, r1, r2,
                 budget):
    """Follow the simultaneous regeneration skeleton until the whitened separation leaves ``(r1, r2)``.

    Returns (outcome, skeleton steps, ticks): outcome 1 for an exit at or
    beyond ``r2``, 0 for an exit at or inside ``r1``, 2 if the tick budget ran
    out and 3 on a dead end.
    """
    nn = ienv_a[I_NN]
    d1 = ienv_a[I_D] + 1
    d = d1 - 1
    ch_a = np.empty(nn * d1, dtype=np.int64)
    ch_b = np.empty(nn * d1, dtype=np.int64)
    w_a = np.empty(nn)
    w_b = np.empty(nn)
    u_a = np.zeros(nn, dtype=np.int64)
    u_b = np.zeros(nn, dtype=np.int64)
    pa = start_a.copy()
    pb = start_b.copy()
    sep = np.empty(d)
    for c in range(d):
        sep[c] = pa[c] - pb[c]
    r = _whitened_norm(umat, sep)
    if r <= r1:
        return 0, 0, 0
    if r >= r2:
        return 1, 0, 0
    ha = start_a.copy()
    hb = start_b.copy()
    sa = new_state()
    sb = new_state()
    sims = 0
    while sa[WS_T] < budget:
        for c in range(d1):
            ha[c] = pa[c]
            hb[c] = pb[c]
        da = walker_tick(ienv_a, fenv_a, mem_a, seed_a, sa, pa, m, ch_a, w_a, u_a, True)
        db = walker_tick(ienv_b, fenv_b, mem_b, seed_b, sb, pb, m, ch_b, w_b, u_b, True)
        if da >= 0 and db >= 0:
            sims += 1
            for c in range(d):
                sep[c] = ha[c] - hb[c]
            r = _whitened_norm(umat, sep)
            if r <= r1:
                return 0, sims, sa[WS_T]
            if r >= r2:
                return 1, sims, sa[WS_T]
        if sa[WS_STATUS] != OK or sb[WS_STATUS] != OK:
            return 3, sims, sa[WS_T]
    return 2, sims, sa[WS_T]


# -------------------------------------------------------------------- packing


def pack_environment(perc_seed, weight_seed, p, horizon, offsets, wkind, par, vals, mat, ov_keys, ov_open, ov_w):
    """Build the ``(ienv, fenv)`` vectors consumed by the kernels."""
    nn, d = offsets.shape
    nov = ov_keys.shape[0]
    ienv = np.zeros(IENV_HEADER + nn * d + nov * (d + 1) + nov, dtype=np.int64)
    ienv[I_PSEED] = _signed(perc_seed)
    ienv[I_WSEED] = _signed(weight_seed)
    ienv[I_H] = horizon
    ienv[I_WKIND] = wkind
    ienv[I_NN] = nn
    ienv[I_D] = d
    ienv[I_NOV] = nov
    ienv[I_OFF] = IENV_HEADER
    ienv[I_OVK] = IENV_HEADER + nn * d
    ienv[I_OVO] = ienv[I_OVK] + nov * (d + 1)
    ienv[I_NSTATE] = len(vals)
    ienv[I_FULL] = 1 if (p >= 1.0 and nov == 0) else 0
    ienv[IENV_HEADER:IENV_HEADER + nn * d] = offsets.ravel()
    ienv[ienv[I_OVK]:ienv[I_OVO]] = ov_keys.ravel()
    ienv[ienv[I_OVO]:] = ov_open
    par3 = np.zeros(3)
    par3[: len(par)] = par
    fenv = np.concatenate([[float(p)], par3, np.asarray(vals, float), np.asarray(mat, float).ravel(),
                           np.asarray(ov_w, float)])
    ienv[I_FVAL] = FENV_HEADER
    ienv[I_FMAT] = FENV_HEADER + len(vals)
    ienv[I_FOVW] = ienv[I_FMAT] + np.asarray(mat).size
    return ienv, fenv


def _signed(u):
    u = int(u) & 0xFFFFFFFFFFFFFFFF
    return u - (1 << 64) if u >= 1 << 63 else u


def new_mem(d, nn, horizon, capacity=1 << 15, slack=None, funnel=8):
    """Cache plus search stack as one int64 vector."""
    cap = 1 << max(4, int(capacity - 1).bit_length())
    slack = int(horizon if slack is None else slack)
    depth = int(horizon) + slack + 4
    d1 = d + 1
    row = d + 4
    tab = MEM_HEADER
    sites = tab + cap * row
    idx = sites + depth * d1
    best = idx + depth
    order = best + depth
    scores = order + depth * nn
    mem = np.zeros(scores + nn, dtype=np.int64)
    mem[M_GEN] = 1
    mem[M_MASK] = cap - 1
    mem[M_SLACK] = slack
    mem[M_FUNNEL] = funnel
    mem[M_ROW] = row
    mem[M_TAB] = tab
    mem[M_SITES] = sites
    mem[M_IDX] = idx
    mem[M_BEST] = best
    mem[M_ORDER] = order
    mem[M_SCORES] = scores
    mem[M_DEPTH] = depth
    return mem
