# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sampling loop over span datasets.

Every arithmetic step and every draw from the bit generator follows the
reference operations in ``sampler.py``/``belief.py`` in the same order, so
a run here is bit-identical to the pure-Python loop on the same stream.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, fabs, log, pow, sqrt
from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport calloc, free, malloc, realloc
from libc.string cimport memset
from numpy.random cimport bitgen_t

import numpy as np

cdef double DSCALE = 1.0 / 9007199254740992.0
cdef double TINY = 1e-300
cdef double EPS = 1e-16

cdef enum:
    POLICY_NONE = 0
    POLICY_THOMPSON = 1
    POLICY_UCB = 2


cdef inline double _uniform(bitgen_t* bg) noexcept nogil:
    return <double>(bg.next_uint64(bg.state) >> 11) * DSCALE


cdef inline double _uniform_open(bitgen_t* bg) noexcept nogil:
    return (<double>(bg.next_uint64(bg.state) >> 11) + 0.5) * DSCALE


cdef inline int64_t _randbelow(bitgen_t* bg, int64_t k) noexcept nogil:
    cdef int64_t r = <int64_t>(_uniform(bg) * <double>k)
    if r >= k:
        r = k - 1
    return r


cdef inline double _normal(bitgen_t* bg) noexcept nogil:
    cdef double u, v, s
    while True:
        u = 2.0 * _uniform(bg) - 1.0
        v = 2.0 * _uniform(bg) - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            return u * sqrt(-2.0 * log(s) / s)


cdef double _standard_gamma(bitgen_t* bg, double shape) noexcept nogil:
    cdef double g, u, d, c, x, v, x2
    if shape < 1.0:
        g = _standard_gamma(bg, shape + 1.0)
        u = _uniform_open(bg)
        return g * pow(u, 1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / sqrt(9.0 * d)
    while True:
        while True:
            x = _normal(bg)
            v = 1.0 + c * x
            if v > 0.0:
                break
        v = v * v * v
        u = _uniform_open(bg)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if log(u) < 0.5 * x2 + d * (1.0 - v + log(v)):
            return d * v


cdef double _gamma_p(double a, double x, double lgamma_a) noexcept nogil:
    cdef double log_pref, ap, term, total, b, c, d, h, an, delta, val
    cdef int i
    if x <= 0.0:
        return 0.0
    log_pref = -x + a * log(x) - lgamma_a
    if x < a + 1.0:
        ap = a
        term = 1.0 / a
        total = term
        for i in range(10000):
            ap += 1.0
            term *= x / ap
            total += term
            if fabs(term) < fabs(total) * EPS:
                break
        val = total * exp(log_pref)
        return val if val < 1.0 else 1.0
    b = x + 1.0 - a
    c = 1.0 / TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if fabs(d) < TINY:
            d = TINY
        c = b + an / c
        if fabs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < EPS:
            break
    val = 1.0 - exp(log_pref) * h
    return val if val > 0.0 else 0.0


cdef double _gamma_quantile(double shape, double q, double tol, double lgamma_a) noexcept nogil:
    cdef double lo = 0.0
    cdef double hi = shape if shape > 1.0 else 1.0
    cdef double mid
    cdef int it
    while _gamma_p(shape, hi, lgamma_a) < q:
        lo = hi
        hi *= 2.0
    for it in range(2000):
        if hi - lo <= tol or hi - lo <= 4e-16 * hi:
            break
        mid = 0.5 * (lo + hi)
        if _gamma_p(shape, mid, lgamma_a) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- within-chunk samplers ---------------------------------------------------

cdef struct LevelState:
    int64_t level
    int64_t n_owner      # 2**level
    int64_t n_pending
    int64_t cursor
    int64_t* owner
    int64_t* pending


cdef inline int64_t _lvl_bound(int64_t size, int64_t level, int64_t k) noexcept nogil:
    return (k * size) >> level


cdef int _levelset_advance(LevelState* ls, int64_t size, bitgen_t* bg) noexcept nogil:
    cdef int64_t level = ls.level + 1
    cdef int64_t n_old = ls.n_owner
    cdef int64_t n_new = 2 * n_old
    cdef int64_t k, x, mid, c, i, j, tmp, a, b
    cdef int64_t* owner = <int64_t*>realloc(ls.owner, n_new * sizeof(int64_t))
    if owner == NULL:
        return -1
    ls.owner = owner
    # expand in place, highest parent first
    k = n_old - 1
    while k >= 0:
        x = owner[k]
        mid = ((2 * k + 1) * size) >> level
        owner[2 * k] = -1
        owner[2 * k + 1] = -1
        if x >= 0:
            if x < mid:
                owner[2 * k] = x
            else:
                owner[2 * k + 1] = x
        k -= 1
    cdef int64_t* pending = <int64_t*>realloc(ls.pending, n_old * sizeof(int64_t))
    if pending == NULL:
        return -1
    ls.pending = pending
    cdef int64_t n_pending = 0
    for c in range(n_new):
        a = _lvl_bound(size, level, c)
        b = _lvl_bound(size, level, c + 1)
        if owner[c] < 0 and b > a:
            pending[n_pending] = c
            n_pending += 1
    i = n_pending - 1
    while i > 0:
        j = _randbelow(bg, i + 1)
        tmp = pending[i]
        pending[i] = pending[j]
        pending[j] = tmp
        i -= 1
    ls.level = level
    ls.n_owner = n_new
    ls.n_pending = n_pending
    ls.cursor = 0
    return 0


cdef int64_t _levelset_next(LevelState* ls, int64_t size, bitgen_t* bg) noexcept nogil:
    cdef int64_t k, a, b, x
    if ls.owner == NULL:
        ls.owner = <int64_t*>malloc(sizeof(int64_t))
        ls.pending = <int64_t*>malloc(sizeof(int64_t))
        if ls.owner == NULL or ls.pending == NULL:
            return -1
        ls.level = 0
        ls.n_owner = 1
        ls.owner[0] = -1
        ls.pending[0] = 0
        ls.n_pending = 1
        ls.cursor = 0
    while ls.cursor >= ls.n_pending:
        if _levelset_advance(ls, size, bg) != 0:
            return -1
    k = ls.pending[ls.cursor]
    ls.cursor += 1
    a = _lvl_bound(size, ls.level, k)
    b = _lvl_bound(size, ls.level, k + 1)
    x = a + _randbelow(bg, b - a)
    ls.owner[k] = x
    return x


cdef inline int64_t _uniform_next(int64_t* delta, int64_t lo, int64_t hi, int64_t taken, bitgen_t* bg) noexcept nogil:
    # virtual Fisher-Yates array V[x] = x + delta[x]
    cdef int64_t pos = lo + taken
    cdef int64_t r = pos + _randbelow(bg, hi - pos)
    cdef int64_t val = r + delta[r]
    delta[r] = (pos + delta[pos]) - r
    return val


cdef inline int64_t _segment_of(const int64_t[::1] bounds, int64_t frame) noexcept nogil:
    # largest k with bounds[k] <= frame
    cdef int64_t lo = 0
    cdef int64_t hi = bounds.shape[0] - 1
    cdef int64_t mid
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if bounds[mid] <= frame:
            lo = mid
        else:
            hi = mid
    return lo


cdef int _grow(int64_t** frames, int32_t** chunks, int32_t** news, int64_t cap) noexcept nogil:
    cdef int64_t* f = <int64_t*>realloc(frames[0], cap * sizeof(int64_t))
    if f == NULL:
        return -1
    frames[0] = f
    cdef int32_t* c = <int32_t*>realloc(chunks[0], cap * sizeof(int32_t))
    if c == NULL:
        return -1
    chunks[0] = c
    cdef int32_t* n = <int32_t*>realloc(news[0], cap * sizeof(int32_t))
    if n == NULL:
        return -1
    news[0] = n
    return 0


def run_spans(
    object bit_generator,
    const int64_t[::1] boundaries,
    const int64_t[::1] seg_bounds,
    const int64_t[::1] seg_ptr,
    const int64_t[::1] seg_ids,
    int64_t n_instances,
    int policy,
    double alpha0,
    double beta0,
    const double[::1] lgamma_table,
    bint levelset,
    int64_t batch,
    int64_t target,
    int64_t cap,
    bint strict,
):
    """Run the sampling loop; returns (chunk, frame, new, n1, n, sightings, exhausted).

    ``policy``: 0 none (first eligible chunk), 1 Thompson, 2 Bayes-UCB.
    ``target``/``cap``: distinct-found target and sample cap, -1 if unbounded.
    """
    cdef bitgen_t* bg = <bitgen_t*>PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")
    cdef int64_t m = boundaries.shape[0] - 1
    cdef int64_t total_frames = boundaries[m]

    n1_arr = np.zeros(m, dtype=np.int64)
    n_arr = np.zeros(m, dtype=np.int64)
    sight_arr = np.zeros(n_instances, dtype=np.int64)
    first_arr = np.full(n_instances, -1, dtype=np.int64)
    cdef int64_t[::1] n1 = n1_arr
    cdef int64_t[::1] nn = n_arr
    cdef int64_t[::1] sight = sight_arr
    cdef int64_t[::1] first = first_arr

    cdef int64_t* claimed = <int64_t*>calloc(m, sizeof(int64_t))
    cdef int64_t* picks = <int64_t*>malloc(max(batch, 1) * sizeof(int64_t))
    cdef int64_t* tied = <int64_t*>malloc(m * sizeof(int64_t))
    cdef int64_t* delta = NULL
    cdef LevelState* lstates = NULL
    if levelset:
        lstates = <LevelState*>calloc(m, sizeof(LevelState))
    else:
        delta = <int64_t*>calloc(total_frames, sizeof(int64_t))
    cdef int64_t log_cap = 1024
    cdef int64_t* frames = <int64_t*>malloc(log_cap * sizeof(int64_t))
    cdef int32_t* chunks = <int32_t*>malloc(log_cap * sizeof(int32_t))
    cdef int32_t* news = <int32_t*>malloc(log_cap * sizeof(int32_t))

    cdef int64_t t = 0, found = 0, b, c, j, jj, best_j, n_picks, n_tied
    cdef int64_t frame, off, lo, hi, seg, p, inst, prior, d0, d1, k
    cdef double best, r, shape, rate, q, s, top
    cdef bint exhausted = False
    cdef bint failed = False

    if claimed == NULL or picks == NULL or tied == NULL or frames == NULL \
            or chunks == NULL or news == NULL or (levelset and lstates == NULL) \
            or (not levelset and delta == NULL):
        failed = True

    with nogil:
        while not failed and (target < 0 or found < target) and (cap < 0 or t < cap):
            b = batch
            if cap >= 0 and cap - t < b:
                b = cap - t
            memset(claimed, 0, m * sizeof(int64_t))
            n_picks = 0
            for c in range(b):
                best_j = -1
                if policy == POLICY_NONE:
                    for j in range(m):
                        if nn[j] + claimed[j] < boundaries[j + 1] - boundaries[j]:
                            best_j = j
                            break
                elif policy == POLICY_THOMPSON:
                    best = -1.0
                    for j in range(m):
                        if nn[j] + claimed[j] < boundaries[j + 1] - boundaries[j]:
                            shape = (n1[j] if n1[j] > 0 else 0) + alpha0
                            rate = nn[j] + beta0
                            r = _standard_gamma(bg, shape) / rate
                            if r > best:
                                best = r
                                best_j = j
                else:
                    q = 1.0 - 1.0 / (t + c + 2)
                    n_tied = 0
                    top = -1.0
                    for j in range(m):
                        if nn[j] + claimed[j] < boundaries[j + 1] - boundaries[j]:
                            k = n1[j] if n1[j] > 0 else 0
                            shape = k + alpha0
                            rate = nn[j] + beta0
                            s = _gamma_quantile(shape, q, 0.0, lgamma_table[k]) / rate
                            if s > top:
                                top = s
                                n_tied = 0
                            if s == top:
                                tied[n_tied] = j
                                n_tied += 1
                    if n_tied == 1:
                        best_j = tied[0]
                    elif n_tied > 1:
                        best_j = tied[_randbelow(bg, n_tied)]
                if best_j < 0:
                    break
                claimed[best_j] += 1
                picks[n_picks] = best_j
                n_picks += 1
            if n_picks == 0:
                exhausted = True
                break
            for c in range(n_picks):
                j = picks[c]
                lo = boundaries[j]
                hi = boundaries[j + 1]
                if levelset:
                    off = _levelset_next(&lstates[j], hi - lo, bg)
                    if off < 0:
                        failed = True
                        break
                    frame = lo + off
                else:
                    frame = _uniform_next(delta, lo, hi, nn[j], bg)
                seg = _segment_of(seg_bounds, frame)
                d0 = 0
                d1 = 0
                for p in range(seg_ptr[seg], seg_ptr[seg + 1]):
                    inst = seg_ids[p]
                    prior = sight[inst]
                    if prior == 0:
                        d0 += 1
                        first[inst] = j
                    elif prior == 1:
                        d1 += 1
                        if strict:
                            n1[first[inst]] -= 1
                    sight[inst] = prior + 1
                nn[j] += 1
                n1[j] += d0
                if not strict:
                    n1[j] -= d1
                if t >= log_cap:
                    log_cap *= 2
                    if _grow(&frames, &chunks, &news, log_cap) != 0:
                        failed = True
                        break
                frames[t] = frame
                chunks[t] = <int32_t>j
                news[t] = <int32_t>d0
                t += 1
                found += d0

    try:
        if failed:
            raise MemoryError("sampling kernel ran out of memory")
        frame_out = np.empty(t, dtype=np.int64)
        chunk_out = np.empty(t, dtype=np.int32)
        new_out = np.empty(t, dtype=np.int32)
        for k in range(t):
            frame_out[k] = frames[k]
            chunk_out[k] = chunks[k]
            new_out[k] = news[k]
        return chunk_out, frame_out, new_out, n1_arr, n_arr, sight_arr, bool(exhausted)
    finally:
        free(claimed)
        free(picks)
        free(tied)
        free(delta)
        if lstates != NULL:
            for j in range(m):
                free(lstates[j].owner)
                free(lstates[j].pending)
            free(lstates)
        free(frames)
        free(chunks)
        free(news)


def standard_gamma_many(object bit_generator, double shape, int64_t count):
    """``count`` Gamma(shape, 1) draws, identical to repeated
    ``belief.standard_gamma`` calls on the same stream."""
    cdef bitgen_t* bg = <bitgen_t*>PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")
    out = np.empty(count, dtype=np.float64)
    cdef double[::1] view = out
    cdef int64_t i
    with nogil:
        for i in range(count):
            view[i] = _standard_gamma(bg, shape)
    return out
