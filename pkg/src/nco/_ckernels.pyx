# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled oracle kernels.

Every routine here mirrors ``nco._pykernels`` operation for operation, so the
two backends return bit-identical floats and identical tie-breaks.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"


cdef inline double _pw(const double[:, ::1] d, const double[::1] p, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    return d[i, j] + (p[i] + p[j])


def exhaustive(const double[:, ::1] d):
    """Enumerate tours with node 0 first and perm[0] < perm[-1]."""
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t m = n - 1
    cdef Py_ssize_t i, j, k
    cdef long[::1] perm = np.arange(1, n, dtype=np.int_)
    cdef long[::1] best = np.arange(1, n, dtype=np.int_)
    cdef double total, best_len = INFINITY
    cdef long tmp
    with nogil:
        while True:
            if perm[0] < perm[m - 1]:
                total = d[0, perm[0]]
                for i in range(m - 1):
                    total += d[perm[i], perm[i + 1]]
                total += d[perm[m - 1], 0]
                if total < best_len:
                    best_len = total
                    for i in range(m):
                        best[i] = perm[i]
            # lexicographic next permutation
            i = m - 2
            while i >= 0 and perm[i] >= perm[i + 1]:
                i -= 1
            if i < 0:
                break
            j = m - 1
            while perm[j] <= perm[i]:
                j -= 1
            tmp = perm[i]; perm[i] = perm[j]; perm[j] = tmp
            j = i + 1
            k = m - 1
            while j < k:
                tmp = perm[j]; perm[j] = perm[k]; perm[k] = tmp
                j += 1
                k -= 1
    return best_len, [0] + [int(x) for x in best]


def subset_dp(const double[:, ::1] d):
    """Held-Karp recursion over subsets of nodes 1..n-1, anchored at node 0."""
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t m = n - 1
    cdef Py_ssize_t full = (1 << m) - 1
    cdef Py_ssize_t mask, prev, j, k, last
    cdef double[:, ::1] cost = np.full((full + 1, m), np.inf)
    cdef signed char[:, ::1] parent = np.full((full + 1, m), -1, dtype=np.int8)
    cdef double v, bestv
    cdef signed char bestk
    with nogil:
        for j in range(m):
            cost[1 << j, j] = d[0, j + 1]
        for mask in range(1, full + 1):
            if (mask & (mask - 1)) == 0:
                continue
            for j in range(m):
                if not (mask >> j) & 1:
                    continue
                prev = mask ^ (1 << j)
                bestv = INFINITY
                bestk = -1
                for k in range(m):
                    if not (prev >> k) & 1:
                        continue
                    v = cost[prev, k] + d[k + 1, j + 1]
                    if v < bestv:
                        bestv = v
                        bestk = <signed char>k
                cost[mask, j] = bestv
                parent[mask, j] = bestk
        bestv = INFINITY
        last = -1
        for j in range(m):
            v = cost[full, j] + d[j + 1, 0]
            if v < bestv:
                bestv = v
                last = j
    path = []
    mask = full
    j = last
    while j >= 0:
        path.append(int(j) + 1)
        k = parent[mask, j]
        mask ^= 1 << j
        j = k
    path.reverse()
    return bestv, [0] + path


cdef double _one_tree(const double[:, ::1] d, const double[::1] p, long[::1] deg,
                      double[::1] key, long[::1] parent, char[::1] intree) noexcept nogil:
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t i, v, it, first, second
    cdef double w, weight = 0.0, kmin
    for i in range(n):
        deg[i] = 0
        intree[i] = 0
        key[i] = INFINITY
        parent[i] = -1
    # Prim over nodes 1..n-1 rooted at node 1
    intree[1] = 1
    for v in range(2, n):
        key[v] = _pw(d, p, 1, v)
        parent[v] = 1
    for it in range(n - 2):
        v = -1
        kmin = INFINITY
        for i in range(2, n):
            if not intree[i] and key[i] < kmin:
                kmin = key[i]
                v = i
        intree[v] = 1
        weight += kmin
        deg[v] += 1
        deg[parent[v]] += 1
        for i in range(2, n):
            if not intree[i]:
                w = _pw(d, p, v, i)
                if w < key[i]:
                    key[i] = w
                    parent[i] = v
    first = -1
    kmin = INFINITY
    for i in range(1, n):
        w = _pw(d, p, 0, i)
        if w < kmin:
            kmin = w
            first = i
    second = -1
    w = INFINITY
    for i in range(1, n):
        if i != first and _pw(d, p, 0, i) < w:
            w = _pw(d, p, 0, i)
            second = i
    weight += kmin
    weight += w
    deg[0] = 2
    deg[first] += 1
    deg[second] += 1
    return weight


def one_tree(const double[:, ::1] d, const double[::1] p):
    cdef Py_ssize_t n = d.shape[0]
    deg = np.zeros(n, dtype=np.int_)
    cdef double weight = _one_tree(d, p, deg, np.empty(n), np.empty(n, dtype=np.int_),
                                   np.empty(n, dtype=np.int8))
    return weight, deg


def hk_ascent(const double[:, ::1] d, double step_divisor, long period, long max_iter):
    """Subgradient ascent on 1-tree node penalties; returns the best bound seen."""
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t i
    cdef long it, since = 0, iterations = 0
    cdef double[::1] p = np.zeros(n)
    best_p_arr = np.zeros(n)
    cdef double[::1] best_p = best_p_arr
    deg_arr = np.zeros(n, dtype=np.int_)
    cdef long[::1] deg = deg_arr
    cdef double[::1] key = np.empty(n)
    cdef long[::1] parent = np.empty(n, dtype=np.int_)
    cdef char[::1] intree = np.empty(n, dtype=np.int8)
    cdef double w, psum, cand, step = 0.0, best = -INFINITY
    cdef bint tour = False
    with nogil:
        for it in range(max_iter):
            iterations = it + 1
            w = _one_tree(d, p, deg, key, parent, intree)
            psum = 0.0
            for i in range(n):
                psum += p[i]
            cand = w - 2.0 * psum
            if it == 0:
                step = w / (step_divisor * n)
            if cand > best:
                best = cand
                for i in range(n):
                    best_p[i] = p[i]
                since = 0
            else:
                since += 1
            tour = True
            for i in range(n):
                if deg[i] != 2:
                    tour = False
                    break
            if tour:
                break
            if since >= period:
                step = step * 0.5
                since = 0
            for i in range(n):
                p[i] = p[i] + step * (deg[i] - 2)
    return best, best_p_arr, iterations, bool(tour)


def two_opt(const double[:, ::1] d, order):
    """First-improvement 2-opt, rescanning from the start after every move."""
    cdef long[::1] t = np.array(order, dtype=np.int_)
    cdef Py_ssize_t n = t.shape[0]
    cdef Py_ssize_t i, j, lo, hi, jmax
    cdef long a, b, c, e, tmp
    cdef double delta
    cdef bint improved = True
    with nogil:
        while improved:
            improved = False
            for i in range(n - 2):
                a = t[i]
                b = t[i + 1]
                jmax = n - 1 if i == 0 else n
                for j in range(i + 2, jmax):
                    c = t[j]
                    e = t[(j + 1) % n]
                    delta = (d[a, c] + d[b, e]) - (d[a, b] + d[c, e])
                    if delta < -1e-12:
                        lo = i + 1
                        hi = j
                        while lo < hi:
                            tmp = t[lo]; t[lo] = t[hi]; t[hi] = tmp
                            lo += 1
                            hi -= 1
                        improved = True
                        break
                if improved:
                    break
    return [int(x) for x in t]


def nearest_neighbor(const double[:, ::1] d, long start):
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t i, step
    cdef long cur = start, nxt
    cdef double best
    cdef char[::1] seen = np.zeros(n, dtype=np.int8)
    cdef long[::1] out = np.empty(n, dtype=np.int_)
    with nogil:
        seen[cur] = 1
        out[0] = cur
        for step in range(1, n):
            best = INFINITY
            nxt = -1
            for i in range(n):
                if not seen[i] and d[cur, i] < best:
                    best = d[cur, i]
                    nxt = i
            seen[nxt] = 1
            out[step] = nxt
            cur = nxt
    return [int(x) for x in out]
