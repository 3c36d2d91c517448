"""Numpy implementations of the oracle kernels.

Reference twin of ``nco._ckernels``: same loop structure where the order of
floating-point operations matters, vectorised where it does not.
"""
from itertools import permutations

import numpy as np

BACKEND = "python"


def exhaustive(d):
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    perms = np.array(list(permutations(range(1, n))), dtype=np.intp)
    perms = perms[perms[:, 0] < perms[:, -1]]
    total = d[0, perms[:, 0]].copy()
    for i in range(n - 2):
        total += d[perms[:, i], perms[:, i + 1]]
    total += d[perms[:, -1], 0]
    k = int(np.argmin(total))
    return float(total[k]), [0] + perms[k].tolist()


def subset_dp(d):
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    m = n - 1
    full = (1 << m) - 1
    inner = d[1:, 1:]
    cost = np.full((full + 1, m), np.inf)
    parent = np.full((full + 1, m), -1, dtype=np.int8)
    for j in range(m):
        cost[1 << j, j] = d[0, j + 1]
    masks = np.arange(full + 1)
    popcount = np.zeros(full + 1, dtype=np.int64)
    for j in range(m):
        popcount += (masks >> j) & 1
    for size in range(2, m + 1):
        layer = masks[popcount == size]
        for j in range(m):
            sel = layer[((layer >> j) & 1) == 1]
            vals = cost[sel ^ (1 << j)] + inner[:, j]
            arg = np.argmin(vals, axis=1)
            cost[sel, j] = vals[np.arange(len(sel)), arg]
            parent[sel, j] = arg
    final = cost[full] + d[1:, 0]
    last = int(np.argmin(final))
    path = []
    mask, j = full, last
    while j >= 0:
        path.append(j + 1)
        k = int(parent[mask, j])
        mask ^= 1 << j
        j = k
    path.reverse()
    return float(final[last]), [0] + path


def one_tree(d, p):
    d = np.asarray(d, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n = d.shape[0]
    deg = np.zeros(n, dtype=np.int_)
    key = np.full(n, np.inf)
    parent = np.full(n, -1)
    intree = np.zeros(n, dtype=bool)
    intree[:2] = True  # node 0 is handled separately, node 1 is the root
    key[2:] = d[1, 2:] + (p[1] + p[2:])
    parent[2:] = 1
    weight = 0.0
    for _ in range(n - 2):
        masked = np.where(intree, np.inf, key)
        v = int(np.argmin(masked))
        intree[v] = True
        weight += float(key[v])
        deg[v] += 1
        deg[parent[v]] += 1
        w = d[v] + (p[v] + p)
        better = ~intree & (w < key)
        key[better] = w[better]
        parent[better] = v
    w0 = d[0, 1:] + (p[0] + p[1:])
    first = int(np.argmin(w0))
    w_first = float(w0[first])
    w0[first] = np.inf
    second = int(np.argmin(w0))
    weight += w_first
    weight += float(w0[second])
    deg[0] = 2
    deg[first + 1] += 1
    deg[second + 1] += 1
    return weight, deg


def hk_ascent(d, step_divisor, period, max_iter):
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    p = np.zeros(n)
    best_p = np.zeros(n)
    best = -np.inf
    step = 0.0
    since = 0
    iterations = 0
    tour = False
    for it in range(max_iter):
        iterations = it + 1
        w, deg = one_tree(d, p)
        psum = 0.0
        for x in p.tolist():
            psum += x
        cand = w - 2.0 * psum
        if it == 0:
            step = w / (step_divisor * n)
        if cand > best:
            best = cand
            best_p = p.copy()
            since = 0
        else:
            since += 1
        tour = bool(np.all(deg == 2))
        if tour:
            break
        if since >= period:
            step = step * 0.5
            since = 0
        p = p + step * (deg - 2)
    return best, best_p, iterations, tour


def two_opt(d, order):
    d = np.asarray(d, dtype=np.float64)
    t = np.array(order, dtype=np.intp)
    n = len(t)
    improved = True
    while improved:
        improved = False
        for i in range(n - 2):
            a, b = t[i], t[i + 1]
            js = np.arange(i + 2, n - 1 if i == 0 else n)
            c = t[js]
            e = t[(js + 1) % n]
            delta = (d[a, c] + d[b, e]) - (d[a, b] + d[c, e])
            hits = np.flatnonzero(delta < -1e-12)
            if hits.size:
                j = int(js[hits[0]])
                t[i + 1 : j + 1] = t[i + 1 : j + 1][::-1].copy()
                improved = True
                break
    return t.tolist()


def nearest_neighbor(d, start):
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    seen = np.zeros(n, dtype=bool)
    cur = int(start)
    seen[cur] = True
    out = [cur]
    for _ in range(n - 1):
        row = np.where(seen, np.inf, d[cur])
        cur = int(np.argmin(row))
        seen[cur] = True
        out.append(cur)
    return out
