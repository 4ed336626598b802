"""Independent reference implementations used to check the library.

Everything here is deliberately naive: explicit pair loops, direct
centroid recomputation, plain sorting.  None of it shares code with the
package, so agreement is evidence rather than tautology.
"""

import math

import numpy as np


def brute_weighted_tau(a, b):
    """O(n^2) pair-sum weighted Kendall tau: additive hyperbolic weights
    from the reference ranking's 0-based ranks (descending reference score,
    ties by descending other score then ascending index), tau-b style tie
    normalization, symmetric mean of both directions."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    n = len(a)

    def ranks(primary, secondary):
        order = sorted(range(n), key=lambda i: (-primary[i], -secondary[i], i))
        r = [0] * n
        for pos, i in enumerate(order):
            r[i] = pos
        return r

    def one_direction(x, y):
        r = ranks(x, y)
        num = den_x = den_y = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                w = 1.0 / (1.0 + r[i]) + 1.0 / (1.0 + r[j])
                dx = (x[i] > x[j]) - (x[i] < x[j])
                dy = (y[i] > y[j]) - (y[i] < y[j])
                num += w * dx * dy
                if dx != 0:
                    den_x += w
                if dy != 0:
                    den_y += w
        return num / math.sqrt(den_x * den_y)

    return (one_direction(a, b) + one_direction(b, a)) / 2.0


def brute_auc(labels, scores):
    """Exhaustive positive/negative pair enumeration; ties count 0.5."""
    pos = [s for lab, s in zip(labels, scores) if lab == 1]
    neg = [s for lab, s in zip(labels, scores) if lab == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_ward_merges(x, k):
    """O(n^3) Ward agglomeration recomputing every merge cost from cluster
    member lists and centroids; no Lance-Williams shortcut.  Returns
    (labels by first-row appearance, merge slot pairs)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    members = {i: [i] for i in range(n)}

    def cost(ci, cj):
        a = x[members[ci]]
        b = x[members[cj]]
        ca, cb = a.mean(axis=0), b.mean(axis=0)
        na, nb = len(members[ci]), len(members[cj])
        diff = ca - cb
        return (na * nb) / (na + nb) * float(diff @ diff)

    merges = []
    while len(members) > k:
        best = None
        for ci in sorted(members):
            for cj in sorted(members):
                if cj <= ci:
                    continue
                c = cost(ci, cj)
                if best is None or c < best[0] - 1e-12:
                    best = (c, ci, cj)
        _, ci, cj = best
        merges.append((ci, cj))
        members[ci] = members[ci] + members[cj]
        del members[cj]

    assignment = {}
    for ci, rows in members.items():
        for r in rows:
            assignment[r] = ci
    labels = np.empty(n, dtype=np.int64)
    seen = {}
    for r in range(n):
        labels[r] = seen.setdefault(assignment[r], len(seen))
    return labels, merges


def central_difference(fn, x0, h=1e-5):
    """Plain central finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        grad.flat[i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return grad


def sorted_quartiles(values):
    """(min, q25, median, q75, max) by direct nearest-rank indexing of the
    sorted sample."""
    vals = sorted(float(v) for v in values)
    m = len(vals)

    def at(p):
        return vals[max(1, math.ceil(p / 100.0 * m)) - 1]

    return vals[0], at(25), at(50), at(75), vals[-1]


def composed_affine_attribution(weights_per_view, fuse_w, out_w, fusion, x_views, bg_views):
    """Attribution of a purely affine multi-view stack: the end-to-end map
    per view is the product of its weight matrices times the fusion routing,
    so phi_i = W_total[i, c] * (x_i - mean_b b_i) exactly."""
    n_views = len(weights_per_view)
    phis = []
    for v in range(n_views):
        w_total = np.linalg.multi_dot(list(weights_per_view[v]))  # input -> embedding
        if fusion == "mean":
            route = fuse_w / n_views
        else:
            offset = sum(weights_per_view[u][-1].shape[1] for u in range(v))
            width = weights_per_view[v][-1].shape[1]
            route = fuse_w[offset:offset + width]
        w_end = w_total @ route @ out_w  # input -> logits
        diff = x_views[v] - bg_views[v].mean(axis=0)
        phis.append(diff[:, None, :] * w_end.T[None, :, :])  # (n, C, d)
    return phis
