"""Deliberately naive reference implementations used as test oracles.

None of these share code with the package; they trade speed for being
obviously correct.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def neighbour_offsets(connectivity):
    offs = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        if d == (0, 0, 0):
            continue
        if connectivity == 6 and sum(map(abs, d)) != 1:
            continue
        offs.append(d)
    return offs


def flood_fill_components(mask, connectivity):
    """List of voxel sets, one per connected component (stack-based flood fill)."""
    mask = np.asarray(mask, dtype=bool)
    Z, Y, X = mask.shape
    true = set(map(tuple, np.argwhere(mask).tolist()))
    offs = neighbour_offsets(connectivity)
    seen = set()
    comps = []
    for start in sorted(true):
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        stack = [start]
        while stack:
            z, y, x = stack.pop()
            for dz, dy, dx in offs:
                n = (z + dz, y + dy, x + dx)
                if n in true and n not in seen:
                    seen.add(n)
                    comp.add(n)
                    stack.append(n)
        comps.append(frozenset(comp))
    return comps


def partition_of(labels):
    """Label array -> set of frozensets of voxel coordinates."""
    out = {}
    for idx in np.argwhere(labels > 0).tolist():
        out.setdefault(int(labels[tuple(idx)]), set()).add(tuple(idx))
    return {frozenset(v) for v in out.values()}


def otsu_exhaustive(values):
    """Smallest t in 0..255 maximising between-class variance of {<= t} vs {> t}; None if degenerate."""
    vals = [int(v) for v in np.asarray(values).ravel()]
    n = len(vals)
    best_t, best_var = None, -1.0
    for t in range(256):
        c0 = [v for v in vals if v <= t]
        c1 = [v for v in vals if v > t]
        if not c0 or not c1:
            continue
        w0, w1 = len(c0) / n, len(c1) / n
        m0, m1 = sum(c0) / len(c0), sum(c1) / len(c1)
        var = w0 * w1 * (m0 - m1) ** 2
        if var > best_var:
            best_t, best_var = t, var
    return best_t


def min_distance_brute(point, voxels):
    p = np.asarray(point, dtype=float)
    best = math.inf
    for v in voxels:
        best = min(best, math.dist(p, v))
    return best


def tree_walk(tree_dict, row):
    """Evaluate one flattened tree by following child pointers one node at a time."""
    node = 0
    while tree_dict["feature"][node] != -1:
        f = tree_dict["feature"][node]
        if row[f] <= tree_dict["threshold"][node]:
            node = tree_dict["left"][node]
        else:
            node = tree_dict["right"][node]
    return tree_dict["value"][node]


def ensemble_walk(model_dict, row):
    total = 0.0
    for t in model_dict["trees"]:
        total += tree_walk(t, row)
    return model_dict["base_prediction"] + model_dict["learning_rate"] * total


def sort_rank_percentiles(column):
    """Average-rank percentile by explicit sorting and tie grouping."""
    col = list(column)
    n = len(col)
    if n == 1:
        return [0.5]
    order = sorted(range(n), key=lambda i: col[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and col[order[j + 1]] == col[order[i]]:
            j += 1
        avg = (i + j) / 2.0  # zero-based average rank
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return [r / (n - 1) for r in ranks]


def shapley_by_permutations(value_fn, m):
    """Shapley values by averaging marginal contributions over all m! orderings."""
    phi = [0.0] * m
    perms = list(itertools.permutations(range(m)))
    for perm in perms:
        coalition = frozenset()
        for i in perm:
            phi[i] += value_fn(coalition | {i}) - value_fn(coalition)
            coalition = coalition | {i}
    return [p / len(perms) for p in phi]
