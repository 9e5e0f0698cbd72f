"""Slow, direct reference implementations used to check the fast metrics."""
import itertools

import numpy as np


def simple_paths(G, i, j):
    """All simple paths between ``i`` and ``j`` in the skeleton of ``G``."""
    G = np.asarray(G) != 0
    skel = G | G.T
    out = []

    def walk(path):
        last = path[-1]
        if last == j:
            out.append(list(path))
            return
        for nxt in np.flatnonzero(skel[last]):
            if nxt not in path:
                path.append(int(nxt))
                walk(path)
                path.pop()

    walk([i])
    return out


def descendants(G, v):
    G = np.asarray(G) != 0
    seen = {v}
    stack = [v]
    while stack:
        u = stack.pop()
        for c in np.flatnonzero(G[u]):
            if c not in seen:
                seen.add(int(c))
                stack.append(int(c))
    return seen


def path_blocked(G, path, Z):
    G = np.asarray(G) != 0
    Z = set(Z)
    for a, b, c in zip(path, path[1:], path[2:]):
        collider = G[a, b] and G[c, b]
        if collider:
            if not (descendants(G, b) & Z):
                return True
        elif b in Z:
            return True
    return False


def d_separated(G, i, j, Z):
    return all(path_blocked(G, p, Z) for p in simple_paths(G, i, j))


def is_directed(G, path):
    G = np.asarray(G) != 0
    return all(G[a, b] for a, b in zip(path, path[1:]))


def valid_adjustment(G, i, j, Z):
    """Generalised adjustment criterion for a single treatment ``i`` and outcome ``j``.

    ``Z`` must avoid every descendant of a non-treatment node on a directed
    path from ``i`` to ``j``, and must block every non-directed path.
    """
    paths = simple_paths(G, i, j)
    forbidden = set()
    for p in paths:
        if is_directed(G, p):
            for v in p[1:]:
                forbidden |= descendants(G, v)
    if set(Z) & forbidden:
        return False
    return all(path_blocked(G, p, Z) for p in paths if not is_directed(G, p))


def sid(truth, estimate):
    T = np.asarray(truth) != 0
    E = np.asarray(estimate) != 0
    d = T.shape[0]
    count = 0
    for i, j in itertools.permutations(range(d), 2):
        Z = set(np.flatnonzero(E[:, i]).tolist())
        if j in Z:
            # adjusting on the outcome predicts no effect at all
            wrong = j in descendants(T, i)
        else:
            wrong = not valid_adjustment(T, i, j, Z)
        count += wrong
    return count


def pair_accounting(truth, estimate):
    """SHD, correct edges, predicted edges and truth edges by walking every pair."""
    T = np.asarray(truth) != 0
    E = np.asarray(estimate) != 0
    d = T.shape[0]
    shd = 0
    for a, b in itertools.combinations(range(d), 2):
        if (T[a, b], T[b, a]) != (E[a, b], E[b, a]):
            shd += 1
    correct = sum(1 for a, b in itertools.permutations(range(d), 2) if T[a, b] and E[a, b])
    return shd, correct, int(E.sum()), int(T.sum())


def random_dag(d, p, rng):
    order = rng.permutation(d)
    upper = np.triu(rng.random((d, d)) < p, k=1).astype(int)
    adj = np.zeros((d, d), dtype=int)
    adj[np.ix_(order, order)] = upper
    return adj
