"""Pure-Python graph kernels.

Reference implementations of the routines in ``_kernels.pyx``. They are
selected automatically when the compiled extension is unavailable, and the
test-suite checks both for agreement.

All functions take 0/1 adjacency matrices where ``adj[i, j] != 0`` means an
edge ``i -> j``.
"""
from __future__ import annotations

import numpy as np

_WHITE, _GRAY, _BLACK = 0, 1, 2


def has_cycle(adj: np.ndarray) -> bool:
    """Iterative depth-first search with three-colour marking."""
    d = adj.shape[0]
    children = [np.flatnonzero(adj[i]).tolist() for i in range(d)]
    color = [_WHITE] * d
    for root in range(d):
        if color[root] != _WHITE:
            continue
        stack = [(root, 0)]
        color[root] = _GRAY
        while stack:
            node, pos = stack[-1]
            kids = children[node]
            if pos < len(kids):
                stack[-1] = (node, pos + 1)
                nxt = kids[pos]
                if color[nxt] == _GRAY:
                    return True
                if color[nxt] == _WHITE:
                    color[nxt] = _GRAY
                    stack.append((nxt, 0))
            else:
                color[node] = _BLACK
                stack.pop()
    return False


def descendants(adj: np.ndarray) -> np.ndarray:
    """Boolean reachability matrix; ``R[i, j]`` iff j is reachable from i (R[i, i] is True)."""
    d = adj.shape[0]
    children = [np.flatnonzero(adj[i]).tolist() for i in range(d)]
    reach = np.zeros((d, d), dtype=bool)
    for src in range(d):
        seen = reach[src]
        seen[src] = True
        stack = [src]
        while stack:
            node = stack.pop()
            for c in children[node]:
                if not seen[c]:
                    seen[c] = True
                    stack.append(c)
    return reach


def _ancestors_of(parents: list[list[int]], zmask: np.ndarray) -> list[bool]:
    d = len(parents)
    anc = [False] * d
    stack = [k for k in range(d) if zmask[k]]
    for k in stack:
        anc[k] = True
    while stack:
        node = stack.pop()
        for p in parents[node]:
            if not anc[p]:
                anc[p] = True
                stack.append(p)
    return anc


def _reaches(
    parents: list[list[int]],
    children: list[list[int]],
    src: int,
    dst: int,
    zmask: np.ndarray,
    anc: list[bool],
    cut_children: np.ndarray | None = None,
) -> bool:
    # Active-trail search over (node, direction) states; direction 0 = arrived
    # from a child (moving up), 1 = arrived from a parent (moving down).
    # ``cut_children`` masks out edges src -> v.
    d = len(parents)
    visited = [[False, False] for _ in range(d)]
    stack = [(src, 0)]
    while stack:
        node, direction = stack.pop()
        if visited[node][direction]:
            continue
        visited[node][direction] = True
        if node == dst and not zmask[node]:
            return True
        in_z = bool(zmask[node])
        kids = children[node]
        if node == src and cut_children is not None:
            kids = [c for c in kids if not cut_children[c]]
        pars = parents[node]
        if cut_children is not None and cut_children[node]:
            pars = [p for p in pars if p != src]
        if direction == 0 and not in_z:
            for p in pars:
                stack.append((p, 0))
            for c in kids:
                stack.append((c, 1))
        elif direction == 1:
            if not in_z:
                for c in kids:
                    stack.append((c, 1))
            if anc[node]:
                for p in pars:
                    stack.append((p, 0))
    return False


def d_separated(adj: np.ndarray, i: int, j: int, zmask: np.ndarray) -> bool:
    d = adj.shape[0]
    parents = [np.flatnonzero(adj[:, k]).tolist() for k in range(d)]
    children = [np.flatnonzero(adj[k]).tolist() for k in range(d)]
    anc = _ancestors_of(parents, zmask)
    return not _reaches(parents, children, i, j, zmask, anc)


def sid_count(truth: np.ndarray, est: np.ndarray) -> int:
    """Structural intervention distance between two acyclic 0/1 matrices."""
    d = truth.shape[0]
    desc = descendants(truth)
    parents = [np.flatnonzero(truth[:, k]).tolist() for k in range(d)]
    children = [np.flatnonzero(truth[k]).tolist() for k in range(d)]
    est = est != 0
    count = 0
    for i in range(d):
        zmask = est[:, i].copy()
        anc = _ancestors_of(parents, zmask)
        for j in range(d):
            if j == i:
                continue
            if zmask[j]:
                # the estimate claims j causes i, so it predicts no effect of i on j
                if desc[i, j]:
                    count += 1
                continue
            on_path = desc[i] & desc[:, j]
            on_path[i] = False
            if on_path.any():
                forbidden = desc[on_path].any(axis=0)
                if (forbidden & zmask).any():
                    count += 1
                    continue
            if _reaches(parents, children, i, j, zmask, anc, cut_children=on_path):
                count += 1
    return count
