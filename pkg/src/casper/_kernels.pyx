# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled graph kernels: cycle detection, reachability, d-separation, SID.

Inputs are C-contiguous uint8 adjacency matrices (``adj[i, j] = 1`` for
``i -> j``). ``casper.kernels`` handles the conversion.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def has_cycle(const cnp.uint8_t[:, ::1] adj):
    cdef Py_ssize_t d = adj.shape[0]
    cdef cnp.uint8_t[::1] color = np.zeros(d, dtype=np.uint8)
    cdef Py_ssize_t[::1] stack = np.empty(d, dtype=np.intp)
    cdef Py_ssize_t[::1] pos = np.empty(d, dtype=np.intp)
    cdef Py_ssize_t root, top, node, nxt
    for root in range(d):
        if color[root] != 0:
            continue
        top = 0
        stack[0] = root
        pos[0] = 0
        color[root] = 1
        while top >= 0:
            node = stack[top]
            nxt = pos[top]
            while nxt < d and adj[node, nxt] == 0:
                nxt += 1
            if nxt < d:
                pos[top] = nxt + 1
                if color[nxt] == 1:
                    return True
                if color[nxt] == 0:
                    color[nxt] = 1
                    top += 1
                    stack[top] = nxt
                    pos[top] = 0
            else:
                color[node] = 2
                top -= 1
    return False


cdef void _fill_descendants(const cnp.uint8_t[:, ::1] adj,
                            cnp.uint8_t[:, ::1] reach,
                            Py_ssize_t[::1] stack) nogil:
    cdef Py_ssize_t d = adj.shape[0]
    cdef Py_ssize_t src, top, node, c
    for src in range(d):
        reach[src, src] = 1
        top = 0
        stack[0] = src
        while top >= 0:
            node = stack[top]
            top -= 1
            for c in range(d):
                if adj[node, c] and not reach[src, c]:
                    reach[src, c] = 1
                    top += 1
                    stack[top] = c


def descendants(const cnp.uint8_t[:, ::1] adj):
    cdef Py_ssize_t d = adj.shape[0]
    reach_arr = np.zeros((d, d), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] reach = reach_arr
    cdef Py_ssize_t[::1] stack = np.empty(d * d + 1, dtype=np.intp)
    _fill_descendants(adj, reach, stack)
    return reach_arr.astype(bool)


cdef void _ancestors(const cnp.uint8_t[:, ::1] adj,
                     const cnp.uint8_t[::1] zmask,
                     cnp.uint8_t[::1] anc,
                     Py_ssize_t[::1] stack) nogil:
    cdef Py_ssize_t d = adj.shape[0]
    cdef Py_ssize_t k, top = -1, node, p
    for k in range(d):
        anc[k] = zmask[k]
        if zmask[k]:
            top += 1
            stack[top] = k
    while top >= 0:
        node = stack[top]
        top -= 1
        for p in range(d):
            if adj[p, node] and not anc[p]:
                anc[p] = 1
                top += 1
                stack[top] = p


cdef bint _reaches(const cnp.uint8_t[:, ::1] adj,
                   Py_ssize_t src, Py_ssize_t dst,
                   const cnp.uint8_t[::1] zmask,
                   const cnp.uint8_t[::1] anc,
                   const cnp.uint8_t[::1] cut,
                   bint use_cut,
                   cnp.uint8_t[:, ::1] visited,
                   Py_ssize_t[::1] stack) nogil:
    # states are encoded as 2 * node + direction; 0 = moving up, 1 = moving down
    cdef Py_ssize_t d = adj.shape[0]
    cdef Py_ssize_t top = 0, state, node, direction, k
    cdef bint in_z, blocked
    for k in range(d):
        visited[k, 0] = 0
        visited[k, 1] = 0
    stack[0] = 2 * src
    while top >= 0:
        state = stack[top]
        top -= 1
        node = state >> 1
        direction = state & 1
        if visited[node, direction]:
            continue
        visited[node, direction] = 1
        if node == dst and not zmask[node]:
            return True
        in_z = zmask[node] != 0
        if (direction == 0 and not in_z) or (direction == 1 and anc[node]):
            for k in range(d):
                if adj[k, node]:
                    if use_cut and k == src and cut[node]:
                        continue
                    if not visited[k, 0]:
                        top += 1
                        stack[top] = 2 * k
        if not in_z:
            for k in range(d):
                if adj[node, k]:
                    if use_cut and node == src and cut[k]:
                        continue
                    if not visited[k, 1]:
                        top += 1
                        stack[top] = 2 * k + 1
    return False


def d_separated(const cnp.uint8_t[:, ::1] adj, Py_ssize_t i, Py_ssize_t j,
                const cnp.uint8_t[::1] zmask):
    cdef Py_ssize_t d = adj.shape[0]
    cdef cnp.uint8_t[::1] anc = np.zeros(d, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] visited = np.zeros((d, 2), dtype=np.uint8)
    cdef Py_ssize_t[::1] stack = np.empty(4 * d * d + 4, dtype=np.intp)
    cdef cnp.uint8_t[::1] cut = np.zeros(d, dtype=np.uint8)
    cdef bint reached
    with nogil:
        _ancestors(adj, zmask, anc, stack)
        reached = _reaches(adj, i, j, zmask, anc, cut, False, visited, stack)
    return not reached


def sid_count(const cnp.uint8_t[:, ::1] truth, const cnp.uint8_t[:, ::1] est):
    cdef Py_ssize_t d = truth.shape[0]
    cdef cnp.uint8_t[:, ::1] desc = np.zeros((d, d), dtype=np.uint8)
    cdef cnp.uint8_t[::1] zmask = np.zeros(d, dtype=np.uint8)
    cdef cnp.uint8_t[::1] anc = np.zeros(d, dtype=np.uint8)
    cdef cnp.uint8_t[::1] cut = np.zeros(d, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] visited = np.zeros((d, 2), dtype=np.uint8)
    cdef Py_ssize_t[::1] stack = np.empty(4 * d * d + 4, dtype=np.intp)
    cdef Py_ssize_t i, j, v, z, count = 0
    cdef bint any_cut, bad
    with nogil:
        _fill_descendants(truth, desc, stack)
        for i in range(d):
            for v in range(d):
                zmask[v] = 1 if est[v, i] else 0
            _ancestors(truth, zmask, anc, stack)
            for j in range(d):
                if j == i:
                    continue
                if zmask[j]:
                    if desc[i, j]:
                        count += 1
                    continue
                any_cut = False
                for v in range(d):
                    cut[v] = 1 if (v != i and desc[i, v] and desc[v, j]) else 0
                    if cut[v]:
                        any_cut = True
                bad = False
                if any_cut:
                    for z in range(d):
                        if not zmask[z]:
                            continue
                        for v in range(d):
                            if cut[v] and desc[v, z]:
                                bad = True
                                break
                        if bad:
                            break
                if bad:
                    count += 1
                    continue
                if _reaches(truth, i, j, zmask, anc, cut, any_cut, visited, stack):
                    count += 1
    return count
