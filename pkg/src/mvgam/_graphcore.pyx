# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled all-pairs shortest paths and connected components on CSR graphs."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


def bfs_all_pairs(const cnp.int64_t[:] indptr, const cnp.int64_t[:] indices, Py_ssize_t n):
    cdef double[:, ::1] dist = np.full((n, n), np.inf)
    cdef cnp.int64_t[::1] queue = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t src, head, tail, v, e
    cdef cnp.int64_t w
    cdef double dv
    for src in range(n):
        dist[src, src] = 0.0
        queue[0] = src
        head = 0
        tail = 1
        while head < tail:
            v = queue[head]
            head += 1
            dv = dist[src, v] + 1.0
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                if dist[src, w] == INFINITY:
                    dist[src, w] = dv
                    queue[tail] = w
                    tail += 1
    return np.asarray(dist)


cdef inline void _sift_down(double* key, cnp.int64_t* node, Py_ssize_t size, Py_ssize_t i) nogil:
    cdef Py_ssize_t child
    cdef double tk
    cdef cnp.int64_t tn
    while True:
        child = 2 * i + 1
        if child >= size:
            return
        if child + 1 < size and key[child + 1] < key[child]:
            child += 1
        if key[child] >= key[i]:
            return
        tk = key[i]; key[i] = key[child]; key[child] = tk
        tn = node[i]; node[i] = node[child]; node[child] = tn
        i = child


cdef inline void _sift_up(double* key, cnp.int64_t* node, Py_ssize_t i) nogil:
    cdef Py_ssize_t parent
    cdef double tk
    cdef cnp.int64_t tn
    while i > 0:
        parent = (i - 1) // 2
        if key[parent] <= key[i]:
            return
        tk = key[i]; key[i] = key[parent]; key[parent] = tk
        tn = node[i]; node[i] = node[parent]; node[parent] = tn
        i = parent


def dijkstra_all_pairs(const cnp.int64_t[:] indptr, const cnp.int64_t[:] indices,
                       const double[:] lengths, Py_ssize_t n):
    cdef double[:, ::1] dist = np.full((n, n), np.inf)
    cdef Py_ssize_t nnz = indices.shape[0]
    cdef Py_ssize_t cap = nnz + n + 1
    cdef double* hkey = <double*> malloc(cap * sizeof(double))
    cdef cnp.int64_t* hnode = <cnp.int64_t*> malloc(cap * sizeof(cnp.int64_t))
    cdef Py_ssize_t src, size, e
    cdef cnp.int64_t v, w
    cdef double d, nd
    if hkey == NULL or hnode == NULL:
        free(hkey); free(hnode)
        raise MemoryError()
    try:
        with nogil:
            for src in range(n):
                dist[src, src] = 0.0
                hkey[0] = 0.0
                hnode[0] = src
                size = 1
                while size > 0:
                    d = hkey[0]
                    v = hnode[0]
                    size -= 1
                    hkey[0] = hkey[size]
                    hnode[0] = hnode[size]
                    _sift_down(hkey, hnode, size, 0)
                    if d > dist[src, v]:
                        continue
                    for e in range(indptr[v], indptr[v + 1]):
                        w = indices[e]
                        nd = d + lengths[e]
                        if nd < dist[src, w]:
                            dist[src, w] = nd
                            hkey[size] = nd
                            hnode[size] = w
                            _sift_up(hkey, hnode, size)
                            size += 1
    finally:
        free(hkey)
        free(hnode)
    return np.asarray(dist)


def connected_components(const cnp.int64_t[:] indptr, const cnp.int64_t[:] indices, Py_ssize_t n):
    cdef cnp.int64_t[::1] comp = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] stack = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t start, top, v, e
    cdef cnp.int64_t w, label = 0
    for start in range(n):
        if comp[start] >= 0:
            continue
        comp[start] = label
        stack[0] = start
        top = 1
        while top > 0:
            top -= 1
            v = stack[top]
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                if comp[w] < 0:
                    comp[w] = label
                    stack[top] = w
                    top += 1
        label += 1
    return np.asarray(comp)
