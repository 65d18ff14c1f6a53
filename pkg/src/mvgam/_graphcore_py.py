"""Pure-Python twins of the compiled graph kernels (same signatures)."""
import heapq
from collections import deque

import numpy as np


def bfs_all_pairs(indptr, indices, n):
    dist = np.full((n, n), np.inf)
    indptr, indices = indptr.tolist(), indices.tolist()
    for src in range(n):
        row = [-1] * n
        row[src] = 0
        queue = deque([src])
        while queue:
            v = queue.popleft()
            dv = row[v] + 1
            for w in indices[indptr[v]:indptr[v + 1]]:
                if row[w] < 0:
                    row[w] = dv
                    queue.append(w)
        r = np.array(row, dtype=float)
        r[r < 0] = np.inf
        dist[src] = r
    return dist


def dijkstra_all_pairs(indptr, indices, lengths, n):
    dist = np.full((n, n), np.inf)
    indptr, indices, lengths = indptr.tolist(), indices.tolist(), lengths.tolist()
    inf = float("inf")
    for src in range(n):
        row = [inf] * n
        row[src] = 0.0
        heap = [(0.0, src)]
        while heap:
            d, v = heapq.heappop(heap)
            if d > row[v]:
                continue
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                nd = d + lengths[e]
                if nd < row[w]:
                    row[w] = nd
                    heapq.heappush(heap, (nd, w))
        dist[src] = row
    return dist


def connected_components(indptr, indices, n):
    comp = [-1] * n
    indptr, indices = indptr.tolist(), indices.tolist()
    label = 0
    for start in range(n):
        if comp[start] >= 0:
            continue
        comp[start] = label
        stack = [start]
        while stack:
            v = stack.pop()
            for w in indices[indptr[v]:indptr[v + 1]]:
                if comp[w] < 0:
                    comp[w] = label
                    stack.append(w)
        label += 1
    return np.array(comp, dtype=np.int64)
