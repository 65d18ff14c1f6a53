"""Graph traversal kernels.

The compiled extension ``_graphcore`` is used when it has been built;
otherwise the pure-Python implementation in ``_graphcore_py`` is used.
Set ``MVGAM_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _graphcore_py

if os.environ.get("MVGAM_PURE_PYTHON") == "1":
    _impl = _graphcore_py
    BACKEND = "python"
else:
    try:
        from . import _graphcore as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _graphcore_py
        BACKEND = "python"


def to_csr(A):
    """CSR arrays (indptr, indices, weights) of the off-diagonal nonzeros of A."""
    A = np.asarray(A, dtype=float)
    nz = A != 0
    np.fill_diagonal(nz, False)
    rows, cols = np.nonzero(nz)
    indptr = np.zeros(A.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=A.shape[0]), out=indptr[1:])
    return indptr, cols.astype(np.int64), A[rows, cols]


def shortest_path_distances(A, weighted=None, backend=None):
    """All-pairs shortest-path distances; ``inf`` between components.

    Binary graphs use hop counts. Weighted graphs use edge length 1/weight.
    ``weighted=None`` decides from the entries of A.
    """
    impl = _select(backend)
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    indptr, indices, w = to_csr(A)
    if weighted is None:
        weighted = not np.all(w == 1.0)
    if not weighted:
        return impl.bfs_all_pairs(indptr, indices, n)
    return impl.dijkstra_all_pairs(indptr, indices, 1.0 / w, n)


def connected_components(A, backend=None):
    """Component label per node (labels numbered by lowest member)."""
    impl = _select(backend)
    indptr, indices, _ = to_csr(A)
    return impl.connected_components(indptr, indices, np.asarray(A).shape[0])


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _graphcore_py
    if backend == "cython":
        from . import _graphcore
        return _graphcore
    raise ValueError(f"unknown backend {backend!r}")
