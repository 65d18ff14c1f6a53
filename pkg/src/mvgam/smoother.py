"""Penalty matrices and transductive smoothers built from views.

A transductive smoother is an n x n linear smoother S whose
unlabeled-by-unlabeled block satisfies rho(S_UU) < 1, which makes the
self-training fixed point unique.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import graphcore
from .errors import MvgamError, NotTransductiveError
from .views import FeatureView, Partition

DENSE_EIG_MAX = 200


@dataclass(frozen=True)
class KernelSpec:
    gamma: float
    distance: str = "euclidean"  # euclidean | cosine | shortest_path
    family: str = "exponential"

    def __post_init__(self):
        if self.distance == "cosine_dissimilarity":
            object.__setattr__(self, "distance", "cosine")
        if not self.gamma > 0:
            raise ValueError("kernel gamma must be positive")
        if self.family != "exponential":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if self.distance not in ("euclidean", "cosine", "shortest_path"):
            raise ValueError(f"unknown distance {self.distance!r}")

    def __call__(self, d):
        return np.exp(-np.asarray(d, dtype=float) / self.gamma)


@dataclass(frozen=True)
class TransductiveSmoother:
    S: np.ndarray
    partition: Partition
    rho_uu: float
    form_tag: str

    @classmethod
    def from_matrix(cls, S, partition: Partition, form_tag: str = "generic"):
        """Wrap ``S`` after checking rho(S_UU) < 1."""
        S = np.asarray(S, dtype=float)
        if S.shape != (partition.n, partition.n):
            raise ValueError(f"smoother shape {S.shape} does not match n={partition.n}")
        rho = spectral_radius_uu(S, partition)
        if not rho < 1.0:
            raise NotTransductiveError(
                f"not a transductive smoother: rho(S_UU) = {rho:.6g} >= 1; some "
                "unlabeled nodes cannot reach a label (try shortest_path_complete "
                "or label a node in every component)")
        return cls(S, partition, float(rho), form_tag)

    @property
    def blocks(self):
        return self.partition.blocks(self.S)


def pairwise_distances(X, metric: str = "euclidean") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if metric == "euclidean":
        sq = np.sum(X * X, axis=1)
        D2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
        D = np.sqrt(np.maximum(D2, 0.0))
        np.fill_diagonal(D, 0.0)
        return (D + D.T) / 2
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise MvgamError("cosine dissimilarity undefined for all-zero rows")
        Xn = X / norms[:, None]
        D = 1.0 - np.clip(Xn @ Xn.T, -1.0, 1.0)
        np.fill_diagonal(D, 0.0)
        return (D + D.T) / 2
    raise ValueError(f"unknown metric {metric!r}")


def kernel_weights(view, spec: KernelSpec) -> np.ndarray:
    """W_ij = exp(-d(x_i, x_j) / gamma) for a feature view or raw matrix."""
    X = view.data if isinstance(view, FeatureView) else view
    if spec.distance == "shortest_path":
        raise ValueError("use shortest_path_kernel for graph distances")
    D = pairwise_distances(X, "cosine" if spec.distance == "cosine" else "euclidean")
    if not np.all(np.isfinite(D)):
        raise MvgamError("non-finite distance between observations")
    return spec(D)


def knn_graph(W, k: int) -> np.ndarray:
    """Keep each node's k largest off-diagonal weights, symmetrized by max.

    Ties at the k-th weight go to the lower node index.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    key = W.copy()
    np.fill_diagonal(key, -np.inf)
    order = np.argsort(-key, axis=1, kind="stable")[:, :k]
    keep = np.zeros_like(W, dtype=bool)
    keep[np.arange(n)[:, None], order] = True
    kept = np.where(keep, W, 0.0)
    A = np.maximum(kept, kept.T)
    np.fill_diagonal(A, 0.0)
    return A


def combinatorial_laplacian(W) -> np.ndarray:
    """P = D - W with D the diagonal of row sums; diagonal entries of W cancel."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("weight matrix must be square")
    if not np.allclose(W, W.T, rtol=0, atol=1e-12 * max(1.0, np.abs(W).max(initial=0))):
        raise ValueError("weight matrix must be symmetric")
    if np.any(W < 0):
        raise ValueError("weight matrix must be nonnegative")
    return np.diag(W.sum(axis=1)) - W


def stochastic_smoother(A, partition: Partition) -> TransductiveSmoother:
    A = np.asarray(A, dtype=float)
    deg = A.sum(axis=1)
    zero = np.flatnonzero(deg <= 0)
    if zero.size:
        raise MvgamError(f"node {int(zero[0])} has zero degree; stochastic "
                         "smoother undefined")
    return TransductiveSmoother.from_matrix(A / deg[:, None], partition, "stochastic")


def regularized_smoother(A, lam: float, partition: Partition) -> TransductiveSmoother:
    """S = (A + lam P)^{-1} A."""
    S = regularized_matrix(A, lam)
    return TransductiveSmoother.from_matrix(S, partition, "regularized")


def regularized_matrix(A, lam: float) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    P = combinatorial_laplacian(A)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(A + lam * P, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise MvgamError(f"A + lambda P is singular ({exc})") from None
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.abs(lu[0]).max()):
        raise MvgamError("A + lambda P is singular")
    return sla.lu_solve(lu, A, check_finite=False)


def symmetric_smoother(P, lam: float, partition: Partition) -> TransductiveSmoother:
    """S = (I + lam P)^{-1}."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    S = symmetric_matrix(P, lam)
    return TransductiveSmoother.from_matrix(S, partition, "symmetric")


def symmetric_matrix(P, lam: float) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    try:
        c = sla.cho_factor(np.eye(n) + lam * P, check_finite=False)
    except sla.LinAlgError as exc:
        raise MvgamError(f"I + lambda P is not positive definite ({exc})") from None
    S = sla.cho_solve(c, np.eye(n), check_finite=False)
    return (S + S.T) / 2


def shortest_path_kernel(A, gamma: float, self_loops: bool = True,
                         weighted: bool | None = None) -> np.ndarray:
    """Exponential kernel on all-pairs shortest-path distances.

    Pairs in different components get weight 0. With ``self_loops`` the
    diagonal is K(0) = 1, otherwise 0.
    """
    D = graphcore.shortest_path_distances(A, weighted=weighted)
    W = KernelSpec(gamma, "shortest_path")(D)  # exp(-inf) == 0
    np.fill_diagonal(W, 1.0 if self_loops else 0.0)
    return W


def shortest_path_complete(A, kernel: KernelSpec, k: int | None = None) -> np.ndarray:
    """Complete graph on each component weighted by K(d_sp), optionally K-NN thinned."""
    A = np.asarray(A, dtype=float)
    if np.any(A < 0) or not np.allclose(A, A.T):
        raise ValueError("adjacency must be nonnegative and symmetric")
    W = shortest_path_kernel(A, kernel.gamma, self_loops=False)
    if k is not None:
        W = knn_graph(W, k)
    return W


def interaction_graph(W1, W2, op: str = "intersection") -> np.ndarray:
    W1, W2 = np.asarray(W1, dtype=float), np.asarray(W2, dtype=float)
    if W1.shape != W2.shape:
        raise ValueError(f"dimension mismatch {W1.shape} vs {W2.shape}")
    if op == "intersection":
        return np.sqrt(W1 * W2)
    if op == "union":
        return (W1 + W2) / 2
    raise ValueError(f"unknown interaction op {op!r}")


def spectral_radius(M, tol: float = 1e-10) -> float:
    """Largest eigenvalue modulus; dense for small matrices, ARPACK otherwise."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return 0.0
    if n <= DENSE_EIG_MAX:
        return _dense_radius(M)
    try:
        # a fixed positive start vector keeps the result deterministic
        vals = spla.eigs(M, k=1, which="LM", tol=tol, v0=np.ones(n),
                         return_eigenvectors=False)
    except spla.ArpackNoConvergence:
        return _dense_radius(M)
    rho = float(np.abs(vals[0]))
    return rho if np.isfinite(rho) else _dense_radius(M)


def _dense_radius(M) -> float:
    if np.array_equal(M, M.T):
        return float(np.max(np.abs(np.linalg.eigvalsh(M))))
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def spectral_radius_uu(S, partition: Partition) -> float:
    """rho(S_UU); 0 when every observation is labeled."""
    if not partition.unlabeled:
        return 0.0
    U = partition.U
    return spectral_radius(np.asarray(S)[np.ix_(U, U)])


def label_reachability(A, partition: Partition) -> dict:
    """Connectivity diagnostics of unlabeled nodes with respect to labels."""
    A = np.asarray(A, dtype=float)
    comp = graphcore.connected_components(A)
    L, U = partition.L, partition.U
    labeled_comps = set(comp[L].tolist())
    stranded = [int(u) for u in U if comp[u] not in labeled_comps]
    off = A.copy()
    np.fill_diagonal(off, 0.0)
    direct = (off[np.ix_(U, L)].sum(axis=1) > 0) if U.size else np.zeros(0, bool)
    return {
        "components": int(comp.max() + 1) if comp.size else 0,
        "unlabeled_without_label_in_component": stranded,
        "unlabeled_without_labeled_neighbor": int((~direct).sum()),
        "completion_repairs": not stranded,
    }
