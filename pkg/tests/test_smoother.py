import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mvgam.errors import MvgamError, NotTransductiveError
from mvgam.smoother import (KernelSpec, TransductiveSmoother, combinatorial_laplacian,
                            interaction_graph, kernel_weights, knn_graph, label_reachability,
                            pairwise_distances, regularized_smoother, shortest_path_complete,
                            spectral_radius, spectral_radius_uu, stochastic_smoother,
                            symmetric_smoother)
from mvgam.views import FeatureView, Partition

PATH = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


def random_weights(rng, n, density=0.6):
    W = rng.random((n, n)) * (rng.random((n, n)) < density)
    W = np.triu(W, 1)
    return W + W.T


weights_strategy = st.integers(2, 12).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 5))
).map(lambda M: np.triu(M, 1) + np.triu(M, 1).T)


# --- kernel weights -------------------------------------------------------

def test_kernel_distance_zero_and_gamma():
    fv = FeatureView("X", np.array([[0.0], [2.0], [0.0]]), ("x",), ("a", "b", "c"))
    W = kernel_weights(fv, KernelSpec(2.0))
    assert W[0, 0] == 1.0
    assert W[0, 1] == pytest.approx(math.exp(-1), abs=1e-15)
    assert W[0, 2] == 1.0  # identical rows
    np.testing.assert_array_equal(W, W.T)


def test_kernel_spec_rejects_bad_gamma():
    with pytest.raises(ValueError):
        KernelSpec(0.0)


def test_cosine_distance_matches_definition():
    rng = np.random.default_rng(0)
    X = rng.random((5, 3)) + 0.1
    D = pairwise_distances(X, "cosine")
    i, j = 1, 3
    expect = 1 - X[i] @ X[j] / (np.linalg.norm(X[i]) * np.linalg.norm(X[j]))
    assert D[i, j] == pytest.approx(expect, abs=1e-12)
    assert KernelSpec(1.0, "cosine_dissimilarity").distance == "cosine"


def test_euclidean_distance_matches_brute_force():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 4))
    D = pairwise_distances(X)
    brute = np.array([[np.linalg.norm(a - b) for b in X] for a in X])
    np.testing.assert_allclose(D, brute, atol=1e-12)


# --- K-NN ----------------------------------------------------------------

def test_knn_worked_example():
    W = np.array([[0, .9, .1], [.9, 0, .5], [.1, .5, 0]])
    np.testing.assert_array_equal(knn_graph(W, 1), [[0, .9, 0], [.9, 0, .5], [0, .5, 0]])


def test_knn_all_neighbors():
    rng = np.random.default_rng(2)
    W = random_weights(rng, 5)
    np.fill_diagonal(W, 1.0)
    expect = W.copy()
    np.fill_diagonal(expect, 0.0)
    np.testing.assert_array_equal(knn_graph(W, 4), expect)


def test_knn_tie_lower_index():
    W = np.array([[0, 1, 1, 1], [1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]], dtype=float)
    A = knn_graph(W, 1)
    # node 0 ties among 1, 2, 3 and keeps 1; nodes 1..3 each keep 0
    assert A[0].tolist() == [0, 1, 1, 1]
    # all-equal weights: every node keeps its lowest-index neighbor
    A2 = knn_graph(np.ones((3, 3)), 1)
    assert A2.tolist() == [[0, 1, 1], [1, 0, 0], [1, 0, 0]]


def test_knn_range():
    with pytest.raises(ValueError):
        knn_graph(np.ones((3, 3)), 3)
    with pytest.raises(ValueError):
        knn_graph(np.ones((3, 3)), 0)


# --- Laplacian ------------------------------------------------------------

def test_laplacian_path():
    np.testing.assert_array_equal(combinatorial_laplacian(PATH),
                                  [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_laplacian_zero():
    np.testing.assert_array_equal(combinatorial_laplacian(np.zeros((3, 3))), np.zeros((3, 3)))


def test_laplacian_asymmetric():
    with pytest.raises(ValueError):
        combinatorial_laplacian(np.array([[0, 1], [0, 0]], dtype=float))


@settings(max_examples=60, deadline=None)
@given(weights_strategy, st.integers(0, 2**32 - 1))
def test_laplacian_quadratic_form(W, seed):
    P = combinatorial_laplacian(W)
    x = np.random.default_rng(seed).normal(size=W.shape[0])
    n = W.shape[0]
    brute = sum(W[i, j] * (x[i] - x[j]) ** 2 for i in range(n) for j in range(i + 1, n))
    assert x @ P @ x == pytest.approx(brute, rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(P @ np.ones(n), 0, atol=1e-10)
    assert np.linalg.eigvalsh(P).min() >= -1e-10 * max(1, np.abs(P).max())


def test_laplacian_self_loop_cancels():
    W = PATH.copy()
    W[0, 0] = 5.0
    np.testing.assert_array_equal(combinatorial_laplacian(W), combinatorial_laplacian(PATH))


# --- stochastic ------------------------------------------------------------

def test_stochastic_path():
    part = Partition.from_labeled([0], 3)
    S = stochastic_smoother(PATH, part)
    np.testing.assert_array_equal(S.S, [[0, 1, 0], [.5, 0, .5], [0, 1, 0]])
    assert S.rho_uu == pytest.approx(math.sqrt(0.5), abs=1e-12)
    assert S.form_tag == "stochastic"


def test_stochastic_isolated_node():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 1
    with pytest.raises(MvgamError, match="node 2"):
        stochastic_smoother(A, Partition.from_labeled([0], 3))


def test_stochastic_not_transductive():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = 1
    with pytest.raises(NotTransductiveError, match="shortest_path_complete"):
        stochastic_smoother(A, Partition.from_labeled([0], 4))


@settings(max_examples=40, deadline=None)
@given(weights_strategy)
def test_stochastic_rows(W):
    W = W + np.eye(W.shape[0])  # guarantee positive degree
    S = W / W.sum(axis=1, keepdims=True)
    assert np.all(S >= 0)
    np.testing.assert_allclose(S.sum(axis=1), 1, atol=1e-12)
    part = Partition.from_labeled(range(W.shape[0]), W.shape[0])
    np.testing.assert_allclose(stochastic_smoother(W, part).S.sum(axis=1), 1, atol=1e-12)


# --- regularized / symmetric ---------------------------------------------

def test_regularized_two_node():
    A = np.array([[0, 1], [1, 0]], dtype=float)
    S = regularized_smoother(A, 1.0, Partition.from_labeled([0], 2))
    np.testing.assert_allclose(S.S, A, atol=1e-14)


def test_regularized_small_lambda_identity():
    rng = np.random.default_rng(4)
    A = random_weights(rng, 5, 1.0) + 3 * np.eye(5)  # invertible
    S = regularized_smoother(A, 1e-9, Partition.from_labeled(range(5), 5))
    np.testing.assert_allclose(S.S, np.eye(5), atol=1e-6)


@pytest.mark.parametrize("lam", [0.01, 0.3, 1.0, 7.0])
def test_regularized_rows_sum_to_one(lam):
    rng = np.random.default_rng(int(lam * 100))
    A = random_weights(rng, 8, 1.0)
    S = regularized_smoother(A, lam, Partition.from_labeled(range(8), 8))
    np.testing.assert_allclose(S.S @ np.ones(8), 1, atol=1e-10)


def test_regularized_singular():
    with pytest.raises(MvgamError, match="singular"):
        regularized_smoother(np.zeros((3, 3)), 1.0, Partition.from_labeled([0], 3))


def test_symmetric_two_node():
    P = np.array([[1, -1], [-1, 1]], dtype=float)
    S = symmetric_smoother(P, 1.0, Partition.from_labeled([0], 2))
    np.testing.assert_allclose(S.S, np.array([[2, 1], [1, 2]]) / 3, atol=1e-14)


def test_symmetric_zero_penalty():
    S = symmetric_smoother(np.zeros((3, 3)), 2.0, Partition.from_labeled(range(3), 3))
    np.testing.assert_allclose(S.S, np.eye(3), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(weights_strategy, st.floats(0.01, 100))
def test_symmetric_eigenvalues(W, lam):
    P = combinatorial_laplacian(W)
    n = W.shape[0]
    S = symmetric_smoother(P, lam, Partition.from_labeled(range(n), n)).S
    ev = np.linalg.eigvalsh(S)
    assert ev.min() > 0 and ev.max() <= 1 + 1e-10
    np.testing.assert_allclose(S, S.T, atol=1e-14)


def test_symmetric_lambda_positive():
    with pytest.raises(ValueError):
        symmetric_smoother(np.zeros((2, 2)), 0.0, Partition.from_labeled([0], 2))


# --- shortest-path completion ---------------------------------------------

def test_completion_path():
    W = shortest_path_complete(PATH, KernelSpec(1.0, "shortest_path"))
    assert W[0, 2] == pytest.approx(math.exp(-2), abs=1e-15)
    assert W[0, 1] == pytest.approx(math.exp(-1), abs=1e-15)
    assert np.all(np.diag(W) == 0)


def test_completion_complete_component():
    A = np.ones((3, 3)) - np.eye(3)
    W = shortest_path_complete(A, KernelSpec(2.0, "shortest_path"))
    np.testing.assert_allclose(W, math.exp(-0.5) * A, atol=1e-15)


def test_completion_repairs_two_components():
    A = np.zeros((6, 6))
    for i, j in [(0, 1), (1, 2), (3, 4), (4, 5)]:
        A[i, j] = A[j, i] = 1
    part = Partition.from_labeled([0, 5], 6)
    W = shortest_path_complete(A, KernelSpec(1.0, "shortest_path"))
    assert W[0, 3] == 0.0  # cross-component stays 0
    S = stochastic_smoother(W, part)
    assert S.rho_uu < 1
    rep = label_reachability(A, part)
    assert rep["components"] == 2 and rep["completion_repairs"]
    assert rep["unlabeled_without_labeled_neighbor"] == 2


def test_completion_weighted_lengths():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 2.0   # length 0.5
    A[1, 2] = A[2, 1] = 0.5   # length 2
    W = shortest_path_complete(A, KernelSpec(1.0, "shortest_path"))
    assert W[0, 2] == pytest.approx(math.exp(-2.5), abs=1e-15)


def test_completion_knn_thinning():
    A = np.zeros((5, 5))
    for i in range(4):
        A[i, i + 1] = A[i + 1, i] = 1
    W = shortest_path_complete(A, KernelSpec(1.0, "shortest_path"), k=1)
    assert np.count_nonzero(W[2]) <= 2 and W[0, 4] == 0


def test_reachability_stranded():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = 1
    rep = label_reachability(A, Partition.from_labeled([0], 4))
    assert rep["unlabeled_without_label_in_component"] == [2, 3]
    assert not rep["completion_repairs"]


# --- interaction -----------------------------------------------------------

def test_interaction_examples():
    W1 = np.array([[0, 4], [4, 0]], dtype=float)
    W2 = np.array([[0, 1], [1, 0]], dtype=float)
    np.testing.assert_array_equal(interaction_graph(W1, W2, "intersection"), [[0, 2], [2, 0]])
    np.testing.assert_array_equal(interaction_graph(W1, W2, "union"), [[0, 2.5], [2.5, 0]])
    np.testing.assert_array_equal(interaction_graph(W1, 0 * W2), np.zeros((2, 2)))


def test_interaction_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        interaction_graph(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(weights_strategy, st.integers(0, 2**32 - 1))
def test_intersection_le_union(W1, seed):
    rng = np.random.default_rng(seed)
    W2 = random_weights(rng, W1.shape[0], 0.7) * 5
    assert np.all(interaction_graph(W1, W2, "intersection")
                  <= interaction_graph(W1, W2, "union") + 1e-12)


# --- spectral radius -------------------------------------------------------

def test_radius_examples():
    assert spectral_radius(np.array([[0, .5], [1, 0]])) == pytest.approx(math.sqrt(.5), abs=1e-12)
    assert spectral_radius(np.zeros((3, 3))) == 0.0
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0)
    with pytest.raises(NotTransductiveError):
        TransductiveSmoother.from_matrix(np.eye(3), Partition.from_labeled([0], 3))


def test_radius_fully_labeled_is_zero():
    assert spectral_radius_uu(np.eye(3), Partition.from_labeled(range(3), 3)) == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_iterative_radius_matches_dense(seed):
    rng = np.random.default_rng(seed)
    n = 260
    W = random_weights(rng, n, 0.05) + np.eye(n) * 0.1
    S = W / W.sum(axis=1, keepdims=True)
    M = S[10:, 10:]
    dense = np.max(np.abs(np.linalg.eigvals(M)))
    assert M.shape[0] > 200  # exercises the iterative path
    assert spectral_radius(M) == pytest.approx(dense, rel=1e-6)


def test_iterative_radius_bipartite():
    # dominant pair +-rho on a bipartite block
    n = 240
    B = np.zeros((n, n))
    for i in range(n - 1):
        B[i, i + 1] = B[i + 1, i] = 0.45
    dense = np.max(np.abs(np.linalg.eigvalsh(B)))
    assert spectral_radius(B + 0 * np.eye(n)) == pytest.approx(dense, rel=1e-6)


# --- permutation equivariance ------------------------------------------------

@pytest.mark.parametrize("form", ["stochastic", "regularized", "symmetric"])
def test_permutation_equivariance(form):
    rng = np.random.default_rng(7)
    n = 9
    A = random_weights(rng, n, 0.8) + 0.05 * (np.ones((n, n)) - np.eye(n))
    perm = rng.permutation(n)
    Pm = np.eye(n)[perm]  # row i picks old node perm[i]
    part = Partition.from_labeled([0, 3, 5], n)
    part_p = part.permuted(perm)

    def build(A, part):
        if form == "stochastic":
            return stochastic_smoother(A, part).S
        if form == "regularized":
            return regularized_smoother(A, 0.7, part).S
        return symmetric_smoother(combinatorial_laplacian(A), 0.7, part).S

    S = build(A, part)
    Sp = build(Pm @ A @ Pm.T, part_p)
    np.testing.assert_allclose(Sp, Pm @ S @ Pm.T, atol=1e-12)
