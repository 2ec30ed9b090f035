import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from odsc.assignment import hungarian
from odsc.datasets import orthogonal_subspaces
from odsc.eigen import sym_eigen
from odsc.spectral import (build_affinity, clustering_error, kmeans, spectral_clustering,
                           spectral_embedding)
from odsc.training import solve_linear_self_expression


def same_partition(a, b):
    return clustering_error(a, b) == 0.0


# ------------------------------------------------------------------ affinity

def test_affinity_identity_on_valid_affinity():
    C = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    np.testing.assert_array_equal(build_affinity(C), C)


def test_affinity_two_by_two():
    np.testing.assert_array_equal(build_affinity([[0, -2], [4, 0]]), [[0, 3], [3, 0]])


def test_affinity_zero_c_is_degenerate():
    with pytest.raises(ValueError, match="degenerate"):
        build_affinity(np.zeros((4, 4)))
    with pytest.raises(ValueError, match="degenerate"):
        build_affinity(np.diag([1.0, 2.0]))


def brute_truncate(C, rho):
    n = len(C)
    W = [[(abs(C[i][j]) + abs(C[j][i])) / 2 if i != j else 0.0 for j in range(n)] for i in range(n)]
    K = [[0.0] * n for _ in range(n)]
    for i in range(n):
        total = sum(W[i])
        order = sorted(range(n), key=lambda j: (-W[i][j], j))
        acc = 0.0
        for j in order:
            K[i][j] = W[i][j]
            acc += W[i][j]
            if acc >= rho * total:
                break
    return np.array([[(K[i][j] + K[j][i]) / 2 for j in range(n)] for i in range(n)])


@pytest.mark.parametrize("seed", range(5))
def test_affinity_truncation_matches_brute_force(seed):
    C = np.random.default_rng(seed).standard_normal((6, 6))
    np.testing.assert_allclose(build_affinity(C, 0.7), brute_truncate(C, 0.7), rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(C=arrays(np.float64, (5, 5), elements=st.floats(-1e3, 1e3)),
       rho=st.floats(0.05, 1.0))
def test_affinity_invariants(C, rho):
    off = C - np.diag(np.diag(C))
    if not np.any(off):
        return
    W = build_affinity(C, rho)
    assert np.all(W >= 0)
    np.testing.assert_array_equal(W, W.T)
    assert not np.any(np.diag(W))


# --------------------------------------------------------------------- eigen

def test_eigen_diagonal():
    w, V = sym_eigen(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(w, [1, 2, 3], atol=1e-14)
    np.testing.assert_allclose(np.abs(V), [[0, 0, 1], [1, 0, 0], [0, 1, 0]], atol=1e-14)


def test_eigen_two_by_two():
    w, V = sym_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(w, [1, 3], atol=1e-14)
    s = 1 / np.sqrt(2)
    assert abs(abs(V[:, 0] @ [s, -s]) - 1) < 1e-14
    assert abs(abs(V[:, 1] @ [s, s]) - 1) < 1e-14


@pytest.mark.parametrize("seed", range(3))
def test_eigen_random_reconstruction(seed):
    A = np.random.default_rng(seed).standard_normal((50, 50))
    M = A + A.T
    w, V = sym_eigen(M)
    norm = np.linalg.norm(M)
    assert np.all(np.diff(w) >= 0)
    assert np.linalg.norm(V @ np.diag(w) @ V.T - M) / norm < 1e-8
    assert np.linalg.norm(V.T @ V - np.eye(50)) < 1e-8
    assert np.max(np.linalg.norm(M @ V - V * w, axis=0)) <= 1e-8 * norm


def test_eigen_rejects_asymmetric():
    with pytest.raises(ValueError):
        sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_laplacian_spectrum_in_range():
    g = np.random.default_rng(0)
    W = build_affinity(g.standard_normal((30, 30)))
    d = 1 / np.sqrt(W.sum(1))
    w, _ = sym_eigen(np.eye(30) - d[:, None] * W * d[None, :])
    assert w.min() >= -1e-8 and w.max() <= 2 + 1e-8


# ------------------------------------------------------------------ spectral

def test_two_disconnected_blocks():
    W = np.zeros((10, 10))
    W[:5, :5] = W[5:, 5:] = 1.0
    np.fill_diagonal(W, 0.0)
    labels = spectral_clustering(W, 2, seed=0)
    assert clustering_error(labels, [0] * 5 + [1] * 5) == 0.0


def test_spectral_permutation_equivariance():
    g = np.random.default_rng(3)
    truth = np.repeat([0, 1, 2], 6)
    W = np.where(truth[:, None] == truth[None, :], 1.0, 0.05) + 0.01 * g.random((18, 18))
    W = (W + W.T) / 2
    np.fill_diagonal(W, 0.0)
    perm = g.permutation(18)
    a = spectral_clustering(W, 3, seed=1)
    b = spectral_clustering(W[np.ix_(perm, perm)], 3, seed=1)
    assert same_partition(a[perm], b)


def ncut(W, labels, k):
    total = 0.0
    for c in range(k):
        mask = labels == c
        vol = W[mask].sum()
        total += W[np.ix_(mask, ~mask)].sum() / vol
    return total


def test_noisy_blocks_match_exhaustive_min_ncut():
    g = np.random.default_rng(5)
    truth = np.repeat([0, 1, 2], 3)
    W = np.where(truth[:, None] == truth[None, :], 1.0, 0.01) + 0.005 * g.random((9, 9))
    W = (W + W.T) / 2
    np.fill_diagonal(W, 0.0)
    best, best_labels = np.inf, None
    for assign in itertools.product(range(3), repeat=9):
        lab = np.array(assign)
        if len(set(assign)) < 3:
            continue
        v = ncut(W, lab, 3)
        if v < best:
            best, best_labels = v, lab
    labels = spectral_clustering(W, 3, seed=0)
    assert same_partition(labels, truth)
    assert same_partition(labels, best_labels)


def test_k_larger_than_n_rejected():
    with pytest.raises(ValueError):
        spectral_clustering(np.ones((3, 3)) - np.eye(3), 4)


def test_isolated_node_gets_self_loop():
    W = np.zeros((5, 5))
    W[:2, :2] = W[2:4, 2:4] = 1.0
    np.fill_diagonal(W, 0.0)
    U = spectral_embedding(W, 3)
    assert np.all(np.isfinite(U))


def test_linear_pipeline_on_orthogonal_subspaces():
    X, truth = orthogonal_subspaces(n_subspaces=3, dim=2, ambient=9, per_subspace=30, seed=0)
    C = solve_linear_self_expression(X, 0.1)
    labels = spectral_clustering(build_affinity(C, 1.0), 3, seed=0)
    assert clustering_error(labels, truth) == 0.0
    same = truth[:, None] == truth[None, :]
    assert np.abs(C[~same]).sum() < 0.05 * np.abs(C).sum()


# -------------------------------------------------------------------- kmeans

def wcss(X, labels):
    return sum(((X[labels == c] - X[labels == c].mean(0)) ** 2).sum() for c in np.unique(labels))


def test_kmeans_k_equals_n():
    X = np.random.default_rng(0).random((6, 2))
    labels, w = kmeans(X, 6, seed=0)
    assert sorted(labels.tolist()) == list(range(6))
    assert w == 0.0


def test_kmeans_two_separated_clusters():
    g = np.random.default_rng(1)
    X = np.vstack([g.uniform(-0.1, 0.1, (10, 2)), 10 + g.uniform(-0.1, 0.1, (10, 2))])
    labels, _ = kmeans(X, 2, seed=0)
    assert clustering_error(labels, [0] * 10 + [1] * 10) == 0.0


def test_kmeans_beats_random_assignments():
    g = np.random.default_rng(2)
    X = g.random((20, 2))
    _, w = kmeans(X, 3, seed=0)
    rand = [wcss(X, g.integers(0, 3, 20)) for _ in range(1000)]
    assert w <= min(rand)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_matches_exhaustive_optimum(seed):
    X = np.random.default_rng(seed).standard_normal((8, 2))
    best = min(wcss(X, np.array((0,) + a)) for a in itertools.product((0, 1), repeat=7)
               if 1 in a)
    labels, w = kmeans(X, 2, seed=0)
    assert w == pytest.approx(best, abs=1e-12)
    assert wcss(X, labels) == pytest.approx(w, abs=1e-12)


def test_kmeans_deterministic():
    X = np.random.default_rng(3).random((40, 3))
    a, wa = kmeans(X, 4, seed=9)
    b, wb = kmeans(X, 4, seed=9)
    np.testing.assert_array_equal(a, b)
    assert wa == wb


# ------------------------------------------------------------------- scoring

def brute_error(pred, truth):
    labels = sorted(set(pred) | set(truth))
    best = 0
    for perm in itertools.permutations(labels):
        m = dict(zip(labels, perm))
        best = max(best, sum(m[p] == t for p, t in zip(pred, truth)))
    return 100.0 * (1 - best / len(pred))


def test_clustering_error_examples():
    assert clustering_error([0, 1, 2], [0, 1, 2]) == 0.0
    assert clustering_error([2, 0, 1, 1], [0, 1, 2, 2]) == 0.0
    assert clustering_error([1, 1, 0, 2, 2, 2], [0, 0, 1, 1, 2, 2]) == pytest.approx(100 / 6)
    with pytest.raises(ValueError):
        clustering_error([0, 1], [0, 1, 1])


@settings(max_examples=60, deadline=None)
@given(k=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_clustering_error_matches_brute_force(k, seed):
    g = np.random.default_rng(seed)
    truth = g.integers(0, k, 12)
    pred = g.integers(0, k, 12)
    assert clustering_error(pred, truth) == pytest.approx(brute_error(pred.tolist(), truth.tolist()),
                                                          abs=1e-9)
    perm = g.permutation(12)
    relabel = g.permutation(k)
    assert clustering_error(pred[perm], truth[perm]) == pytest.approx(clustering_error(pred, truth))
    assert clustering_error(relabel[pred], truth) == pytest.approx(clustering_error(pred, truth))


def test_hungarian_examples():
    assign, total = hungarian(1.0 - np.eye(4))
    assert assign.tolist() == [0, 1, 2, 3] and total == 0.0
    assign, total = hungarian([[4, 1], [2, 3]])
    assert assign.tolist() == [1, 0] and total == 3.0


def test_hungarian_matches_brute_force_100_cases():
    g = np.random.default_rng(2024)
    for _ in range(100):
        cost = g.integers(0, 50, (6, 6)).astype(float)
        brute = min(sum(cost[i, p[i]] for i in range(6)) for p in itertools.permutations(range(6)))
        assign, total = hungarian(cost)
        assert total == brute
        assert sum(cost[i, assign[i]] for i in range(6)) == brute
        assert sorted(assign.tolist()) == list(range(6))


def test_hungarian_errors():
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        hungarian([[0.0, np.inf], [1.0, 0.0]])
