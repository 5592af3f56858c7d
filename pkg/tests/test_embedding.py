import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordforecast.embedding import (
    cut_linkage,
    extract_embeddings,
    pca,
    project_2d,
    select_k,
    silhouette,
    ward_cluster,
    ward_linkage,
)
from ordforecast.seq2seq import TrainingConfig, init_model


def sse(X):
    return float(np.sum((X - X.mean(axis=0)) ** 2))


def brute_force_ward(X, k):
    """Greedy agglomeration recomputing every candidate merge's SSE increase from the points."""
    clusters = [[i] for i in range(len(X))]
    while len(clusters) > k:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            merged = clusters[a] + clusters[b]
            inc = sse(X[merged]) - sse(X[clusters[a]]) - sse(X[clusters[b]])
            if best is None or inc < best[0]:
                best = (inc, a, b)
        _, a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return {frozenset(c) for c in clusters}


def as_partition(labels):
    return {frozenset(np.flatnonzero(labels == c).tolist()) for c in np.unique(labels)}


def direct_silhouette(X, labels):
    n = len(X)
    s = np.zeros(n)
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            continue
        a = np.mean([np.linalg.norm(X[i] - X[j]) for j in same])
        b = min(np.mean([np.linalg.norm(X[i] - X[j]) for j in range(n) if labels[j] == c])
                for c in set(labels) if c != labels[i])
        if max(a, b) > 0:
            s[i] = (b - a) / max(a, b)
    return s.mean()


def blobs(n_blobs, per, seed=0, spread=0.05, dim=3):
    rng = np.random.default_rng(seed)
    centres = rng.uniform(-50, 50, (n_blobs, dim))
    return np.vstack([c + rng.normal(0, spread, (per, dim)) for c in centres])


class TestWard:
    def test_three_points_on_a_line(self):
        cm = ward_cluster(np.array([[0.0], [1.0], [10.0]]), 2)
        assert as_partition(cm.assignments) == {frozenset({0, 1}), frozenset({2})}

    def test_k_equals_n(self):
        cm = ward_cluster(np.random.default_rng(0).normal(size=(5, 2)), 5)
        assert sorted(cm.assignments) == list(range(5))
        assert cm.merges == []

    def test_duplicates_co_clustered(self):
        X = np.random.default_rng(1).normal(size=(6, 2))
        X = np.vstack([X, X])
        # zero-cost merges come first, so pairs stay together once k <= distinct points
        for k in range(1, 7):
            lab = ward_cluster(X, k).assignments
            assert np.all(lab[:6] == lab[6:])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, n, seed):
        X = np.random.default_rng(seed).normal(size=(n, 3))
        merges = ward_linkage(X)
        for k in range(1, n + 1):
            assert as_partition(cut_linkage(merges, n, k)) == brute_force_ward(X, k)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 2**32 - 1))
    def test_costs_non_decreasing_and_match_scipy(self, n, seed):
        from scipy.cluster.hierarchy import linkage

        X = np.random.default_rng(seed).normal(size=(n, 4))
        costs = np.array([c for _, _, c in ward_linkage(X)])
        assert np.all(np.diff(costs) >= -1e-12)
        # scipy reports sqrt(2 * SSE increase) as the merge height
        np.testing.assert_allclose(np.sqrt(2 * costs), linkage(X, "ward")[:, 2], rtol=1e-9)

    def test_total_cost_is_total_sse(self):
        X = np.random.default_rng(3).normal(size=(12, 3))
        assert sum(c for _, _, c in ward_linkage(X)) == pytest.approx(sse(X), rel=1e-12)

    def test_invalid_k(self):
        X = np.zeros((3, 2))
        with pytest.raises(ValueError):
            ward_cluster(X, 0)
        with pytest.raises(ValueError):
            ward_cluster(X, 4)


class TestSilhouette:
    def test_separated_identical_pairs(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
        assert silhouette(X, [0, 0, 1, 1]) == pytest.approx(1.0)

    def test_identical_points(self):
        assert silhouette(np.ones((4, 2)), [0, 0, 1, 1]) == 0.0

    def test_single_cluster_rejected(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((3, 2)), [0, 0, 0])

    def test_singletons_score_zero(self):
        X = np.array([[0.0], [0.1], [9.0]])
        assert silhouette(X, [0, 0, 1]) == pytest.approx(direct_silhouette(X, [0, 0, 1]), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_direct_definition(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(20, 3))
        lab = rng.integers(0, 3, 20)
        if np.unique(lab).size < 2:
            lab[0] = (lab[1] + 1) % 3
        assert silhouette(X, lab) == pytest.approx(direct_silhouette(X, lab), abs=1e-12)

    def test_matches_sklearn(self):
        sk = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 4))
        lab = rng.integers(0, 4, 40)
        assert silhouette(X, lab) == pytest.approx(sk.silhouette_score(X, lab), abs=1e-12)


class TestSelectK:
    def test_six_blobs(self):
        k, cm, scores = select_k(blobs(6, 15), 5, 10)
        assert k == 6
        assert set(scores) == set(range(5, 11))
        assert np.bincount(cm.assignments).tolist() == [15] * 6

    def test_singleton_range(self):
        k, _, scores = select_k(blobs(3, 5), 7, 7)
        assert k == 7 and list(scores) == [7]

    def test_k_max_too_large(self):
        with pytest.raises(ValueError):
            select_k(np.zeros((4, 2)), 2, 5)


class TestProjection:
    def test_centred_2d_preserves_distances(self):
        X = np.random.default_rng(0).normal(size=(10, 2))
        X -= X.mean(axis=0)
        from scipy.spatial.distance import pdist

        np.testing.assert_allclose(pdist(project_2d(X)), pdist(X), rtol=1e-10)

    def test_collinear_points(self):
        t = np.linspace(-1, 2, 7)
        X = np.outer(t, [1.0, -2.0, 0.5]) + [3.0, 1.0, 0.0]
        np.testing.assert_allclose(project_2d(X)[:, 1], 0.0, atol=1e-10)

    def test_constant_data(self):
        np.testing.assert_array_equal(project_2d(np.ones((5, 3))), 0.0)

    @settings(max_examples=30)
    @given(st.integers(3, 30), st.integers(3, 8), st.integers(0, 2**32 - 1))
    def test_variance_decomposition(self, n, d, seed):
        X = np.random.default_rng(seed).normal(size=(n, d)) * np.arange(1, d + 1)
        Vt, ev, mu = pca(X)
        Y = project_2d(X)
        recon = mu + Y @ (Vt[:2] * np.sign(np.sum(Y * ((X - mu) @ Vt[:2].T), axis=0))[:, None])
        residual = np.sum((X - recon) ** 2)
        assert residual == pytest.approx(ev[2:].sum(), abs=1e-9 * max(1.0, ev.sum()))
        assert np.sum(Y ** 2) + residual == pytest.approx(sse(X), rel=1e-9)

    def test_sign_convention_is_deterministic(self):
        X = np.random.default_rng(2).normal(size=(8, 4))
        np.testing.assert_array_equal(project_2d(X), project_2d(X.copy()))


@pytest.fixture(scope="module")
def model():
    return init_model(10, TrainingConfig(n_h=6), seed=0)


class TestExtract:
    def test_shape_and_determinism(self, model):
        ex = [np.array([1, 2, 3]), np.array([1, 2, 3]), np.array([9, 0, 4])]
        H = extract_embeddings(model, ex)
        assert H.shape == (3, 6)
        np.testing.assert_array_equal(H[0], H[1])

    def test_mixed_lengths_match_single_calls(self, model):
        from ordforecast.seq2seq import encoder_forward

        ex = [np.array([1, 2]), np.array([3, 4, 5]), np.array([6, 7])]
        H = extract_embeddings(model, ex, batch_size=1)
        for e, h in zip(ex, H):
            np.testing.assert_allclose(h, encoder_forward(model, e)[0], rtol=1e-12)

    def test_invalid_indices(self, model):
        with pytest.raises(ValueError):
            extract_embeddings(model, [np.array([0, 10])])
