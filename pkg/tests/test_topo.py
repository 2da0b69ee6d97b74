import itertools
import math

import numpy as np
import pytest
from scipy import stats

from pairmaxent.core import CouplingModel, SignPanel, ValidationError
from pairmaxent.mcmc import simulate_panel
from pairmaxent.topo import (STATISTICS, DegenerateInfluence, DissimilarityMatrix,
                             OutOfRangeCorrelation, WindowTooLarge, ZeroVariance,
                             correlation_matrix, degree_distribution_fit,
                             hierarchical_clusters, influence_dissimilarity,
                             minimum_spanning_tree, ms_distance, sliding_window_series,
                             window_statistic)


def random_dissimilarity(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.random((n, n))
    v = a + a.T
    np.fill_diagonal(v, 0.0)
    return DissimilarityMatrix(tuple(range(n)), v)


def brute_force_mst_length(v):
    # Pruefer sequences enumerate every labelled tree on n nodes
    n = v.shape[0]
    best = math.inf
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        total = 0.0
        for x in seq:
            leaf = min(i for i in range(n) if degree[i] == 1)
            total += v[leaf, x]
            degree[leaf] -= 1
            degree[x] -= 1
        u, w = [i for i in range(n) if degree[i] == 1]
        best = min(best, total + v[u, w])
    return best


def block_panel(groups, within, m, seed, spacing=5):
    n = sum(groups)
    J = np.zeros((n, n))
    k = 0
    for g in groups:
        J[k:k + g, k:k + g] = within
        k += g
    np.fill_diagonal(J, 0.0)
    return simulate_panel(CouplingModel(J, np.zeros(n)), m, seed=seed, equilibration=1000,
                          spacing=spacing)


def adjusted_rand(a, b):
    a, b = np.asarray(a), np.asarray(b)
    table = np.array([[np.sum((a == x) & (b == y)) for y in np.unique(b)]
                      for x in np.unique(a)])
    comb = lambda x: x * (x - 1) / 2
    index = comb(table).sum()
    ra, rb = comb(table.sum(1)).sum(), comb(table.sum(0)).sum()
    expected = ra * rb / comb(a.size)
    top = (ra + rb) / 2
    return (index - expected) / (top - expected)


def partition(labels):
    return {frozenset(np.flatnonzero(labels == c).tolist()) for c in np.unique(labels)}


def test_correlation_duplicated_row():
    rng = np.random.default_rng(0)
    x = rng.choice([-1, 1], 50)
    C, eig = correlation_matrix(SignPanel.from_array([x, x]))
    np.testing.assert_allclose(C, 1.0)
    np.testing.assert_allclose(eig, [2.0, 0.0], atol=1e-12)


def test_correlation_independent_rows_in_bulk():
    rng = np.random.default_rng(1)
    n, m = 10, 20_000
    _, eig = correlation_matrix(rng.standard_normal((n, m)))
    q = n / m
    assert eig[0] < (1 + math.sqrt(q)) ** 2 + 0.02
    assert eig[-1] > (1 - math.sqrt(q)) ** 2 - 0.02
    assert np.all(np.diff(eig) <= 0)


def test_correlation_market_mode():
    panel = block_panel([8], 0.15, 4000, seed=2)
    C, eig = correlation_matrix(panel)
    np.testing.assert_allclose(np.diag(C), 1.0)
    np.testing.assert_allclose(C, C.T)
    assert eig[0] > 5 * eig[1]


def test_correlation_errors():
    with pytest.raises(ZeroVariance):
        correlation_matrix(np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 3.0]]))
    with pytest.raises(ValidationError):
        correlation_matrix(np.ones((2, 1)))


def test_ms_distance_examples():
    C = np.array([[1.0, 0.0, -1.0], [0.0, 1.0, 0.5], [-1.0, 0.5, 1.0]])
    d = ms_distance(C).values
    assert d[0, 1] == pytest.approx(math.sqrt(2))
    assert d[0, 2] == pytest.approx(2.0)
    assert d[1, 2] == pytest.approx(1.0)
    np.testing.assert_array_equal(np.diag(d), 0.0)
    with pytest.raises(OutOfRangeCorrelation):
        ms_distance(np.array([[1.0, 1.5], [1.5, 1.0]]))


def test_influence_dissimilarity_examples():
    J = np.array([[0.0, 0.8, 0.0], [0.8, 0.0, -0.8], [0.0, -0.8, 0.0]])
    d = influence_dissimilarity(CouplingModel(J, np.zeros(3))).values
    assert d[0, 1] == pytest.approx(0.0)
    assert d[0, 2] == pytest.approx(math.sqrt(2))
    assert d[1, 2] == pytest.approx(2.0)
    with pytest.raises(DegenerateInfluence):
        influence_dissimilarity(CouplingModel.zeros(3))


def test_dissimilarity_validation():
    with pytest.raises(ValidationError):
        DissimilarityMatrix((0, 1), np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValidationError):
        DissimilarityMatrix((0, 1), np.array([[0.0, -1.0], [-1.0, 0.0]]))


def test_mst_three_nodes():
    v = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]])
    tree = minimum_spanning_tree(DissimilarityMatrix((1, 2, 3), v))
    assert [(i, j) for i, j, _ in tree.edges] == [(0, 1), (0, 2)]
    assert tree.total_length == 3.0
    np.testing.assert_array_equal(tree.degree_sequence, [2, 1, 1])


def test_mst_equal_weights():
    n = 6
    v = np.full((n, n), 0.7)
    np.fill_diagonal(v, 0.0)
    tree = minimum_spanning_tree(DissimilarityMatrix(tuple(range(n)), v))
    assert tree.total_length == pytest.approx((n - 1) * 0.7)
    # lexicographic tie-break gives the star on node 0
    assert [(i, j) for i, j, _ in tree.edges] == [(0, k) for k in range(1, n)]


@pytest.mark.parametrize("seed", range(5))
def test_mst_matches_brute_force(seed):
    d = random_dissimilarity(6, seed)
    tree = minimum_spanning_tree(d)
    assert len(tree.edges) == 5
    assert tree.total_length == pytest.approx(brute_force_mst_length(d.values), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_mst_invariant_under_squaring(seed):
    d = random_dissimilarity(9, seed)
    sq = DissimilarityMatrix(d.labels, d.values ** 2)
    a = {(i, j) for i, j, _ in minimum_spanning_tree(d).edges}
    b = {(i, j) for i, j, _ in minimum_spanning_tree(sq).edges}
    assert a == b


def test_duplicated_asset_edge_in_tree():
    rng = np.random.default_rng(3)
    x = rng.choice([-1, 1], size=(5, 300))
    x = np.vstack([x, x[2]])
    C, _ = correlation_matrix(SignPanel.from_array(x))
    tree = minimum_spanning_tree(ms_distance(C))
    assert (2, 5, 0.0) in tree.edges


def test_degree_star_and_path():
    n = 10
    star = np.full((n, n), 2.0)
    star[0, :] = star[:, 0] = 1.0
    np.fill_diagonal(star, 0.0)
    tree = minimum_spanning_tree(DissimilarityMatrix(tuple(range(n)), star))
    assert sorted(tree.degree_sequence) == [1] * (n - 1) + [n - 1]
    fit = degree_distribution_fit(tree)
    assert fit.frequencies == {1: 0.9, n - 1: 0.1}
    assert fit.alpha_mle > 0

    idx = np.arange(n)
    path = np.abs(idx[:, None] - idx[None, :]).astype(float)
    tree = minimum_spanning_tree(DissimilarityMatrix(tuple(range(n)), path))
    assert sorted(tree.degree_sequence) == [1, 1] + [2] * (n - 2)
    fit = degree_distribution_fit(tree)
    assert fit.alpha_ls == pytest.approx(-math.log(0.8 / 0.2) / math.log(2))
    assert fit.r_squared == pytest.approx(1.0)
    # more degree-2 nodes than leaves: the MLE sits at its lower bracket
    assert fit.alpha_mle == pytest.approx(0.0, abs=1e-9)


def test_degree_fit_warns_on_small_tree():
    with pytest.warns(RuntimeWarning):
        degree_distribution_fit(minimum_spanning_tree(random_dissimilarity(4, 0)))


def test_tree_csv(tmp_path):
    tree = minimum_spanning_tree(random_dissimilarity(4, 1))
    tree.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "i,j,weight"
    assert len(lines) == 4


def test_clusters_two_blocks():
    v = np.full((6, 6), 1.8)
    v[:3, :3] = 0.1
    v[3:, 3:] = 0.1
    np.fill_diagonal(v, 0.0)
    cl = hierarchical_clusters(DissimilarityMatrix(tuple(range(6)), v), cluster_count=2)
    assert partition(cl.labels) == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}
    # clusters are contiguous along the permutation
    ordered = cl.labels[cl.permutation]
    assert np.all(np.diff(ordered) >= 0)


def test_clusters_equal_dissimilarities_deterministic():
    v = np.ones((5, 5))
    np.fill_diagonal(v, 0.0)
    d = DissimilarityMatrix(tuple(range(5)), v)
    a = hierarchical_clusters(d, cluster_count=2)
    b = hierarchical_clusters(d, cluster_count=2)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.permutation, b.permutation)


def test_clusters_recover_planted_groups():
    panel = block_panel([3, 3, 3], 0.5, 3000, seed=4)
    C, _ = correlation_matrix(panel)
    cl = hierarchical_clusters(ms_distance(C), cluster_count=3)
    truth = np.repeat([1, 2, 3], 3)
    assert adjusted_rand(cl.labels, truth) > 0.9


def test_clusters_invariant_under_relabeling():
    d = random_dissimilarity(8, 5)
    perm = np.random.default_rng(6).permutation(8)
    shuffled = DissimilarityMatrix(tuple(perm), d.values[np.ix_(perm, perm)])
    a = hierarchical_clusters(d, cluster_count=3)
    b = hierarchical_clusters(shuffled, cluster_count=3)
    back = {frozenset(int(perm[i]) for i in block) for block in partition(b.labels)}
    assert back == partition(a.labels)


def test_clusters_threshold_and_validation(tmp_path):
    d = random_dissimilarity(5, 2)
    cl = hierarchical_clusters(d, threshold=1e9)
    np.testing.assert_array_equal(cl.labels, 1)
    with pytest.raises(ValidationError):
        hierarchical_clusters(d)
    with pytest.raises(ValidationError):
        hierarchical_clusters(d, cluster_count=2, threshold=1.0)
    cl = hierarchical_clusters(d, cluster_count=2)
    cl.dendrogram_csv(tmp_path / "den.csv")
    lines = (tmp_path / "den.csv").read_text().splitlines()
    assert lines[0] == "node_a,node_b,height" and len(lines) == 5
    d.to_csv(tmp_path / "m.csv", cl.permutation)
    assert (tmp_path / "m.csv.json").exists()


def test_sliding_window_too_large():
    panel = SignPanel.from_array(np.ones((2, 10)))
    with pytest.raises(WindowTooLarge):
        sliding_window_series(panel, 11, 1, "tree_length_ms")
    with pytest.raises(ValidationError):
        sliding_window_series(panel, 5, 0, "tree_length_ms")
    with pytest.raises(ValidationError):
        sliding_window_series(panel, 5, 1, "volume")


def test_sliding_window_stationary_has_no_trend():
    rng = np.random.default_rng(7)
    panel = SignPanel.from_array(rng.choice([-1, 1], size=(6, 3000)))
    s = sliding_window_series(panel, 200, 50, "tree_length_ms")
    assert len(s.starts) == (3000 - 200) // 50 + 1
    assert s.starts[1] == panel.times[50]
    assert s.centered.mean() == pytest.approx(0.0, abs=1e-12)
    fit = stats.linregress(np.arange(s.values.size), s.centered)
    assert abs(fit.slope) < 2 * fit.stderr


def test_sliding_window_two_regimes_dip():
    n = 8
    rng = np.random.default_rng(8)
    calm = rng.choice([-1, 1], size=(n, 600))
    stressed = block_panel([n], 0.2, 600, seed=9, spacing=1).values
    panel = SignPanel.from_array(np.hstack([calm[:, :300], stressed, calm[:, 300:]]))
    # width 100, shift 50: windows 6..16 lie inside the coupled segment [300, 900),
    # windows 0..4 and 18..22 lie outside it
    inside = slice(6, 17)
    outside = np.r_[0:5, 18:23]
    s = sliding_window_series(panel, 100, 50, "tree_length_ms")
    assert s.centered[inside].max() < s.centered[outside].min()
    # S0 only sees the means, so the dip shows on average
    s = sliding_window_series(panel, 100, 50, "entropy_S0")
    assert s.centered[inside].mean() < s.centered[outside].mean() - 0.2


def test_window_statistics_all_run():
    panel = block_panel([5], 0.2, 400, seed=10)
    for stat in STATISTICS:
        v = window_statistic(panel, stat)
        if stat == "det_J":
            logdet, sign = v
            assert sign in (-1, 1) and np.isfinite(logdet)
        else:
            assert np.isfinite(v)
    s = sliding_window_series(panel, 200, 100, "det_J")
    assert s.signs is not None and s.signs.shape == s.values.shape
    with pytest.raises(ValidationError):
        window_statistic(panel, "trace_J", method="magic")
