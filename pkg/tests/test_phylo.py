import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_path_distances, brute_splits, random_additive, random_ultrametric, rooted_clusters
from morphophylo.encoder import EmbeddingMatrix
from morphophylo.errors import ContractError, NumericError
from morphophylo.newick import write_newick
from morphophylo.phylo import (DistanceMatrix, build_tree, distance_matrix, neighbor_joining,
                               read_phylip, species_centroids, upgma, write_phylip)


def test_centroid_single_specimen():
    rows = np.random.default_rng(0).standard_normal((3, 5))
    labels, c = species_centroids(EmbeddingMatrix(rows, ["b", "a", "c"]))
    assert labels == ["a", "b", "c"]
    assert np.array_equal(c, rows[[1, 0, 2]])


def test_centroid_midpoint():
    rows = np.zeros((2, 128))
    rows[1, 0] = 2
    _, c = species_centroids(EmbeddingMatrix(rows, ["s", "s"]))
    assert c[0, 0] == 1 and np.all(c[0, 1:] == 0)


@given(st.integers(0, 2 ** 32 - 1))
def test_centroids_row_order_invariant(seed):
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((12, 6)) * 1e3
    labels = list("aabbbcccdddd")
    perm = rng.permutation(12)
    a = species_centroids(EmbeddingMatrix(rows, labels))
    b = species_centroids(EmbeddingMatrix(rows[perm], [labels[i] for i in perm]))
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1])


def test_centroids_empty():
    with pytest.raises(ContractError):
        species_centroids(EmbeddingMatrix(np.zeros((0, 3)), []))


def test_distance_examples():
    dm = distance_matrix(["a", "b", "c"], np.ones((3, 4)))
    assert np.all(dm.d == 0)
    e = np.eye(2, 128)
    assert distance_matrix(["a", "b"], e).d[0, 1] == pytest.approx(np.sqrt(2))
    with pytest.raises(ContractError):
        distance_matrix(["a"], e[:1])


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["euclidean", "cosine"]))
def test_distance_matrix_properties(seed, metric):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((7, 5))
    dm = distance_matrix(list("abcdefg"), c, metric)
    d = dm.d
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
    if metric == "euclidean":
        for i in range(7):
            assert np.all(d[i][:, None] <= d[i][None, :] + d + 1e-12)


def test_distance_matrix_validation():
    with pytest.raises(NumericError):
        DistanceMatrix(["a", "b"], [[0, np.nan], [np.nan, 0]])
    with pytest.raises(ContractError):
        DistanceMatrix(["a", "b"], [[0, 1], [2, 0]])
    with pytest.raises(ContractError):
        DistanceMatrix(["a", "a"], [[0, 1], [1, 0]])


# --- UPGMA ---------------------------------------------------------------------

def test_upgma_hand_trace():
    dm = DistanceMatrix(["A", "B", "C"], [[0, 2, 4], [2, 0, 4], [4, 4, 0]])
    assert write_newick(upgma(dm), precision=0) == "((A:1,B:1):1,C:2);"


def test_upgma_two_taxa():
    tree = upgma(DistanceMatrix(["A", "B"], [[0, 3], [3, 0]]))
    assert write_newick(tree, precision=1) == "(A:1.5,B:1.5);"


def test_upgma_tie_break_is_lexicographic():
    # all pairs tied: (A,B) merges first, then the pair with C
    d = np.ones((4, 4)) - np.eye(4)
    tree = upgma(DistanceMatrix(["D", "B", "C", "A"], d))
    assert write_newick(tree, precision=1) == "(((A:0.5,B:0.5):0.0,C:0.5):0.0,D:0.5);"


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12))
def test_upgma_recovers_ultrametric(seed, n):
    labels, d, clusters = random_ultrametric(n, np.random.default_rng(seed))
    tree = upgma(DistanceMatrix(labels, d))
    assert rooted_clusters(tree) == clusters
    paths = brute_path_distances(tree)
    got = np.array([[paths[a, b] for b in labels] for a in labels])
    assert np.allclose(got, d, atol=1e-9)
    depths = list(tree.root_to_tip().values())
    assert max(depths) - min(depths) < 1e-9
    assert tree.is_binary()


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 10))
def test_upgma_output_ultrametric_on_any_matrix(seed, n):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((n, 3))
    labels = [f"x{i}" for i in range(n)]
    tree = upgma(distance_matrix(labels, c))
    depths = list(tree.root_to_tip().values())
    assert max(depths) - min(depths) < 1e-9
    assert sorted(tree.leaf_labels()) == labels


# --- neighbor joining -------------------------------------------------------------

def test_nj_four_taxa():
    # ((A:1,B:2):3,(C:4,D:5)) path metric
    d = [[0, 3, 8, 9], [3, 0, 9, 10], [8, 9, 0, 9], [9, 10, 9, 0]]
    tree = neighbor_joining(DistanceMatrix(list("ABCD"), d))
    assert brute_splits(tree) == {frozenset("CD")}
    paths = brute_path_distances(tree)
    assert paths["A", "D"] == pytest.approx(9)
    assert paths["B", "C"] == pytest.approx(9)


def test_nj_three_point_formulas():
    d = [[0, 5, 7], [5, 0, 8], [7, 8, 0]]
    tree = neighbor_joining(DistanceMatrix(list("ABC"), d))
    lengths = {leaf.name: leaf.length for leaf in tree.leaves()}
    assert lengths == pytest.approx({"A": 2.0, "B": 3.0, "C": 5.0})


def test_nj_star_is_deterministic():
    d = np.ones((6, 6)) - np.eye(6)
    labels = list("FEDCBA")
    a = write_newick(neighbor_joining(DistanceMatrix(labels, d)))
    b = write_newick(neighbor_joining(DistanceMatrix(labels, d)))
    assert a == b
    assert all(leaf.length >= 0 for leaf in neighbor_joining(DistanceMatrix(labels, d)).leaves())


def test_nj_needs_three():
    with pytest.raises(ContractError):
        neighbor_joining(DistanceMatrix(["a", "b"], [[0, 1], [1, 0]]))


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 12))
def test_nj_recovers_additive(seed, n):
    labels, d, splits = random_additive(n, np.random.default_rng(seed))
    tree = neighbor_joining(DistanceMatrix(labels, d))
    assert brute_splits(tree) == splits
    paths = brute_path_distances(tree)
    got = np.array([[paths[a, b] for b in labels] for a in labels])
    assert np.allclose(got, d, atol=1e-9)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["upgma", "nj"]))
def test_label_permutation_equivariance(seed, method):
    rng = np.random.default_rng(seed)
    n = 8
    labels = [f"s{i}" for i in range(n)]
    d = distance_matrix(labels, rng.standard_normal((n, 4))).d
    perm = rng.permutation(n)
    t1 = build_tree(DistanceMatrix(labels, d), method)
    t2 = build_tree(DistanceMatrix([labels[i] for i in perm], d[np.ix_(perm, perm)]), method)
    assert write_newick(t1) == write_newick(t2)
    assert sorted(t1.leaf_labels()) == labels


def test_build_tree_unknown_method():
    with pytest.raises(ContractError):
        build_tree(DistanceMatrix(["a", "b"], [[0, 1], [1, 0]]), "ml")


def test_phylip_round_trip(tmp_path):
    dm = distance_matrix(list("abc"), np.random.default_rng(0).standard_normal((3, 4)))
    write_phylip(dm, tmp_path / "d.phy")
    lines = (tmp_path / "d.phy").read_text().splitlines()
    assert lines[0] == "3" and lines[1].split()[0] == "a"
    back = read_phylip(tmp_path / "d.phy")
    assert back.labels == dm.labels and np.array_equal(back.d, dm.d)
