import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import all_unrooted_topologies, brute_align, brute_align_splits, brute_splits, edges_to_tree
from morphophylo.errors import ContractError
from morphophylo.metrics import (align_score, bipartitions, mean_ci95, random_baseline,
                                 random_binary_tree, rf_distance)
from morphophylo.newick import parse_newick
from morphophylo.synth import generate_tree


def T(text):
    return parse_newick(text)


def test_bipartition_examples():
    assert bipartitions(T("((a,b),(c,d));")) == {frozenset("cd")}
    assert bipartitions(T("(a,b,c,d,e);")) == set()
    assert bipartitions(T("((((a,b),c),d),e);")) == {frozenset("de"), frozenset("cde")}


def test_rf_examples():
    t = T("((a,b),(c,d));")
    assert rf_distance(t, t) == (0, 0.0)
    assert rf_distance(t, T("((a,c),(b,d));")) == (2, 1.0)
    assert rf_distance(T("(a,b,c);"), T("(c,(a,b));")) == (0, 0.0)


def test_align_examples():
    t = T("((a,b),(c,d));")
    assert align_score(t, t).nAS == 0
    s = align_score(t, T("((a,c),(b,d));"))
    assert s.nAS == pytest.approx(2 / 3)
    assert s.nRF == 1.0 and s.raw_rf == 2
    assert s.record() == {"nAS": s.nAS, "nRF": 1.0, "raw_rf": 2, "n_leaves": 4, "edges_t1": 1, "edges_t2": 1}
    assert [w for _, _, w in s.matching] == [pytest.approx(1 / 3)]


def test_root_position_ignored():
    a = T("((a,b),(c,(d,e)));")
    b = T("(a,(b,((c,d),e)));")
    assert rf_distance(a, b)[0] == 2
    assert align_score(a, T("(((a,b),c),(d,e));")).nAS == 0


def test_leaf_mismatch():
    with pytest.raises(ContractError, match="only in first"):
        rf_distance(T("((a,b),(c,d));"), T("((a,b),(c,e));"))
    with pytest.raises(ContractError):
        align_score(T("((a,b),(c,d));"), T("((a,b),(c,e));"))


def test_align_needs_internal_edge():
    with pytest.raises(ContractError, match="internal edge"):
        align_score(T("(a,b,c,d);"), T("((a,b),(c,d));"))


def topologies(n):
    labels = [chr(ord("a") + i) for i in range(n)]
    return [edges_to_tree(e) for e in all_unrooted_topologies(labels)]


@pytest.mark.parametrize("n, count", [(4, 3), (5, 15), (6, 105)])
def test_enumeration_count(n, count):
    trees = topologies(n)
    assert len(trees) == count
    assert len({frozenset(bipartitions(t)) for t in trees}) == count


@pytest.mark.parametrize("n", [4, 5, 6])
def test_exhaustive_against_brute_force(n):
    trees = topologies(n)
    splits = [brute_splits(t) for t in trees]
    universe = frozenset(trees[0].leaf_labels())
    for t, s in zip(trees, splits):
        assert bipartitions(t) == s
    for (t1, s1), (t2, s2) in itertools.product(zip(trees, splits), repeat=2):
        nas, raw, nrf = brute_align_splits(s1, s2, universe)
        got = align_score(t1, t2)
        assert rf_distance(t1, t2) == (raw, pytest.approx(nrf, abs=1e-12))
        assert got.raw_rf == raw
        assert got.nAS == pytest.approx(nas, abs=1e-12)


def random_pair(seed, n):
    labels = [f"t{i}" for i in range(n)]
    return random_binary_tree(labels, seed), random_binary_tree(labels, seed + 1)


@given(st.integers(0, 2 ** 31), st.integers(4, 7))
def test_hungarian_equals_exhaustive_up_to_four_edges(seed, n):
    t1, t2 = random_pair(seed, n)
    nas, raw, nrf = brute_align(t1, t2)
    assert align_score(t1, t2).nAS == pytest.approx(nas, abs=1e-12)


@given(st.integers(0, 2 ** 31), st.integers(4, 30))
def test_symmetry_bounds_and_zero(seed, n):
    t1, t2 = random_pair(seed, n)
    a, b = align_score(t1, t2), align_score(t2, t1)
    assert a.nAS == pytest.approx(b.nAS, abs=1e-12) and a.nRF == b.nRF
    assert 0 <= a.nAS <= 1 and 0 <= a.nRF <= 1
    assert a.raw_rf % 2 == 0
    assert len(a.matching) <= min(a.edges_t1, a.edges_t2)
    assert all(0 <= w <= 1 for _, _, w in a.matching)
    same = bipartitions(t1) == bipartitions(t2)
    assert (a.nRF == 0) == same
    assert (a.nAS < 1e-12) == same
    assert align_score(t1, t1.copy()).nAS == 0


@given(st.integers(0, 2 ** 31), st.integers(4, 20))
def test_relabel_invariance(seed, n):
    t1, t2 = random_pair(seed, n)
    perm = np.random.default_rng(seed).permutation(n)
    rename = {f"t{i}": f"z{perm[i]:03d}" for i in range(n)}
    before = align_score(t1, t2)
    for t in (t1, t2):
        for leaf in t.leaves():
            leaf.name = rename[leaf.name]
    after = align_score(t1, t2)
    assert after.nAS == pytest.approx(before.nAS, abs=1e-12)
    assert after.raw_rf == before.raw_rf


def test_random_tree_two_labels():
    t = random_binary_tree(["x", "y"], 5)
    assert sorted(t.leaf_labels()) == ["x", "y"]
    assert all(n.length == 1.0 for n in t.preorder() if n is not t.root)
    with pytest.raises(ContractError):
        random_binary_tree(["x"], 0)


@given(st.integers(0, 2 ** 31), st.integers(2, 60))
def test_random_tree_shape(seed, n):
    labels = [f"L{i}" for i in range(n)]
    t = random_binary_tree(labels, seed)
    assert sorted(t.leaf_labels()) == sorted(labels)
    assert t.is_binary()
    assert len(bipartitions(t)) == max(0, n - 3)
    assert all(node.length == 1.0 for node in t.preorder() if node is not t.root)
    assert bipartitions(random_binary_tree(labels, seed)) == bipartitions(t)


def test_random_tree_four_leaf_frequencies():
    counts = Counter(frozenset(bipartitions(random_binary_tree("abcd", s))) for s in range(1000))
    assert len(counts) == 3
    assert min(counts.values()) >= 200


def test_mean_ci95():
    assert mean_ci95([1, 1, 1]) == (1.0, 0.0)
    m, h = mean_ci95([0, 2])
    assert m == 1 and h == pytest.approx(1.96 * np.sqrt(2) / np.sqrt(2))
    with pytest.raises(ContractError):
        mean_ci95([1])


def test_baseline_degenerate_seed_reuse():
    truth = generate_tree(10, 0)
    res = random_baseline(truth, 5, seed=3, seed_stride=0)
    assert res.nAS_ci95 == 0 and res.nRF_ci95 == 0
    with pytest.raises(ContractError):
        random_baseline(truth, 1, 0)


def test_baseline_fifty_leaves():
    res = random_baseline(generate_tree(50, 0), 100, seed=0)
    assert res.nRF_mean >= 0.9
    assert 0.3 < res.nAS_mean < 0.9
    assert res.record()["trials"] == 100
