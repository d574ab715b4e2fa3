import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from oracles import brute_path_distances
from morphophylo.errors import ContractError
from morphophylo.fourier import contour_coefficients, read_descriptor_csv
from morphophylo.metrics import align_score, bipartitions, random_baseline, rf_distance
from morphophylo.newick import parse_newick, write_newick
from morphophylo.phylo import distance_matrix, upgma
from morphophylo.tree import PhyloTree
from morphophylo.shape_io import GrayImage, iter_dataset, load_grayscale, outline_from_image
from morphophylo.synth import (EvolutionConfig, base_coefficients, damping, evolve_descriptors,
                               generate_dataset, generate_tree, is_simple_outline, outline_points,
                               write_dataset)


def test_two_species_cherry():
    t = generate_tree(2, 0)
    assert sorted(t.leaf_labels()) == ["S00", "S01"]
    assert len(t.root.children) == 2 and all(c.is_leaf for c in t.root.children)


@given(st.integers(0, 2 ** 31), st.integers(2, 40))
def test_tree_shape(seed, n):
    t = generate_tree(n, seed)
    assert t.is_binary() and len(t.leaves()) == n
    assert len(bipartitions(t)) == max(0, n - 3)
    depths = list(t.root_to_tip().values())
    assert max(depths) - min(depths) < 1e-9
    assert all(node.length > 0 for node in t.preorder() if node is not t.root)
    assert write_newick(generate_tree(n, seed), None) == write_newick(t, None)


def test_sixteen_species_split_count():
    assert len(bipartitions(generate_tree(16, 0))) == 13


def test_generate_tree_rejects_one():
    with pytest.raises(ContractError):
        generate_tree(1, 0)


@pytest.mark.parametrize("kwargs", [
    dict(n_species=1), dict(per_species=1), dict(branch_sigma=-1),
    dict(within_sigma=0.7, branch_sigma=0.6), dict(base_shape="blob"),
])
def test_config_validation(kwargs):
    with pytest.raises(ContractError):
        EvolutionConfig(**kwargs)


def test_base_shapes_are_simple():
    for shape in ("ellipse", "beetle-template"):
        fc = base_coefficients(shape)
        assert is_simple_outline(outline_points(fc))
        order = np.argsort(-np.abs(fc.terms))
        assert set(fc.freqs[order[:2]].tolist()) == {1, -1}


def test_zero_branch_sigma_gives_root_everywhere():
    cfg = EvolutionConfig(branch_sigma=0.0, within_sigma=0.0)
    species = evolve_descriptors(generate_tree(8, 0), cfg)
    root = base_coefficients()
    assert all(np.array_equal(fc.terms, root.terms) for fc in species.values())


def test_zero_within_sigma_gives_identical_specimens():
    cfg = EvolutionConfig(n_species=4, per_species=3, within_sigma=0.0)
    ds = generate_dataset(generate_tree(4, 1), cfg)
    rows = ds.descriptors
    for s in range(4):
        block = rows[3 * s:3 * s + 3]
        assert np.array_equal(block, np.broadcast_to(block[0], block.shape))
    assert not np.array_equal(rows[0], rows[3])


def test_record_count_and_order():
    cfg = EvolutionConfig(n_species=5, per_species=3, seed=2)
    ds = generate_dataset(generate_tree(5, 2), cfg)
    assert len(ds.ids) == 15 and ds.descriptors.shape == (15, 402)
    assert ds.species == sorted(ds.species)
    assert ds.ids[:3] == [f"{ds.species[0]}_{j:02d}" for j in range(3)]


def branch_only(seed, n=16):
    tree = generate_tree(n, seed)
    cfg = EvolutionConfig(n_species=n, seed=seed)
    species = evolve_descriptors(tree, cfg)
    labels = sorted(species)
    x = np.array([np.concatenate([fc.terms.real, fc.terms.imag]) for fc in (species[s] for s in labels)])
    return tree, labels, x


def test_siblings_closer_than_across_root():
    near, far = [], []
    for seed in range(100):
        tree, labels, x = branch_only(seed)
        idx = {lab: i for i, lab in enumerate(labels)}
        cherry = next(n for n in tree.postorder() if n.children and all(c.is_leaf for c in n.children))
        a, b = (idx[c.name] for c in cherry.children)
        near.append(np.linalg.norm(x[a] - x[b]))
        left, right = ([idx[lab] for lab in PhyloTree(c).leaf_labels()] for c in tree.root.children)
        far.append(np.mean([np.linalg.norm(x[i] - x[j]) for i in left for j in right]))
    assert np.mean(near) < np.mean(far)


def test_distance_tracks_path_length():
    rhos = []
    for seed in range(100):
        tree, labels, x = branch_only(seed)
        paths = brute_path_distances(tree)
        iu = np.triu_indices(len(labels), 1)
        tree_d = np.array([[paths[a, b] if a != b else 0.0 for b in labels] for a in labels])[iu]
        desc_d = np.linalg.norm(x[:, None] - x[None], axis=-1)[iu]
        rhos.append(spearmanr(tree_d, desc_d)[0])
    assert np.mean(rhos) > 0.5
    assert np.median(rhos) > 0.5


def test_brownian_variance_is_additive():
    # fixed tree, 1000 independent walks
    tree = parse_newick("((A:0.5,B:0.5):1.5,C:2.0);")
    cfg = EvolutionConfig(n_species=3, branch_sigma=0.6, within_sigma=0.0)
    root = base_coefficients()
    w2 = damping(root.freqs) ** 2
    da, db, dc = [], [], []
    for seed in range(1000):
        sp = evolve_descriptors(tree, cfg, np.random.default_rng(seed))
        da.append(sp["A"].terms - root.terms)
        db.append(sp["B"].terms - root.terms)
        dc.append(sp["C"].terms - root.terms)
    da, db, dc = map(np.array, (da, db, dc))
    s2 = cfg.branch_sigma ** 2

    def per_unit(values):
        # pooled over harmonics after removing the damping profile
        return float(np.mean(values / w2))

    assert per_unit(np.abs(da) ** 2) == pytest.approx(s2 * 2.0, rel=0.1)
    assert per_unit(np.abs(dc) ** 2) == pytest.approx(s2 * 2.0, rel=0.1)
    # covariance of A and B is the shared stem, of A and C nothing
    assert per_unit((da * np.conj(db)).real) == pytest.approx(s2 * 1.5, rel=0.1)
    assert abs(per_unit((da * np.conj(dc)).real)) < 0.1 * s2
    # the k = 1 term alone at 1000 draws
    k1 = np.mean(np.abs(da[:, 0]) ** 2) / w2[0]
    assert k1 == pytest.approx(s2 * 2.0, rel=0.1)


def test_raster_round_trip_dominant_harmonics():
    cfg = EvolutionConfig(n_species=4, per_species=4, seed=3)
    ds = generate_dataset(generate_tree(4, 3), cfg, raster=True)
    assert len(ds.images) == 16
    for fc, img in zip(ds.coefficients, ds.images):
        assert img.shape == (256, 256) and img.dtype == np.uint8
        measured = contour_coefficients(outline_from_image(GrayImage(img)))
        amp = np.abs(fc.terms)
        dominant = amp >= 0.05 * amp.max()
        assert dominant.sum() >= 3
        rel = np.abs(np.abs(measured.terms[dominant]) - amp[dominant]) / amp[dominant]
        assert rel.max() < 0.05
        assert abs(measured.c0 - fc.c0) < 1.5  # pixel-center offset plus resampling


@settings(max_examples=10)
@given(st.integers(0, 2 ** 31))
def test_ground_truth_self_score(seed):
    cfg = EvolutionConfig(n_species=12, per_species=2, seed=seed)
    ds = generate_dataset(generate_tree(12, seed), cfg)
    truth = parse_newick(ds.truth_newick)
    assert rf_distance(truth, ds.tree) == (0, 0.0)
    assert align_score(truth, ds.tree).nAS == 0


def test_upgma_on_clean_species_descriptors():
    scores, baselines = [], []
    for seed in range(10):
        tree, labels, x = branch_only(seed)
        scores.append(rf_distance(upgma(distance_matrix(labels, x)), tree)[1])
        baselines.append(random_baseline(tree, 20, seed).nRF_mean)
    assert np.mean(scores) < np.mean(baselines) - 0.4


def test_write_dataset_layout(tmp_path):
    cfg = EvolutionConfig(n_species=3, per_species=2, seed=4)
    ds = generate_dataset(generate_tree(3, 4), cfg, raster=True)
    write_dataset(ds, tmp_path)
    ids, species, rows = read_descriptor_csv(tmp_path / "descriptors.csv")
    assert ids == ds.ids and np.array_equal(rows, ds.descriptors)
    assert write_newick(parse_newick((tmp_path / "ground_truth.nwk").read_text()), None) == ds.truth_newick
    found = list(iter_dataset(tmp_path / "images"))
    assert len(found) == 6
    img = load_grayscale(tmp_path / "images" / "synthetic" / ds.species[0] / f"{ds.ids[0]}.png")
    assert np.array_equal(img.data, ds.images[0])


def test_dataset_deterministic():
    cfg = EvolutionConfig(n_species=4, per_species=2, seed=9)
    a = generate_dataset(generate_tree(4, 9), cfg, raster=True)
    b = generate_dataset(generate_tree(4, 9), cfg, raster=True)
    assert np.array_equal(a.descriptors, b.descriptors)
    assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))
