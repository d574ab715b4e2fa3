"""Synthetic specimens with a known phylogeny.

Species descriptors drift along a random tree by Brownian increments on the
Fourier coefficients; specimens add within-species noise; optionally every
specimen is drawn as a filled silhouette so the image path can be exercised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from shapely.geometry import LinearRing

from .errors import ContractError
from .fourier import (N_HARMONICS, FourierCoefficients, assemble_descriptor, contour_coefficients,
                      evaluate_series, term_order, write_descriptor_csv)
from .newick import write_newick
from .shape_io import Contour, resample_contour
from .tree import Node, PhyloTree

RASTER_SIZE = 256
RASTER_SAMPLES = 512
FOREGROUND_LEVEL = 40
BASE_SHAPES = ("ellipse", "beetle-template")


@dataclass
class EvolutionConfig:
    n_species: int = 16
    per_species: int = 8
    branch_sigma: float = 0.6
    within_sigma: float = 0.15
    seed: int = 0
    base_shape: str = "beetle-template"
    n_harmonics: int = N_HARMONICS

    def __post_init__(self):
        if self.n_species < 2:
            raise ContractError("n_species must be >= 2")
        if self.per_species < 2:
            raise ContractError("per_species must be >= 2")
        if self.branch_sigma < 0 or self.within_sigma < 0:
            raise ContractError("sigmas must be >= 0")
        if self.within_sigma > 0 and not self.within_sigma < self.branch_sigma:
            raise ContractError("within_sigma must be smaller than branch_sigma")
        if self.base_shape not in BASE_SHAPES:
            raise ContractError(f"base_shape must be one of {BASE_SHAPES}")


def generate_tree(n_species: int, seed: int) -> PhyloTree:
    """Yule (pure-birth) tree with speciation rate 1 per lineage.

    While k lineages exist the next split comes after an Exp(k) waiting
    time; the process runs one further Exp(n) interval after the last split
    so no pendant edge has zero length. The tree is ultrametric. Leaves are
    named S00, S01, ... in a random order.
    """
    if n_species < 2:
        raise ContractError("n_species must be >= 2")
    rng = np.random.default_rng(seed)
    root = Node()
    tips = [root.add_child(Node(length=0.0)), root.add_child(Node(length=0.0))]
    while True:
        wait = float(rng.exponential(1.0 / len(tips)))
        for tip in tips:
            tip.length += wait
        if len(tips) == n_species:
            break
        parent = tips.pop(int(rng.integers(len(tips))))
        tips += [parent.add_child(Node(length=0.0)), parent.add_child(Node(length=0.0))]
    tree = PhyloTree(root)
    width = max(2, len(str(n_species - 1)))
    leaves = tree.leaves()
    for i, k in enumerate(rng.permutation(len(leaves))):
        leaves[k].name = f"S{i:0{width}d}"
    return tree


def _phase_to_top(coeffs: dict[int, complex]) -> dict[int, complex]:
    # shift the parameter origin by 3/4 turn so t = 0 sits at the top (min y)
    return {k: c * np.exp(2j * np.pi * k * 0.75) for k, c in coeffs.items()}


def base_coefficients(shape: str = "beetle-template", n_harmonics: int = N_HARMONICS,
                      center=(128.0, 128.0)) -> FourierCoefficients:
    """Root outline: an upright ellipse, optionally with head/abdomen asymmetry."""
    a, b = 42.0, 84.0  # x and y semi-axes in pixels
    coeffs = {1: (a + b) / 2, -1: (a - b) / 2}
    if shape == "beetle-template":
        egg = 0.25  # abdomen wider than head
        coeffs[2] = a * egg / 4j
        coeffs[-2] = -a * egg / 4j
        waist = 0.06  # slight pronotum constriction
        coeffs[3] = coeffs[-3] = -waist * a / 2
    elif shape != "ellipse":
        raise ContractError(f"unknown base shape {shape!r}")
    coeffs = _phase_to_top(coeffs)
    freqs = term_order(n_harmonics)
    terms = np.array([coeffs.get(int(k), 0.0) for k in freqs], dtype=np.complex128)
    return FourierCoefficients(complex(*center), terms, 0)


def damping(freqs) -> np.ndarray:
    return 1.0 / (1.0 + np.abs(freqs))


def _complex_noise(rng, scale) -> np.ndarray:
    scale = np.asarray(scale)
    z = rng.standard_normal(scale.shape) + 1j * rng.standard_normal(scale.shape)
    return z * scale / np.sqrt(2.0)


def evolve_descriptors(tree: PhyloTree, config: EvolutionConfig,
                       rng=None) -> dict[str, FourierCoefficients]:
    """Brownian drift of the harmonic terms down the tree; c0 stays fixed."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    root = base_coefficients(config.base_shape, config.n_harmonics)
    w = damping(root.freqs)
    state = {id(tree.root): root.terms}
    out = {}
    for node in tree.preorder():
        terms = state.pop(id(node))
        for child in node.children:
            scale = config.branch_sigma * np.sqrt(child.length or 0.0) * w
            state[id(child)] = terms + _complex_noise(rng, scale)
        if node.is_leaf:
            out[node.name] = FourierCoefficients(root.c0, terms, 0)
    return out


def outline_points(fc: FourierCoefficients, samples: int = RASTER_SAMPLES) -> np.ndarray:
    if samples > 2 * fc.n_harmonics:
        spectrum = np.zeros(samples, dtype=np.complex128)
        spectrum[0] = fc.c0
        spectrum[fc.freqs % samples] = fc.terms
        z = np.fft.ifft(spectrum) * samples
    else:
        z = evaluate_series(fc.c0, fc.freqs, fc.terms, samples)
    return np.column_stack([z.real, z.imag])


def measured_coefficients(fc: FourierCoefficients, n_points: int = 1024,
                          dense: int = 8192) -> FourierCoefficients:
    """Coefficients of the outline as the image path measures it: arc-length
    resampled to `n_points`, starting at the curve's t = 0 point."""
    contour = resample_contour(Contour(outline_points(fc, dense)), n_points)
    return contour_coefficients(contour, fc.n_harmonics)


def is_simple_outline(points: np.ndarray) -> bool:
    return LinearRing(points).is_simple


def rasterize(points: np.ndarray, size: int = RASTER_SIZE) -> np.ndarray:
    """Filled silhouette on white, as a (size, size) uint8 array."""
    img = Image.new("L", (size, size), 255)
    ImageDraw.Draw(img).polygon([tuple(p) for p in points.tolist()], fill=FOREGROUND_LEVEL)
    return np.asarray(img, dtype=np.uint8)


@dataclass
class SyntheticDataset:
    tree: PhyloTree
    ids: list[str]
    species: list[str]
    coefficients: list[FourierCoefficients]
    images: list[np.ndarray] = field(default_factory=list)

    @property
    def descriptors(self) -> np.ndarray:
        return np.array([assemble_descriptor(fc) for fc in self.coefficients])

    @property
    def truth_newick(self) -> str:
        return write_newick(self.tree, precision=None)


def generate_dataset(tree: PhyloTree, config: EvolutionConfig, raster: bool = False,
                     max_retries: int = 20, n_points: int = 1024) -> SyntheticDataset:
    """Specimens of every species, in sorted species order.

    Recorded coefficients are those of each exact outline after arc-length
    resampling to `n_points`, so they are comparable with descriptors
    measured from the rasterized images.
    """
    rng = np.random.default_rng(config.seed)
    species_fc = evolve_descriptors(tree, config, rng)
    ids, species, coeffs, images = [], [], [], []
    for sp in sorted(species_fc):
        base = species_fc[sp]
        w = damping(base.freqs)
        for j in range(config.per_species):
            for attempt in range(max_retries + 1):
                terms = base.terms + _complex_noise(rng, config.within_sigma * w)
                fc = FourierCoefficients(base.c0, terms, 0)
                pts = outline_points(fc)
                if not raster or is_simple_outline(pts):
                    break
            else:
                raise ContractError(f"specimen {sp}_{j:02d}: outline self-intersects after {max_retries} retries")
            ids.append(f"{sp}_{j:02d}")
            species.append(sp)
            coeffs.append(measured_coefficients(fc, n_points))
            if raster:
                images.append(rasterize(pts))
    return SyntheticDataset(tree, ids, species, coeffs, images)


def write_dataset(ds: SyntheticDataset, out_dir, split: str = "synthetic") -> None:
    """descriptors.csv, ground_truth.nwk and, when rasterized, images/<split>/<species>/<id>.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_descriptor_csv(out / "descriptors.csv", ds.ids, ds.species, ds.descriptors)
    (out / "ground_truth.nwk").write_text(ds.truth_newick + "\n")
    for sid, sp, img in zip(ds.ids, ds.species, ds.images):
        d = out / "images" / split / sp
        d.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img, mode="L").save(d / f"{sid}.png")
