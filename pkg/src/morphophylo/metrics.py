"""Tree comparison: normalized Robinson-Foulds and normalized Align score.

Both metrics treat trees as unrooted and compare their nontrivial splits.
A split is stored as the frozenset of labels on the side that does NOT
contain the lexicographically smallest leaf label, so each split has a
unique representation.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError
from .tree import Node, PhyloTree

Bipartition = frozenset


def _leaf_universe(tree: PhyloTree) -> list[str]:
    labels = tree.leaf_labels()
    dup = sorted(lab for lab, k in Counter(labels).items() if k > 1)
    if dup:
        raise ContractError(f"duplicate leaf labels: {dup}")
    return labels


def bipartitions(tree: PhyloTree) -> set[Bipartition]:
    """Nontrivial splits of the unrooted tree, one per internal edge."""
    labels = _leaf_universe(tree)
    universe = frozenset(labels)
    n = len(universe)
    smallest = min(labels)
    below: dict[int, frozenset] = {}
    out: set[Bipartition] = set()
    for node in tree.postorder():
        if node.is_leaf:
            below[id(node)] = frozenset((node.name,))
            continue
        side = frozenset().union(*(below.pop(id(c)) for c in node.children))
        below[id(node)] = side
        if node is tree.root:
            continue
        if 2 <= len(side) <= n - 2:
            out.add(universe - side if smallest in side else side)
    return out


def _check_same_leaves(t1: PhyloTree, t2: PhyloTree) -> list[str]:
    a, b = set(_leaf_universe(t1)), set(_leaf_universe(t2))
    if a != b:
        raise ContractError(
            f"leaf sets differ: only in first {sorted(a - b)}, only in second {sorted(b - a)}")
    return sorted(a)


def rf_distance(t1: PhyloTree, t2: PhyloTree) -> tuple[int, float]:
    _check_same_leaves(t1, t2)
    s1, s2 = bipartitions(t1), bipartitions(t2)
    raw = len(s1 ^ s2)
    total = len(s1) + len(s2)
    return raw, (raw / total if total else 0.0)


@dataclass
class TreeScore:
    nAS: float
    nRF: float
    raw_rf: int
    n_leaves: int
    edges_t1: int
    edges_t2: int
    matching: list[tuple[Bipartition, Bipartition, float]] = field(default_factory=list, repr=False)

    def record(self) -> dict:
        return {"nAS": self.nAS, "nRF": self.nRF, "raw_rf": self.raw_rf,
                "n_leaves": self.n_leaves, "edges_t1": self.edges_t1, "edges_t2": self.edges_t2}


def _membership(splits: list[Bipartition], labels: list[str]) -> np.ndarray:
    idx = {lab: i for i, lab in enumerate(labels)}
    m = np.zeros((len(splits), len(labels)), dtype=np.int64)
    for r, s in enumerate(splits):
        m[r, [idx[x] for x in s]] = 1
    return m


def pair_scores(splits1: list[Bipartition], splits2: list[Bipartition],
                labels: list[str]) -> np.ndarray:
    """Edge-pair similarity: best side pairing of the smaller Jaccard index."""
    A1 = _membership(splits1, labels)
    A2 = _membership(splits2, labels)
    B1, B2 = 1 - A1, 1 - A2
    n1 = A1.sum(1)[:, None]
    n2 = A2.sum(1)[None, :]
    m1 = B1.sum(1)[:, None]
    m2 = B2.sum(1)[None, :]

    def jaccard(X, Y, nx, ny):
        inter = X @ Y.T
        return inter / (nx + ny - inter)

    straight = np.minimum(jaccard(A1, A2, n1, n2), jaccard(B1, B2, m1, m2))
    crossed = np.minimum(jaccard(A1, B2, n1, m2), jaccard(B1, A2, m1, n2))
    return np.maximum(straight, crossed)


def max_weight_matching(weights: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum()), list(zip(rows.tolist(), cols.tolist()))


def align_score(t1: PhyloTree, t2: PhyloTree) -> TreeScore:
    labels = _check_same_leaves(t1, t2)
    s1 = sorted(bipartitions(t1), key=sorted)
    s2 = sorted(bipartitions(t2), key=sorted)
    if not s1 or not s2:
        raise ContractError("align score needs at least one internal edge in each tree")
    w = pair_scores(s1, s2, labels)
    total, pairs = max_weight_matching(w)
    nas = 1.0 - total / max(len(s1), len(s2))
    raw = len(set(s1) ^ set(s2))
    return TreeScore(
        nAS=min(max(nas, 0.0), 1.0),
        nRF=raw / (len(s1) + len(s2)),
        raw_rf=raw,
        n_leaves=len(labels),
        edges_t1=len(s1),
        edges_t2=len(s2),
        matching=[(s1[i], s2[j], float(w[i, j])) for i, j in pairs],
    )


def random_binary_tree(labels, seed) -> PhyloTree:
    """Random unrooted binary topology by sequential leaf attachment.

    Each new leaf is grafted onto a uniformly chosen edge of the current
    unrooted tree. All branch lengths are 1.
    """
    labels = list(labels)
    if len(labels) < 2:
        raise ContractError("need at least 2 labels")
    rng = np.random.default_rng(seed)
    root = Node(children=[Node(labels[0], 1.0), Node(labels[1], 1.0)])
    # the edge above root.children[1] is the same unrooted edge as the one
    # above root.children[0], so it is never listed separately
    edges = [root.children[0]]
    for lab in labels[2:]:
        target = edges[int(rng.integers(len(edges)))]
        parent = target.parent
        pos = parent.children.index(target)
        joint = Node(length=1.0)
        joint.parent = parent
        parent.children[pos] = joint
        leaf = Node(lab, 1.0)
        joint.add_child(target)
        joint.add_child(leaf)
        edges.extend((joint, leaf))
    return PhyloTree(root)


def mean_ci95(values) -> tuple[float, float]:
    """Mean and 95% normal-approximation confidence half-width."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ContractError("need at least 2 values for a confidence interval")
    return float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class BaselineResult:
    trials: int
    nAS_mean: float
    nAS_ci95: float
    nRF_mean: float
    nRF_ci95: float

    def record(self) -> dict:
        return dict(self.__dict__)


def random_baseline(ground_truth: PhyloTree, trials: int, seed: int,
                    seed_stride: int = 1) -> BaselineResult:
    """Score `trials` random trees against the truth; trial i uses seed + stride*i."""
    if trials < 2:
        raise ContractError("trials must be >= 2")
    labels = sorted(_leaf_universe(ground_truth))
    nas, nrf = [], []
    for i in range(trials):
        score = align_score(random_binary_tree(labels, seed + seed_stride * i), ground_truth)
        nas.append(score.nAS)
        nrf.append(score.nRF)
    a_mean, a_ci = mean_ci95(nas)
    r_mean, r_ci = mean_ci95(nrf)
    return BaselineResult(trials, a_mean, a_ci, r_mean, r_ci)
