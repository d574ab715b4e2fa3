"""Species centroids -> distance matrix -> UPGMA or neighbor-joining tree."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .encoder import EmbeddingMatrix
from .errors import ContractError, InputError, NumericError
from .tree import Node, PhyloTree


@dataclass
class DistanceMatrix:
    labels: list[str]
    d: np.ndarray

    def __post_init__(self):
        self.labels = [str(s) for s in self.labels]
        self.d = np.asarray(self.d, dtype=np.float64)
        n = len(self.labels)
        if self.d.shape != (n, n):
            raise ContractError(f"matrix shape {self.d.shape} does not match {n} labels")
        if len(set(self.labels)) != n:
            raise ContractError("duplicate labels in distance matrix")
        if np.isnan(self.d).any():
            raise NumericError("NaN in distance matrix")
        if not np.all(np.isfinite(self.d)):
            raise NumericError("non-finite distance")
        if np.any(self.d < 0) or np.any(np.diag(self.d) != 0) or not np.array_equal(self.d, self.d.T):
            raise ContractError("distances must be symmetric, nonnegative, with zero diagonal")

    @property
    def n(self) -> int:
        return len(self.labels)

    def sorted(self) -> DistanceMatrix:
        order = np.argsort(self.labels, kind="stable")
        return DistanceMatrix([self.labels[i] for i in order], self.d[np.ix_(order, order)])


def species_centroids(e: EmbeddingMatrix) -> tuple[list[str], np.ndarray]:
    """Per-species mean embedding, species in sorted order.

    Each column is summed in sorted order so the result does not depend on
    the row order of the input.
    """
    if len(e.labels) == 0:
        raise ContractError("no embeddings")
    labels = np.asarray(e.labels)
    species = sorted(set(e.labels))
    out = np.empty((len(species), e.rows.shape[1]))
    for i, s in enumerate(species):
        rows = e.rows[labels == s]
        out[i] = np.sort(rows, axis=0).sum(axis=0) / len(rows)
    return species, out


def distance_matrix(labels, centroids, metric: str = "euclidean") -> DistanceMatrix:
    c = np.asarray(centroids, dtype=np.float64)
    if len(c) < 2:
        raise ContractError("need at least 2 species")
    if metric not in ("euclidean", "cosine"):
        raise ContractError(f"unknown distance {metric!r}")
    d = squareform(pdist(c, metric=metric))
    if metric == "cosine":
        d = np.clip(d, 0.0, None)
    return DistanceMatrix(list(labels), d)


def upgma(dm: DistanceMatrix) -> PhyloTree:
    """Average-linkage clustering into a rooted ultrametric tree.

    Ties go to the pair whose smallest member labels sort first. Children of
    each new node are ordered by their smallest label.
    """
    if dm.n < 2:
        raise ContractError("UPGMA needs at least 2 taxa")
    dm = dm.sorted()
    # cluster key = smallest label it contains; keys stay unique
    clusters = {lab: (Node(lab), 1, 0.0) for lab in dm.labels}
    dist = {}
    for i, a in enumerate(dm.labels):
        for j in range(i + 1, dm.n):
            dist[(a, dm.labels[j])] = float(dm.d[i, j])
    while len(clusters) > 1:
        a, b = min(dist, key=lambda k: (dist[k], k))
        dab = dist.pop((a, b))
        node_a, size_a, height_a = clusters.pop(a)
        node_b, size_b, height_b = clusters.pop(b)
        height = dab / 2
        node_a.length = max(height - height_a, 0.0)
        node_b.length = max(height - height_b, 0.0)
        merged = Node(children=[node_a, node_b])
        size = size_a + size_b
        new_dist = {}
        for k in clusters:
            dak = dist.pop((a, k) if a < k else (k, a))
            dbk = dist.pop((b, k) if b < k else (k, b))
            new_dist[(a, k) if a < k else (k, a)] = (size_a * dak + size_b * dbk) / size
        dist.update(new_dist)
        clusters[a] = (merged, size, height)
    (root, _, _), = clusters.values()
    return PhyloTree(root)


def neighbor_joining(dm: DistanceMatrix) -> PhyloTree:
    """Saitou-Nei neighbor joining; the result is rooted at a trifurcation.

    Taxa are processed in sorted label order, Q-criterion ties go to the
    smallest index pair, and negative branch lengths are clamped to zero.
    """
    if dm.n < 3:
        raise ContractError("neighbor joining needs at least 3 taxa")
    dm = dm.sorted()
    nodes = [Node(lab) for lab in dm.labels]
    d = dm.d.copy()
    while len(nodes) > 3:
        m = len(nodes)
        r = d.sum(axis=1)
        q = (m - 2) * d - r[:, None] - r[None, :]
        q[np.tril_indices(m)] = np.inf
        i, j = np.unravel_index(np.argmin(q), q.shape)
        li = d[i, j] / 2 + (r[i] - r[j]) / (2 * (m - 2))
        lj = d[i, j] - li
        nodes[i].length = max(li, 0.0)
        nodes[j].length = max(lj, 0.0)
        joined = Node(children=[nodes[i], nodes[j]])
        du = (d[i] + d[j] - d[i, j]) / 2
        keep = [k for k in range(m) if k not in (i, j)]
        new = np.empty((m - 1, m - 1))
        new[:-1, :-1] = d[np.ix_(keep, keep)]
        new[-1, :-1] = new[:-1, -1] = du[keep]
        new[-1, -1] = 0.0
        d = new
        nodes = [nodes[k] for k in keep] + [joined]
    a, b, c = nodes
    nodes[0].length = max((d[0, 1] + d[0, 2] - d[1, 2]) / 2, 0.0)
    nodes[1].length = max((d[0, 1] + d[1, 2] - d[0, 2]) / 2, 0.0)
    nodes[2].length = max((d[0, 2] + d[1, 2] - d[0, 1]) / 2, 0.0)
    return PhyloTree(Node(children=[a, b, c]))


def build_tree(dm: DistanceMatrix, method: str = "upgma") -> PhyloTree:
    if method == "upgma":
        return upgma(dm)
    if method == "nj":
        return neighbor_joining(dm)
    raise ContractError(f"unknown tree method {method!r}")


def write_phylip(dm: DistanceMatrix, path) -> None:
    lines = [str(dm.n)]
    for lab, row in zip(dm.labels, dm.d):
        lines.append(" ".join([lab] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_phylip(path) -> DistanceMatrix:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        n = int(rows[0][0])
        labels = [r[0] for r in rows[1:n + 1]]
        d = np.array([[float(v) for v in r[1:]] for r in rows[1:n + 1]])
    except (IndexError, ValueError) as exc:
        raise InputError(f"{path}: malformed PHYLIP matrix ({exc})") from None
    return DistanceMatrix(labels, d)
