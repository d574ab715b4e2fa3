"""Rooted phylogenetic trees with labelled leaves and optional branch lengths."""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterator

import numpy as np

from .errors import ContractError


class Node:
    __slots__ = ("name", "length", "children", "parent")

    def __init__(self, name: str | None = None, length: float | None = None,
                 children: list[Node] | None = None):
        self.name = name
        self.length = length
        self.children: list[Node] = []
        self.parent: Node | None = None
        for child in children or ():
            self.add_child(child)

    def add_child(self, child: Node) -> Node:
        child.parent = self
        self.children.append(child)
        return child

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __repr__(self):
        if self.is_leaf:
            return f"Node({self.name!r}, length={self.length})"
        return f"Node({self.name!r}, length={self.length}, children={len(self.children)})"


class PhyloTree:
    """A rooted tree; the unrooted view is used by the tree metrics."""

    def __init__(self, root: Node):
        self.root = root

    def preorder(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def postorder(self) -> Iterator[Node]:
        # iterative so deep caterpillars do not hit the recursion limit
        stack = [(self.root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded or node.is_leaf:
                yield node
            else:
                stack.append((node, True))
                stack.extend((c, False) for c in reversed(node.children))

    def leaves(self) -> list[Node]:
        return [n for n in self.preorder() if n.is_leaf]

    def leaf_labels(self) -> list[str]:
        return [n.name for n in self.leaves()]

    def internal_nodes(self) -> list[Node]:
        return [n for n in self.preorder() if not n.is_leaf]

    def validate(self) -> None:
        labels = self.leaf_labels()
        if any(lab is None or lab == "" for lab in labels):
            raise ContractError("every leaf needs a label")
        dup = sorted(lab for lab, k in Counter(labels).items() if k > 1)
        if dup:
            raise ContractError(f"duplicate leaf labels: {dup}")
        for node in self.preorder():
            if node.length is not None and (not np.isfinite(node.length) or node.length < 0):
                raise ContractError(f"invalid branch length {node.length!r}")

    def copy(self) -> PhyloTree:
        def clone(node):
            return Node(node.name, node.length, [clone(c) for c in node.children])
        return PhyloTree(clone(self.root))

    def is_binary(self) -> bool:
        return all(len(n.children) == 2 for n in self.internal_nodes())

    def root_to_tip(self) -> dict[str, float]:
        depth = {id(self.root): 0.0}
        out = {}
        for node in self.preorder():
            d = depth[id(node)]
            for c in node.children:
                depth[id(c)] = d + (c.length or 0.0)
            if node.is_leaf:
                out[node.name] = d
        return out

    def path_distances(self, labels: list[str] | None = None) -> tuple[list[str], np.ndarray]:
        """Leaf-to-leaf path lengths (missing lengths count as zero)."""
        if labels is None:
            labels = sorted(self.leaf_labels())
        index = {lab: i for i, lab in enumerate(labels)}
        n = len(labels)
        d = np.zeros((n, n))
        # below[node] = list of (leaf index, distance from node)
        below: dict[int, list[tuple[int, float]]] = {}
        for node in self.postorder():
            if node.is_leaf:
                below[id(node)] = [(index[node.name], 0.0)]
                continue
            groups = []
            for c in node.children:
                ell = c.length or 0.0
                groups.append([(i, dist + ell) for i, dist in below.pop(id(c))])
            for a in range(len(groups)):
                for b in range(a + 1, len(groups)):
                    for i, di in groups[a]:
                        for j, dj in groups[b]:
                            d[i, j] = d[j, i] = di + dj
            below[id(node)] = [x for g in groups for x in g]
        return labels, d


def cherry(a: str, b: str, la: float | None = None, lb: float | None = None) -> Node:
    return Node(children=[Node(a, la), Node(b, lb)])
