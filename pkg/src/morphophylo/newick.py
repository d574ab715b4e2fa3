"""Newick reading and writing.

Grammar accepted::

    tree    := subtree ";"
    subtree := leaf | "(" subtree ("," subtree)+ ")" [label] [":" length]
    leaf    := label [":" length]

Labels may be single-quoted (``''`` escapes a quote). Unquoted labels keep
underscores verbatim. ``[...]`` comments are skipped. A missing length is
stored as ``None``, not zero.
"""

from __future__ import annotations

from pathlib import Path

from .errors import InputError
from .tree import Node, PhyloTree

_SPECIAL = set("()[]':;,")
_WS = set(" \t\r\n")


class NewickError(InputError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip(self):
        text = self.text
        while self.pos < len(text):
            c = text[self.pos]
            if c in _WS:
                self.pos += 1
            elif c == "[":
                end = text.find("]", self.pos)
                if end < 0:
                    raise NewickError("unterminated comment", self.pos)
                self.pos = end + 1
            else:
                break

    def label(self) -> str | None:
        c = self.peek()
        text = self.text
        if c == "'":
            start = self.pos
            self.pos += 1
            out = []
            while True:
                if self.pos >= len(text):
                    raise NewickError("unterminated quoted label", start)
                ch = text[self.pos]
                if ch == "'":
                    if text.startswith("''", self.pos):
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(out)
                out.append(ch)
                self.pos += 1
        start = self.pos
        while self.pos < len(text) and text[self.pos] not in _SPECIAL and text[self.pos] not in _WS:
            self.pos += 1
        return text[start:self.pos] or None

    def length(self) -> float | None:
        if self.peek() != ":":
            return None
        self.pos += 1
        self.skip()
        start = self.pos
        text = self.text
        while self.pos < len(text) and text[self.pos] not in _SPECIAL and text[self.pos] not in _WS:
            self.pos += 1
        token = text[start:self.pos]
        try:
            value = float(token)
        except ValueError:
            raise NewickError(f"invalid branch length {token!r}", start) from None
        if not (value >= 0 and value != float("inf")):
            raise NewickError(f"branch length must be finite and nonnegative, got {token!r}", start)
        return value


def _check_balance(text: str) -> None:
    depth = 0
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "'":
            j = i + 1
            while j < n:
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        j += 2
                        continue
                    break
                j += 1
            i = j + 1
            continue
        if c == "[":
            end = text.find("]", i)
            i = n if end < 0 else end + 1
            continue
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
            if depth < 0:
                raise NewickError("unbalanced parentheses: unexpected ')'", i)
        i += 1
    if depth > 0:
        semi = text.rfind(";")
        offset = semi if semi >= 0 else max(len(text.rstrip()) - 1, 0)
        raise NewickError(f"unbalanced parentheses: {depth} unclosed '('", offset)


def parse_newick(text: str) -> PhyloTree:
    if not text.strip():
        raise NewickError("empty input", 0)
    _check_balance(text)
    r = _Reader(text)
    stack: list[Node] = []
    root: Node | None = None
    expect_subtree = True
    seen: dict[str, int] = {}
    while True:
        c = r.peek()
        if expect_subtree:
            if c == "(":
                node = Node()
                if stack:
                    stack[-1].add_child(node)
                stack.append(node)
                r.pos += 1
                continue
            start = r.pos
            name = r.label()
            if name is None:
                raise NewickError("empty subtree", start)
            if name in seen:
                raise NewickError(f"duplicate leaf label {name!r}", start)
            seen[name] = start
            leaf = Node(name, r.length())
            if stack:
                stack[-1].add_child(leaf)
            else:
                root = leaf
            expect_subtree = False
        elif c == ",":
            if not stack:
                raise NewickError("unexpected ','", r.pos)
            r.pos += 1
            expect_subtree = True
        elif c == ")":
            if not stack:
                raise NewickError("unexpected ')'", r.pos)
            node = stack.pop()
            if len(node.children) < 2:
                raise NewickError("internal node needs at least two children", r.pos)
            r.pos += 1
            nxt = r.peek()
            if nxt and nxt not in ":,);":
                node.name = r.label()
            node.length = r.length()
            if not stack:
                root = node
        elif c == ";":
            if stack or root is None:
                raise NewickError("premature ';'", r.pos)
            r.pos += 1
            if r.peek():
                raise NewickError("trailing text after ';'", r.pos)
            break
        elif c == "":
            raise NewickError("missing terminating ';'", max(len(text) - 1, 0))
        else:
            raise NewickError(f"unexpected character {c!r}", r.pos)
    return PhyloTree(root)


def _quote(name: str) -> str:
    if name and not any(ch in _SPECIAL or ch in _WS for ch in name):
        return name
    return "'" + name.replace("'", "''") + "'"


def write_newick(tree: PhyloTree, precision: int | None = 6) -> str:
    """Serialize children in stored order; ``precision=None`` prints lengths with repr."""

    def fmt_len(x: float) -> str:
        if precision is None:
            return repr(float(x))
        return f"{x:.{precision}f}"

    parts: list[str] = []
    stack: list[tuple[Node, int]] = [(tree.root, 0)]
    # iterative emit: state 0 = open, k>0 = after child k-1
    while stack:
        node, state = stack.pop()
        if node.is_leaf:
            parts.append(_quote(node.name or ""))
        elif state == 0:
            parts.append("(")
            stack.append((node, 1))
            stack.append((node.children[0], 0))
            continue
        elif state < len(node.children):
            parts.append(",")
            stack.append((node, state + 1))
            stack.append((node.children[state], 0))
            continue
        else:
            parts.append(")")
            if node.name:
                parts.append(_quote(node.name))
        if node.length is not None:
            parts.append(":" + fmt_len(node.length))
    return "".join(parts) + ";"


def read_newick(path) -> PhyloTree:
    return parse_newick(Path(path).read_text(encoding="utf-8"))


def save_newick(tree: PhyloTree, path, precision: int | None = 6) -> None:
    Path(path).write_text(write_newick(tree, precision) + "\n", encoding="utf-8")
