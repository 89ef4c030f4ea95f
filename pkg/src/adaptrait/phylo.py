"""Rooted phylogenetic trees with branch lengths.

Nodes are integer ids ``0..n-1``. Trees built by :func:`parse_newick` and
:func:`yule_tree` number nodes in creation order, which is already a
parent-before-child order, but nothing downstream relies on that: use
:func:`preorder` or :attr:`PhyloTree.levels`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class NewickError(ValueError):
    """Raised for malformed Newick input or invalid tree structure."""


@dataclass(frozen=True)
class PhyloTree:
    """Immutable rooted tree.

    Attributes
    ----------
    parent : tuple of int
        Parent id per node, ``-1`` for the root.
    branch_length : tuple of float
        Length of the branch leading to each node (the root's entry is kept
        but never used by the simulators).
    labels : tuple of str or None
        Node labels; tips always have one, internal nodes optionally.
    """

    parent: tuple[int, ...]
    branch_length: tuple[float, ...]
    labels: tuple[str | None, ...]

    def __post_init__(self):
        n = len(self.parent)
        if n == 0:
            raise NewickError("tree has no nodes")
        if len(self.branch_length) != n or len(self.labels) != n:
            raise NewickError("parent, branch_length and labels must have equal length")
        roots = [i for i, p in enumerate(self.parent) if p == -1]
        if len(roots) != 1:
            raise NewickError(f"tree must have exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parent):
            if p != -1 and not 0 <= p < n:
                raise NewickError(f"node {i} has invalid parent {p}")
        for i, bl in enumerate(self.branch_length):
            if not math.isfinite(bl) or bl < 0:
                raise NewickError(f"node {i} has invalid branch length {bl}")
        # every node must reach the root without revisiting (connected, acyclic)
        order = self._topological_order()
        if len(order) != n:
            raise NewickError("tree is disconnected or contains a cycle")
        tip_labels = [self.labels[i] for i in range(n) if not self.children[i]]
        if any(not lab for lab in tip_labels):
            raise NewickError("every tip needs a non-empty label")
        seen = set()
        for lab in tip_labels:
            if lab in seen:
                raise NewickError(f"duplicate tip label {lab!r}")
            seen.add(lab)

    def _topological_order(self) -> list[int]:
        order = [self.root]
        i = 0
        while i < len(order):
            order.extend(self.children[order[i]])
            i += 1
        return order

    @cached_property
    def root(self) -> int:
        return self.parent.index(-1)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in self.parent]
        for i, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(i)
        return tuple(tuple(k) for k in kids)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @cached_property
    def tips(self) -> tuple[int, ...]:
        """Tip node ids in preorder (the canonical dataset row order)."""
        return tuple(i for i in preorder(self) if not self.children[i])

    @property
    def tip_count(self) -> int:
        return len(self.tips)

    @cached_property
    def tip_labels(self) -> tuple[str, ...]:
        return tuple(self.labels[i] for i in self.tips)

    @cached_property
    def parent_array(self) -> np.ndarray:
        arr = np.asarray(self.parent, dtype=np.intp)
        arr.setflags(write=False)
        return arr

    @cached_property
    def lengths(self) -> np.ndarray:
        arr = np.asarray(self.branch_length, dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def depths(self) -> np.ndarray:
        """Root-to-node path length for every node (root depth is 0)."""
        d = np.zeros(self.n_nodes)
        for node in preorder(self)[1:]:
            d[node] = d[self.parent[node]] + self.branch_length[node]
        d.setflags(write=False)
        return d

    @cached_property
    def levels(self) -> tuple[np.ndarray, ...]:
        """Non-root nodes grouped by edge count from the root.

        Every node in level ``i`` has its parent in level ``i - 1`` (or is a
        child of the root when ``i == 0``), so levels can be simulated as
        vectorised batches.
        """
        out = []
        frontier = list(self.children[self.root])
        while frontier:
            out.append(np.asarray(frontier, dtype=np.intp))
            frontier = [c for node in frontier for c in self.children[node]]
        return tuple(out)

    def tip_index(self) -> dict[str, int]:
        return {lab: i for i, lab in zip(self.tips, self.tip_labels)}


def preorder(tree: PhyloTree) -> list[int]:
    """Node ids with every node after its parent (root first)."""
    out = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        out.append(node)
        stack.extend(reversed(tree.children[node]))
    return out


_TOKEN = re.compile(r"'(?:[^']|'')*'|[(),:;]|[^(),:;'\s]+")


def _tokenize(text: str) -> list[str]:
    text = re.sub(r"\[[^\]]*\]", "", text)
    pos = 0
    tokens = []
    for m in _TOKEN.finditer(text):
        gap = text[pos:m.start()]
        if gap.strip():
            raise NewickError(f"unexpected characters {gap.strip()!r}")
        tokens.append(m.group())
        pos = m.end()
    if text[pos:].strip():
        raise NewickError(f"unexpected characters {text[pos:].strip()!r}")
    return tokens


def _unquote(tok: str) -> str:
    if tok.startswith("'"):
        return tok[1:-1].replace("''", "'")
    return tok


def parse_newick(text: str) -> PhyloTree:
    """Parse a single Newick tree terminated by ``;``.

    Every non-root node must carry a branch length; the root's length may be
    omitted.

    >>> t = parse_newick("((A:1,B:1):0.5,C:1.5):0;")
    >>> [float(t.depths[i]) for i in t.tips]
    [1.5, 1.5, 1.5]
    """
    tokens = _tokenize(text)
    if not tokens:
        raise NewickError("empty Newick input")

    parent: list[int] = []
    length: list[float | None] = []
    label: list[str | None] = []

    def new_node(par: int, lab: str | None = None) -> int:
        parent.append(par)
        length.append(None)
        label.append(lab)
        return len(parent) - 1

    stack: list[int] = []
    current = -1  # most recently completed node
    after_node = False
    labelled = False
    finished = False
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if finished:
            raise NewickError("content after terminating ';'")
        if tok == "(":
            if after_node:
                raise NewickError("missing ',' before '('")
            if not stack and parent:
                raise NewickError("multiple top-level trees")
            stack.append(new_node(stack[-1] if stack else -1))
        elif tok == ")":
            if not stack:
                raise NewickError("unbalanced parentheses: unexpected ')'")
            if not after_node:
                raise NewickError("empty subtree")
            current = stack.pop()
            after_node, labelled = True, False
        elif tok == ",":
            if not stack or not after_node:
                raise NewickError("misplaced ','")
            after_node = False
        elif tok == ":":
            if not after_node:
                if not stack:
                    raise NewickError("misplaced ':'")
                current = new_node(stack[-1], None)
                after_node, labelled = True, True
            if i + 1 >= len(tokens):
                raise NewickError("branch length missing after ':'")
            try:
                value = float(tokens[i + 1])
            except ValueError:
                raise NewickError(f"invalid branch length {tokens[i + 1]!r}") from None
            if length[current] is not None:
                raise NewickError("node has two branch lengths")
            if not math.isfinite(value) or value < 0:
                raise NewickError(f"negative or non-finite branch length {value}")
            length[current] = value
            i += 1
        elif tok == ";":
            if stack:
                raise NewickError("unbalanced parentheses: missing ')'")
            if not after_node:
                raise NewickError("no tree before ';'")
            finished = True
        else:
            lab = _unquote(tok)
            if after_node:
                if labelled or length[current] is not None:
                    raise NewickError(f"unexpected label {lab!r}")
                label[current] = lab
                labelled = True
            else:
                if not stack and parent:
                    raise NewickError("multiple top-level trees")
                current = new_node(stack[-1] if stack else -1, lab)
                after_node, labelled = True, True
        i += 1
    if not finished:
        raise NewickError("Newick string must end with ';'")

    for node, (p, bl) in enumerate(zip(parent, length)):
        if p != -1 and bl is None:
            name = label[node] or f"internal node {node}"
            raise NewickError(f"missing branch length for {name}")
    return PhyloTree(
        parent=tuple(parent),
        branch_length=tuple(0.0 if bl is None else bl for bl in length),
        labels=tuple(label),
    )


def _quote(lab: str) -> str:
    if re.search(r"[\s(),:;'\[\]]", lab):
        return "'" + lab.replace("'", "''") + "'"
    return lab


def to_newick(tree: PhyloTree) -> str:
    """Serialize with full-precision branch lengths (``repr`` floats)."""
    out: list[str] = []

    def suffix(node: int) -> None:
        if tree.labels[node]:
            out.append(_quote(tree.labels[node]))
        out.append(":" + repr(float(tree.branch_length[node])))

    stack: list[tuple[str, int]] = [("open", tree.root)]
    while stack:
        action, node = stack.pop()
        if action == "sep":
            out.append(",")
        elif action == "close":
            out.append(")")
            suffix(node)
        elif tree.children[node]:
            kids = tree.children[node]
            out.append("(")
            stack.append(("close", node))
            for j, child in enumerate(reversed(kids)):
                stack.append(("open", child))
                if j < len(kids) - 1:
                    stack.append(("sep", -1))
        else:
            suffix(node)
    return "".join(out) + ";"


def read_newick(path) -> PhyloTree:
    with open(path, encoding="utf-8") as fh:
        return parse_newick(fh.read())


def yule_tree(n_tips: int, rng: np.random.Generator, birth_rate: float = 1.0) -> PhyloTree:
    """Simulate an ultrametric pure-birth tree with ``n_tips`` tips.

    Tips are labelled ``t1..tn``. After the last split the tree grows for one
    more exponential waiting time so tip branches are never zero.
    """
    if n_tips < 2:
        raise ValueError("need at least two tips")
    if birth_rate <= 0:
        raise ValueError("birth_rate must be positive")
    parent = [-1, 0, 0]
    length = [0.0, 0.0, 0.0]
    active = [1, 2]
    while True:
        wait = rng.exponential(1.0 / (birth_rate * len(active)))
        for node in active:
            length[node] += wait
        if len(active) == n_tips:
            break
        pick = int(rng.integers(len(active)))
        split = active[pick]
        left, right = len(parent), len(parent) + 1
        parent.extend([split, split])
        length.extend([0.0, 0.0])
        active[pick:pick + 1] = [left, right]
    labels: list[str | None] = [None] * len(parent)
    for k, node in enumerate(sorted(active)):
        labels[node] = f"t{k + 1}"
    return PhyloTree(parent=tuple(parent), branch_length=tuple(length), labels=tuple(labels))
