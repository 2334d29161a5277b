"""Skeleton trees, their monotone numberings, and moment coefficients.

A skeleton tree at level k is a rooted tree whose root has exactly one
child, below which sits a full binary tree with k splitting vertices (each
with an ordered left and right child) and k + 1 leaves.  A numbering
assigns the labels 0..k to the root and the splitting vertices so that the
root gets 0 and labels increase along edges; leaves implicitly carry the
terminal label k + 1.  These objects index the terms of the moment formula
evaluated in the estimator module, weighted by the integer coefficients
c(k, n).

Vertices are identified by their preorder position: the root is vertex 0,
and each subtree lists its top vertex before its left then right subtree.
The canonical encoding of a tree is the parenthesized string of its root
child's subtree, with "*" for a leaf and "(left,right)" for a split;
enumeration returns trees sorted by this string.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

from .errors import CapacityError, DomainError, ParameterError

MAX_LEVEL = 12

# nested shape representation: None is a leaf, (left, right) a splitting vertex
_Shape = "None | tuple"


def _shapes(k: int):
    if k == 0:
        yield None
        return
    for i in range(k):
        for left in _shapes(i):
            for right in _shapes(k - 1 - i):
                yield (left, right)


def _encode(shape) -> str:
    if shape is None:
        return "*"
    return "(" + _encode(shape[0]) + "," + _encode(shape[1]) + ")"


def _parse(text: str):
    pos = 0

    def node():
        nonlocal pos
        if pos >= len(text):
            raise ParameterError(f"truncated tree encoding: {text!r}")
        ch = text[pos]
        if ch == "*":
            pos += 1
            return None
        if ch != "(":
            raise ParameterError(f"unexpected {ch!r} at offset {pos} in {text!r}")
        pos += 1
        left = node()
        if pos >= len(text) or text[pos] != ",":
            raise ParameterError(f"expected ',' at offset {pos} in {text!r}")
        pos += 1
        right = node()
        if pos >= len(text) or text[pos] != ")":
            raise ParameterError(f"expected ')' at offset {pos} in {text!r}")
        pos += 1
        return (left, right)

    shape = node()
    if pos != len(text):
        raise ParameterError(f"trailing characters at offset {pos} in {text!r}")
    return shape


@dataclass(frozen=True)
class SkeletonTree:
    """Immutable skeleton tree; vertex 0 is the root with a single child."""

    k: int
    parent: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...]
    splits: tuple[int, ...]
    leaves: tuple[int, ...]
    encoding: str

    @property
    def nvertices(self) -> int:
        return len(self.parent)

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """All (parent, child) pairs, ordered by child vertex id."""
        return tuple((self.parent[v], v) for v in range(1, self.nvertices))

    def is_split(self, v: int) -> bool:
        return len(self.children[v]) == 2


def tree_from_encoding(text: str) -> SkeletonTree:
    return _build_tree(_parse(text))


def _build_tree(shape) -> SkeletonTree:
    parent: list[int | None] = [None]
    children: list[list[int]] = [[]]
    splits: list[int] = []
    leaves: list[int] = []

    def add(sub, par: int) -> None:
        v = len(parent)
        parent.append(par)
        children.append([])
        children[par].append(v)
        if sub is None:
            leaves.append(v)
        else:
            splits.append(v)
            add(sub[0], v)
            add(sub[1], v)

    add(shape, 0)
    return SkeletonTree(
        k=len(splits),
        parent=tuple(parent),
        children=tuple(tuple(c) for c in children),
        splits=tuple(splits),
        leaves=tuple(leaves),
        encoding=_encode(shape),
    )


def enumerate_trees(k: int) -> tuple[SkeletonTree, ...]:
    """All skeleton trees with k splitting vertices, in canonical order."""
    if k < 0:
        raise DomainError(f"level must be >= 0, got {k}")
    if k > MAX_LEVEL:
        raise CapacityError(f"level {k} exceeds the cap {MAX_LEVEL}")
    trees = [_build_tree(s) for s in _shapes(k)]
    trees.sort(key=lambda t: t.encoding)
    return tuple(trees)


@dataclass(frozen=True)
class Numbering:
    """Labels 0..k on the root and splitting vertices, increasing along edges.

    labels[v] is the label of vertex v, or None when v is a leaf; leaves
    implicitly carry k + 1, which label_of reports.
    """

    labels: tuple[int | None, ...]

    def label_of(self, v: int, k: int) -> int:
        lab = self.labels[v]
        return k + 1 if lab is None else lab


def enumerate_numberings(tree: SkeletonTree) -> tuple[Numbering, ...]:
    """All monotone numberings of a tree (linear extensions of its splits)."""
    k = tree.k
    labels: list[int | None] = [None] * tree.nvertices
    labels[0] = 0
    out: list[Numbering] = []

    def rec(next_label: int, frontier: tuple[int, ...]) -> None:
        if next_label > k:
            out.append(Numbering(labels=tuple(labels)))
            return
        for v in frontier:
            labels[v] = next_label
            rest = tuple(w for w in frontier if w != v)
            grown = rest + tuple(c for c in tree.children[v] if tree.is_split(c))
            rec(next_label + 1, grown)
            labels[v] = None

    initial = tuple(v for v in tree.children[0] if tree.is_split(v))
    rec(1, initial)
    return tuple(out)


@lru_cache(maxsize=None)
def c_coeff(k: int, n: int) -> int:
    """Coefficient of each level-k term in the order-n moment formula.

    c(0, n) = 1 and c(k, n) = sum over i = 1..n-k of C(n, i) c(k-1, n-i);
    requires 0 <= k <= n - 1.
    """
    if n < 1:
        raise DomainError(f"order must be >= 1, got {n}")
    if k < 0 or k >= n:
        raise DomainError(f"level must satisfy 0 <= k < n, got k={k}, n={n}")
    if k == 0:
        return 1
    return sum(comb(n, i) * c_coeff(k - 1, n - i) for i in range(1, n - k + 1))


def catalan(k: int) -> int:
    return comb(2 * k, k) // (k + 1)


def term_index(n: int) -> list[tuple[int, SkeletonTree, Numbering]]:
    """Every (level, tree, numbering) term of the order-n moment formula."""
    if n < 1:
        raise DomainError(f"order must be >= 1, got {n}")
    terms: list[tuple[int, SkeletonTree, Numbering]] = []
    for k in range(n):
        for tree in enumerate_trees(k):
            for numbering in enumerate_numberings(tree):
                terms.append((k, tree, numbering))
    return terms
