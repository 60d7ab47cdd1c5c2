"""Coordinates on rooted trees.

A vertex is a tuple of branch indices (its *word*); the root is the empty
tuple ``()``. Regions are plain tuples of vertices kept in canonical order:
level-major, then lexicographic inside a level. Every tensor-factor ordering
in the package is derived from that order.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping
from itertools import product
from typing import Union

from .errors import InvalidSubtreeError, TreeError

Vertex = tuple[int, ...]
Region = tuple[Vertex, ...]
ROOT: Vertex = ()

# Branching may be homogeneous (Cayley tree of order k) or given per vertex.
Branching = Union[int, Mapping[Vertex, int], Callable[[Vertex], int]]


def level(x: Vertex) -> int:
    return len(x)


def _key(x: Vertex) -> tuple[int, Vertex]:
    return (len(x), x)


def canonical(vertices: Iterable[Vertex]) -> Region:
    """Deduplicate and sort vertices into canonical order."""
    return tuple(sorted({tuple(v) for v in vertices}, key=_key))


def region_union(*regions: Iterable[Vertex]) -> Region:
    merged: set[Vertex] = set()
    for r in regions:
        merged.update(r)
    return canonical(merged)


def n_successors(x: Vertex, k: Branching) -> int:
    if isinstance(k, int):
        n = k
    elif isinstance(k, Mapping):
        n = k.get(x, 0)
    else:
        n = k(x)
    if n < 0:
        raise TreeError(f"negative branching at {format_vertex(x)}")
    return n


def direct_successors(x: Vertex, k: Branching) -> Region:
    """Return ``{(x,1), ..., (x,k)}``."""
    if isinstance(k, int) and k < 1:
        raise TreeError(f"tree order must be >= 1, got {k}")
    return tuple(x + (i,) for i in range(1, n_successors(x, k) + 1))


def fork(x: Vertex, k: Branching) -> Region:
    """The vertex together with its direct successors."""
    return (x,) + direct_successors(x, k)


def parent(x: Vertex) -> Vertex:
    if not x:
        raise TreeError("the root has no parent")
    return x[:-1]


def predecessors(x: Vertex) -> Region:
    """All strict prefixes of ``x``, root first; empty for the root."""
    return tuple(x[:i] for i in range(len(x)))


def level_set(n: int, k: Branching) -> Region:
    """The vertices at distance ``n`` from the root."""
    if n < 0:
        raise TreeError(f"level must be >= 0, got {n}")
    if isinstance(k, int):
        if k < 1:
            raise TreeError(f"tree order must be >= 1, got {k}")
        return tuple(product(range(1, k + 1), repeat=n))
    current: Region = (ROOT,)
    for _ in range(n):
        current = tuple(c for v in current for c in direct_successors(v, k))
    return current


def ball(n: int, k: Branching) -> Region:
    """``Lambda_[0,n]``: all vertices up to level ``n``."""
    return tuple(v for m in range(n + 1) for v in level_set(m, k))


def levels_between(m: int, n: int, k: Branching) -> Region:
    return tuple(v for j in range(m, n + 1) for v in level_set(j, k))


def future(x: Vertex, depth: int, k: Branching) -> Region:
    """``x`` and its descendants down to ``depth`` generations below it."""
    out = [x]
    frontier: Region = (x,)
    for _ in range(depth):
        frontier = tuple(c for v in frontier for c in direct_successors(v, k))
        out.extend(frontier)
    return canonical(out)


def shift_vertex(j: int, x: Vertex, k: int | None = None) -> Vertex:
    """The single shift: prefix the word with ``j``."""
    if j < 1 or (k is not None and j > k):
        raise TreeError(f"shift index {j} out of range")
    return (j,) + tuple(x)


def shift_by(x: Vertex, y: Vertex) -> Vertex:
    """Composite shift along ``x`` applied to ``y``: the concatenation ``x + y``."""
    out = tuple(y)
    for j in reversed(x):
        out = shift_vertex(j, out)
    return out


def shift_region(x: Vertex, r: Iterable[Vertex]) -> Region:
    return canonical(shift_by(x, y) for y in r)


def unshift(x: Vertex, y: Vertex) -> Vertex:
    """Inverse of :func:`shift_by` on the subtree rooted at ``x``."""
    if y[: len(x)] != x:
        raise TreeError(f"{format_vertex(y)} is not in the subtree of {format_vertex(x)}")
    return y[len(x):]


def subtree_root(vertices: Iterable[Vertex]) -> Vertex:
    """Return the vertex of a connected subtree closest to the root.

    Raises:
        InvalidSubtreeError: if the vertex set is empty or not connected.
    """
    vs = set(map(tuple, vertices))
    if not vs:
        raise InvalidSubtreeError("empty vertex set")
    tops = [v for v in vs if not v or v[:-1] not in vs]
    if len(tops) != 1:
        shown = ", ".join(format_vertex(v) for v in sorted(tops, key=_key)[:4])
        raise InvalidSubtreeError(f"vertex set is not connected (components rooted at {shown})")
    return tops[0]


def format_vertex(x: Vertex) -> str:
    return "o" if not x else ".".join(str(i) for i in x)


def parse_vertex(text: str) -> Vertex:
    text = text.strip()
    if text in ("o", ""):
        return ROOT
    try:
        word = tuple(int(p) for p in text.split("."))
    except ValueError:
        raise TreeError(f"malformed vertex {text!r}") from None
    if any(i < 1 for i in word):
        raise TreeError(f"branch indices must be >= 1 in {text!r}")
    return word


def format_region(r: Iterable[Vertex]) -> list[str]:
    return [format_vertex(v) for v in canonical(r)]


def parse_region(items: Iterable[str]) -> Region:
    return canonical(parse_vertex(s) for s in items)
