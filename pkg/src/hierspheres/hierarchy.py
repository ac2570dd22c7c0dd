"""Class hierarchies: parsing, validation, transformations and random trees.

A hierarchy is read from the child/parent pair format::

    N
    child parent
    ...

where the first line holds the number of pairs and every following line
names a direct parent. Node ids are integers. The root is never part of the
node ordering ``p_order``; its offset vector is fixed to zero.
"""
from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np


class HierarchyError(ValueError):
    """Raised for malformed hierarchy files or trees violating the tree property."""


@dataclass(frozen=True)
class NodePath:
    """Sequence of 1-based child positions from the root; empty for the root."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        if any(i < 1 for i in self.indices):
            raise ValueError(f"path indices must be positive, got {self.indices}")

    def child(self, i: int) -> "NodePath":
        return NodePath(self.indices + (int(i),))

    @property
    def is_root(self) -> bool:
        return not self.indices

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class Node:
    id: int
    parent: int | None
    label: str | None = None


@dataclass(frozen=True)
class HierarchyTree:
    """Rooted tree with ordered node set ``p_order`` and leaf set ``l_order``.

    ``nodes`` is a record list so that invalid trees (several parents, loops)
    can be represented and reported by :func:`validate_tree`; the derived
    lookups below assume a valid tree.
    """

    nodes: tuple[Node, ...]
    p_order: tuple[int, ...]
    l_order: tuple[int, ...]
    synthetic_root: bool = field(default=False, compare=False)

    @cached_property
    def parent(self) -> dict[int, int | None]:
        return {n.id: n.parent for n in self.nodes}

    @cached_property
    def root(self) -> int:
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1:
            raise HierarchyError(f"expected exactly one root, found {len(roots)}")
        return roots[0]

    @cached_property
    def children(self) -> dict[int, list[int]]:
        # children listed in p_order so iteration order is deterministic
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for c in self.p_order:
            out[self.parent[c]].append(c)
        return out

    @cached_property
    def p_index(self) -> dict[int, int]:
        return {node: i for i, node in enumerate(self.p_order)}

    @cached_property
    def l_index(self) -> dict[int, int]:
        return {node: i for i, node in enumerate(self.l_order)}

    @cached_property
    def _depths(self) -> dict[int, int]:
        depths = {self.root: 0}
        stack = [self.root]
        while stack:
            n = stack.pop()
            for c in self.children[n]:
                depths[c] = depths[n] + 1
                stack.append(c)
        return depths

    @property
    def num_p(self) -> int:
        return len(self.p_order)

    @property
    def num_l(self) -> int:
        return len(self.l_order)

    def labels(self) -> dict[int, str | None]:
        return {n.id: n.label for n in self.nodes}

    def ancestors(self, node: int) -> list[int]:
        """Non-root ancestors of ``node`` including itself, from the top down."""
        out = []
        while node != self.root:
            out.append(node)
            node = self.parent[node]
        return out[::-1]

    def path(self, node: int) -> NodePath:
        """Child-position path of ``node`` (positions follow ``p_order``)."""
        idx = []
        for n in self.ancestors(node):
            idx.append(self.children[self.parent[n]].index(n) + 1)
        return NodePath(tuple(idx))

    def nodes_at_level(self, level: int) -> list[int]:
        """Nodes of depth ``level`` in ``p_order`` order."""
        return [n for n in self.p_order if self._depths[n] == level]

    def ancestor_at_level(self, node: int, level: int) -> int:
        anc = self.ancestors(node)
        if level < 1 or level > len(anc):
            raise HierarchyError(f"node {node} has no ancestor at level {level}")
        return anc[level - 1]

    @property
    def max_depth(self) -> int:
        return max(self._depths.values())


def depth(tree: HierarchyTree, node: int) -> int:
    """Number of edges between ``node`` and the root."""
    if node not in tree.parent:
        raise KeyError(f"unknown node id {node}")
    return tree._depths[node]


def _from_pairs(pairs: Sequence[tuple[int, int]], labels: Mapping[int, str] | None = None) -> HierarchyTree:
    """Build a tree from ordered (child, parent) pairs.

    Orders follow first appearance in ``pairs``. Nodes never listed as a child
    hang below the root: if there is exactly one such node it *is* the root,
    otherwise a synthetic root is created above all of them.
    """
    labels = labels or {}
    parent_of: dict[int, int] = {}
    seen: list[int] = []
    seen_set: set[int] = set()
    parents_col: set[int] = set()
    for lineno, (c, p) in enumerate(pairs, start=1):
        if c == p:
            raise HierarchyError(f"pair {lineno}: node {c} is its own parent (cycle)")
        if c in parent_of and parent_of[c] != p:
            raise HierarchyError(
                f"pair {lineno}: node {c} has multiple parents ({parent_of[c]} and {p})")
        parent_of[c] = p
        parents_col.add(p)
        for n in (c, p):
            if n not in seen_set:
                seen_set.add(n)
                seen.append(n)

    tops = [n for n in seen if n not in parent_of]
    if not tops:
        raise HierarchyError("cycle detected: every node has a parent")
    synthetic = len(tops) > 1
    if synthetic:
        root = max(seen) + 1
        for t in tops:
            parent_of[t] = root
    else:
        root = tops[0]

    # every node must reach the root
    for n in seen:
        walk, cur = set(), n
        while cur != root:
            if cur in walk:
                raise HierarchyError(f"cycle detected through node {cur}")
            walk.add(cur)
            cur = parent_of[cur]

    p_order = tuple(n for n in seen if n != root)
    l_order = tuple(n for n in p_order if n not in parents_col)
    nodes = [Node(root, None, labels.get(root))]
    nodes += [Node(n, parent_of[n], labels.get(n)) for n in p_order]
    return HierarchyTree(tuple(nodes), p_order, l_order, synthetic_root=synthetic)


def parse_hierarchy_file(stream) -> HierarchyTree:
    """Parse the child/parent pair format from a text stream, bytes or a path."""
    return _from_pairs(read_hierarchy_pairs(stream))


def read_hierarchy_pairs(stream) -> list[tuple[int, int]]:
    """Raw ``(child, parent)`` pairs in file order; only the syntax is checked."""
    if isinstance(stream, (str, os.PathLike)):
        with open(stream) as fh:
            return read_hierarchy_pairs(fh)
    text = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("ascii")

    lines = text.splitlines()
    if not lines:
        raise HierarchyError("empty hierarchy file")
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise HierarchyError(f"line 1: expected pair count, got {lines[0]!r}") from None
    if n < 0:
        raise HierarchyError(f"line 1: negative pair count {n}")
    if n == 0:
        raise HierarchyError("no classes: pair count is 0")

    body = [(i, ln) for i, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != n:
        raise HierarchyError(f"count mismatch: header says {n} pairs, found {len(body)}")
    pairs = []
    for lineno, ln in body:
        tok = ln.split()
        if len(tok) != 2:
            raise HierarchyError(f"line {lineno}: expected 'child parent', got {ln!r}")
        try:
            pairs.append((int(tok[0]), int(tok[1])))
        except ValueError:
            raise HierarchyError(f"line {lineno}: non-integer node id in {ln!r}") from None
    return pairs


def _realizable_pairs(tree: HierarchyTree) -> list[tuple[int, int]] | None:
    # Greedy pair ordering whose first-appearance order reproduces p_order.
    root = tree.root
    emitted: set[int] = set()
    seen = {root} if not tree.synthetic_root else set()
    out = []
    order = tree.p_order
    k = 0

    def emit(c):
        emitted.add(c)
        out.append((c, tree.parent[c]))

    while k < len(order):
        t = order[k]
        if t in seen:
            k += 1
            continue
        kids = [c for c in tree.children[t] if c in seen and c not in emitted]
        par = tree.parent[t]
        if kids:
            emit(kids[0])
            seen.add(t)
        elif par == root and not tree.synthetic_root:
            emit(t)
            seen.add(t)
        elif par in seen and par != root:
            emit(t)
            seen.add(t)
        elif k + 1 < len(order) and order[k + 1] == par and par != root:
            emit(t)
            seen.update((t, par))
        else:
            return None
        k += 1
    for c in order:
        if c not in emitted and not (tree.synthetic_root and tree.parent[c] == root):
            emit(c)
    return out


def serialize_hierarchy(tree: HierarchyTree) -> str:
    """Write ``tree`` in the pair format.

    The pair order is chosen so that parsing the output reproduces
    ``p_order``; if no such order exists pairs are written in ``p_order``.
    """
    pairs = _realizable_pairs(tree)
    if pairs is None:
        pairs = [(c, tree.parent[c]) for c in tree.p_order
                 if not (tree.synthetic_root and tree.parent[c] == tree.root)]
    lines = [str(len(pairs))] + [f"{c} {p}" for c, p in pairs]
    return "\n".join(lines) + "\n"


def tree_edges(tree: HierarchyTree) -> dict[int, list[int]]:
    """Child -> [parent] map ordered so that :func:`dag_to_tree` rebuilds ``tree``."""
    pairs = _realizable_pairs(tree)
    if pairs is None:
        pairs = [(c, tree.parent[c]) for c in tree.p_order]
    edges = {c: [p] for c, p in pairs}
    for c in tree.p_order:
        edges.setdefault(c, [tree.parent[c]])
    return edges


def write_hierarchy_file(tree: HierarchyTree, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(serialize_hierarchy(tree))


def validate_tree(tree: HierarchyTree) -> list[str]:
    """Return a list of invariant violations; empty iff ``tree`` is valid."""
    report = []
    parents: dict[int, set] = defaultdict(set)
    for n in tree.nodes:
        parents[n.id].add(n.parent)
    for nid, ps in parents.items():
        if len(ps) > 1:
            report.append(f"multiple parents for node {nid}: {sorted(ps, key=str)}")
    roots = [nid for nid, ps in parents.items() if None in ps]
    if len(roots) != 1:
        report.append(f"expected exactly one root, found {len(roots)}")
    for nid, ps in parents.items():
        for p in ps:
            if p is not None and p not in parents:
                report.append(f"node {nid} has unknown parent {p}")
    if report:
        return report

    parent = {nid: next(iter(ps)) for nid, ps in parents.items()}
    root = roots[0]
    for nid in parent:
        walk, cur = set(), nid
        while cur != root:
            if cur in walk:
                report.append(f"cycle through node {nid}")
                break
            walk.add(cur)
            cur = parent[cur]

    non_root = set(parent) - {root}
    if len(tree.p_order) != len(set(tree.p_order)):
        report.append("p_order contains duplicates")
    if set(tree.p_order) != non_root:
        report.append("p_order does not list exactly the non-root nodes")
    if root in tree.p_order:
        report.append("root appears in p_order")
    has_child = {p for p in parent.values() if p is not None}
    leaves = non_root - has_child
    for n in tree.l_order:
        if n not in tree.p_order:
            report.append(f"leaf {n} missing from p_order")
        if n in has_child:
            report.append(f"l_order entry {n} is not a leaf")
    for n in sorted(leaves - set(tree.l_order)):
        report.append(f"leaf {n} missing from l_order")
    if len(tree.l_order) > len(tree.p_order):
        report.append("|L| exceeds |P|")
    return report


def merge_single_child_chains(tree: HierarchyTree) -> HierarchyTree:
    """Collapse every non-root internal node that has exactly one child.

    The child survives and is re-attached to the removed node's parent, so
    leaf ids and the ancestor relation between surviving nodes are kept.
    """
    parent = dict(tree.parent)
    children = {k: list(v) for k, v in tree.children.items()}
    removed = set()
    changed = True
    while changed:
        changed = False
        for n in tree.p_order:
            if n in removed or len(children[n]) != 1:
                continue
            (c,) = children[n]
            p = parent[n]
            parent[c] = p
            children[p] = [c if x == n else x for x in children[p]]
            removed.add(n)
            changed = True
    p_order = tuple(n for n in tree.p_order if n not in removed)
    labels = tree.labels()
    nodes = (Node(tree.root, None, labels[tree.root]),) + tuple(
        Node(n, parent[n], labels[n]) for n in p_order)
    return HierarchyTree(nodes, p_order, tree.l_order, synthetic_root=tree.synthetic_root)


def dag_to_tree(edges: Mapping[int, Iterable[int]]) -> HierarchyTree:
    """Reduce a child -> parents multimap to a tree by keeping the smallest parent.

    Orders follow first appearance over ``(child, kept parent)`` pairs in the
    mapping's iteration order.
    """
    edges = {c: list(ps) for c, ps in edges.items()}
    kept = {c: min(ps) for c, ps in edges.items() if ps}
    everything = set(kept) | set(kept.values())
    roots = everything - set(kept)
    if len(roots) != 1:
        raise HierarchyError(f"no unique root: candidates {sorted(roots)}")
    (root,) = roots
    for n in kept:
        walk, cur = set(), n
        while cur != root:
            if cur in walk or cur not in kept:
                raise HierarchyError(f"node {n} is disconnected from root {root}")
            walk.add(cur)
            cur = kept[cur]
    return _from_pairs(list(kept.items()))


def random_hierarchy(num_leaves: int, num_superclasses: int, seed: int) -> HierarchyTree:
    """Two-level tree with leaves assigned to super-classes uniformly at random.

    Leaf ids are ``0..num_leaves-1`` in ``l_order`` (matching dataset labels),
    super-class ids follow, and the root id is last. Assignments are redrawn
    until every super-class owns at least one leaf.
    """
    if not num_leaves >= num_superclasses >= 1:
        raise HierarchyError(
            f"need num_leaves >= num_superclasses >= 1, got {num_leaves}, {num_superclasses}")
    rng = np.random.default_rng(seed)
    while True:
        assign = rng.integers(0, num_superclasses, size=num_leaves)
        if len(np.unique(assign)) == num_superclasses:
            break
    sup_ids = [num_leaves + s for s in range(num_superclasses)]
    root = num_leaves + num_superclasses
    nodes = [Node(root, None)] + [Node(s, root) for s in sup_ids]
    nodes += [Node(i, sup_ids[a]) for i, a in enumerate(assign.tolist())]
    leaves = tuple(range(num_leaves))
    return HierarchyTree(tuple(nodes), tuple(sup_ids) + leaves, leaves)


def tree_from_parents(parent: Mapping[int, int], root: int, p_order: Sequence[int]) -> HierarchyTree:
    """Assemble a tree from an explicit parent map and node ordering."""
    has_child = set(parent.values())
    nodes = (Node(root, None),) + tuple(Node(n, parent[n]) for n in p_order)
    l_order = tuple(n for n in p_order if n not in has_child)
    return HierarchyTree(nodes, tuple(p_order), l_order)
