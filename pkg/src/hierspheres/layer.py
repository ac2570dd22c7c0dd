"""Hierarchical layer ``H``, radius-decay diagonal ``D`` and hyperplane composition.

Class hyperplanes are ``W = Delta @ D @ H``: column ``j`` of ``W`` sums the
radius-scaled offset vectors of every non-root ancestor of leaf ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hierarchy import HierarchyTree, depth, validate_tree

DENSE_LIMIT = 1024


@dataclass(frozen=True)
class HierarchicalLayer:
    """Fixed binary ancestry matrix with rows in ``p_order`` and columns in ``l_order``.

    ``ancestors[j]`` holds the row indices of the ones in column ``j``. The
    dense matrix is materialised only for ``|P| <= DENSE_LIMIT``.
    """

    ancestors: tuple[np.ndarray, ...]
    p_order: tuple[int, ...]
    l_order: tuple[int, ...]
    dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.p_order), len(self.l_order)

    @property
    def is_sparse(self) -> bool:
        return self.dense is None

    def toarray(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense.copy()
        h = np.zeros(self.shape, dtype=np.int64)
        for j, rows in enumerate(self.ancestors):
            h[rows, j] = 1
        return h

    def right_multiply(self, m: np.ndarray) -> np.ndarray:
        """``m @ H`` for ``m`` of shape (k, |P|)."""
        if self.dense is not None:
            return m @ self.dense
        return np.stack([m[:, rows].sum(axis=1) for rows in self.ancestors], axis=1)

    def right_multiply_t(self, m: np.ndarray) -> np.ndarray:
        """``m @ H.T`` for ``m`` of shape (k, |L|)."""
        if self.dense is not None:
            return m @ self.dense.T
        out = np.zeros((m.shape[0], len(self.p_order)))
        for j, rows in enumerate(self.ancestors):
            out[:, rows] += m[:, j:j + 1]
        return out


@dataclass
class RadiusSpec:
    r0: float = 1.0
    gamma: float = 0.5
    mode: str = "fixed"  # fixed | learnable
    learned_values: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("fixed", "learnable"):
            raise ValueError(f"unknown radius mode {self.mode!r}")
        if not (self.r0 > 0 and self.gamma > 0):
            raise ValueError(f"r0 and gamma must be positive, got r0={self.r0}, gamma={self.gamma}")
        if self.learned_values is not None:
            self.learned_values = np.asarray(self.learned_values, dtype=float)
            if not np.all(np.isfinite(self.learned_values)):
                raise ValueError("learned radius values must be finite")


def build_H(tree: HierarchyTree) -> HierarchicalLayer:
    problems = validate_tree(tree)
    if problems:
        raise ValueError("invalid tree: " + "; ".join(problems))
    idx = tree.p_index
    ancestors = tuple(np.array([idx[a] for a in tree.ancestors(leaf)], dtype=np.int64)
                      for leaf in tree.l_order)
    layer = HierarchicalLayer(ancestors, tree.p_order, tree.l_order)
    if tree.num_p <= DENSE_LIMIT:
        h = np.zeros((tree.num_p, tree.num_l), dtype=np.int64)
        for j, rows in enumerate(ancestors):
            h[rows, j] = 1
        h.setflags(write=False)
        layer = HierarchicalLayer(ancestors, tree.p_order, tree.l_order, h)
    return layer


def fixed_radii(tree: HierarchyTree, r0: float, gamma: float) -> np.ndarray:
    """Radius ``r0 * gamma**depth`` for every node of ``p_order``."""
    return np.array([r0 * gamma ** depth(tree, n) for n in tree.p_order])


def init_learned(tree: HierarchyTree, spec: RadiusSpec) -> RadiusSpec:
    """Learnable spec whose values start at the fixed-mode radii."""
    return RadiusSpec(spec.r0, spec.gamma, "learnable", fixed_radii(tree, spec.r0, spec.gamma))


def radius_vector(tree: HierarchyTree, spec: RadiusSpec) -> np.ndarray:
    if spec.mode == "learnable":
        if spec.learned_values is None:
            return fixed_radii(tree, spec.r0, spec.gamma)
        if spec.learned_values.shape != (tree.num_p,):
            raise ValueError(f"expected {tree.num_p} learned radii, got {spec.learned_values.shape}")
        return spec.learned_values.copy()
    return fixed_radii(tree, spec.r0, spec.gamma)


def build_D(tree: HierarchyTree, spec: RadiusSpec) -> np.ndarray:
    return np.diag(radius_vector(tree, spec))


def _diag(d_mat: np.ndarray) -> np.ndarray:
    d_mat = np.asarray(d_mat, dtype=float)
    return np.diag(d_mat) if d_mat.ndim == 2 else d_mat


def compose_W(delta: np.ndarray, d_mat: np.ndarray, h: HierarchicalLayer) -> np.ndarray:
    """Hyperplanes ``delta @ D @ H`` of shape (d, |L|)."""
    radii = _diag(d_mat)
    n_p = len(h.p_order)
    if delta.ndim != 2 or delta.shape[1] != n_p or radii.shape != (n_p,):
        raise ValueError(
            f"dimension mismatch: delta {delta.shape}, D {radii.shape}, H {h.shape}")
    return h.right_multiply(delta * radii)


def oracle_W(delta: np.ndarray, spec: RadiusSpec, tree: HierarchyTree) -> np.ndarray:
    """Reference hyperplanes by walking each leaf's path to the root.

    Deliberately avoids matrix algebra: every term ``R_p * delta_p`` is added
    one ancestor at a time, with the radius recomputed from the path length.
    """
    if delta.ndim != 2 or delta.shape[1] != tree.num_p:
        raise ValueError(f"dimension mismatch: delta {delta.shape}, |P| = {tree.num_p}")
    col = {n: i for i, n in enumerate(tree.p_order)}
    learned = spec.learned_values if spec.mode == "learnable" else None
    w = np.zeros((delta.shape[0], tree.num_l))
    for j, leaf in enumerate(tree.l_order):
        node, steps = leaf, 0
        chain = []
        while tree.parent[node] is not None:
            chain.append(node)
            node = tree.parent[node]
        for node in chain:
            k = len(chain) - steps
            steps += 1
            radius = learned[col[node]] if learned is not None else spec.r0 * spec.gamma ** k
            w[:, j] += radius * delta[:, col[node]]
    return w


def parent_level_W(delta: np.ndarray, d_mat: np.ndarray, tree: HierarchyTree, level: int) -> np.ndarray:
    """Hyperplanes of the nodes at depth ``level`` (columns in ``p_order`` order)."""
    nodes = tree.nodes_at_level(level) if level >= 1 else []
    if not nodes:
        raise ValueError(f"no nodes at level {level}")
    radii = _diag(d_mat)
    scaled = delta * radii
    idx = tree.p_index
    cols = [scaled[:, [idx[a] for a in tree.ancestors(n)]].sum(axis=1) for n in nodes]
    return np.stack(cols, axis=1)


def level_ancestry(tree: HierarchyTree, level: int) -> np.ndarray:
    """Binary |P| x |nodes at level| matrix: node ``i`` is on the path of level node ``k``."""
    nodes = tree.nodes_at_level(level)
    if not nodes:
        raise ValueError(f"no nodes at level {level}")
    m = np.zeros((tree.num_p, len(nodes)))
    for k, n in enumerate(nodes):
        for a in tree.ancestors(n):
            m[tree.p_index[a], k] = 1.0
    return m


def write_matrix(m: np.ndarray, path) -> None:
    """Plain-text matrix: ``rows cols`` header then one space-separated row per line."""
    m = np.atleast_2d(np.asarray(m))
    if np.issubdtype(m.dtype, np.integer):
        fmt = str
    else:
        fmt = lambda v: f"{v:.17g}"
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]}\n")
        for row in m:
            fh.write(" ".join(fmt(v) for v in row) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad matrix header")
        rows, cols = int(header[0]), int(header[1])
        body = [ln.split() for ln in fh if ln.strip()]
    if len(body) != rows or any(len(r) != cols for r in body):
        raise ValueError(f"{path}: expected {rows}x{cols} entries")
    if all("." not in v and "e" not in v.lower() for r in body for v in r):
        return np.array([[int(v) for v in r] for r in body], dtype=np.int64).reshape(rows, cols)
    return np.array([[float(v) for v in r] for r in body]).reshape(rows, cols)
