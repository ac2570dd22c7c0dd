"""Synthetic hierarchical Gaussian-mixture datasets and their CSV storage."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .hierarchy import HierarchyTree, tree_from_parents, write_hierarchy_file

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SyntheticSpec:
    """Mixture parameters.

    ``branching`` overrides ``(num_supers, subs_per_super)`` for deeper trees,
    e.g. ``(3, 2, 2, 3)`` gives a four-level tree. The spread at level ``k``
    is ``super_spread * (sub_spread / super_spread) ** (k - 1)``.
    """

    num_supers: int = 9
    subs_per_super: int = 4
    samples_per_class: int = 20
    input_dim: int = 256
    super_spread: float = 4.0
    sub_spread: float = 2.0
    noise_sigma: float = 0.3
    seed: int = 0
    branching: tuple[int, ...] | None = None

    def __post_init__(self):
        counts = [self.num_supers, self.subs_per_super, self.samples_per_class, self.input_dim]
        counts += list(self.branching or ())
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if not (self.super_spread > 0 and self.sub_spread > 0 and self.noise_sigma > 0):
            raise ValueError("spreads and noise_sigma must be positive")
        if not self.sub_spread < self.super_spread:
            raise ValueError("sub_spread must be smaller than super_spread")

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(self.branching) if self.branching else (self.num_supers, self.subs_per_super)

    def spread(self, level: int) -> float:
        return self.super_spread * (self.sub_spread / self.super_spread) ** (level - 1)


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        n = len(self.labels)
        if self.features.shape[0] != n:
            raise ValueError("features and labels disagree on the sample count")
        both = np.concatenate([self.train_idx, self.test_idx])
        if len(both) != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ValueError("train/test splits must be disjoint and cover every sample")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.train_idx], self.labels[self.train_idx]

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.test_idx], self.labels[self.test_idx]


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def generate(spec: SyntheticSpec, return_means: bool = False):
    """Sample a dataset and its tree.

    Leaves get ids ``0..|L|-1`` (equal to the dataset labels), internal nodes
    follow in breadth-first order and the root id is last. ``p_order`` lists
    nodes top-down, level by level.
    """
    rng = np.random.default_rng(spec.seed)
    levels = spec.levels
    d = spec.input_dim

    # breadth-first expansion: one entry per node at the current level
    frontier = [(None, np.zeros(d))]
    per_level = []
    for k, width in enumerate(levels, start=1):
        nxt = []
        for parent, mean in frontier:
            for _ in range(width):
                nxt.append((parent, mean + spec.spread(k) * _unit(rng, d)))
        per_level.append(nxt)
        frontier = [(i, m) for i, (_, m) in enumerate(nxt)]

    n_leaves = len(per_level[-1])
    internal_ids, next_id = [], n_leaves
    for level in per_level[:-1]:
        internal_ids.append(list(range(next_id, next_id + len(level))))
        next_id += len(level)
    ids = internal_ids + [list(range(n_leaves))]
    root = next_id
    parent = {}
    for k, level in enumerate(per_level):
        for i, (par, _) in enumerate(level):
            parent[ids[k][i]] = root if k == 0 else ids[k - 1][par]
    p_order = [n for level_ids in ids for n in level_ids]
    tree = tree_from_parents(parent, root, p_order)

    means = np.stack([m for _, m in per_level[-1]])
    m = spec.samples_per_class
    labels = np.repeat(np.arange(n_leaves), m)
    features = means[labels] + spec.noise_sigma * rng.standard_normal((len(labels), d))

    train_idx, test_idx = [], []
    n_train = int(round(0.8 * m))
    for c in range(n_leaves):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    ds = LabeledDataset(features, labels, np.sort(np.concatenate(train_idx)),
                        np.sort(np.concatenate(test_idx)))
    if return_means:
        return ds, tree, means
    return ds, tree


def save_csv(dataset: LabeledDataset, directory, tree: HierarchyTree | None = None) -> str:
    """Write ``data.csv``, split index files and a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    d = dataset.features.shape[1]
    with open(os.path.join(directory, "data.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{i + 1}" for i in range(d)])
        for lab, row in zip(dataset.labels, dataset.features):
            w.writerow([int(lab)] + [f"{v:.17g}" for v in row])
    for name, idx in (("train", dataset.train_idx), ("test", dataset.test_idx)):
        with open(os.path.join(directory, f"{name}.txt"), "w", newline="\n") as fh:
            fh.write("\n".join(map(str, idx.tolist())) + "\n")
    manifest = {"data": "data.csv", "train": "train.txt", "test": "test.txt",
                "num_samples": int(len(dataset.labels)), "input_dim": int(d)}
    if tree is not None:
        write_hierarchy_file(tree, os.path.join(directory, "hierarchy.txt"))
        manifest["hierarchy"] = "hierarchy.txt"
    path = os.path.join(directory, MANIFEST)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _read_rows(path):
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise ValueError(f"{path}: line 1: expected header starting with 'label'")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: malformed row") from None
    return np.array(labels, dtype=np.int64), np.array(rows, dtype=float).reshape(len(rows), width - 1)


def _read_index(path):
    with open(path) as fh:
        return np.array([int(ln) for ln in fh if ln.strip()], dtype=np.int64)


def load_csv(path) -> LabeledDataset:
    """Load from a manifest file or the directory that holds one."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    base = os.path.dirname(path)
    with open(path) as fh:
        manifest = json.load(fh)
    labels, features = _read_rows(os.path.join(base, manifest["data"]))
    if "input_dim" in manifest and features.shape[1] != manifest["input_dim"]:
        raise ValueError(f"{path}: data has {features.shape[1]} features, manifest says {manifest['input_dim']}")
    return LabeledDataset(features, labels, _read_index(os.path.join(base, manifest["train"])),
                          _read_index(os.path.join(base, manifest["test"])))


def manifest_hierarchy(path) -> str | None:
    """Path of the hierarchy file named in a dataset manifest, if any."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    with open(path) as fh:
        manifest = json.load(fh)
    name = manifest.get("hierarchy")
    return os.path.join(os.path.dirname(path), name) if name else None
