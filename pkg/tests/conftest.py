import os

import numpy as np
import pytest

from hierspheres.hierarchy import parse_hierarchy_file

DATA = os.path.join(os.path.dirname(__file__), "data")
FRUIT_ANIMAL = os.path.join(DATA, "fruit_animal.txt")

# node ids used in fruit_animal.txt
ROOT, FRUIT, ANIMAL, APPLE, ORANGE, CAT, DOG = range(7)

# rows fruit, animal, {fruit,apple}, {fruit,orange}, {animal,cat}, {animal,dog};
# columns apple, orange, cat, dog
FRUIT_ANIMAL_H = np.array([
    [1, 1, 0, 0],
    [0, 0, 1, 1],
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
])


@pytest.fixture
def fruit_tree():
    return parse_hierarchy_file(FRUIT_ANIMAL)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tree(rng, n_nodes):
    """Random rooted tree on ids 0..n_nodes-1 (root 0) with a shuffled top-down order."""
    from hierspheres.hierarchy import tree_from_parents

    parent = {i: int(rng.integers(0, i)) for i in range(1, n_nodes)}
    return tree_from_parents(parent, 0, list(range(1, n_nodes)))


def uniform_tree(branching):
    """Complete tree with the given branching per level; ids assigned breadth-first from 1."""
    from hierspheres.hierarchy import tree_from_parents

    parent, frontier, nid = {}, [0], 1
    for b in branching:
        nxt = []
        for p in frontier:
            for _ in range(b):
                parent[nid] = p
                nxt.append(nid)
                nid += 1
        frontier = nxt
    return tree_from_parents(parent, 0, sorted(parent))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
