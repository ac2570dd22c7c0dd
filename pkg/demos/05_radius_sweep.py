"""
Radius decay on a deeper tree
=============================

A four-level taxonomy (3, 2, 2, 3 children per level). Smaller gamma shrinks
the spheres of deep nodes faster.
"""
from hierspheres import SyntheticSpec, TrainConfig, generate
from hierspheres.training import format_sweep, radius_sweep

dataset, tree = generate(SyntheticSpec(branching=(3, 2, 2, 3)))
print(f"depth {tree.max_depth}, |L|={tree.num_l}")
rows = radius_sweep(TrainConfig(), dataset, tree, [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
print(format_sweep(rows))
