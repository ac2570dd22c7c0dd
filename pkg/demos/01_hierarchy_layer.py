"""
Building class hyperplanes from a taxonomy
==========================================

A four-class taxonomy (two fruits, two animals) becomes a binary ancestry
matrix H, a diagonal radius matrix D and finally the class hyperplanes
W = Delta D H.
"""
import io

import numpy as np

from hierspheres import RadiusSpec, build_D, build_H, compose_W, parse_hierarchy_file

# child/parent pairs: 1 fruit, 2 animal, 3 apple, 4 orange, 5 cat, 6 dog; 0 is the root
text = "6\n1 0\n2 0\n3 1\n4 1\n5 2\n6 2\n"
tree = parse_hierarchy_file(io.StringIO(text))
print("nodes in P:", tree.p_order, " leaves L:", tree.l_order)

# column j of H marks every node on the path from the root to leaf j
H = build_H(tree)
print(H.toarray())

# radii shrink with depth: r0 * gamma ** depth
D = build_D(tree, RadiusSpec(r0=1.0, gamma=0.5))
print(np.diag(D))

# one unit offset per node; apple's hyperplane is 0.5 * fruit + 0.25 * apple
rng = np.random.default_rng(0)
delta = rng.standard_normal((3, tree.num_p))
delta /= np.linalg.norm(delta, axis=0)
W = compose_W(delta, D, H)
print(np.allclose(W[:, 0], 0.5 * delta[:, 0] + 0.25 * delta[:, 2]))

# siblings stay close: apple and orange differ only through their own offsets
print("apple-orange", np.linalg.norm(W[:, 0] - W[:, 1]).round(3),
      " apple-cat", np.linalg.norm(W[:, 0] - W[:, 2]).round(3))
