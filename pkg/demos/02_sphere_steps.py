"""
Riemannian versus projected steps on the unit sphere
====================================================

Both updates keep a point on the sphere. The Riemannian step first removes
the radial part of the gradient, so large radial gradients cannot make it
jump; the projected step takes the full Euclidean step and renormalises.
"""
import numpy as np

from hierspheres import project_tangent, projected_step, random_sphere_point, rsgd_step

rng = np.random.default_rng(3)
x = random_sphere_point(3, rng=rng)

# a gradient that is almost purely radial
g = 5.0 * x + 0.1 * rng.standard_normal(3)
print("tangent part", np.round(project_tangent(x, g), 4))

r = rsgd_step(x, g, 0.5)
p = projected_step(x, g, 0.5)
print("riemannian moved", np.linalg.norm(r - x).round(4))
print("projected moved ", np.linalg.norm(p - x).round(4))

# a long chain of steps stays on the sphere to round-off
for _ in range(1000):
    x = rsgd_step(x, rng.standard_normal(3), 0.1)
print("norm after 1000 steps", abs(np.linalg.norm(x) - 1))
