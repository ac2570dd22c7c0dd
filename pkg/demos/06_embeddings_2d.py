"""
Two-dimensional embeddings for plotting
=======================================

A trainable 2-d map before the last layer gives embeddings that can be
scattered directly. The CSV written here has columns
sample_id, label, superclass, e1, e2.
"""
import sys
import tempfile

import numpy as np

from hierspheres import SyntheticSpec, TrainConfig, generate, save_csv
from hierspheres.cli import main

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp()
dataset, tree = generate(SyntheticSpec(num_supers=3, subs_per_super=3))
save_csv(dataset, f"{out}/data", tree)

main(["train", "--data", f"{out}/data", "--out", f"{out}/run", "--variant", "riemann", "--probe-2d",
      "--epochs", "40"])
main(["export-embeddings", "--checkpoint", f"{out}/run/model.txt", "--data", f"{out}/data",
      "--out", f"{out}/run/embeddings.csv"])

emb = np.genfromtxt(f"{out}/run/embeddings.csv", delimiter=",", skip_header=1)
for s in range(3):
    centre = emb[emb[:, 2] == s, 3:].mean(axis=0)
    print(f"super-class {s}: centre {np.round(centre, 2)}")
