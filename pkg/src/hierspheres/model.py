"""Rectifier feature extractor with the five last-layer variants.

Variants
--------
plain      logits = phi(x) @ W
multitask  plain head plus a super-class head, losses combined with weight lambda
hierarchy  W = Delta D H with an unconstrained Delta
manifold   W = normalize(Delta) D H, the normalisation is part of the model
riemann    W = Delta D H with Delta columns kept on the unit sphere by the optimizer

Gradients are computed by hand; see ``loss_and_grads``.
"""
from __future__ import annotations

import numpy as np

from .hierarchy import HierarchyTree
from .layer import (RadiusSpec, build_H, compose_W, level_ancestry,
                    radius_vector)
from .sphere import random_sphere_columns

VARIANTS = ("plain", "multitask", "hierarchy", "manifold", "riemann")
HIERARCHICAL = ("hierarchy", "manifold", "riemann")
SPHERE_VARIANTS = ("manifold", "riemann")

CHECKPOINT_MAGIC = "hierspheres-checkpoint"
CHECKPOINT_VERSION = 1


def relu(x):
    return np.maximum(x, 0.0)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    n, k = logits.shape
    if labels.shape != (n,) or n == 0:
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return float(loss), g / n


class FeatureExtractor:
    """Affine layers with rectifiers between them (none after the last one)."""

    def __init__(self, input_dim: int, hidden_dims, output_dim: int, rng: np.random.Generator):
        dims = [input_dim, *hidden_dims, output_dim]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    def forward(self, x):
        cache = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else relu(z)
            cache.append(z)
        return a, cache

    def backward(self, dout, cache):
        grads_w, grads_b = [None] * len(self.weights), [None] * len(self.weights)
        da = dout
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            z = cache[i + 1]
            dz = da if i == last else da * (z > 0)
            a_prev = cache[0] if i == 0 else relu(cache[i])
            grads_w[i] = a_prev.T @ dz
            grads_b[i] = dz.sum(axis=0)
            da = dz @ self.weights[i].T
        return grads_w, grads_b


class HierSphereModel:
    """Feature extractor plus one of the five classification heads.

    Parameters are exposed through ``params`` (a name -> array dict holding
    references, so in-place updates are seen by the model).
    """

    def __init__(self, tree: HierarchyTree, input_dim: int, variant: str = "riemann",
                 hidden=(64, 64), embed_dim: int = 32, radius: RadiusSpec | None = None,
                 lambda_multitask: float = 1.0, superclass_level: int = 1, seed: int = 0,
                 rng: np.random.Generator | None = None, probe_2d: bool = False):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.tree = tree
        self.variant = variant
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim = int(embed_dim)
        self.radius = radius if radius is not None else RadiusSpec()
        self.lambda_multitask = float(lambda_multitask)
        self.superclass_level = int(superclass_level)
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.H = build_H(tree)
        self.super_nodes = tree.nodes_at_level(self.superclass_level)
        sup_index = {n: k for k, n in enumerate(self.super_nodes)}
        self.leaf_to_super = np.array(
            [sup_index[tree.ancestor_at_level(leaf, self.superclass_level)]
             if len(tree.ancestors(leaf)) >= self.superclass_level else -1
             for leaf in tree.l_order], dtype=np.int64)

        if variant == "multitask" and np.any(self.leaf_to_super < 0):
            raise ValueError(f"multitask needs every leaf below level {self.superclass_level}")
        self.extractor = FeatureExtractor(input_dim, self.hidden, self.embed_dim, self.rng)
        self.probe = None
        self.head: dict[str, np.ndarray] = {}
        self._init_head(self.embed_dim)
        if probe_2d:
            self.attach_2d_probe()

    # -- parameters -------------------------------------------------------
    def _init_head(self, d):
        tree, rng = self.tree, self.rng
        self.head = {}
        if self.variant in ("plain", "multitask"):
            self.head["W"] = rng.standard_normal((d, tree.num_l)) / np.sqrt(d)
            if self.variant == "multitask":
                self.head["W_super"] = rng.standard_normal((d, len(self.super_nodes))) / np.sqrt(d)
        elif self.variant == "hierarchy":
            self.head["delta"] = rng.standard_normal((d, tree.num_p)) / np.sqrt(d)
        else:
            self.head["delta"] = random_sphere_columns(d, tree.num_p, rng)
        if self.variant in HIERARCHICAL and self.radius.mode == "learnable":
            self.head["radius"] = radius_vector(self.tree, self.radius)

    def attach_2d_probe(self):
        """Insert a trainable affine map to two dimensions before the last layer."""
        if self.probe is not None:
            raise RuntimeError("2d probe already attached")
        d = self.embed_dim
        self.probe = [self.rng.standard_normal((d, 2)) * np.sqrt(1.0 / d), np.zeros(2)]
        self._init_head(2)
        return self

    @property
    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for i, (w, b) in enumerate(zip(self.extractor.weights, self.extractor.biases)):
            p[f"layer{i}.W"] = w
            p[f"layer{i}.b"] = b
        if self.probe is not None:
            p["probe.W"], p["probe.b"] = self.probe
        p.update(self.head)
        return p

    def set_param(self, name: str, value: np.ndarray):
        """Replace a parameter array (shape must match)."""
        old = self.params[name]
        if old.shape != value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {old.shape}")
        old[...] = value

    @property
    def theta_names(self) -> list[str]:
        return [k for k in self.params if k.startswith(("layer", "probe"))]

    def radii(self) -> np.ndarray:
        if "radius" in self.head:
            return self.head["radius"]
        return radius_vector(self.tree, self.radius)

    def effective_delta(self) -> np.ndarray:
        delta = self.head["delta"]
        if self.variant == "manifold":
            return delta / np.linalg.norm(delta, axis=0)
        return delta

    def hyperplanes(self) -> np.ndarray:
        """Class hyperplanes ``W`` of shape (embedding dim, |L|)."""
        if self.variant in ("plain", "multitask"):
            return self.head["W"]
        return compose_W(self.effective_delta(), self.radii(), self.H)

    def last_layer_columns(self) -> np.ndarray:
        """Columns whose norms the unit-sphere drift metric is computed on."""
        if self.variant in ("plain", "multitask"):
            return self.head["W"]
        return self.effective_delta()

    # -- forward / backward -----------------------------------------------
    def embed(self, x: np.ndarray) -> np.ndarray:
        e, _ = self._embed(np.asarray(x, dtype=float))
        return e

    def _embed(self, x):
        if x.ndim != 2 or x.shape[1] != self.extractor.input_dim:
            raise ValueError(f"input shape {x.shape} does not match input_dim {self.extractor.input_dim}")
        phi, cache = self.extractor.forward(x)
        if self.probe is None:
            return phi, (cache, phi)
        return phi @ self.probe[0] + self.probe[1], (cache, phi)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits (batch, |L|); no softmax applied."""
        e, _ = self._embed(np.asarray(x, dtype=float))
        logits = e @ self.hyperplanes()
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("non-finite activations in forward pass")
        return logits

    def superclass_logits(self, x: np.ndarray, level: int | None = None) -> np.ndarray:
        """Scores of the nodes at ``level`` built from their accumulated offsets."""
        level = self.superclass_level if level is None else level
        e = self.embed(x)
        if self.variant == "plain":
            raise ValueError("plain variant has no super-class hyperplanes")
        if self.variant == "multitask":
            if level != self.superclass_level:
                raise ValueError(f"multitask head was built for level {self.superclass_level}")
            return e @ self.head["W_super"]
        m = level_ancestry(self.tree, level)
        return e @ ((self.effective_delta() * self.radii()) @ m)

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray):
        """Mean cross-entropy and gradients for every entry of ``params``."""
        x = np.asarray(x, dtype=float)
        labels = np.asarray(labels, dtype=np.int64)
        e, (cache, phi) = self._embed(x)
        w = self.hyperplanes()
        logits = e @ w
        loss, g = cross_entropy(logits, labels)
        grads: dict[str, np.ndarray] = {}
        grad_w = e.T @ g
        de = g @ w.T

        if self.variant == "multitask":
            sup = self.leaf_to_super[labels]
            s_loss, gs = cross_entropy(e @ self.head["W_super"], sup)
            loss += self.lambda_multitask * s_loss
            gs = self.lambda_multitask * gs
            grads["W_super"] = e.T @ gs
            de = de + gs @ self.head["W_super"].T

        if self.variant in ("plain", "multitask"):
            grads["W"] = grad_w
        else:
            radii = self.radii()
            m = self.H.right_multiply_t(grad_w)          # dL/d(Delta_eff D)
            delta_eff = self.effective_delta()
            grad_eff = m * radii
            if "radius" in self.head:
                grads["radius"] = (delta_eff * m).sum(axis=0)
            if self.variant == "manifold":
                delta = self.head["delta"]
                norms = np.linalg.norm(delta, axis=0)
                grad_eff = (grad_eff - delta_eff * (delta_eff * grad_eff).sum(axis=0)) / norms
            grads["delta"] = grad_eff

        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")

        if self.probe is not None:
            grads["probe.W"] = phi.T @ de
            grads["probe.b"] = de.sum(axis=0)
            de = de @ self.probe[0].T
        gw, gb = self.extractor.backward(de, cache)
        for i in range(len(gw)):
            grads[f"layer{i}.W"] = gw[i]
            grads[f"layer{i}.b"] = gb[i]
        return loss, {k: grads[k] for k in self.params}

    def loss(self, x, labels) -> float:
        """Loss only (used by finite differences)."""
        x = np.asarray(x, dtype=float)
        labels = np.asarray(labels, dtype=np.int64)
        e = self.embed(x)
        loss, _ = cross_entropy(e @ self.hyperplanes(), labels)
        if self.variant == "multitask":
            s_loss, _ = cross_entropy(e @ self.head["W_super"], self.leaf_to_super[labels])
            loss += self.lambda_multitask * s_loss
        return loss

    def predict(self, x) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest index
        return np.argmax(self.forward(x), axis=1)

    def predict_super(self, x, level: int | None = None) -> np.ndarray:
        if self.variant == "plain":
            level = self.superclass_level if level is None else level
            nodes = self.tree.nodes_at_level(level)
            idx = {n: k for k, n in enumerate(nodes)}
            leaves = self.predict(x)
            return np.array([idx[self.tree.ancestor_at_level(self.tree.l_order[j], level)]
                             for j in leaves], dtype=np.int64)
        return np.argmax(self.superclass_logits(x, level), axis=1)

    def super_labels(self, labels: np.ndarray, level: int | None = None) -> np.ndarray:
        level = self.superclass_level if level is None else level
        if level == self.superclass_level:
            return self.leaf_to_super[np.asarray(labels)]
        nodes = self.tree.nodes_at_level(level)
        idx = {n: k for k, n in enumerate(nodes)}
        return np.array([idx[self.tree.ancestor_at_level(self.tree.l_order[j], level)]
                         for j in labels], dtype=np.int64)

    # -- checkpoints ------------------------------------------------------
    def config(self) -> dict:
        return {
            "variant": self.variant,
            "input_dim": self.extractor.input_dim,
            "hidden": ",".join(map(str, self.hidden)),
            "embed_dim": self.embed_dim,
            "r0": self.radius.r0,
            "gamma": self.radius.gamma,
            "radius_mode": self.radius.mode,
            "lambda_multitask": self.lambda_multitask,
            "superclass_level": self.superclass_level,
            "probe_2d": int(self.probe is not None),
        }

    def save(self, path) -> None:
        """Text checkpoint: key=value header, then ``name rows cols`` blocks of row-major doubles."""
        with open(path, "w", newline="\n") as fh:
            fh.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
            for k, v in self.config().items():
                fh.write(f"# {k}={v}\n")
            for name, arr in self.params.items():
                a2 = arr.reshape(arr.shape[0], -1) if arr.ndim == 2 else arr.reshape(1, -1)
                fh.write(f"{name} {arr.ndim} {a2.shape[0]} {a2.shape[1]}\n")
                for row in a2:
                    fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def load(cls, path, tree: HierarchyTree) -> "HierSphereModel":
        with open(path) as fh:
            lines = fh.read().splitlines()
        if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
            raise ValueError(f"{path}: not a checkpoint file")
        if lines[0].split()[-1] != f"v{CHECKPOINT_VERSION}":
            raise ValueError(f"{path}: unsupported checkpoint version {lines[0].split()[-1]}")
        meta = {}
        i = 1
        while i < len(lines) and lines[i].startswith("# "):
            k, v = lines[i][2:].split("=", 1)
            meta[k] = v
            i += 1
        model = cls(tree, int(meta["input_dim"]), variant=meta["variant"],
                    hidden=[int(h) for h in meta["hidden"].split(",") if h],
                    embed_dim=int(meta["embed_dim"]),
                    radius=RadiusSpec(float(meta["r0"]), float(meta["gamma"]), meta["radius_mode"]),
                    lambda_multitask=float(meta["lambda_multitask"]),
                    superclass_level=int(meta["superclass_level"]),
                    probe_2d=bool(int(meta["probe_2d"])))
        params = model.params
        loaded = set()
        while i < len(lines):
            name, ndim, rows, cols = lines[i].split()
            rows, cols = int(rows), int(cols)
            block = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + rows]])
            block = block.reshape(rows, cols)
            if name not in params:
                raise ValueError(f"{path}: unexpected tensor {name!r}")
            model.set_param(name, block if int(ndim) == 2 else block.reshape(-1))
            loaded.add(name)
            i += 1 + rows
        missing = set(params) - loaded
        if missing:
            raise ValueError(f"{path}: missing tensors {sorted(missing)}")
        return model
