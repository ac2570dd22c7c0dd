"""Training loop, evaluation, finite-difference gradient checks and ablation drivers."""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .hierarchy import HierarchyTree, random_hierarchy
from .layer import RadiusSpec
from .model import HierSphereModel, VARIANTS
from .sphere import norm_drift, project_tangent, projected_step, retract, rsgd_step

logger = logging.getLogger(__name__)

SPHERE_UPDATES = ("riemannian", "projected", "none")
TABLE_COLUMNS = {"plain": "Plain", "multitask": "Multitask", "hierarchy": "Hierarchy",
                 "manifold": "+Manifold", "riemann": "+Riemann"}


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_milestones: tuple[float, ...] = (0.5, 0.75)
    lr_factor: float = 10.0
    seed: int = 0
    variant: str = "riemann"
    r0: float = 1.0
    gamma: float = 0.5
    radius_mode: str = "fixed"
    sphere_update: str = "riemannian"
    sphere_momentum: bool = True
    lambda_multitask: float = 1.0
    hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = 32
    superclass_level: int = 1
    probe_2d: bool = False

    def __post_init__(self):
        self.lr_milestones = tuple(float(m) for m in self.lr_milestones)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.lr0 >= 0:
            raise ValueError("lr0 must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        ms = self.lr_milestones
        if any(not 0 < m < 1 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing in (0, 1), got {ms}")
        if self.sphere_update not in SPHERE_UPDATES:
            raise ValueError(f"unknown sphere update {self.sphere_update!r}")
        if self.variant == "riemann" and self.sphere_update == "none":
            raise ValueError("riemann variant needs sphere_update 'riemannian' or 'projected'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        RadiusSpec(self.r0, self.gamma, self.radius_mode)

    @property
    def effective_sphere_update(self) -> str:
        return self.sphere_update if self.variant == "riemann" else "none"

    def radius_spec(self) -> RadiusSpec:
        return RadiusSpec(self.r0, self.gamma, self.radius_mode)

    def milestone_epochs(self) -> list[int]:
        return [int(m * self.epochs) for m in self.lr_milestones]

    def lr_at_epoch(self, epoch: int) -> float:
        passed = sum(epoch >= m for m in self.milestone_epochs())
        return self.lr0 / self.lr_factor ** passed

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    # key=value round trip
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], base: "TrainConfig | None" = None) -> "TrainConfig":
        """Build a config from string-or-typed values, starting from ``base``."""
        base = base or cls()
        kinds = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(cls)}
        out = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds:
                raise KeyError(f"unknown config key {key!r}")
            kind = kinds[key]
            if not isinstance(raw, str):
                out[key] = raw
            elif kind is bool:
                if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(f"{key}: expected a boolean, got {raw!r}")
                out[key] = raw.lower() in ("1", "true", "yes")
            elif kind is tuple:
                elem = float if key == "lr_milestones" else int
                out[key] = tuple(elem(x) for x in raw.split(",") if x.strip())
            else:
                out[key] = kind(raw)
        return dataclasses.replace(base, **out)

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        values = {}
        for lineno, ln in enumerate(text.splitlines(), start=1):
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            if "=" not in ln:
                raise ValueError(f"config line {lineno}: expected key=value, got {ln!r}")
            k, v = ln.split("=", 1)
            values[k.strip()] = v.strip()
        return cls.from_mapping(values, base)


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    superclass_accuracy: float
    mean_column_norm_drift: float


METRICS_HEADER = "epoch,loss,acc,super_acc,drift"


def metrics_to_csv(history: Sequence[MetricsRecord]) -> str:
    rows = [METRICS_HEADER]
    for r in history:
        rows.append(f"{r.epoch},{r.train_loss!r},{r.test_accuracy!r},"
                    f"{r.superclass_accuracy!r},{r.mean_column_norm_drift!r}")
    return "\n".join(rows) + "\n"


def metrics_from_csv(text: str) -> list[MetricsRecord]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError("not a metrics file")
    out = []
    for ln in lines[1:]:
        e, *rest = ln.split(",")
        out.append(MetricsRecord(int(e), *map(float, rest)))
    return out


class Optimizer:
    """SGD with momentum and weight decay, routed per parameter.

    Extractor, probe and Euclidean heads use heavy-ball momentum with decay.
    In the sphere variants ``delta`` gets no decay: the manifold variant
    treats it as an ordinary (undecayed) tensor, the riemann variant updates
    each column on the unit sphere. Learnable radii use plain SGD.
    """

    def __init__(self, model: HierSphereModel, config: TrainConfig):
        self.model = model
        self.config = config
        self.buffers = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.sphere_mode = config.effective_sphere_update

    def decayed(self, name: str) -> bool:
        if name == "radius":
            return False
        if name == "delta":
            return self.model.variant == "hierarchy"
        return True

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        if lr == 0:
            return
        cfg = self.config
        params = self.model.params
        for name, p in params.items():
            g = grads[name]
            if name == "radius":
                p -= lr * g
            elif name == "delta" and self.sphere_mode != "none":
                p[...] = self._sphere_step(p, g, lr)
            else:
                if self.decayed(name) and cfg.weight_decay:
                    g = g + cfg.weight_decay * p
                buf = self.buffers[name]
                buf *= cfg.momentum
                buf += g
                p -= lr * buf

    def _sphere_step(self, x, g, lr):
        cfg = self.config
        if not cfg.sphere_momentum or cfg.momentum == 0:
            step = rsgd_step if self.sphere_mode == "riemannian" else projected_step
            return step(x, g, lr)
        buf = self.buffers["delta"]
        if self.sphere_mode == "riemannian":
            # buffer carried over from the previous point is re-projected onto the current tangent space
            buf[...] = cfg.momentum * project_tangent(x, buf) + project_tangent(x, g)
        else:
            buf[...] = cfg.momentum * buf + g
        return retract(x, -buf, lr)


def build_model(config: TrainConfig, tree: HierarchyTree, input_dim: int,
                rng: np.random.Generator) -> HierSphereModel:
    return HierSphereModel(tree, input_dim, variant=config.variant, hidden=config.hidden,
                           embed_dim=config.embed_dim, radius=config.radius_spec(),
                           lambda_multitask=config.lambda_multitask,
                           superclass_level=config.superclass_level, rng=rng,
                           probe_2d=config.probe_2d)


@dataclass
class Evaluation:
    accuracy: float
    superclass_accuracy: float


def evaluate(model: HierSphereModel, features: np.ndarray, labels: np.ndarray,
             tree: HierarchyTree | None = None) -> Evaluation:
    """Sub-class and super-class accuracy in percent (ties go to the lowest index)."""
    if tree is not None and tree != model.tree:
        raise ValueError("evaluation tree differs from the tree the model was built on")
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty split")
    acc = 100.0 * float(np.mean(model.predict(features) == labels))
    sup = 100.0 * float(np.mean(model.predict_super(features) == model.super_labels(labels)))
    return Evaluation(acc, sup)


def train(config: TrainConfig, dataset, tree: HierarchyTree,
          callback: Callable[[MetricsRecord], None] | None = None):
    """Train one model; returns ``(model, history)`` with one record per epoch."""
    if dataset.labels.max() >= tree.num_l or dataset.labels.min() < 0:
        raise ValueError(f"dataset labels exceed the tree's {tree.num_l} leaves")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = build_model(config, tree, dataset.features.shape[1], np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    opt = Optimizer(model, config)

    x_tr, y_tr = dataset.train
    x_te, y_te = dataset.test
    n = len(y_tr)
    history = []
    for epoch in range(config.epochs):
        lr = config.lr_at_epoch(epoch)
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            try:
                # overflow is detected below and reported as divergence
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = model.loss_and_grads(x_tr[idx], y_tr[idx])
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            total += loss * len(idx)
            opt.step(grads, lr)
        if not all(np.all(np.isfinite(p)) for p in model.params.values()):
            raise TrainingDiverged(epoch, "non-finite parameters")
        ev = evaluate(model, x_te, y_te)
        drift = float(norm_drift(model.last_layer_columns()).mean())
        rec = MetricsRecord(epoch, total / max(n, 1), ev.accuracy, ev.superclass_accuracy, drift)
        history.append(rec)
        logger.debug("epoch %d lr %g loss %.5f acc %.2f super %.2f", epoch, lr, rec.train_loss,
                     rec.test_accuracy, rec.superclass_accuracy)
        if callback is not None:
            callback(rec)
    return model, history


# -- gradient checks ------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def failing(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    def format(self) -> str:
        lines = [f"{k:>12s}  max rel err {e:.3e}  {'ok' if e < self.tolerance else 'FAIL'}"
                 for k, e in self.errors.items()]
        lines.append(f"max-rel-error {self.max_error:.3e} (tolerance {self.tolerance:g}) "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


GRADCHECK_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRADCHECK_FLOOR) -> float:
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(model: HierSphereModel, x, y, name: str, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the loss w.r.t. every entry of ``params[name]``."""
    p = model.params[name]
    out = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + eps
        fp = model.loss(x, y)
        p[i] = old - eps
        fm = model.loss(x, y)
        p[i] = old
        out[i] = (fp - fm) / (2 * eps)
    return out


def grad_check(model: HierSphereModel, x, y, tolerance: float = 1e-5, eps: float = 1e-5,
               grads: Mapping[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare analytic gradients (or ``grads`` if given) with central differences."""
    if grads is None:
        _, grads = model.loss_and_grads(x, y)
    errors = {name: relative_error(np.asarray(grads[name]), numeric_gradient(model, x, y, name, eps))
              for name in model.params}
    return GradCheckReport(errors, tolerance)


KINK_MARGIN = 1e-3


def gradcheck_instance(variant: str, tree: HierarchyTree, d: int = 8, input_dim: int = 5,
                       batch: int = 4, seed: int = 0, radius: RadiusSpec | None = None,
                       probe_2d: bool = False, hidden=(6, 7)):
    """Small random ``(model, x, y)`` for finite-difference checks.

    Biases are drawn at random (with zero biases a sample whose rectifiers
    are all off lands exactly on a kink of the next layer) and inputs are
    redrawn until every hidden pre-activation is at least ``KINK_MARGIN``
    away from zero, so central differences never straddle a kink.
    """
    rng = np.random.default_rng(seed)
    model = HierSphereModel(tree, input_dim, variant=variant, hidden=hidden, embed_dim=d,
                            radius=radius, rng=rng, probe_2d=probe_2d)
    for name, p in model.params.items():
        if name.endswith(".b"):
            p[...] = 0.1 * rng.standard_normal(p.shape)
    y = rng.integers(0, tree.num_l, batch)
    for _ in range(1000):
        x = rng.standard_normal((batch, input_dim))
        _, cache = model.extractor.forward(x)
        if all(np.abs(z).min() > KINK_MARGIN for z in cache[1:-1]):
            return model, x, y
    raise RuntimeError("could not find a kink-free input batch")


# -- ablations ------------------------------------------------------------

def _final_accuracy(config: TrainConfig, dataset, tree) -> tuple[float, float]:
    _, history = train(config, dataset, tree)
    last = history[-1]
    return last.test_accuracy, last.superclass_accuracy


@dataclass
class SweepRow:
    gamma: float
    accuracy: float
    superclass_accuracy: float


def radius_sweep(config: TrainConfig, dataset, tree: HierarchyTree, gammas: Sequence[float],
                 parallel: int = 0) -> list[SweepRow]:
    """One full training per radius decay value, all with the same seed."""
    gammas = [float(g) for g in gammas]
    if any(not 0 < g <= 1 for g in gammas):
        raise ValueError("radius decay values must lie in (0, 1]")
    configs = [config.replace(gamma=g) for g in gammas]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_final_accuracy, configs, [dataset] * len(configs),
                                    [tree] * len(configs)))
    else:
        results = [_final_accuracy(c, dataset, tree) for c in configs]
    return [SweepRow(g, a, s) for g, (a, s) in zip(gammas, results)]


def format_sweep(rows: Sequence[SweepRow], name: str = "synthetic") -> str:
    lines = [f"{'Radius Decay':>12s} | {name:>12s}", "-" * 29]
    lines += [f"{r.gamma:>12.2f} | {r.accuracy:>12.2f}" for r in rows]
    return "\n".join(lines) + "\n"


@dataclass
class AblationResult:
    true_accuracy: float
    random_accuracy: float
    random_tree: HierarchyTree


def random_hierarchy_ablation(config: TrainConfig, dataset, true_tree: HierarchyTree,
                              seed: int) -> AblationResult:
    """Train with the true tree and with a random tree of equal super-class count."""
    n_sup = len(true_tree.nodes_at_level(1))
    rand = random_hierarchy(true_tree.num_l, n_sup, seed)
    acc_true, _ = _final_accuracy(config, dataset, true_tree)
    acc_rand, _ = _final_accuracy(config, dataset, rand)
    return AblationResult(acc_true, acc_rand, rand)


def format_summary(results: Mapping[str, float], dataset_name: str = "synthetic",
                   architecture: str = "MLP") -> str:
    """Accuracy table laid out like the variant comparison (one row per dataset)."""
    cols = [v for v in VARIANTS if v in results]
    head = f"{'Dataset':<12s}{'Architecture':<14s}" + "".join(f"{TABLE_COLUMNS[v]:>12s}" for v in cols)
    row = f"{dataset_name:<12s}{architecture:<14s}" + "".join(f"{results[v]:>12.2f}" for v in cols)
    return head + "\n" + row + "\n"
