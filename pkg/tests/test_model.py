import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierspheres.hierarchy import parse_hierarchy_file
from hierspheres.layer import RadiusSpec, build_H, oracle_W
from hierspheres.model import VARIANTS, HierSphereModel, cross_entropy
from hierspheres.training import gradcheck_instance, grad_check

from conftest import random_tree


def flat_tree(k):
    return parse_hierarchy_file(f"{k}\n".encode() + b"".join(f"{i} 0\n".encode() for i in range(1, k + 1)))


def make(tree, variant, seed=0, **kw):
    kw.setdefault("hidden", (8,))
    kw.setdefault("embed_dim", 6)
    return HierSphereModel(tree, 5, variant=variant, seed=seed, **kw)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, g = cross_entropy(np.zeros((3, 4)), np.array([0, 1, 3]))
        assert loss == pytest.approx(np.log(4), abs=1e-15)
        np.testing.assert_allclose(g.sum(axis=1), 0, atol=1e-16)

    def test_large_logits_are_stable(self):
        loss, _ = cross_entropy(np.array([[1e4, 0.0]]), np.array([1]))
        assert loss == pytest.approx(1e4)

    @pytest.mark.parametrize("bad", [[-1], [4]])
    def test_label_range(self, bad):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((1, 4)), np.array(bad))


class TestForward:
    def test_zero_delta_gives_log_num_leaves(self, fruit_tree):
        m = make(fruit_tree, "hierarchy")
        m.set_param("delta", np.zeros_like(m.head["delta"]))
        x = np.random.default_rng(0).standard_normal((7, 5))
        assert m.loss(x, np.arange(7) % 4) == pytest.approx(np.log(4), abs=1e-12)

    @pytest.mark.parametrize("variant", ["hierarchy", "manifold", "riemann"])
    @pytest.mark.parametrize("mode", ["fixed", "learnable"])
    def test_logits_match_oracle(self, fruit_tree, variant, mode):
        spec = RadiusSpec(1.3, 0.6, mode)
        m = make(fruit_tree, variant, radius=spec)
        if mode == "learnable":
            m.head["radius"][...] = [0.9, 1.1, 0.3, 0.4, 0.5, 0.6]
            spec = RadiusSpec(1.3, 0.6, mode, learned_values=m.head["radius"].copy())
        x = np.random.default_rng(1).standard_normal((4, 5))
        ref = m.embed(x) @ oracle_W(m.effective_delta(), spec, fruit_tree)
        np.testing.assert_allclose(m.forward(x), ref, rtol=0, atol=1e-12)

    def test_manifold_scale_invariance(self, fruit_tree):
        m = make(fruit_tree, "manifold")
        x = np.random.default_rng(2).standard_normal((5, 5))
        before = m.forward(x)
        m.head["delta"] *= np.array([2.0, 0.5, 7.0, 1.0, 3.0, 0.1])
        np.testing.assert_allclose(m.forward(x), before, rtol=1e-12, atol=1e-12)

    def test_sphere_variants_start_on_sphere(self, rng):
        tree = random_tree(rng, 15)
        for v in ("manifold", "riemann"):
            np.testing.assert_allclose(np.linalg.norm(make(tree, v).head["delta"], axis=0), 1, atol=1e-12)

    def test_flat_tree_reduces_to_plain(self):
        tree = flat_tree(5)
        plain = make(tree, "plain", seed=3)
        hier = make(tree, "hierarchy", seed=3, radius=RadiusSpec(1.0, 1.0))
        x = np.random.default_rng(0).standard_normal((6, 5))
        assert np.array_equal(plain.forward(x), hier.forward(x))

    def test_input_shape_checked(self, fruit_tree):
        with pytest.raises(ValueError, match="input_dim"):
            make(fruit_tree, "plain").forward(np.zeros((2, 4)))

    def test_non_finite_raises(self, fruit_tree):
        m = make(fruit_tree, "plain")
        m.head["W"][0, 0] = np.inf
        with pytest.raises(FloatingPointError):
            m.forward(np.ones((1, 5)))

    def test_unknown_variant(self, fruit_tree):
        with pytest.raises(ValueError, match="variant"):
            make(fruit_tree, "fancy")


class TestClosedFormGradient:
    def test_single_sample_hierarchy_head(self, fruit_tree):
        # one sample, embedding e, label apple: dL/dW = e (p - onehot)^T,
        # dL/dDelta = dL/dW H^T D
        m = make(fruit_tree, "hierarchy", radius=RadiusSpec(1.0, 0.5))
        x = np.random.default_rng(5).standard_normal((1, 5))
        e = m.embed(x)[0]
        w = m.hyperplanes()
        z = e @ w
        p = np.exp(z - z.max())
        p /= p.sum()
        p[0] -= 1.0
        h = build_H(fruit_tree).dense
        d = np.array([0.5, 0.5, 0.25, 0.25, 0.25, 0.25])
        expected = np.outer(e, p) @ h.T * d
        _, grads = m.loss_and_grads(x, np.array([0]))
        np.testing.assert_allclose(grads["delta"], expected, rtol=1e-12, atol=1e-15)
        # the apple offset only sees the apple column; fruit sees apple + orange
        np.testing.assert_allclose(grads["delta"][:, 2], 0.25 * e * p[0], atol=1e-15)
        np.testing.assert_allclose(grads["delta"][:, 0], 0.5 * e * (p[0] + p[1]), atol=1e-15)


GRAD_CASES = [(v, mode, probe) for v in VARIANTS for mode in ("fixed", "learnable")
              for probe in (False, True) if not (mode == "learnable" and v in ("plain", "multitask"))]


class TestGradients:
    @pytest.mark.parametrize("variant,mode,probe", GRAD_CASES)
    def test_matches_finite_differences(self, fruit_tree, variant, mode, probe):
        for seed in range(3):
            m, x, y = gradcheck_instance(variant, fruit_tree, d=8, seed=seed,
                                         radius=RadiusSpec(1.0, 0.5, mode), probe_2d=probe)
            report = grad_check(m, x, y)
            assert report.passed, report.format()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from(VARIANTS), st.integers(2, 16))
    def test_random_trees(self, seed, variant, d):
        tree = random_tree(np.random.default_rng(seed), 3 + seed % 9)
        m, x, y = gradcheck_instance(variant, tree, d=d, seed=seed)
        report = grad_check(m, x, y)
        assert report.passed, report.format()

    def test_corrupted_delta_gradient_is_caught(self, fruit_tree):
        m, x, y = gradcheck_instance("riemann", fruit_tree)
        _, grads = m.loss_and_grads(x, y)
        grads["delta"] = grads["delta"] * 1.01
        report = grad_check(m, x, y, grads=grads)
        assert not report.passed
        assert report.failing() == ["delta"]

    def test_instances_avoid_kinks(self, fruit_tree):
        from hierspheres.training import KINK_MARGIN
        m, x, _ = gradcheck_instance("plain", fruit_tree, seed=11)
        _, cache = m.extractor.forward(x)
        assert min(np.abs(z).min() for z in cache[1:-1]) > KINK_MARGIN


class TestSuperclass:
    def test_shapes(self, fruit_tree):
        x = np.zeros((3, 5))
        for v in ("multitask", "hierarchy", "manifold", "riemann"):
            assert make(fruit_tree, v).superclass_logits(x).shape == (3, 2)

    def test_plain_has_no_super_head(self, fruit_tree):
        with pytest.raises(ValueError):
            make(fruit_tree, "plain").superclass_logits(np.zeros((1, 5)))

    def test_super_labels(self, fruit_tree):
        m = make(fruit_tree, "riemann")
        np.testing.assert_array_equal(m.super_labels(np.array([0, 1, 2, 3])), [0, 0, 1, 1])

    def test_parent_hyperplanes_are_scaled_parent_offsets(self, fruit_tree):
        # depth-1 radius is r0 * gamma
        m = make(fruit_tree, "riemann", radius=RadiusSpec(2.0, 0.3))
        x = np.random.default_rng(0).standard_normal((4, 5))
        np.testing.assert_allclose(m.superclass_logits(x), m.embed(x) @ (0.6 * m.head["delta"][:, :2]),
                                   atol=1e-14)

    def test_plain_super_prediction_follows_leaf(self, fruit_tree):
        m = make(fruit_tree, "plain")
        x = np.random.default_rng(3).standard_normal((20, 5))
        leaf = m.predict(x)
        np.testing.assert_array_equal(m.predict_super(x), m.super_labels(leaf))

    def test_argmax_consistent_with_path_walk(self, fruit_tree):
        # when the parent offset dominates, the best leaf lies under the best super-class
        m = make(fruit_tree, "hierarchy", radius=RadiusSpec(1.0, 0.1))
        x = np.random.default_rng(4).standard_normal((50, 5))
        leaf_super = m.super_labels(m.predict(x))
        agree = np.mean(leaf_super == m.predict_super(x))
        assert agree > 0.8

    def test_ties_go_to_lowest_index(self, fruit_tree):
        m = make(fruit_tree, "hierarchy")
        m.set_param("delta", np.zeros_like(m.head["delta"]))
        assert m.predict(np.ones((2, 5))).tolist() == [0, 0]
        assert m.predict_super(np.ones((2, 5))).tolist() == [0, 0]

    def test_multitask_needs_deep_enough_leaves(self, fruit_tree):
        assert make(fruit_tree, "multitask", superclass_level=2).superclass_logits(np.zeros((1, 5))).shape == (1, 4)
        t = parse_hierarchy_file(b"3\n1 0\n2 1\n3 0\n")
        with pytest.raises(ValueError, match="multitask"):
            make(t, "multitask", superclass_level=2)


class TestProbe:
    def test_shapes(self, fruit_tree):
        m = make(fruit_tree, "riemann", probe_2d=True)
        assert m.embed(np.zeros((3, 5))).shape == (3, 2)
        assert m.head["delta"].shape == (2, 6)
        assert m.forward(np.zeros((3, 5))).shape == (3, 4)

    def test_attach_once(self, fruit_tree):
        m = make(fruit_tree, "plain", probe_2d=True)
        with pytest.raises(RuntimeError):
            m.attach_2d_probe()


class TestCheckpoint:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_round_trip(self, fruit_tree, tmp_path, variant):
        spec = RadiusSpec(1.0, 0.5, "learnable" if variant in ("hierarchy", "riemann") else "fixed")
        m = make(fruit_tree, variant, radius=spec, probe_2d=variant == "manifold")
        path = tmp_path / "model.txt"
        m.save(path)
        back = HierSphereModel.load(path, fruit_tree)
        assert back.config() == m.config()
        for k, v in m.params.items():
            assert np.array_equal(back.params[k], v), k

    def test_missing_tensor(self, fruit_tree, tmp_path):
        m = make(fruit_tree, "plain")
        path = tmp_path / "model.txt"
        m.save(path)
        lines = path.read_text().splitlines()
        cut = next(i for i, ln in enumerate(lines) if ln.startswith("W "))
        path.write_text("\n".join(lines[:cut]) + "\n")
        with pytest.raises(ValueError, match="missing"):
            HierSphereModel.load(path, fruit_tree)

    def test_bad_magic(self, fruit_tree, tmp_path):
        path = tmp_path / "x.txt"
        path.write_text("hello\n")
        with pytest.raises(ValueError, match="checkpoint"):
            HierSphereModel.load(path, fruit_tree)
