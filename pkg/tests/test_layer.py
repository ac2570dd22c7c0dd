import numpy as np
import pytest

from hierspheres import layer as layer_mod
from hierspheres.hierarchy import depth, parse_hierarchy_file
from hierspheres.layer import (RadiusSpec, build_D, build_H, compose_W, fixed_radii, init_learned,
                               oracle_W, parent_level_W, read_matrix, write_matrix)

from conftest import FRUIT_ANIMAL_H, random_tree, uniform_tree


def flat_tree(k):
    return parse_hierarchy_file(f"{k}\n".encode() + b"".join(f"{i} 0\n".encode() for i in range(1, k + 1)))


def ancestor_walk(tree, p_node, leaf):
    node = leaf
    while node != tree.root:
        if node == p_node:
            return 1
        node = tree.parent[node]
    return 0


class TestBuildH:
    def test_golden_fruit_animal(self, fruit_tree):
        h = build_H(fruit_tree)
        assert h.dense.dtype.kind == "i"
        np.testing.assert_array_equal(h.dense, FRUIT_ANIMAL_H)
        assert h.shape == (6, 4)
        np.testing.assert_array_equal(h.dense[:, 0], [1, 0, 1, 0, 0, 0])

    def test_flat_tree_is_identity(self):
        np.testing.assert_array_equal(build_H(flat_tree(5)).dense, np.eye(5, dtype=int))

    def test_entries_match_path_walk(self, rng):
        for _ in range(5):
            tree = random_tree(rng, 40)
            h = build_H(tree).dense
            for i, p in enumerate(tree.p_order):
                for j, leaf in enumerate(tree.l_order):
                    assert h[i, j] == ancestor_walk(tree, p, leaf)

    def test_column_sums_are_depths(self, rng):
        tree = random_tree(rng, 60)
        h = build_H(tree).dense
        np.testing.assert_array_equal(h.sum(axis=0), [depth(tree, n) for n in tree.l_order])

    def test_immutable(self, fruit_tree):
        h = build_H(fruit_tree)
        with pytest.raises(ValueError):
            h.dense[0, 0] = 5

    def test_sparse_storage_matches_dense(self, rng, monkeypatch):
        tree = random_tree(rng, 50)
        dense = build_H(tree)
        monkeypatch.setattr(layer_mod, "DENSE_LIMIT", 10)
        sparse = build_H(tree)
        assert sparse.is_sparse and not dense.is_sparse
        np.testing.assert_array_equal(sparse.toarray(), dense.dense)
        delta = rng.standard_normal((7, tree.num_p))
        radii = rng.uniform(0.1, 1.0, tree.num_p)
        np.testing.assert_allclose(compose_W(delta, radii, sparse), compose_W(delta, radii, dense),
                                   rtol=0, atol=1e-12)
        g = rng.standard_normal((7, tree.num_l))
        np.testing.assert_allclose(sparse.right_multiply_t(g), dense.right_multiply_t(g), atol=1e-12)


class TestBuildD:
    def test_fruit_animal_half(self, fruit_tree):
        d = build_D(fruit_tree, RadiusSpec(1.0, 0.5))
        np.testing.assert_array_equal(d, np.diag([0.5, 0.5, 0.25, 0.25, 0.25, 0.25]))

    def test_gamma_one(self, rng):
        tree = random_tree(rng, 30)
        np.testing.assert_array_equal(np.diag(build_D(tree, RadiusSpec(2.5, 1.0))), 2.5)

    def test_learnable_starts_at_fixed(self, fruit_tree):
        spec = RadiusSpec(1.3, 0.7)
        np.testing.assert_array_equal(build_D(fruit_tree, init_learned(fruit_tree, spec)),
                                      build_D(fruit_tree, spec))

    def test_learnable_values_used(self, fruit_tree):
        vals = np.arange(1.0, 7.0)
        np.testing.assert_array_equal(np.diag(build_D(fruit_tree, RadiusSpec(mode="learnable", learned_values=vals))), vals)

    @pytest.mark.parametrize("r0,gamma", [(0.0, 0.5), (1.0, 0.0), (-1.0, 0.5), (1.0, -0.5)])
    def test_non_positive_rejected(self, r0, gamma):
        with pytest.raises(ValueError):
            RadiusSpec(r0, gamma)

    def test_off_diagonal_zero(self, rng):
        tree = random_tree(rng, 20)
        d = build_D(tree, RadiusSpec(1.0, 0.8))
        assert np.count_nonzero(d - np.diag(np.diag(d))) == 0


class TestComposeW:
    def test_zero_delta(self, fruit_tree):
        h = build_H(fruit_tree)
        w = compose_W(np.zeros((3, 6)), build_D(fruit_tree, RadiusSpec()), h)
        np.testing.assert_array_equal(w, 0)

    def test_flat_identity_radius(self, rng):
        tree = flat_tree(6)
        delta = rng.standard_normal((4, 6))
        w = compose_W(delta, np.eye(6), build_H(tree))
        np.testing.assert_array_equal(w, delta)

    def test_fruit_animal_basis_vectors(self, fruit_tree):
        delta = np.eye(6)
        spec = RadiusSpec(1.0, 0.5)
        w = compose_W(delta, build_D(fruit_tree, spec), build_H(fruit_tree))
        # leaves apple, orange under fruit (row 0); cat, dog under animal (row 1)
        expected = np.zeros((6, 4))
        for j, (par, leaf) in enumerate([(0, 2), (0, 3), (1, 4), (1, 5)]):
            expected[par, j] = 0.5
            expected[leaf, j] = 0.25
        np.testing.assert_array_equal(w, expected)
        np.testing.assert_allclose(oracle_W(delta, spec, fruit_tree), expected, atol=1e-15)

    def test_dimension_mismatch(self, fruit_tree):
        with pytest.raises(ValueError, match="mismatch"):
            compose_W(np.zeros((3, 5)), np.eye(6), build_H(fruit_tree))

    def test_matches_oracle_randomized(self, rng):
        for _ in range(30):
            tree = random_tree(rng, int(rng.integers(2, 60)))
            d = int(rng.integers(1, 17))
            delta = rng.standard_normal((d, tree.num_p))
            spec = RadiusSpec(rng.uniform(0.1, 3), rng.uniform(0.1, 1.0))
            np.testing.assert_allclose(compose_W(delta, build_D(tree, spec), build_H(tree)),
                                       oracle_W(delta, spec, tree), rtol=0, atol=1e-12)

    def test_learnable_oracle(self, rng):
        tree = random_tree(rng, 25)
        spec = RadiusSpec(mode="learnable", learned_values=rng.uniform(-1, 1, tree.num_p))
        delta = rng.standard_normal((5, tree.num_p))
        np.testing.assert_allclose(compose_W(delta, build_D(tree, spec), build_H(tree)),
                                   oracle_W(delta, spec, tree), atol=1e-12)

    def test_sibling_triangle_bound(self, rng):
        tree = uniform_tree((3, 4))
        spec = RadiusSpec(1.0, 0.5)
        radii = fixed_radii(tree, 1.0, 0.5)
        delta = rng.standard_normal((8, tree.num_p))
        delta /= np.linalg.norm(delta, axis=0)
        w = compose_W(delta, np.diag(radii), build_H(tree))
        for a in range(tree.num_l):
            for b in range(tree.num_l):
                la, lb = tree.l_order[a], tree.l_order[b]
                if a != b and tree.parent[la] == tree.parent[lb]:
                    bound = radii[tree.p_index[la]] + radii[tree.p_index[lb]]
                    assert np.linalg.norm(w[:, a] - w[:, b]) <= bound + 1e-12

    def test_delta_gradient_is_grad_w_h_t_d(self, rng):
        # L(delta) = <G, delta D H>, so dL/ddelta = G H^T D; checked by central differences
        tree = random_tree(rng, 15)
        h, dmat = build_H(tree), build_D(tree, RadiusSpec(1.0, 0.6))
        delta = rng.standard_normal((4, tree.num_p))
        g = rng.standard_normal((4, tree.num_l))
        analytic = g @ h.dense.T @ dmat
        numeric = np.zeros_like(delta)
        eps = 1e-6
        for idx in np.ndindex(delta.shape):
            dp, dm = delta.copy(), delta.copy()
            dp[idx] += eps
            dm[idx] -= eps
            numeric[idx] = (np.sum(g * compose_W(dp, dmat, h)) - np.sum(g * compose_W(dm, dmat, h))) / (2 * eps)
        np.testing.assert_allclose(numeric, analytic, rtol=1e-6, atol=1e-9)


class TestOracle:
    def test_zero(self, fruit_tree):
        np.testing.assert_array_equal(oracle_W(np.zeros((2, 6)), RadiusSpec(), fruit_tree), 0)

    def test_chain_expansion(self, rng):
        tree = parse_hierarchy_file(b"3\n1 0\n2 1\n3 2\n")
        delta = rng.standard_normal((5, 3))
        r0, g = 1.7, 0.6
        expected = sum(r0 * g ** k * delta[:, k - 1] for k in (1, 2, 3))
        np.testing.assert_allclose(oracle_W(delta, RadiusSpec(r0, g), tree)[:, 0], expected, atol=1e-14)

    def test_mismatch(self, fruit_tree):
        with pytest.raises(ValueError):
            oracle_W(np.zeros((2, 3)), RadiusSpec(), fruit_tree)


class TestParentLevel:
    def test_fruit_animal_level_one(self, fruit_tree, rng):
        delta = rng.standard_normal((3, 6))
        w = parent_level_W(delta, build_D(fruit_tree, RadiusSpec(1.0, 0.5)), fruit_tree, 1)
        np.testing.assert_array_equal(w, 0.5 * delta[:, :2])

    def test_leaf_level_equals_compose(self, rng):
        tree = uniform_tree((2, 3, 2))
        spec = RadiusSpec(1.0, 0.7)
        delta = rng.standard_normal((4, tree.num_p))
        dmat = build_D(tree, spec)
        np.testing.assert_allclose(parent_level_W(delta, dmat, tree, 3),
                                   compose_W(delta, dmat, build_H(tree)), atol=1e-14)

    def test_three_level_path_walk(self, rng):
        tree = uniform_tree((3, 2, 2))
        spec = RadiusSpec(2.0, 0.5)
        delta = rng.standard_normal((5, tree.num_p))
        w = parent_level_W(delta, build_D(tree, spec), tree, 2)
        for k, node in enumerate(tree.nodes_at_level(2)):
            acc, cur = np.zeros(5), node
            while cur != tree.root:
                acc += 2.0 * 0.5 ** depth(tree, cur) * delta[:, tree.p_index[cur]]
                cur = tree.parent[cur]
            np.testing.assert_allclose(w[:, k], acc, atol=1e-14)

    def test_empty_level(self, fruit_tree):
        with pytest.raises(ValueError, match="level"):
            parent_level_W(np.zeros((2, 6)), np.eye(6), fruit_tree, 3)
        with pytest.raises(ValueError, match="level"):
            parent_level_W(np.zeros((2, 6)), np.eye(6), fruit_tree, 0)


class TestMatrixIO:
    def test_integer_round_trip(self, tmp_path, fruit_tree):
        path = tmp_path / "H.txt"
        write_matrix(build_H(fruit_tree).dense, path)
        assert path.read_text().splitlines()[0] == "6 4"
        assert path.read_text().splitlines()[1] == "1 1 0 0"
        np.testing.assert_array_equal(read_matrix(path), FRUIT_ANIMAL_H)

    def test_float_round_trip(self, tmp_path, rng):
        m = rng.standard_normal((3, 5))
        write_matrix(m, tmp_path / "m.txt")
        np.testing.assert_array_equal(read_matrix(tmp_path / "m.txt"), m)

    def test_bad_shape(self, tmp_path):
        (tmp_path / "bad.txt").write_text("2 2\n1 2\n3\n")
        with pytest.raises(ValueError):
            read_matrix(tmp_path / "bad.txt")
