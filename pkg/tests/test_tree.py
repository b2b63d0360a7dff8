"""Tests for the multiscale mixture tree: updates, growing, pruning, init."""

import numpy as np
import pytest

from othin.config import EngineConfig
from othin.lowrank import LowRankGaussian, SampleMask, log_likelihood
from othin.tree import KIND_INTERNAL, KIND_LEAF, KIND_VIRTUAL, MixtureTree, init_tree


def make_tree(p=6, r=2, depth=0, n=80, seed=0, tol=100.0, gamma=1.0, k_max=32):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((p, n))
    config = EngineConfig(rank=r, init_depth=depth, tol=tol, gamma=gamma, k_max=k_max, tau=0.0)
    return init_tree(X, config)


def two_line_sample(rng, p=10, n=400, sep=5.0, noise=0.05):
    center = np.zeros(p)
    center[0] = sep
    direction = np.zeros(p)
    direction[1] = 1.0
    half = n // 2
    coeffs = rng.standard_normal(n)
    X = np.empty((p, n))
    X[:, :half] = center[:, None] + np.outer(direction, coeffs[:half])
    X[:, half:] = -center[:, None] + np.outer(direction, coeffs[half:])
    X += noise * rng.standard_normal((p, n))
    return X, center


class TestAssign:
    def test_dominant_likelihood(self):
        tree = make_tree(depth=1, seed=1)
        leaves = tree.leaf_ids()
        target = tree.node(leaves[0])
        assert tree.assign(target.gaussian.mean) == leaves[0]

    def test_tie_breaks_to_smaller_id(self):
        tree = make_tree(depth=1, seed=2)
        l1, l2 = tree.leaf_ids()
        # make both components identical; any x then ties exactly
        tree.node(l2).gaussian = tree.node(l1).gaussian
        x = tree.node(l1).gaussian.mean + 0.3
        assert tree.assign(x) == l1

    def test_weights_ignored(self):
        tree = make_tree(depth=1, seed=3)
        l1, l2 = tree.leaf_ids()
        tree.node(l1).weight = 0.99
        tree.node(l2).weight = 0.01
        x = tree.node(l2).gaussian.mean.copy()
        assert log_likelihood(tree.node(l2).gaussian, x) > log_likelihood(
            tree.node(l1).gaussian, x
        )
        assert tree.assign(x) == l2

    def test_masked_assignment(self):
        tree = make_tree(depth=1, seed=4)
        l1, l2 = tree.leaf_ids()
        mask = SampleMask(np.arange(tree.p), tree.p)
        x = tree.node(l2).gaussian.mean.copy()
        assert tree.assign(x, mask=mask) == tree.assign(x)


class TestNodeUpdates:
    def test_weight_fixed_point(self):
        tree = make_tree(seed=5)
        leaf = tree.node(tree.leaf_ids()[0])
        leaf.weight = 0.5
        X = np.tile(leaf.gaussian.mean[:, None], (1, 5))
        tree.update_node_statistics(leaf.id, X, n_total=10, alpha=0.9)
        assert leaf.weight == pytest.approx(0.5, rel=1e-12)

    def test_mean_update_from_zero(self):
        tree = make_tree(seed=6)
        leaf = tree.node(tree.leaf_ids()[0])
        leaf.gaussian = leaf.gaussian.replace(mean=np.zeros(tree.p))
        rng = np.random.default_rng(0)
        X = rng.standard_normal((tree.p, 7))
        tree.update_node_statistics(leaf.id, X, n_total=7, alpha=0.9)
        np.testing.assert_allclose(leaf.gaussian.mean, 0.1 * X.mean(axis=1), rtol=1e-12)

    def test_eig_update_single_column(self):
        tree = make_tree(seed=7)
        leaf = tree.node(tree.leaf_ids()[0])
        g = leaf.gaussian
        eigs = g.eigs.copy()
        eigs[0] = 2.0
        leaf.gaussian = g.replace(eigs=eigs)
        # one observation whose projection on the leading direction is 2
        x = g.mean + 2.0 * g.basis[:, 0]
        tree.update_node_statistics(leaf.id, x[:, None], n_total=1, alpha=0.5)
        assert leaf.gaussian.eigs[0] == pytest.approx(0.5 * 2.0 + 0.5 * 4.0, rel=1e-9)

    def test_masked_update_touches_only_observed_mean_rows(self):
        tree = make_tree(p=8, r=2, seed=8)
        leaf = tree.node(tree.leaf_ids()[0])
        before = leaf.gaussian.mean.copy()
        mask = SampleMask([0, 2, 4, 5], 8)
        X_obs = np.random.default_rng(1).standard_normal((4, 6))
        tree.update_node_statistics(leaf.id, X_obs, n_total=6, alpha=0.9, mask=mask)
        after = leaf.gaussian.mean
        hidden = [1, 3, 6, 7]
        np.testing.assert_array_equal(after[hidden], before[hidden])
        assert not np.allclose(after[mask.indices], before[mask.indices])

    def test_small_mask_skips_subspace_update(self):
        tree = make_tree(p=8, r=3, seed=9)
        leaf = tree.node(tree.leaf_ids()[0])
        basis_before = leaf.gaussian.basis.copy()
        eigs_before = leaf.gaussian.eigs.copy()
        mask = SampleMask([1, 5], 8)  # |mask| < rank
        X_obs = np.random.default_rng(2).standard_normal((2, 4))
        tree.update_node_statistics(leaf.id, X_obs, n_total=4, alpha=0.9, mask=mask)
        np.testing.assert_array_equal(leaf.gaussian.basis, basis_before)
        np.testing.assert_array_equal(leaf.gaussian.eigs, eigs_before)

    def test_decay_idle(self):
        tree = make_tree(seed=10)
        leaf = tree.node(tree.leaf_ids()[0])
        leaf.weight = 0.1
        tree.decay_idle(leaf.id, alpha=0.9)
        assert leaf.weight == pytest.approx(0.09)
        leaf.weight = 0.0
        tree.decay_idle(leaf.id, alpha=0.99)
        assert leaf.weight == 0.0

    def test_weight_sum_preserved_one_step(self):
        tree = make_tree(depth=1, seed=11)
        l1, l2 = tree.leaf_ids()
        rng = np.random.default_rng(3)
        X = rng.standard_normal((tree.p, 10))
        # all observations land on leaf 1; leaf 2 idles
        tree.update_node_statistics(l1, X, n_total=10, alpha=0.9)
        tree.decay_idle(l2, alpha=0.9)
        total = tree.node(l1).weight + tree.node(l2).weight
        assert total == pytest.approx(1.0, abs=1e-12)


class TestCumulativeScores:
    def test_epsilon_update(self):
        # discounted sum, not an EMA: alpha * eps + batch mean score
        tree = make_tree(seed=12)
        tree.cum_error = 1.0
        tree.apply_cumulative(alpha=0.9, mean_score=2.0, node_nll={})
        assert tree.cum_error == pytest.approx(0.9 * 1.0 + 2.0)

    def test_unassigned_node_unchanged(self):
        tree = make_tree(depth=1, seed=13)
        l1, l2 = tree.leaf_ids()
        tree.node(l2).cum_score = 3.5
        tree.apply_cumulative(alpha=0.9, mean_score=1.0, node_nll={l1: 2.0})
        assert tree.node(l2).cum_score == 3.5

    def test_single_node_update(self):
        tree = make_tree(seed=14)
        leaf = tree.node(tree.leaf_ids()[0])
        leaf.cum_score = 4.0
        tree.apply_cumulative(alpha=0.5, mean_score=0.0, node_nll={leaf.id: 1.5})
        assert leaf.cum_score == pytest.approx(0.5 * 4.0 + 1.5)


class TestSplit:
    def _prepared(self, tol=100.0, gamma=1.0):
        tree = make_tree(depth=1, seed=15, tol=tol, gamma=gamma)
        leaf_id = tree.leaf_ids()[0]
        leaf = tree.node(leaf_id)
        leaf.cum_score = 10.0
        for cid in leaf.children:
            tree.node(cid).cum_score = 5.0
        return tree, leaf_id

    def test_split_fires_on_inequality(self):
        # K=2, gamma=1: 10 + 2 > 5 + 3
        tree, leaf_id = self._prepared()
        tree.cum_error = 1.0
        assert tree.maybe_split(leaf_id)
        assert tree.leaf_count() == 3
        assert tree.node(leaf_id).kind == KIND_INTERNAL

    def test_no_split_above_tol(self):
        tree, leaf_id = self._prepared(tol=0.5)
        tree.cum_error = 1.0
        assert not tree.maybe_split(leaf_id)

    def test_no_split_at_exact_tol(self):
        tree, leaf_id = self._prepared(tol=1.0)
        tree.cum_error = 1.0
        assert not tree.maybe_split(leaf_id)
        assert not tree.maybe_merge(leaf_id)

    def test_no_split_when_children_not_better(self):
        tree, leaf_id = self._prepared(gamma=100.0)
        tree.cum_error = 1.0
        assert not tree.maybe_split(leaf_id)

    def test_no_split_at_k_max(self):
        tree, leaf_id = self._prepared()
        tree.config = EngineConfig(
            rank=2, init_depth=1, tol=100.0, gamma=1.0, k_max=2, tau=0.0
        )
        tree.cum_error = 1.0
        assert not tree.maybe_split(leaf_id)

    def test_promoted_children_follow_construction(self):
        tree, leaf_id = self._prepared()
        tree.cum_error = 1.0
        parent_g = tree.node(leaf_id).gaussian
        parent_q = tree.node(leaf_id).weight
        child_ids = tree.node(leaf_id).children
        assert tree.maybe_split(leaf_id)
        offset = 0.5 * np.sqrt(parent_g.eigs[0]) * parent_g.basis[:, 0]
        signs = []
        for cid in child_ids:
            child = tree.node(cid)
            assert child.kind == KIND_LEAF
            assert child.weight == pytest.approx(parent_q / 2.0)
            assert child.gaussian.eigs[0] == pytest.approx(parent_g.eigs[0] / 2.0)
            np.testing.assert_allclose(child.gaussian.eigs[1:], parent_g.eigs[1:])
            np.testing.assert_allclose(child.gaussian.basis, parent_g.basis)
            diff = child.gaussian.mean - parent_g.mean
            sign = np.sign(diff @ offset)
            signs.append(sign)
            np.testing.assert_allclose(diff, sign * offset, atol=1e-12)
            # each promoted leaf got two fresh virtual children
            kinds = [tree.node(v).kind for v in child.children]
            assert kinds == [KIND_VIRTUAL, KIND_VIRTUAL]
        assert sorted(signs) == [-1.0, 1.0]

    def test_explicit_construction_values(self):
        # mean 0, leading direction e1, leading eigenvalue 4, weight 0.6
        tree = make_tree(p=4, r=1, seed=16)
        leaf = tree.node(tree.leaf_ids()[0])
        basis = np.zeros((4, 1))
        basis[0, 0] = 1.0
        leaf.gaussian = LowRankGaussian(np.zeros(4), basis, [4.0], 1.0)
        leaf.weight = 0.6
        tree._spawn_virtual_children(leaf, seed_score=0.0)
        c1, c2 = tree.virtual_children(leaf.id)
        e1 = np.array([1.0, 0, 0, 0])
        np.testing.assert_allclose(c1.gaussian.mean, e1)
        np.testing.assert_allclose(c2.gaussian.mean, -e1)
        assert c1.gaussian.eigs[0] == pytest.approx(2.0)
        assert c1.weight == pytest.approx(0.3)
        assert c2.weight == pytest.approx(0.3)


class TestMerge:
    def _three_leaf_tree(self, gamma=1.0, tol=0.5):
        tree = make_tree(depth=1, seed=17, tol=tol, gamma=gamma)
        first = tree.leaf_ids()[0]
        leaf = tree.node(first)
        leaf.cum_score = 10.0
        for cid in leaf.children:
            tree.node(cid).cum_score = 5.0
        tree.cum_error = 0.0
        assert tree.maybe_split(first)
        assert tree.leaf_count() == 3
        return tree, first

    def test_merge_fires_on_inequality(self):
        # K=3, gamma=1, parent e=4, children avg 8: 4+2 < 8+3
        tree, parent_id = self._three_leaf_tree()
        parent = tree.node(parent_id)
        parent.cum_score = 4.0
        c1, c2 = parent.children
        tree.node(c1).cum_score = 8.0
        tree.node(c2).cum_score = 8.0
        tree.cum_error = 1.0  # above tol=0.5
        k_before = tree.leaf_count()
        q_children = tree.node(c1).weight + tree.node(c2).weight
        assert tree.maybe_merge(c1)
        assert tree.leaf_count() == k_before - 1
        assert parent.kind == KIND_LEAF
        assert tree.node(c1).kind == KIND_VIRTUAL
        assert tree.node(c2).kind == KIND_VIRTUAL
        assert not tree.node(c1).children and not tree.node(c2).children
        assert parent.weight == pytest.approx(q_children)

    def test_no_merge_below_tol(self):
        tree, parent_id = self._three_leaf_tree()
        c1 = tree.node(parent_id).children[0]
        tree.cum_error = 0.0
        assert not tree.maybe_merge(c1)

    def test_no_merge_when_parent_worse(self):
        tree, parent_id = self._three_leaf_tree()
        parent = tree.node(parent_id)
        parent.cum_score = 50.0
        c1, c2 = parent.children
        tree.node(c1).cum_score = 1.0
        tree.node(c2).cum_score = 1.0
        tree.cum_error = 1.0
        assert not tree.maybe_merge(c1)

    def test_no_merge_when_sibling_internal(self):
        tree, parent_id = self._three_leaf_tree()
        # split one child so its sibling has an internal sibling
        c1, c2 = tree.node(parent_id).children
        leaf = tree.node(c1)
        leaf.cum_score = 10.0
        for vid in leaf.children:
            tree.node(vid).cum_score = 0.0
        tree.cum_error = 0.0
        assert tree.maybe_split(c1)
        tree.cum_error = 1.0
        tree.node(c2).cum_score = 100.0
        assert not tree.maybe_merge(c2)

    def test_root_leaf_cannot_merge(self):
        tree = make_tree(depth=0, seed=18, tol=0.5)
        tree.cum_error = 1.0
        assert not tree.maybe_merge(tree.leaf_ids()[0])

    def test_split_then_merge_restores_leaf_count(self):
        tree, parent_id = self._three_leaf_tree()
        parent = tree.node(parent_id)
        parent.cum_score = 0.0
        c1, c2 = parent.children
        tree.node(c1).cum_score = 8.0
        tree.node(c2).cum_score = 8.0
        tree.cum_error = 1.0
        assert tree.maybe_merge(c1)
        assert tree.leaf_count() == 2
        tree.check_invariants()


class TestInitTree:
    def test_depth_zero_single_leaf(self):
        tree = make_tree(depth=0, seed=19)
        assert tree.leaf_count() == 1
        root = tree.node(tree.root_id)
        assert root.kind == KIND_LEAF
        assert root.weight == 1.0
        tree.check_invariants()

    def test_weights_are_empirical_fractions(self):
        tree = make_tree(depth=2, seed=20, n=200)
        total = sum(tree.node(i).weight for i in tree.leaf_ids())
        assert total == pytest.approx(1.0, abs=1e-12)
        tree.check_invariants()

    def test_two_lines_recovered(self):
        rng = np.random.default_rng(21)
        X, center = two_line_sample(rng)
        config = EngineConfig(rank=1, init_depth=1, tol=1.0, gamma=0.1, tau=0.0)
        tree = init_tree(X, config)
        assert tree.leaf_count() == 2
        means = [tree.node(i).gaussian.mean for i in tree.leaf_ids()]
        d0 = min(np.linalg.norm(means[0] - center), np.linalg.norm(means[0] + center))
        d1 = min(np.linalg.norm(means[1] - center), np.linalg.norm(means[1] + center))
        assert d0 < 1.0 and d1 < 1.0
        # the two leaves straddle distinct centers
        assert np.sign(means[0][0]) != np.sign(means[1][0])

    def test_too_few_training_points(self):
        with pytest.raises(ValueError):
            make_tree(n=10)

    def test_rank_deficient_training_reduces_rank(self):
        rng = np.random.default_rng(22)
        X = np.outer(rng.standard_normal(6), rng.standard_normal(50))
        config = EngineConfig(rank=3, init_depth=0, tol=1.0, gamma=0.1, tau=0.0)
        with pytest.warns(RuntimeWarning):
            tree = init_tree(X, config)
        assert tree.rank_reduced
        assert tree.rank < 3

    def test_noise_var_estimated_from_residual(self):
        rng = np.random.default_rng(23)
        basis = np.linalg.qr(rng.standard_normal((30, 2)))[0]
        X = basis @ rng.standard_normal((2, 500)) * 3.0 + 0.1 * rng.standard_normal((30, 500))
        config = EngineConfig(rank=2, init_depth=0, tol=1.0, gamma=0.1, tau=0.0)
        tree = init_tree(X, config)
        assert 0.002 < tree.noise_var < 0.05


class TestSerialization:
    def test_round_trip(self):
        tree = make_tree(depth=2, seed=24, n=200)
        tree.cum_error = 3.14
        doc = tree.to_json_dict()
        clone = MixtureTree.from_json_dict(doc)
        assert clone.to_json_dict() == doc
        clone.check_invariants()
        assert clone.leaf_ids() == tree.leaf_ids()
        for nid in tree.nodes:
            a, b = tree.node(nid), clone.node(nid)
            assert a.kind == b.kind and a.parent == b.parent
            np.testing.assert_array_equal(a.gaussian.mean, b.gaussian.mean)
            np.testing.assert_array_equal(a.gaussian.basis, b.gaussian.basis)
            np.testing.assert_array_equal(a.tracker.r_matrix, b.tracker.r_matrix)

    def test_version_checked(self):
        tree = make_tree(seed=25)
        doc = tree.to_json_dict()
        doc["format_version"] = 99
        with pytest.raises(ValueError):
            MixtureTree.from_json_dict(doc)
