import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2, chi2_contingency

from charcirc import (
    CfdConfig,
    CircuitBuilder,
    EcfModel,
    LeafNode,
    ProductNode,
    SumNode,
    build_random_structure,
    fit_parameters,
    log_density,
    mc_cfd,
)
from charcirc.data import generate_bn, generate_mm, mm_truth
from charcirc.errors import ConfigError, DataError, DimensionError, NumericError
from charcirc.leaves import AlphaStable, Categorical, Gaussian
from charcirc.learning import params as params_mod
from charcirc.learning.params import CfdObjective, OptimizerConfig, ParameterMap
from charcirc.learning.structure import (
    StructureConfig,
    g_test,
    independence_partition,
    kmeans_partition,
    learn_structure,
    rdc,
)

seeds = st.integers(0, 2**32 - 1)
C, D = "continuous", "discrete"


def leaf_kinds(circuit):
    return {type(n.leaf) for n in circuit.nodes if isinstance(n, LeafNode)}


class TestGTest:
    @pytest.mark.parametrize("seed", range(5))
    def test_statistic_matches_scipy_before_correction(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 3, 400)
        b = (a + rng.integers(0, 2, 400)) % 4
        obs = np.zeros((3, 4))
        np.add.at(obs, (a, b), 1)
        g_ref, _, dof_ref, _ = chi2_contingency(obs, correction=False, lambda_="log-likelihood")
        rows, cols, n = obs.sum(1), obs.sum(0), obs.sum()
        q = 1 + (n * np.sum(1 / rows) - 1) * (n * np.sum(1 / cols) - 1) / (6 * n * dof_ref)
        stat, dof, logp = g_test(a, b)
        assert dof == dof_ref
        assert stat * q == pytest.approx(g_ref, rel=1e-12)
        assert logp == pytest.approx(chi2.logsf(g_ref / q, dof), rel=1e-12)

    def test_constant_column_has_no_dof(self):
        assert g_test(np.zeros(10), np.arange(10) % 3) == (0.0, 0, 0.0)


class TestRdc:
    def test_copied_column_is_fully_dependent(self):
        x = np.random.default_rng(0).normal(size=500)
        assert rdc(x, x) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_invariance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=1000)
        y = x**2 + rng.normal(size=1000)
        assert abs(rdc(x, y, seed=seed) - rdc(np.exp(x), y, seed=seed)) < 0.02
        assert abs(rdc(x, y, seed=seed) - rdc(x, np.exp(y), seed=seed)) < 0.02

    def test_independent_is_small(self):
        rng = np.random.default_rng(3)
        assert rdc(rng.normal(size=2000), rng.normal(size=2000)) < 0.2


class TestKMeans:
    def test_separated_rows(self):
        groups = kmeans_partition(np.array([0.0, 0.1, 10.0, 10.1]), 2)
        assert [g.tolist() for g in groups] == [[0, 1], [2, 3]]

    def test_identical_rows(self):
        groups = kmeans_partition(np.ones((7, 2)), 2)
        assert len(groups) == 1 and groups[0].tolist() == list(range(7))

    def test_mm_cluster_means(self):
        x = generate_mm(800, 1, seed=0).train.values[:, 0]
        means = sorted(x[g].mean() for g in kmeans_partition(x, 2, seed=0))
        assert abs(means[0] - 0.0) <= 0.5 and abs(means[1] - 5.0) <= 0.5

    def test_deterministic(self):
        X = np.random.default_rng(1).normal(size=(200, 3))
        a, b = kmeans_partition(X, 3, seed=7), kmeans_partition(X, 3, seed=7)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            kmeans_partition(np.zeros((4, 1)), 1)


class TestIndependencePartition:
    def test_independent_normals_split(self):
        hits = 0
        for seed in range(40):
            X = np.random.default_rng(seed).normal(size=(1000, 2))
            hits += independence_partition(X, (C, C)) == [[0], [1]]
        assert hits >= 0.95 * 40

    @pytest.mark.parametrize("method,kw", [("gtest", {}), ("rdc", {"threshold": 0.3})])
    def test_copied_column(self, method, kw):
        x = np.random.default_rng(0).normal(size=1000)
        assert independence_partition(np.column_stack([x, x]), (C, C), method, **kw) is None

    @pytest.mark.parametrize("method,kw", [("gtest", {}), ("rdc", {"threshold": 0.3})])
    def test_dependent_pair_and_independent_column(self, method, kw):
        rng = np.random.default_rng(1)
        x = rng.normal(size=1000)
        X = np.column_stack([x, x + 0.3 * rng.normal(size=1000), rng.normal(size=1000)])
        assert independence_partition(X, (C, C, C), method, **kw) == [[0, 1], [2]]

    def test_gtest_merges_to_k_prod(self):
        X = np.random.default_rng(2).normal(size=(1000, 4))
        groups = independence_partition(X, (C,) * 4, k_prod=2)
        assert len(groups) == 2 and sorted(sum(groups, [])) == [0, 1, 2, 3]

    def test_rdc_needs_threshold(self):
        with pytest.raises(ConfigError):
            independence_partition(np.zeros((10, 2)), (C, C), "rdc")

    def test_single_variable(self):
        with pytest.raises(DataError):
            independence_partition(np.zeros((10, 1)), (C,))


def depth_bound(n, d, min_k):
    return d + 2 * math.ceil(math.log2(max(n / min_k, 1)))


def check_slice_weights(circuit, info):
    for nid, sizes in info.sum_slices.items():
        total = sum(sizes)
        for w, s in zip(circuit.nodes[nid].weights, sizes):
            assert Fraction(w).limit_denominator(total) == Fraction(s, total)
            assert w == s / total


class TestLearnStructure:
    def test_one_column_is_a_leaf(self):
        X = np.random.default_rng(0).normal(size=(300, 1))
        c = learn_structure(X, kinds=(C,))
        assert isinstance(c.nodes[c.root], LeafNode)

    def test_mm_root_weights(self):
        data = generate_mm(800, 1, seed=0).train
        c = learn_structure(data, StructureConfig(min_k=100, k_sum=2, k_prod=2))
        root = c.nodes[c.root]
        assert isinstance(root, SumNode) and len(root.children) == 2
        lo, hi = sorted(root.weights)
        assert 0.2 <= lo <= 0.4 and 0.6 <= hi <= 0.8

    def test_small_data_is_naive_product(self):
        X = np.random.default_rng(0).normal(size=(50, 3))
        c = learn_structure(X, StructureConfig(min_k=100), kinds=(C, C, C))
        root = c.nodes[c.root]
        assert isinstance(root, ProductNode)
        assert [c.nodes[k].var for k in root.children] == [0, 1, 2]

    def test_identical_rows_terminate(self):
        c, info = learn_structure(np.ones((500, 3)), StructureConfig(min_k=10), kinds=(C, D, C), return_info=True)
        c.check()
        assert info.naive_factorizations >= 1

    @pytest.mark.parametrize("gen,seed", [("mm", 0), ("mm", 1), ("bn", 0), ("bn", 1)])
    @pytest.mark.parametrize("split", ["gtest", "rdc"])
    def test_invariants_on_generators(self, gen, seed, split):
        data = (generate_mm if gen == "mm" else generate_bn)(800, 1, seed=seed).train
        cfg = StructureConfig(min_k=50, split_method=split, rdc_threshold=0.3 if split == "rdc" else None)
        c, info = learn_structure(data, cfg, return_info=True)
        c.check()
        check_slice_weights(c, info)
        assert info.max_depth <= depth_bound(800, data.dim, 50)
        assert info.summary == c.summary()

    @settings(max_examples=15)
    @given(seeds)
    def test_invariants_on_random_tables(self, seed):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(20, 400)), int(rng.integers(1, 5))
        kinds = tuple(rng.choice([C, D], size=d))
        X = np.column_stack([rng.integers(0, 3, n).astype(float) if k == D else rng.standard_normal(n)
                             for k in kinds])
        min_k = int(rng.integers(10, 60))
        c, info = learn_structure(X, StructureConfig(min_k=min_k, seed=seed % 1000), kinds=kinds,
                                  return_info=True)
        c.check()
        check_slice_weights(c, info)
        assert info.max_depth <= depth_bound(n, d, min_k)

    def test_states_widen_categorical_leaves(self):
        X = np.column_stack([np.random.default_rng(0).normal(size=40), np.ones(40)])
        c = learn_structure(X, kinds=(C, D), states={1: (1.0, 2.0, 5.0)})
        cats = [n.leaf for n in c.nodes if isinstance(n, LeafNode) and isinstance(n.leaf, Categorical)]
        assert all(leaf.states == (1.0, 2.0, 5.0) for leaf in cats)
        assert np.isfinite(log_density(c, [[0.0, 5.0]]))

    def test_leaf_policy(self):
        data = generate_mm(300, 1, seed=0).train
        cfg = StructureConfig(leaf_policy={C: "alpha_stable", D: "categorical"})
        assert leaf_kinds(learn_structure(data, cfg)) == {AlphaStable, Categorical}

    @pytest.mark.parametrize("kwargs", [
        {"min_k": 0}, {"k_sum": 1}, {"k_prod": 1}, {"split_method": "chi"},
        {"split_method": "rdc"}, {"split_method": "rdc", "rdc_threshold": 1.0},
        {"rdc_threshold": 0.3}, {"leaf_policy": {D: "gaussian"}},
    ])
    def test_config_errors(self, kwargs):
        with pytest.raises(ConfigError):
            StructureConfig(**kwargs)

    def test_data_errors(self):
        with pytest.raises(DataError):
            learn_structure(np.zeros((0, 2)), kinds=(C, C))
        with pytest.raises(DataError):
            learn_structure(np.zeros((5, 2)), kinds=(C,))
        with pytest.raises(ConfigError):
            learn_structure(np.zeros((5, 2)), kinds=(C, C), states={0: (1.0,)})


class TestRandomStructure:
    def test_dim_one(self):
        c = build_random_structure(1, (C,))
        root = c.nodes[c.root]
        assert isinstance(root, SumNode) and root.weights == (1.0,)
        assert isinstance(c.nodes[root.children[0]], LeafNode)

    def test_seeds_change_splits(self):
        def scopes(c):
            return sorted(tuple(sorted(c.scope(k))) for k, n in enumerate(c.nodes) if isinstance(n, ProductNode)
                          for k in n.children)

        a = build_random_structure(5, (C,) * 5, seed=0)
        b = build_random_structure(5, (C,) * 5, seed=1)
        assert scopes(a) != scopes(b)

    def test_leaf_policy_conformance(self):
        kinds = tuple(C if j % 3 else D for j in range(13))
        c = build_random_structure(13, kinds, seed=3, leaf_policy={C: "alpha_stable"})
        c.check()
        for n in c.nodes:
            if isinstance(n, LeafNode):
                want = Categorical if kinds[n.var] == D else AlphaStable
                assert isinstance(n.leaf, want)

    def test_locations_near_data_mean(self):
        X = np.random.default_rng(0).normal(40.0, 1.0, size=(100, 2))
        c = build_random_structure(2, (C, C), X, seed=2)
        mus = [n.leaf.mu for n in c.nodes if isinstance(n, LeafNode)]
        assert all(abs(m - 40.0) < 6 for m in mus)
        assert all(n.leaf.sigma2 == 1.0 for n in c.nodes if isinstance(n, LeafNode))

    def test_errors(self):
        with pytest.raises(ConfigError):
            build_random_structure(0, ())
        with pytest.raises(ConfigError):
            build_random_structure(2, (C,))
        with pytest.raises(DataError):
            build_random_structure(2, (C, C), np.zeros((5, 3)))


def five_leaf_circuit():
    b = CircuitBuilder()
    s0 = b.add_sum([b.add_leaf(0, Gaussian(0.2, 1.3)), b.add_leaf(0, Gaussian(2.0, 0.5)),
                    b.add_leaf(0, AlphaStable(1.6, 0.3, 0.8, -0.5))], (0.5, 0.3, 0.2))
    s1 = b.add_sum([b.add_leaf(1, Categorical((1.0, 2.0, 3.0), (0.2, 0.5, 0.3))),
                    b.add_leaf(1, Categorical((1.0, 2.0, 3.0), (0.6, 0.3, 0.1)))], (0.4, 0.6))
    return b.build(b.add_product([s0, s1]), 2, (C, D))


class TestFitParameters:
    def test_gradient_matches_finite_differences(self):
        c = five_leaf_circuit()
        X = generate_mm(300, 1, seed=1).train.values
        obj = CfdObjective(c, X, num_freqs=100, seed=4)
        theta = obj.pmap.theta()
        _, grad = obj.value_and_grad(theta)
        h = 1e-5
        fd = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (obj.value(theta + e) - obj.value(theta - e)) / (2 * h)
        scale = np.maximum(np.abs(fd), np.abs(fd).max() * 1e-3)
        assert np.max(np.abs(grad - fd) / scale) < 1e-4

    def test_iteration_zero_loss_is_mc_cfd(self):
        data = generate_mm(400, 1, seed=2).train
        c = build_random_structure(2, data.kinds, data, seed=5)
        cfg = OptimizerConfig(iters=3, eta=0.7, num_freqs=64, seed=11)
        res = fit_parameters(c, data, cfg)
        want = mc_cfd(EcfModel(data.values), c, CfdConfig(0.7, 64, 11)).value
        assert res.trace[0][1] == want

    def test_loss_never_increases_and_schedule(self):
        data = generate_mm(400, 1, seed=2).train
        c = build_random_structure(2, data.kinds, data, seed=5)
        res = fit_parameters(c, data, OptimizerConfig(lr_start=0.5, lr_end=0.01, iters=50))
        losses = [r[1] for r in res.trace]
        assert min(losses) <= losses[0]
        obj = CfdObjective(c, data)
        assert obj.loss_of(res.circuit) <= losses[0]
        lrs = [r[2] for r in res.trace]
        assert lrs[0] == 0.5 and lrs[-1] == pytest.approx(0.01) and all(a > b for a, b in zip(lrs, lrs[1:]))
        res.circuit.check()

    def test_truth_stays_near_zero(self):
        data = generate_mm(800, 1, seed=0).train
        res = fit_parameters(mm_truth(), data, OptimizerConfig(iters=20))
        assert res.trace[0][1] < 5e-3
        assert CfdObjective(mm_truth(), data).loss_of(res.circuit) <= res.trace[0][1]

    @given(seeds)
    def test_reparameterization_keeps_constraints(self, seed):
        rng = np.random.default_rng(seed)
        pmap = ParameterMap(five_leaf_circuit())
        c = pmap.materialize(pmap.theta() + rng.normal(0, 30, pmap.size))
        c.check()
        for n in c.nodes:
            if isinstance(n, SumNode):
                assert min(n.weights) >= 0 and sum(n.weights) == pytest.approx(1.0, abs=1e-12)
            elif isinstance(n.leaf if isinstance(n, LeafNode) else None, AlphaStable):
                assert 0.6 < n.leaf.alpha <= 2 and abs(n.leaf.beta) <= 1 and n.leaf.c > 0
            elif isinstance(n, LeafNode) and isinstance(n.leaf, Gaussian):
                assert n.leaf.sigma2 > 0

    def test_batches(self):
        data = generate_mm(400, 1, seed=2).train
        c = build_random_structure(2, data.kinds, data, seed=5)
        obj = CfdObjective(c, data, batch_count=4)
        assert len(obj.batches) == 4 and sum(len(b) for b in obj.batches) == 400
        res = fit_parameters(c, data, OptimizerConfig(iters=10, batch_count=4))
        assert res.trace[-1][1] <= res.trace[0][1]
        with pytest.raises(ConfigError):
            CfdObjective(c, data.values[:3], batch_count=4)

    def test_nan_gradient_names_iteration_and_parameter(self, monkeypatch):
        def broken(circuit, pmap, *args, **kwargs):
            g = np.zeros(pmap.size)
            g[2] = np.nan
            return g

        monkeypatch.setattr(params_mod, "circuit_gradient", broken)
        c = five_leaf_circuit()
        name = ParameterMap(c).names[2]
        with pytest.raises(NumericError, match=rf"iteration 0 .*{name.replace('[', '.').replace(']', '.')}"):
            fit_parameters(c, generate_mm(50, 1).train, OptimizerConfig(iters=3))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            fit_parameters(five_leaf_circuit(), np.zeros((10, 3)))

    @pytest.mark.parametrize("kwargs", [
        {"lr_start": 0.01, "lr_end": 0.5}, {"lr_end": 0.0}, {"iters": 0}, {"num_freqs": 0},
        {"batch_count": 0}, {"eta": -1.0},
    ])
    def test_config_errors(self, kwargs):
        with pytest.raises(ConfigError):
            OptimizerConfig(**kwargs)
