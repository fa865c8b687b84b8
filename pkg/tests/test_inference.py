import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import trapezoid

from charcirc import (
    Circuit,
    CircuitBuilder,
    LeafNode,
    ProductNode,
    SumNode,
    evaluate_cf,
    log_density,
    marginal_cf,
    marginal_log_density,
    moment,
)
from charcirc.data import mm_truth
from charcirc.errors import (
    DimensionError,
    InvalidParameterError,
    MomentDoesNotExistError,
    NumericError,
    QuadratureUnderflowError,
    QuadratureUnderflowWarning,
)
from charcirc.leaves import AlphaStable, Categorical, EmpiricalCF, Gaussian

from oracles import enumerated_cf, enumerated_log_density, random_circuit, sample

seeds = st.integers(0, 2**32 - 1)


def gaussian_product():
    b = CircuitBuilder()
    p = b.add_product([b.add_leaf(0, Gaussian(0, 1)), b.add_leaf(1, Gaussian(0, 1))])
    return b.build(p, 2)


def rows_for(circuit, rng, n=25):
    cols = []
    for k in circuit.column_kinds:
        if k == "continuous":
            cols.append(rng.normal(0, 3, n))
        else:
            cols.append(rng.integers(1, 4, n).astype(float))
    return np.column_stack(cols)


class TestEvaluateCf:
    @given(seeds)
    def test_origin_is_one(self, seed):
        c = random_circuit(np.random.default_rng(seed), 3)
        assert abs(evaluate_cf(c, np.zeros(3)) - 1) < 1e-12

    def test_gaussian_product(self):
        assert evaluate_cf(gaussian_product(), [1.0, 1.0]) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_univariate_mixture(self):
        b = CircuitBuilder()
        s = b.add_sum([b.add_leaf(0, Gaussian(0, 1)), b.add_leaf(0, Gaussian(5, 1))], (0.3, 0.7))
        want = 0.3 * math.exp(-0.5) + 0.7 * math.exp(-0.5) * complex(math.cos(5), math.sin(5))
        assert evaluate_cf(b.build(s, 1), [1.0]) == pytest.approx(want, abs=1e-15)

    @given(seeds)
    def test_hermitian(self, seed):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, 3)
        T = rng.normal(0, 2, (100, 3))
        np.testing.assert_allclose(evaluate_cf(c, -T), np.conj(evaluate_cf(c, T)), atol=1e-9)

    @given(seeds)
    def test_matches_tree_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, 3)
        T = rng.normal(0, 2, (20, 3))
        np.testing.assert_allclose(evaluate_cf(c, T), enumerated_cf(c, T), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            evaluate_cf(gaussian_product(), [1.0, 2.0, 3.0])


class TestLogDensity:
    def test_mm_hand_value(self):
        want = math.log(0.3 * stats.norm.pdf(0) * 0.6 + 0.7 * stats.norm.pdf(0, 5) * 0.1)
        assert log_density(mm_truth(), [0.0, 1.0]) == pytest.approx(want, abs=1e-13)

    def test_single_gaussian(self):
        c = Circuit((LeafNode(0, Gaussian(0, 1)),), 0, 1)
        assert log_density(c, [0.0]) == pytest.approx(-0.918938533204673, abs=1e-14)

    def test_outside_support_is_minus_inf(self):
        b = CircuitBuilder()
        cat = Categorical((1.0, 2.0), (0.4, 0.6))
        p = b.add_product([b.add_leaf(0, cat), b.add_leaf(1, cat)])
        assert log_density(b.build(p, 2), [5.0, 1.0]) == -math.inf

    @given(seeds)
    def test_matches_tree_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, int(rng.integers(1, 4)))
        X = rows_for(c, rng)
        np.testing.assert_allclose(log_density(c, X), enumerated_log_density(c, X), atol=1e-10)

    @given(seeds)
    def test_node_order_does_not_matter(self, seed):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, 3)
        perm = rng.permutation(len(c.nodes))
        new_id = {old: new for new, old in enumerate(perm)}
        nodes = [None] * len(c.nodes)
        for old, node in enumerate(c.nodes):
            if isinstance(node, SumNode):
                node = SumNode(tuple(new_id[k] for k in node.children), node.weights)
            elif isinstance(node, ProductNode):
                node = ProductNode(tuple(new_id[k] for k in node.children))
            nodes[new_id[old]] = node
        shuffled = Circuit(tuple(nodes), new_id[c.root], c.dim, c.column_kinds)
        X = rows_for(c, rng)
        np.testing.assert_allclose(log_density(shuffled, X), log_density(c, X), atol=1e-12, rtol=0)

    def test_threads_give_identical_results(self, monkeypatch):
        c = random_circuit(np.random.default_rng(5), 3)
        X = rows_for(c, np.random.default_rng(6), 500)
        one = log_density(c, X, threads=1)
        assert np.array_equal(log_density(c, X, threads=4), one)
        monkeypatch.setenv("CHARCIRC_THREADS", "3")
        assert np.array_equal(log_density(c, X), one)

    def test_underflow_names_the_leaf(self):
        b = CircuitBuilder()
        leaf = b.add_leaf(0, AlphaStable(1.5, 0.0, 1.0, 0.0))
        c = b.build(b.add_sum([leaf], (1.0,)), 1)
        with pytest.raises(QuadratureUnderflowError, match=f"leaf node {leaf}"):
            log_density(c, np.linspace(30, 80, 20)[:, None])
        with pytest.warns(QuadratureUnderflowWarning):
            out = log_density(c, np.linspace(30, 80, 20)[:, None], on_underflow="floor")
        assert np.all(np.isfinite(out))

    def test_nan_quadrature_names_the_leaf(self):
        @dataclass(frozen=True)
        class Broken(EmpiricalCF):
            def _inversion_cf(self, t):
                return np.full(np.shape(t), np.nan, dtype=complex)

        c = Circuit((LeafNode(0, Broken((0.0, 1.0))),), 0, 1)
        with pytest.raises(NumericError, match="leaf node 0"):
            log_density(c, [0.5])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            log_density(gaussian_product(), [1.0])


class TestMarginals:
    def test_product_keep_one(self):
        c = gaussian_product()
        assert marginal_cf(c, {0}, [0.7]) == pytest.approx(Gaussian(0, 1).cf(0.7), abs=1e-15)

    def test_mm_discrete_marginal(self):
        c = mm_truth()
        p1 = Categorical((1.0, 2.0, 3.0), (0.6, 0.4, 0.0))
        p2 = Categorical((1.0, 2.0, 3.0), (0.1, 0.2, 0.7))
        for t in (0.3, 2.0, -1.4):
            assert marginal_cf(c, {1}, [t]) == pytest.approx(0.3 * p1.cf(t) + 0.7 * p2.cf(t), abs=1e-15)

    def test_keep_all_is_evaluate_cf(self):
        c = mm_truth()
        T = np.random.default_rng(0).normal(size=(10, 2))
        assert np.array_equal(marginal_cf(c, {0, 1}, T), evaluate_cf(c, T))

    @given(seeds)
    def test_zero_padding_is_bitwise(self, seed):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, 3)
        keep = sorted(rng.choice(3, size=int(rng.integers(1, 4)), replace=False).tolist())
        T_sub = rng.normal(size=(8, len(keep)))
        T = np.zeros((8, 3))
        T[:, keep] = T_sub
        assert np.array_equal(marginal_cf(c, keep, T_sub), evaluate_cf(c, T))

    def test_mm_continuous_marginal_density(self):
        want = math.log(0.3 * stats.norm.pdf(0) + 0.7 * stats.norm.pdf(0, 5))
        assert marginal_log_density(mm_truth(), {0}, [0.0]) == pytest.approx(want, abs=1e-13)

    def test_keep_all_is_log_density(self):
        c = mm_truth()
        X = np.array([[0.3, 1.0], [4.0, 3.0], [-1.0, 2.0]])
        assert np.array_equal(marginal_log_density(c, [0, 1], X), log_density(c, X))

    def test_marginal_integrates_to_one(self):
        c = random_circuit(np.random.default_rng(2), 2, kinds=("continuous", "continuous"))
        grid = np.linspace(-40, 40, 40_001)
        dens = np.exp(marginal_log_density(c, {0}, grid[:, None]))
        assert trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)

    def test_bad_keep(self):
        with pytest.raises(DimensionError):
            marginal_cf(mm_truth(), {4}, [0.0])
        with pytest.raises(InvalidParameterError):
            marginal_cf(mm_truth(), set(), [])


class TestMoments:
    def test_mm_mean_and_second_moment(self):
        assert moment(mm_truth(), (1, 0)) == pytest.approx(3.5, abs=1e-9)
        assert moment(mm_truth(), (2, 0)) == pytest.approx(18.5, abs=1e-9)

    def test_mixed_moment(self):
        # E[X1 X2] = 0.3 * 0 * 1.4 + 0.7 * 5 * 2.6
        assert moment(mm_truth(), (1, 1)) == pytest.approx(0.7 * 5 * 2.6, abs=1e-9)

    def test_order_all_zero_rejected(self):
        with pytest.raises(InvalidParameterError):
            moment(mm_truth(), (0, 0))
        with pytest.raises(DimensionError):
            moment(mm_truth(), (1,))

    def test_stable_variance_missing_names_node(self):
        b = CircuitBuilder()
        leaf = b.add_leaf(0, AlphaStable(1.5, 0.0, 1.0, 0.0))
        c = b.build(b.add_sum([leaf], (1.0,)), 1)
        with pytest.raises(MomentDoesNotExistError) as info:
            moment(c, (2,))
        assert info.value.node == leaf

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_ancestral_sampling(self, seed):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, 2)
        X = sample(c, 1_000_000, rng)
        for order in ((1, 0), (0, 1), (1, 1), (2, 0), (0, 2)):
            prod = np.prod(X ** np.array(order), axis=1)
            se = prod.std(ddof=1) / math.sqrt(prod.size)
            assert abs(moment(c, order) - prod.mean()) <= 4 * se
