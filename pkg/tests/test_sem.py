import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import path_sum_effects, reachable
from rootcause.sem import (
    Dataset,
    Intervention,
    Safety,
    Sem,
    WeightedDag,
    bypass_confounders,
    graph_sets,
    hub_dag,
    is_polytree,
    random_dag,
    random_polytree,
    real_descendants,
    rescale_to_target_variances,
    sample_interventional,
    sample_observational,
    shuffle_variables,
    total_effects,
    zscore_safety,
)


def _lower_triangular_under_order(dag):
    o = dag.causal_order
    return np.all(np.triu(dag.weights[np.ix_(o, o)]) == 0)


class TestWeightedDag:
    def test_rejects_cycle(self):
        with pytest.raises(ValueError):
            WeightedDag(np.array([[0, 1.0], [1.0, 0]]), [0, 1])

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            WeightedDag(np.zeros((2, 2)), [0, 0])

    def test_permuted_keeps_structure(self, rng):
        dag = random_dag(6, 0.5, rng)
        perm = rng.permutation(6)
        new = dag.permuted(perm)
        assert _lower_triangular_under_order(new)
        for i in range(6):
            for j in range(6):
                assert new.weights[i, j] == dag.weights[perm[i], perm[j]]


class TestRandomDag:
    def test_empty_when_s_zero(self, rng):
        assert random_dag(5, 0.0, rng).n_edges == 0

    def test_single_forced_edge(self, rng):
        dag = random_dag(2, 1.0, rng)
        assert dag.n_edges == 1
        assert dag.weights[1, 0] != 0 and -1 < dag.weights[1, 0] < 1

    def test_edge_count_binomial(self):
        dag = random_dag(100, 0.4, np.random.default_rng(3))
        m = 100 * 99 / 2
        mean, sd = 0.4 * m, np.sqrt(m * 0.4 * 0.6)
        assert abs(dag.n_edges - mean) < 3 * sd

    @given(st.integers(2, 12), st.floats(0, 1), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_always_acyclic(self, p, s, seed):
        dag = random_dag(p, s, np.random.default_rng(seed))
        assert _lower_triangular_under_order(dag)
        assert np.all(np.abs(dag.weights) <= 1)

    def test_invalid_sparsity(self, rng):
        with pytest.raises(ValueError):
            random_dag(3, 1.5, rng)


class TestHubDag:
    def test_reference_sizes(self, rng):
        assert hub_dag(4, 15, 10, 4, 3, 0.4, rng).p == 104
        assert hub_dag(20, 30, 20, 9, 6, 0.2, rng).p == 1020

    def test_single_hub_degrees(self, rng):
        dag = hub_dag(1, 7, 5, 0, 0, 0.3, rng)
        hub = 7
        assert dag.parents(hub).size == 7
        assert dag.children(hub).size == 5

    def test_cross_edges(self, rng):
        n_hubs, upper, lower = 4, 15, 10
        dag = hub_dag(n_hubs, upper, lower, 4, 3, 0.4, rng)
        hub0 = n_hubs * upper
        low0 = hub0 + n_hubs
        for h in range(n_hubs):
            hub = hub0 + h
            own_up = set(range(h * upper, (h + 1) * upper))
            own_low = set(range(low0 + h * lower, low0 + (h + 1) * lower))
            pa = set(dag.parents(hub).tolist())
            ch = set(dag.children(hub).tolist())
            assert own_up <= pa and len(pa - own_up) == 4
            assert own_low <= ch and len(ch - own_low) == 3
        assert _lower_triangular_under_order(dag)

    def test_too_many_cross_edges(self, rng):
        with pytest.raises(ValueError):
            hub_dag(2, 3, 3, 4, 0, 0.5, rng)


class TestRescale:
    def test_sources_only(self):
        sem = Sem(WeightedDag(np.zeros((3, 3)), [0, 1, 2]), np.zeros(3), np.ones(3))
        out = rescale_to_target_variances(sem, [2.0, 3, 4])
        np.testing.assert_array_equal(out.error_variances, [2, 3, 4])
        np.testing.assert_array_equal(out.dag.weights, 0)

    def test_two_chain_closed_form(self):
        sem = Sem(WeightedDag(np.array([[0, 0], [0.3, 0]]), [0, 1]), np.zeros(2), np.ones(2))
        out = rescale_to_target_variances(sem, [10.0, 50.0])
        b21 = out.dag.weights[1, 0]
        assert out.error_variances[0] == 10
        assert b21**2 * 10 + 1 == pytest.approx(50, rel=1e-12)

    @given(st.integers(2, 9), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_exact_variances(self, p, seed):
        rng = np.random.default_rng(seed)
        dag = random_dag(p, 0.6, rng)
        sem = Sem(dag, np.zeros(p), rng.uniform(1, 2, p))
        targets = rng.uniform(10, 50, p)
        out = rescale_to_target_variances(sem, targets)
        np.testing.assert_allclose(np.diag(out.covariance()), targets, rtol=1e-9)

    def test_monte_carlo_variances(self):
        rng = np.random.default_rng(5)
        sem = Sem(random_dag(10, 0.5, rng), np.zeros(10), rng.uniform(1, 2, 10))
        targets = rng.uniform(10, 50, 10)
        out = rescale_to_target_variances(sem, targets)
        x = sample_observational(out, 10**6, rng)
        np.testing.assert_allclose(x.var(axis=0), targets, rtol=0.02)

    def test_target_below_error_variance(self):
        sem = Sem(WeightedDag(np.array([[0, 0], [1.0, 0]]), [0, 1]), np.zeros(2), [1.0, 5.0])
        with pytest.raises(ValueError):
            rescale_to_target_variances(sem, [10.0, 4.0])


class TestSampling:
    def test_zero_shift_matches_observational(self, five_sem):
        a = sample_observational(five_sem, 1, np.random.default_rng(9))[0]
        b = sample_interventional(five_sem, Intervention(2, 0.0), np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_mean_shift_propagation(self, five_sem):
        shift = total_effects(five_sem.dag) @ Intervention(2, 10.0).vector(5)
        assert shift[3] == 0
        assert np.all(shift[[0, 1, 2, 4]] != 0)
        a = sample_interventional(five_sem, Intervention(2, 10.0), np.random.default_rng(1))
        b = sample_interventional(five_sem, Intervention(2, 0.0), np.random.default_rng(1))
        np.testing.assert_allclose(a - b, shift, atol=1e-12)

    def test_monte_carlo_mean(self, rng):
        sem = Sem(random_dag(6, 0.5, rng), rng.uniform(-10, 10, 6), rng.uniform(1, 2, 6))
        x = sample_observational(sem, 10**5, rng)
        se = x.std(axis=0) / np.sqrt(x.shape[0])
        assert np.all(np.abs(x.mean(axis=0) - sem.mean()) < 3.5 * se)

    def test_uniform_errors_variance(self, rng):
        sem = Sem(WeightedDag(np.zeros((2, 2)), [0, 1]), np.zeros(2), [2.0, 5.0], ("uniform", "uniform"))
        x = sample_observational(sem, 200_000, rng)
        np.testing.assert_allclose(x.var(axis=0), [2, 5], rtol=0.02)
        assert np.all(np.abs(x) <= np.sqrt(3 * np.array([2.0, 5.0])))


class TestGraphQueries:
    def test_toy_total_effects(self, toy_sem):
        t = total_effects(toy_sem.dag)
        assert t[1, 0] == 2 and t[2, 0] == -1 and t[2, 1] == -1
        np.testing.assert_array_equal(np.diag(t), 1)

    def test_empty_graph(self):
        dag = WeightedDag(np.zeros((4, 4)), range(4))
        np.testing.assert_array_equal(total_effects(dag), np.eye(4))
        gs = graph_sets(dag, 2)
        assert not (gs.parents or gs.ancestors or gs.descendants or gs.real_descendants)

    def test_toy_sets(self, toy_sem):
        gs = graph_sets(toy_sem.dag, 1)
        assert gs.descendants == {2} and gs.parents == {0}

    @given(st.integers(2, 6), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_total_effects_path_sum(self, p, seed):
        rng = np.random.default_rng(seed)
        dag = random_dag(p, 0.6, rng).permuted(rng.permutation(p))
        np.testing.assert_allclose(total_effects(dag), path_sum_effects(dag.weights), atol=1e-10)

    @given(st.integers(2, 8), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_descendants_reachability(self, p, seed):
        rng = np.random.default_rng(seed)
        dag = random_dag(p, 0.5, rng)
        reach = reachable(dag.weights)
        for j in range(p):
            gs = graph_sets(dag, j)
            assert gs.descendants == set(np.flatnonzero(reach[:, j]).tolist())
            assert gs.ancestors == set(np.flatnonzero(reach[j, :]).tolist())
            assert gs.real_descendants <= gs.descendants

    def test_path_cancellation(self):
        # 0 -> 1 -> 2 with weights 1, 1 and 0 -> 2 with weight -1: no net effect on 2
        B = np.array([[0, 0, 0], [1.0, 0, 0], [-1.0, 1.0, 0]])
        dag = WeightedDag(B, [0, 1, 2])
        assert 2 in graph_sets(dag, 0).descendants
        assert real_descendants(dag, 0) == {1}

    def test_polytree(self, rng):
        assert is_polytree(random_polytree(10, rng))
        assert not is_polytree(WeightedDag(np.array([[0, 0, 0], [1.0, 0, 0], [1.0, 1.0, 0]]), [0, 1, 2]))

    def test_bypass_confounder(self, toy_sem):
        assert bypass_confounders(toy_sem.dag, 1, 2) == {0}
        assert bypass_confounders(toy_sem.dag, 0, 2) == set()

    def test_shuffle(self, rng, five_sem):
        sem, perm = shuffle_variables(five_sem, rng)
        np.testing.assert_allclose(sem.covariance(), five_sem.covariance()[np.ix_(perm, perm)])


class TestSafety:
    def test_toy_unsafe_pair(self, toy_sem):
        rep = zscore_safety(toy_sem.dag, toy_sem.error_variances, 1, 2)
        assert rep.verdict is Safety.UNSAFE
        assert rep.var_k == pytest.approx(3) and rep.scaled_var_r == pytest.approx(5)
        assert not rep.structurally_safe

    def test_toy_root_first(self, toy_sem):
        for k in (1, 2):
            assert zscore_safety(toy_sem.dag, toy_sem.error_variances, 0, k).verdict is Safety.SAFE

    def test_sign_flip_safe_but_not_structural(self):
        # flipping the sign of 0 -> 2 keeps the bypassing confounder but Var(X3) grows to 11
        B = np.array([[0.0, 0, 0], [2, 0, 0], [1, 1, 0]])
        rep = zscore_safety(WeightedDag(B, [0, 1, 2]), np.ones(3), 1, 2)
        assert rep.verdict is Safety.SAFE
        assert bypass_confounders(WeightedDag(B, [0, 1, 2]), 1, 2) == {0}
        assert rep.structural == "nonnegative weights"

    def test_boundary(self):
        # Var(X2) = 1 + tiny equals alpha^2 Var(X1) = 1 up to rounding
        B = np.array([[0.0, 0], [1.0, 0]])
        rep = zscore_safety(WeightedDag(B, [0, 1]), [1.0, 1e-300], 0, 1)
        assert rep.verdict is Safety.BOUNDARY

    def test_polytree_structural(self, rng):
        dag = random_polytree(8, rng)
        err = rng.uniform(1, 2, 8)
        for r in range(8):
            for k in range(8):
                if r != k:
                    assert zscore_safety(dag, err, r, k).structurally_safe

    @given(st.integers(2, 7), st.integers(0, 2**31))
    @settings(max_examples=80, deadline=None)
    def test_structural_implies_safe(self, p, seed):
        rng = np.random.default_rng(seed)
        dag = random_dag(p, 0.6, rng)
        err = rng.uniform(0.5, 3, p)
        for r in range(p):
            for k in range(p):
                if r == k:
                    continue
                rep = zscore_safety(dag, err, r, k)
                if rep.structurally_safe:
                    assert rep.var_k > rep.scaled_var_r * (1 - 1e-10)


class TestSerialization:
    def test_json_round_trip(self, five_sem):
        back = Sem.from_json(five_sem.to_json())
        np.testing.assert_array_equal(back.dag.weights, five_sem.dag.weights)
        np.testing.assert_array_equal(back.error_variances, five_sem.error_variances)
        assert set(five_sem.to_dict()) == {"p", "b", "B", "error_family", "error_variances", "causal_order"}

    def test_rejects_non_finite(self, five_sem):
        d = five_sem.to_dict()
        d["b"][0] = float("nan")
        with pytest.raises(ValueError):
            Sem.from_dict(d)


class TestDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((1, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            Dataset(np.array([[0, np.nan], [1, 2]]), np.zeros(2))
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(3))

    def test_default_names_and_subset(self):
        ds = Dataset(np.arange(12.0).reshape(4, 3), np.arange(3.0))
        assert ds.names == ("X1", "X2", "X3")
        sub = ds.subset([2, 0])
        assert sub.names == ("X3", "X1") and sub.case.tolist() == [2.0, 0.0]
