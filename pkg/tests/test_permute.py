import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rieszmed.data import MediationDataset
from rieszmed.permute import (
    DistanceMatrix,
    PermutationPlan,
    apply_permutation,
    build_distance,
    construct_zpi,
    permutation_diagnostics,
    solve_zero_trace_assignment,
)


def _dataset(a, w, z=None):
    a = np.asarray(a, dtype=float)
    n = len(a)
    w = np.asarray(w, dtype=float).reshape(n, -1)
    z = np.arange(n, dtype=float).reshape(-1, 1) if z is None else np.asarray(z, float).reshape(n, -1)
    return MediationDataset(
        w=w, a=a, z=z, m=np.zeros((n, 1)), y=np.zeros(n), treatment_kind="continuous"
    )


def brute_force_minimum(d: np.ndarray) -> float:
    n = d.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        if any(perm[i] == i for i in range(n)):
            continue
        best = min(best, sum(d[i, perm[i]] for i in range(n)))
    return best


def test_identical_rows_give_zero_distance():
    ds = _dataset([1.0, 1.0], [[2.0], [2.0]])
    dm = build_distance(ds)
    np.testing.assert_array_equal(dm.d, np.zeros((2, 2)))


def test_standardized_distance_hand_value():
    # (A, W) = (0,0) and (1,0); A standardized to unit sample variance
    ds = _dataset([0.0, 1.0], [[0.0], [0.0]])
    dm = build_distance(ds)
    assert dm.d[0, 1] == pytest.approx(2.0, abs=1e-12)
    assert dm.d[1, 0] == pytest.approx(2.0, abs=1e-12)


def test_distance_invariant_under_relabeling():
    rng = np.random.default_rng(5)
    a = rng.normal(size=4)
    w = rng.normal(size=(4, 2))
    d1 = build_distance(_dataset(a, w)).d
    order = np.array([2, 0, 3, 1])
    d2 = build_distance(_dataset(a[order], w[order])).d
    np.testing.assert_allclose(d2, d1[np.ix_(order, order)], atol=1e-12)


def test_n2_only_derangement():
    dm = DistanceMatrix(d=np.array([[0.0, 3.0], [3.0, 0.0]]))
    plan = solve_zero_trace_assignment(dm)
    assert plan.perm.tolist() == [1, 0]
    assert plan.total_cost == pytest.approx(6.0)


def test_n3_two_derangements_enumerated():
    d = np.full((3, 3), 1.0)
    np.fill_diagonal(d, 0.0)
    d[0, 1] = d[1, 0] = 0.1
    dm = DistanceMatrix(d=d)
    plan = solve_zero_trace_assignment(dm)
    assert plan.is_derangement()
    assert plan.total_cost == pytest.approx(brute_force_minimum(d))


def test_n6_matches_exhaustive_enumeration():
    rng = np.random.default_rng(11)
    for trial in range(20):
        d = rng.uniform(0.0, 1.0, size=(6, 6))
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        plan = solve_zero_trace_assignment(DistanceMatrix(d=d))
        assert plan.is_derangement()
        assert plan.total_cost == pytest.approx(brute_force_minimum(d), abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=2, max_value=7), seed=st.integers(0, 2**31 - 1))
def test_solver_returns_optimal_derangement(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.0, 1.0, size=(n, n))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    plan = solve_zero_trace_assignment(DistanceMatrix(d=d))
    assert plan.is_derangement()
    assert plan.total_cost == pytest.approx(brute_force_minimum(d), abs=1e-10)


def test_apply_permutation_swap():
    ds = _dataset([0.0, 1.0], [[0.0], [0.0]], z=[[1.0], [2.0]])
    plan = PermutationPlan(perm=np.array([1, 0]), total_cost=0.0)
    out = apply_permutation(ds, plan)
    assert out.zpi[:, 0].tolist() == [2.0, 1.0]
    assert out.z[:, 0].tolist() == [1.0, 2.0]


def test_apply_permutation_length_mismatch():
    ds = _dataset([0.0, 1.0, 0.0], [[0.0], [0.0], [0.0]])
    with pytest.raises(ValueError):
        apply_permutation(ds, PermutationPlan(perm=np.array([1, 0]), total_cost=0.0))


def test_constant_z_column_unchanged():
    ds = _dataset([0.0, 1.0, 0.0, 1.0], [[0.0], [0.0], [0.0], [0.0]], z=[[5.0]] * 4)
    out, plan = construct_zpi(ds)
    np.testing.assert_array_equal(out.zpi, out.z)
    assert plan.is_derangement()


def test_stratified_construction_preserves_distributions():
    rng = np.random.default_rng(3)
    n = 600
    a = rng.integers(0, 2, n).astype(float)
    w = rng.integers(0, 3, (n, 1)).astype(float)
    z = rng.normal(size=(n, 2))
    ds = _dataset(a, w, z=z)
    out, plan = construct_zpi(ds)
    assert plan.total_cost == 0.0
    assert plan.is_derangement()
    key = np.column_stack([a, w])
    for stratum in np.unique(key, axis=0):
        members = np.all(key == stratum, axis=1)
        orig = np.sort(out.z[members], axis=0)
        perm = np.sort(out.zpi[members], axis=0)
        np.testing.assert_array_equal(orig, perm)


def test_singleton_stratum_falls_back_with_cost():
    # one isolated row: no within-stratum derangement exists
    a = np.array([0.0, 0.0, 1.0])
    w = np.array([[0.0], [0.0], [9.0]])
    ds = _dataset(a, w, z=[[1.0], [2.0], [3.0]])
    out, plan = construct_zpi(ds)
    assert plan.is_derangement()
    assert plan.total_cost > 0.0
    diag = permutation_diagnostics(out, plan)
    assert diag["n_singleton_strata"] == 1
    assert diag["total_cost"] > 0.0


def test_cost_invariant_under_relabeling():
    rng = np.random.default_rng(9)
    d = rng.uniform(0.0, 1.0, size=(5, 5))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    base = solve_zero_trace_assignment(DistanceMatrix(d=d)).total_cost
    order = rng.permutation(5)
    relabeled = d[np.ix_(order, order)]
    again = solve_zero_trace_assignment(DistanceMatrix(d=relabeled)).total_cost
    assert again == pytest.approx(base, abs=1e-10)


def test_diagnostics_shape(discrete_sample):
    out, plan = construct_zpi(discrete_sample)
    diag = permutation_diagnostics(out, plan)
    assert diag["is_derangement"] is True
    assert diag["total_cost"] == 0.0
    assert diag["max_stratum_discrepancy"] == 0.0
    assert diag["n"] == discrete_sample.n


def test_blocked_path_used_above_size_limit(monkeypatch):
    import rieszmed.permute as pm

    rng = np.random.default_rng(15)
    n = 64
    ds = _dataset(rng.normal(size=n), rng.normal(size=(n, 2)), z=rng.normal(size=(n, 1)))
    monkeypatch.setattr(pm, "EXACT_SIZE_LIMIT", 32)
    with pytest.warns(UserWarning, match="blocked"):
        out, plan = pm.construct_zpi(ds, block_size=16)
    assert plan.approximate
    assert plan.is_derangement()
    exact_plan = solve_zero_trace_assignment(build_distance(ds))
    assert plan.total_cost >= exact_plan.total_cost - 1e-12
