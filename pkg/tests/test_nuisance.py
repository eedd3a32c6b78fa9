import numpy as np
import pytest

import rieszmed.nuisance as nuisance_mod
from rieszmed.data import MediationDataset
from rieszmed.learners import LearnerSpec, RieszLoss
from rieszmed.nuisance import (
    LearnerPlan,
    PolicySpec,
    PsiTarget,
    fit_alpha_chain_natural,
    fit_alpha_chain_randomized,
    fit_nuisances,
    fit_theta_chain_natural,
    fit_theta_chain_randomized,
)
from conftest import balanced_grid, product_augmented
from rieszmed.oracle import empirical_dgp, exact_alpha

TAB = LearnerSpec(kind="tabular_exact")


def alpha_closed_form_rows(ds, family, levels, k):
    """Eq-style density-ratio values at observed rows from empirical tables."""
    emp = empirical_dgp(ds)
    out = np.empty(ds.n)
    for i in range(ds.n):
        ia = emp.a_index(ds.a[i])
        iw = emp.w_points.index(tuple(ds.w[i]))
        iz = emp.z_points.index(tuple(ds.z[i]))
        im = emp.m_points.index(tuple(ds.m[i]))
        if family == "natural":
            args = {1: {}, 2: {"iz": iz}, 3: {"iz": iz, "im": im}}[k]
        else:
            args = {1: {}, 2: {"iz": iz}, 3: {"im": im}, 4: {"iz": iz, "im": im}}[k]
        out[i] = exact_alpha(emp, family, k, levels, ia, iw, **args)
    return out


# ------------------------------------------------------------------ theta


def test_constant_outcome_propagates_natural(discrete_sample):
    ds = MediationDataset(
        w=discrete_sample.w,
        a=discrete_sample.a,
        z=discrete_sample.z,
        m=discrete_sample.m,
        y=np.full(discrete_sample.n, 4.0),
    )
    target = PsiTarget("natural", (1, 0, 1))
    thetas, log, _ = fit_theta_chain_natural(ds, target, TAB)
    for theta, width in zip(thetas, (4, 3, 2)):
        x = np.column_stack([ds.a, ds.z, ds.m, ds.w])[:, :width]
        np.testing.assert_allclose(theta.predict(x), 4.0, atol=1e-12)
    assert log == ("theta3", "theta2", "theta1")


def test_constant_outcome_propagates_randomized(discrete_sample):
    ds = MediationDataset(
        w=discrete_sample.w,
        a=discrete_sample.a,
        z=discrete_sample.z,
        m=discrete_sample.m,
        y=np.full(discrete_sample.n, -1.5),
        zpi=discrete_sample.z[np.roll(np.arange(discrete_sample.n), 1)],
    )
    target = PsiTarget("randomized", (1, 0, 1, 0))
    thetas, log, _ = fit_theta_chain_randomized(ds, target, TAB)
    a, z, m, w = ds.a, ds.z, ds.m, ds.w
    for theta, x in zip(
        thetas,
        (
            np.column_stack([a, z, m, w]),
            np.column_stack([a, m, w]),
            np.column_stack([a, z, w]),
            np.column_stack([a, w]),
        ),
    ):
        np.testing.assert_allclose(theta.predict(x), -1.5, atol=1e-12)
    assert log == ("theta4", "theta3", "theta2", "theta1")


def test_theta2_matches_cell_tabulation(discrete_sample):
    ds = discrete_sample
    target = PsiTarget("natural", (1, 0, 0))
    thetas, _, _ = fit_theta_chain_natural(ds, target, TAB)
    theta3, theta2, _ = thetas
    b3 = theta3.predict(np.column_stack([np.ones(ds.n), ds.z, ds.m, ds.w]))
    x2 = np.column_stack([ds.a, ds.z, ds.w])
    fitted = theta2.predict(x2)
    for cell in np.unique(x2, axis=0):
        members = np.all(x2 == cell, axis=1)
        np.testing.assert_allclose(fitted[members], b3[members].mean(), atol=1e-12)


def test_randomized_theta3_matches_cell_tabulation():
    ds = product_augmented(seed=5)
    target = PsiTarget("randomized", (1, 0, 1, 0))
    thetas, _, _ = fit_theta_chain_randomized(ds, target, TAB)
    theta4, theta3 = thetas[0], thetas[1]
    b4 = theta4.predict(np.column_stack([np.ones(ds.n), ds.zpi, ds.m, ds.w]))
    x3 = np.column_stack([ds.a, ds.m, ds.w])
    fitted = theta3.predict(x3)
    for cell in np.unique(x3, axis=0):
        members = np.all(x3 == cell, axis=1)
        np.testing.assert_allclose(fitted[members], b4[members].mean(), atol=1e-12)


def test_natural_and_randomized_theta1_agree_when_outcome_ignores_z():
    # deterministic outcome f(A, M, W): the two chains share theta_1 exactly
    rng = np.random.default_rng(2)
    ds_base = product_augmented(seed=8)
    f = rng.normal(size=(2, 2, 2))
    y = f[ds_base.a.astype(int), ds_base.m[:, 0].astype(int), ds_base.w[:, 0].astype(int)]
    ds = MediationDataset(
        w=ds_base.w, a=ds_base.a, z=ds_base.z, m=ds_base.m, y=y, zpi=ds_base.zpi
    )
    nat_target = PsiTarget("natural", (1, 0, 1))
    rnd_target = PsiTarget("randomized", (1, 9 % 2, 0, 1))  # (1, 1, 0, 1): z-slot arbitrary
    thetas_nat, _, _ = fit_theta_chain_natural(ds, nat_target, TAB)
    thetas_rnd, _, _ = fit_theta_chain_randomized(ds, rnd_target, TAB)
    x1 = np.column_stack([ds.a, ds.w])
    np.testing.assert_allclose(
        thetas_nat[-1].predict(x1), thetas_rnd[-1].predict(x1), atol=1e-10
    )


def test_identity_policy_plugin_mean_equals_sample_mean(discrete_sample):
    ds = discrete_sample
    ident = PolicySpec(kind="identity")
    target = PsiTarget("natural", (ident, ident, ident))
    thetas, _, _ = fit_theta_chain_natural(ds, target, TAB)
    b1 = thetas[-1].predict(np.column_stack([ds.a, ds.w]))
    assert b1.mean() == pytest.approx(ds.y.mean(), abs=1e-12)


# ------------------------------------------------------------------ alpha


def test_alpha1_half_propensity(discrete_sample):
    ds = balanced_grid(tiles=3)
    target = PsiTarget("natural", (1, 0, 1))  # a3 = 1
    alphas, _ = fit_alpha_chain_natural(ds, target, TAB, alpha_max=100.0)
    x1 = np.column_stack([ds.a, ds.w])
    vals = alphas[0].predict(x1)
    np.testing.assert_allclose(vals[ds.a == 1.0], 2.0, atol=1e-12)
    np.testing.assert_allclose(vals[ds.a == 0.0], 0.0, atol=1e-12)


def test_alpha_chain_natural_matches_frequency_closed_forms(discrete_sample):
    ds = discrete_sample
    levels = (1, 0, 1)
    target = PsiTarget("natural", levels)
    alphas, log = fit_alpha_chain_natural(ds, target, TAB, alpha_max=1e9)
    xs = (
        np.column_stack([ds.a, ds.w]),
        np.column_stack([ds.a, ds.z, ds.w]),
        np.column_stack([ds.a, ds.z, ds.m, ds.w]),
    )
    for k, (alpha, x) in enumerate(zip(alphas, xs), start=1):
        closed = alpha_closed_form_rows(ds, "natural", levels, k)
        np.testing.assert_allclose(alpha.predict(x), closed, atol=1e-10)
    assert log == ("alpha1", "alpha2", "alpha3")


def test_alpha3_collapses_to_alpha1_at_equal_levels():
    ds = balanced_grid(tiles=2, seed=3)
    target = PsiTarget("natural", (1, 1, 1))
    alphas, _ = fit_alpha_chain_natural(ds, target, TAB, alpha_max=1e9)
    x1 = np.column_stack([ds.a, ds.w])
    x3 = np.column_stack([ds.a, ds.z, ds.m, ds.w])
    np.testing.assert_allclose(alphas[2].predict(x3), alphas[0].predict(x1), atol=1e-10)


def test_alpha_chain_randomized_matches_frequency_closed_forms():
    ds = product_augmented(seed=11)
    levels = (0, 1, 1, 0)
    target = PsiTarget("randomized", levels)
    alphas, log = fit_alpha_chain_randomized(ds, target, TAB, alpha_max=1e9)
    xs = (
        np.column_stack([ds.a, ds.w]),
        np.column_stack([ds.a, ds.z, ds.w]),
        np.column_stack([ds.a, ds.m, ds.w]),
        np.column_stack([ds.a, ds.z, ds.m, ds.w]),
    )
    for k, (alpha, x) in enumerate(zip(alphas, xs), start=1):
        closed = alpha_closed_form_rows(ds, "randomized", levels, k)
        np.testing.assert_allclose(alpha.predict(x), closed, atol=1e-10)
    assert log == ("alpha1", "alpha2", "alpha3", "alpha4")


def test_alpha_randomized_null_z_column():
    # single-valued Z: alpha_3 reduces to 1(A=a2) P(m|a3,w) / (P(a2|w) P(m|A,w))
    ds_base = product_augmented(seed=13, n_z=1)
    levels = (0, 1, 0, 1)
    target = PsiTarget("randomized", levels)
    alphas, _ = fit_alpha_chain_randomized(ds_base, target, TAB, alpha_max=1e9)
    closed = alpha_closed_form_rows(ds_base, "randomized", levels, 3)
    x3 = np.column_stack([ds_base.a, ds_base.m, ds_base.w])
    np.testing.assert_allclose(alphas[2].predict(x3), closed, atol=1e-10)
    emp = empirical_dgp(ds_base)
    # spot-check the collapsed formula by hand at one observed row
    i = int(np.flatnonzero(ds_base.a == 1.0)[0])
    iw = emp.w_points.index(tuple(ds_base.w[i]))
    im = emp.m_points.index(tuple(ds_base.m[i]))
    ia = emp.a_index(1.0)
    hand = (
        emp.pm[im, emp.a_index(0.0), 0, iw]
        / (emp.pa[ia, iw] * emp.pm[im, ia, 0, iw])
    )
    assert alphas[2].predict(x3[i : i + 1])[0] == pytest.approx(hand, abs=1e-10)


def test_everything_independent_gives_two_indicator():
    ds = balanced_grid(tiles=2, seed=9)
    zpi = ds.z[np.roll(np.arange(ds.n), 1)]
    # rolling inside strata keeps balance; rebuild via product for exactness
    ds_aug = product_augmented(seed=21)
    # force perfect balance: this fixture has P(A=a|w) = 1/2 only if strata
    # sizes match across arms, so use the balanced grid with self-pairing z
    target = PsiTarget("natural", (1, 1, 1))
    alphas, _ = fit_alpha_chain_natural(ds, target, TAB, alpha_max=1e9)
    for alpha, x in zip(
        alphas,
        (
            np.column_stack([ds.a, ds.w]),
            np.column_stack([ds.a, ds.z, ds.w]),
            np.column_stack([ds.a, ds.z, ds.m, ds.w]),
        ),
    ):
        vals = alpha.predict(x)
        np.testing.assert_allclose(vals[ds.a == 1.0], 2.0, atol=1e-10)
        np.testing.assert_allclose(vals[ds.a == 0.0], 0.0, atol=1e-10)


def test_alpha_clipping_bound(discrete_sample):
    ds = discrete_sample
    target = PsiTarget("natural", (1, 0, 1))
    cap = 1.5
    alphas, _ = fit_alpha_chain_natural(ds, target, TAB, alpha_max=cap)
    x3 = np.column_stack([ds.a, ds.z, ds.m, ds.w])
    vals = alphas[2].predict(x3)
    assert vals.min() >= 0.0
    assert vals.max() <= cap


def test_riesz_rejects_ensemble(discrete_sample):
    target = PsiTarget("natural", (1, 0, 1))
    with pytest.raises(ValueError, match="single learners"):
        fit_alpha_chain_natural(
            discrete_sample, target, LearnerSpec(kind="ensemble"), alpha_max=10.0
        )


def test_randomized_requires_zpi(discrete_sample):
    target = PsiTarget("randomized", (1, 0, 1, 0))
    with pytest.raises(ValueError, match="zpi"):
        fit_theta_chain_randomized(discrete_sample, target, TAB)
    with pytest.raises(ValueError, match="zpi"):
        fit_alpha_chain_randomized(discrete_sample, target, TAB, alpha_max=10.0)


def test_degenerate_arm_warns():
    rng = np.random.default_rng(4)
    n = 40
    ds = MediationDataset(
        w=rng.integers(0, 2, (n, 1)).astype(float),
        a=np.zeros(n),
        z=rng.integers(0, 2, (n, 1)).astype(float),
        m=rng.integers(0, 2, (n, 1)).astype(float),
        y=rng.normal(size=n),
    )
    target = PsiTarget("natural", (1, 0, 0))
    with pytest.warns(UserWarning, match="no rows"):
        fit_nuisances(ds, target, LearnerPlan.single(TAB), alpha_max=10.0)


def test_counterfactual_purity(monkeypatch, discrete_sample):
    # shifted rows may alter only the treatment column (plus the matched
    # z block where the four-chain prescribes it)
    ds = discrete_sample
    zpi = ds.z[np.roll(np.arange(ds.n), 1)]
    ds_r = ds.with_zpi(zpi)
    captured = []
    real_fit = nuisance_mod.fit

    def spy(spec, x, loss="squared_error", y=None):
        if isinstance(loss, RieszLoss):
            captured.append((np.asarray(x), loss.shifted))
        return real_fit(spec, x, loss, y)

    monkeypatch.setattr(nuisance_mod, "fit", spy)
    fit_alpha_chain_natural(ds, PsiTarget("natural", (1, 0, 1)), TAB, alpha_max=10.0)
    for x, shifted in captured:
        np.testing.assert_array_equal(x[:, 1:], shifted[:, 1:])
    captured.clear()
    fit_alpha_chain_randomized(ds_r, PsiTarget("randomized", (1, 0, 1, 0)), TAB, alpha_max=10.0)
    for idx, (x, shifted) in enumerate(captured):
        if idx < 3:
            np.testing.assert_array_equal(x[:, 1:], shifted[:, 1:])
        else:
            # final link: treatment column set, z block replaced by zpi
            np.testing.assert_array_equal(shifted[:, 1 : 1 + ds.z.shape[1]], zpi)
            np.testing.assert_array_equal(x[:, 1 + ds.z.shape[1] :], shifted[:, 1 + ds.z.shape[1] :])


def test_policy_specs():
    a = np.array([0.0, 1.0, 2.0])
    w = np.array([[1.0], [2.0], [1.5]])
    assert PolicySpec(kind="set_value", value=1.0).evaluate(a, w).tolist() == [1.0, 1.0, 1.0]
    assert PolicySpec(kind="identity").evaluate(a, w).tolist() == [0.0, 1.0, 2.0]
    shifted = PolicySpec(kind="additive_shift", shift=0.5, cap=1.8).evaluate(a, w)
    assert shifted.tolist() == [0.5, 1.5, 2.0]  # 2.5 exceeds cap -> natural value kept
    column_cap = PolicySpec(kind="multiplicative_shift", shift=2.0, cap=0).evaluate(a, w)
    # caps come from w column 0: 2*0=0 < 1 ok; 2*1=2 >= 2 -> keep 1; 2*2=4 >= 1.5 -> keep 2
    assert column_cap.tolist() == [0.0, 1.0, 2.0]


def test_policy_validation():
    with pytest.raises(ValueError):
        PolicySpec(kind="set_value")
    with pytest.raises(ValueError):
        PolicySpec(kind="additive_shift")
    with pytest.raises(ValueError):
        PolicySpec(kind="unknown")


def test_target_validation():
    with pytest.raises(ValueError, match="levels"):
        PsiTarget("natural", (1, 0))
    with pytest.raises(ValueError, match="0 or 1"):
        PsiTarget("natural", (2, 0, 1))
    with pytest.raises(ValueError, match="family"):
        PsiTarget("weird", (1, 0, 1))
    target = PsiTarget("natural", (PolicySpec(kind="identity"), 0, 1))
    assert target.is_mtp


def test_fit_nuisances_log_order(discrete_sample):
    ns = fit_nuisances(
        discrete_sample, PsiTarget("natural", (1, 0, 1)), LearnerPlan.single(TAB), alpha_max=10.0
    )
    assert ns.fit_log == ("theta3", "theta2", "theta1", "alpha1", "alpha2", "alpha3")
    assert len(ns.theta) == 3 and len(ns.alpha) == 3
