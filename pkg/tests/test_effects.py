import numpy as np
import pytest

from conftest import grid_dataset
from rieszmed.data import MediationDataset, make_folds
from rieszmed.effects import (
    ConfigurationError,
    EffectRequest,
    resolve_targets,
    run_effects,
)
from rieszmed.learners import LearnerSpec
from rieszmed.nuisance import LearnerPlan, PolicySpec, PsiTarget
from rieszmed.oracle import random_dgp
from rieszmed.permute import construct_zpi

TAB = LearnerPlan.single(LearnerSpec(kind="tabular_exact"))


def targets_of(request):
    return {name: terms for name, terms in resolve_targets(request)}


def test_natural_mapping():
    t = targets_of(EffectRequest(family="natural"))
    assert t["NDE"] == [
        (1.0, PsiTarget("natural", (1, 0, 0))),
        (-1.0, PsiTarget("natural", (0, 0, 0))),
    ]
    assert t["NIE"] == [
        (1.0, PsiTarget("natural", (1, 1, 1))),
        (-1.0, PsiTarget("natural", (1, 0, 0))),
    ]


def test_decision_theoretic_identical_to_natural():
    nat = targets_of(EffectRequest(family="natural"))
    dt = targets_of(EffectRequest(family="decision_theoretic"))
    assert dt["DTDE"] == nat["NDE"]
    assert dt["DTIE"] == nat["NIE"]


def test_organic_mapping_and_flag():
    t = targets_of(EffectRequest(family="organic"))
    assert t["ODE"] == [
        (1.0, PsiTarget("natural", (1, 0, 1))),
        (-1.0, PsiTarget("natural", (0, 0, 0))),
    ]
    assert t["OIE"] == [
        (1.0, PsiTarget("natural", (1, 1, 1))),
        (-1.0, PsiTarget("natural", (1, 0, 1))),
    ]
    alt = targets_of(EffectRequest(family="organic", organic_appendix_slots=True))
    assert alt["ODE"] == [
        (1.0, PsiTarget("natural", (0, 1, 0))),
        (-1.0, PsiTarget("natural", (0, 0, 0))),
    ]


def test_interventional_mapping():
    t = targets_of(EffectRequest(family="interventional"))
    assert t["RIDE"] == [
        (1.0, PsiTarget("randomized", (1, 1, 0, 0))),
        (-1.0, PsiTarget("randomized", (0, 0, 0, 0))),
    ]
    assert t["RIIE"] == [
        (1.0, PsiTarget("randomized", (1, 1, 1, 1))),
        (-1.0, PsiTarget("randomized", (1, 1, 0, 0))),
    ]


def test_recanting_twins_mapping():
    t = targets_of(EffectRequest(family="recanting_twins"))
    assert t["RT1"] == [
        (1.0, PsiTarget("natural", (1, 1, 1))),
        (-1.0, PsiTarget("natural", (0, 1, 1))),
    ]
    assert t["RT2"] == [
        (1.0, PsiTarget("randomized", (0, 1, 1, 1))),
        (-1.0, PsiTarget("randomized", (0, 0, 1, 1))),
    ]
    assert t["RT3"] == [
        (1.0, PsiTarget("randomized", (0, 0, 1, 1))),
        (-1.0, PsiTarget("randomized", (0, 0, 1, 0))),
    ]
    assert t["RT4"] == [
        (1.0, PsiTarget("natural", (0, 1, 0))),
        (-1.0, PsiTarget("natural", (0, 0, 0))),
    ]
    assert "IC" in t


def test_separable_identical_to_recanting():
    rt = targets_of(EffectRequest(family="recanting_twins"))
    se = targets_of(EffectRequest(family="separable"))
    for j in range(1, 5):
        assert se[f"SE{j}"] == rt[f"RT{j}"]
    assert se["IC"] == rt["IC"]


def test_ic_is_total_minus_path_sum():
    t = targets_of(EffectRequest(family="recanting_twins"))
    combo: dict = {}
    for name in ("RT1", "RT2", "RT3", "RT4", "IC"):
        for coef, target in t[name]:
            key = (target.family, target.levels)
            combo[key] = combo.get(key, 0.0) + coef
    expected = {
        ("natural", (1, 1, 1)): 1.0,
        ("natural", (0, 0, 0)): -1.0,
    }
    combo = {k: v for k, v in combo.items() if abs(v) > 1e-12}
    assert combo == expected


def test_mtp_mapping_substitutes_policies():
    d0 = PolicySpec(kind="identity")
    d1 = PolicySpec(kind="additive_shift", shift=0.5)
    t = targets_of(EffectRequest(family="recanting_twins", mode="mtp", d0=d0, d1=d1))
    assert t["RT1"][0][1] == PsiTarget("natural", (d1, d1, d1))
    assert t["RT1"][1][1] == PsiTarget("natural", (d0, d1, d1))
    assert t["RT3"][1][1] == PsiTarget("randomized", (d0, d0, d1, d0))


def test_mtp_mode_restricted():
    d = PolicySpec(kind="identity")
    with pytest.raises(ConfigurationError, match="policy mode"):
        EffectRequest(family="natural", mode="mtp", d0=d, d1=d)
    with pytest.raises(ConfigurationError, match="d0"):
        EffectRequest(family="interventional", mode="mtp")


def test_unknown_family_rejected():
    with pytest.raises(ConfigurationError):
        EffectRequest(family="mystery")


def _with_zpi(ds):
    out, _ = construct_zpi(ds)
    return out


def test_decomposition_exactness_all_families():
    ds = _with_zpi(grid_dataset(5, n_extra=300))
    folds = make_folds(ds.n, 4, seed=1)
    for family in ("natural", "organic", "interventional", "recanting_twins"):
        report = run_effects(ds, EffectRequest(family=family), TAB, folds, alpha_max=1e6)
        for value in report.residuals.values():
            assert abs(value) < 1e-10


def test_null_effects_within_noise():
    # outcome independent of (A, Z, M): all effects near zero
    rng = np.random.default_rng(3)
    base = grid_dataset(5, n_extra=500)
    ds = MediationDataset(
        w=base.w, a=base.a, z=base.z, m=base.m, y=rng.normal(size=base.n)
    )
    ds = _with_zpi(ds)
    folds = make_folds(ds.n, 4, seed=2)
    for family in ("natural", "recanting_twins"):
        report = run_effects(ds, EffectRequest(family=family), TAB, folds, alpha_max=1e6)
        for eff in report.effects:
            assert abs(eff.estimate) <= 3.0 * max(eff.std_error, 1e-12), eff.name


def test_effects_within_3se_of_enumerated_truth():
    from rieszmed.oracle import exact_psi

    dgp = random_dgp(19, floor=0.25)
    ds = dgp.sample(30_000, seed=4)
    ds = _with_zpi(ds)
    folds = make_folds(ds.n, 5, seed=5)
    request = EffectRequest(family="recanting_twins")
    report = run_effects(ds, request, TAB, folds, alpha_max=1e5)
    for name, terms in resolve_targets(request):
        truth = sum(coef * exact_psi(dgp, t.family, t.levels) for coef, t in terms)
        eff = report.effect(name)
        assert abs(eff.estimate - truth) <= 4.0 * eff.std_error, (name, eff.estimate, truth)


def test_run_effects_requires_zpi_for_randomized(discrete_sample):
    folds = make_folds(discrete_sample.n, 4, seed=0)
    with pytest.raises(ConfigurationError, match="zpi"):
        run_effects(discrete_sample, EffectRequest(family="interventional"), TAB, folds)


def test_proportion_mediated_reported():
    ds = _with_zpi(grid_dataset(6, n_extra=400))
    folds = make_folds(ds.n, 4, seed=3)
    report = run_effects(
        ds,
        EffectRequest(family="natural", include_proportion_mediated=True),
        TAB,
        folds,
        alpha_max=1e6,
    )
    pm = report.effect("proportion_mediated")
    nie = report.effect("NIE")
    ate = report.effect("ATE")
    assert pm.estimate == pytest.approx(nie.estimate / ate.estimate, abs=1e-12)


def test_report_serialization_roundtrip():
    ds = _with_zpi(grid_dataset(4, n_extra=200))
    folds = make_folds(ds.n, 3, seed=4)
    report = run_effects(ds, EffectRequest(family="natural"), TAB, folds, alpha_max=1e6)
    blob = report.to_json_dict()
    assert {e["name"] for e in blob["effects"]} == {"NDE", "NIE", "ATE"}
    rows = report.to_csv_rows()
    assert rows[0] == ["effect", "estimate", "std_error", "ci_low", "ci_high"]
    assert len(rows) == 4
    for row in rows[1:]:
        assert float(row[1]) == report.effect(row[0]).estimate


def test_set_value_policies_reproduce_binary_exactly():
    ds = _with_zpi(grid_dataset(4, n_extra=300))
    folds = make_folds(ds.n, 3, seed=8)
    binary = run_effects(
        ds, EffectRequest(family="interventional"), TAB, folds, alpha_max=1e6
    )
    mtp = run_effects(
        ds,
        EffectRequest(
            family="interventional",
            mode="mtp",
            d0=PolicySpec(kind="set_value", value=0.0),
            d1=PolicySpec(kind="set_value", value=1.0),
        ),
        TAB,
        folds,
        alpha_max=1e6,
    )
    for eff_b in binary.effects:
        eff_m = mtp.effect(eff_b.name)
        assert eff_m.estimate == pytest.approx(eff_b.estimate, abs=1e-12)
        assert eff_m.std_error == pytest.approx(eff_b.std_error, abs=1e-12)


def test_mtp_decomposition_exact_and_runs():
    rng = np.random.default_rng(14)
    base = grid_dataset(6, n_extra=400)
    # continuous-ish treatment for a real shift policy
    a = base.a + rng.uniform(0.0, 0.49, size=base.n)
    ds = MediationDataset(
        w=base.w, a=a, z=base.z, m=base.m, y=base.y, treatment_kind="continuous"
    )
    ds = _with_zpi(ds)
    folds = make_folds(ds.n, 3, seed=9)
    from rieszmed.learners import LearnerSpec as LS
    from rieszmed.nuisance import LearnerPlan as LP

    ridge = LP.single(LS(kind="ridge", ridge_penalty=1e-3))
    report = run_effects(
        ds,
        EffectRequest(
            family="recanting_twins",
            mode="mtp",
            d0=PolicySpec(kind="identity"),
            d1=PolicySpec(kind="additive_shift", shift=0.3),
        ),
        ridge,
        folds,
        alpha_max=100.0,
    )
    for value in report.residuals.values():
        assert abs(value) < 1e-10
    assert {e.name for e in report.effects} == {"RT1", "RT2", "RT3", "RT4", "IC", "ATE"}
