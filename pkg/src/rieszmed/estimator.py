"""Cross-fitted one-step estimation and Wald inference.

For each fold, nuisances are fitted on the complement and the uncentered
per-observation gradient is evaluated on the held-out rows; the point
estimate is exactly the sample mean of those gradient values.  Contrasts
combine gradients across targets via the Delta method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .data import FoldPlan, MediationDataset
from .nuisance import LearnerPlan, NuisanceSet, PsiTarget, fit_nuisances


@dataclass
class GradientValues:
    """Per-observation uncentered gradient with its additive breakdown."""

    phi_bar: np.ndarray
    target: PsiTarget
    components: dict[str, np.ndarray]
    diagnostics: dict = field(default_factory=dict)

    @property
    def estimate(self) -> float:
        return float(self.phi_bar.mean())

    @property
    def n(self) -> int:
        return self.phi_bar.shape[0]

    def term_means(self) -> dict[str, float]:
        """Mean of each additive term; residual means near zero indicate
        the representer and regression fits agree (orthogonality proxy)."""
        return {name: float(vals.mean()) for name, vals in self.components.items()}

    def to_csv_rows(self) -> list[list]:
        names = sorted(self.components)
        rows = [["row", *names, "phi_bar"]]
        for i in range(self.n):
            rows.append(
                [i, *[repr(float(self.components[n][i])) for n in names], repr(float(self.phi_bar[i]))]
            )
        return rows


@dataclass
class EffectEstimate:
    """Point estimate with influence-based Wald interval."""

    name: str
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    level: float
    n: int
    eif: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "n": self.n,
        }


def evaluate_gradient(ns: NuisanceSet, rows: MediationDataset) -> dict[str, np.ndarray]:
    """Per-row additive gradient terms for out-of-fold rows."""
    a, w, z, m, y = rows.a, rows.w, rows.z, rows.m, rows.y
    target = ns.target
    if target.family == "natural":
        theta3, theta2, theta1 = ns.theta
        alpha1, alpha2, alpha3 = ns.alpha
        x3 = np.column_stack([a, z, m, w])
        x2 = np.column_stack([a, z, w])
        x1 = np.column_stack([a, w])
        b3 = theta3.predict(np.column_stack([target.slot_values(1, a, w), z, m, w]))
        b2 = theta2.predict(np.column_stack([target.slot_values(2, a, w), z, w]))
        b1 = theta1.predict(np.column_stack([target.slot_values(3, a, w), w]))
        return {
            "res3": alpha3.predict(x3) * (y - theta3.predict(x3)),
            "res2": alpha2.predict(x2) * (b3 - theta2.predict(x2)),
            "res1": alpha1.predict(x1) * (b2 - theta1.predict(x1)),
            "plugin": b1,
        }
    if rows.zpi is None:
        raise ValueError("randomized gradients require the matched zpi block")
    zpi = rows.zpi
    theta4, theta3, theta2, theta1 = ns.theta
    alpha1, alpha2, alpha3, alpha4 = ns.alpha
    x4 = np.column_stack([a, z, m, w])
    x3 = np.column_stack([a, m, w])
    x2 = np.column_stack([a, z, w])
    x1 = np.column_stack([a, w])
    b4 = theta4.predict(np.column_stack([target.slot_values(1, a, w), zpi, m, w]))
    b3 = theta3.predict(np.column_stack([target.slot_values(2, a, w), m, w]))
    b2 = theta2.predict(np.column_stack([target.slot_values(3, a, w), z, w]))
    b1 = theta1.predict(np.column_stack([target.slot_values(4, a, w), w]))
    return {
        "res4": alpha4.predict(x4) * (y - theta4.predict(x4)),
        "res3": alpha3.predict(x3) * (b4 - theta3.predict(x3)),
        "res2": alpha2.predict(x2) * (b3 - theta2.predict(x2)),
        "res1": alpha1.predict(x1) * (b2 - theta1.predict(x1)),
        "plugin": b1,
    }


def estimate_psi(
    dataset: MediationDataset,
    target: PsiTarget,
    learners: LearnerPlan,
    folds: FoldPlan,
    alpha_max: float = 500.0,
    per_fold_zpi: bool = False,
) -> tuple[float, GradientValues]:
    """Cross-fitted one-step estimate of a single target functional.

    ``per_fold_zpi`` rebuilds the matched column inside every training and
    validation subset instead of using the full-sample construction; it is
    a sensitivity knob, not the default.
    """
    if folds.n != dataset.n:
        raise ValueError(f"fold plan covers {folds.n} rows but dataset has {dataset.n}")
    needs_zpi = target.family == "randomized"
    if needs_zpi and dataset.zpi is None and not per_fold_zpi:
        raise ValueError("randomized targets require a dataset with zpi set")
    n = dataset.n
    components: dict[str, np.ndarray] = {}
    diagnostics: dict[str, float] = {}
    for j in range(folds.J):
        train_idx = folds.training_indices(j)
        val_idx = folds.validation_indices(j)
        if val_idx.size == 0:
            continue
        train = dataset.subset(train_idx)
        val = dataset.subset(val_idx)
        if needs_zpi and per_fold_zpi:
            from .permute import construct_zpi

            train, _ = construct_zpi(train)
            val, _ = construct_zpi(val)
        ns = fit_nuisances(train, target, learners, alpha_max)
        terms = evaluate_gradient(ns, val)
        for name, vals in terms.items():
            components.setdefault(name, np.zeros(n))[val_idx] = vals
        for key, val in ns.diagnostics.items():
            diagnostics[key] = max(diagnostics.get(key, 0.0), val)
    phi_bar = np.zeros(n)
    for vals in components.values():
        phi_bar += vals
    grads = GradientValues(
        phi_bar=phi_bar, target=target, components=components, diagnostics=diagnostics
    )
    return grads.estimate, grads


def z_quantile(level: float) -> float:
    """Two-sided standard normal quantile for a confidence level."""
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must be in (0, 1)")
    return float(ndtri(0.5 + level / 2.0))


def _wald(name: str, estimate: float, eif: np.ndarray, level: float) -> EffectEstimate:
    n = eif.shape[0]
    variance = float(eif.var(ddof=1)) if n > 1 else 0.0
    se = float(np.sqrt(variance / n))
    zq = z_quantile(level)
    return EffectEstimate(
        name=name,
        estimate=estimate,
        std_error=se,
        ci_low=estimate - zq * se,
        ci_high=estimate + zq * se,
        level=level,
        n=n,
        eif=eif,
    )


def contrast(
    terms: list[tuple[float, GradientValues]],
    level: float = 0.95,
    name: str = "",
) -> EffectEstimate:
    """Linear combination of target estimates with Delta-method inference."""
    if not terms:
        raise ValueError("contrast needs at least one term")
    n = terms[0][1].n
    for _, grads in terms:
        if grads.n != n:
            raise ValueError("all gradient values must come from the same sample")
    estimate = 0.0
    eif = np.zeros(n)
    for coef, grads in terms:
        mean = grads.estimate
        estimate += coef * mean
        eif += coef * (grads.phi_bar - mean)
    return _wald(name, estimate, eif, level)


def ratio_contrast(
    numer: EffectEstimate, denom: EffectEstimate, level: float = 0.95, name: str = ""
) -> EffectEstimate:
    """Delta-method ratio such as the proportion mediated."""
    if numer.n != denom.n:
        raise ValueError("ratio terms must come from the same sample")
    if denom.estimate == 0.0:
        raise ZeroDivisionError("ratio contrast is undefined for a zero denominator")
    ratio = numer.estimate / denom.estimate
    eif = (numer.eif - ratio * denom.eif) / denom.estimate
    return _wald(name or f"{numer.name}/{denom.name}", ratio, eif, level)
