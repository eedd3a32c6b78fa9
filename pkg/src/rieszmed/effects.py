"""Effect families expressed as contrasts of the two master functionals.

Every supported family reduces to signed combinations of natural
(three-index) and randomized (four-index) functional values.  Nuisances
are fitted once per distinct target and shared across contrasts, which
makes the decomposition identities hold exactly at the point-estimate
level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import FoldPlan, MediationDataset
from .estimator import EffectEstimate, GradientValues, contrast, estimate_psi, ratio_contrast
from .nuisance import LearnerPlan, PolicySpec, PsiTarget

FAMILIES = (
    "natural",
    "decision_theoretic",
    "organic",
    "interventional",
    "recanting_twins",
    "separable",
)

# Families whose targets involve the randomized functional.
RANDOMIZED_FAMILIES = ("interventional", "recanting_twins", "separable")
MTP_FAMILIES = ("interventional", "recanting_twins")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class EffectRequest:
    """Which effect family to estimate and under which treatment regime.

    ``mode='mtp'`` substitutes the policy pair (d0, d1) for the binary
    levels; only the families with policy-generalized identification are
    eligible.  ``organic_appendix_slots`` switches the organic mapping to
    the alternative slot order (documented difference between the two
    statements of the decomposition).
    """

    family: str
    mode: str = "binary"
    d0: PolicySpec | None = None
    d1: PolicySpec | None = None
    include_intermediate_confounding: bool = True
    include_proportion_mediated: bool = False
    organic_appendix_slots: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown effect family {self.family!r}")
        if self.mode not in ("binary", "mtp"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "mtp":
            if self.family not in MTP_FAMILIES:
                raise ConfigurationError(
                    f"policy mode covers only {MTP_FAMILIES}, not {self.family!r}"
                )
            if self.d0 is None or self.d1 is None:
                raise ConfigurationError("policy mode requires both d0 and d1")


def _slots(request: EffectRequest):
    """Return the per-level substitution: binary ints or the policy pair."""
    if request.mode == "binary":
        return {0: 0, 1: 1}
    return {0: request.d0, 1: request.d1}


def resolve_targets(
    request: EffectRequest,
) -> list[tuple[str, list[tuple[float, PsiTarget]]]]:
    """Named contrasts as (coefficient, target) lists, total effect included."""
    s = _slots(request)

    def nat(i, j, k):
        return PsiTarget("natural", (s[i], s[j], s[k]))

    def rnd(i, j, k, l):
        return PsiTarget("randomized", (s[i], s[j], s[k], s[l]))

    fam = request.family
    out: list[tuple[str, list[tuple[float, PsiTarget]]]] = []
    if fam in ("natural", "decision_theoretic", "organic"):
        prefix = {"natural": "N", "decision_theoretic": "DT", "organic": "O"}[fam]
        if fam == "organic":
            mid = nat(0, 1, 0) if request.organic_appendix_slots else nat(1, 0, 1)
        else:
            mid = nat(1, 0, 0)
        out.append((f"{prefix}DE", [(1.0, mid), (-1.0, nat(0, 0, 0))]))
        out.append((f"{prefix}IE", [(1.0, nat(1, 1, 1)), (-1.0, mid)]))
        out.append(("ATE", [(1.0, nat(1, 1, 1)), (-1.0, nat(0, 0, 0))]))
        return out
    if fam == "interventional":
        out.append(("RIDE", [(1.0, rnd(1, 1, 0, 0)), (-1.0, rnd(0, 0, 0, 0))]))
        out.append(("RIIE", [(1.0, rnd(1, 1, 1, 1)), (-1.0, rnd(1, 1, 0, 0))]))
        out.append(("ITE", [(1.0, rnd(1, 1, 1, 1)), (-1.0, rnd(0, 0, 0, 0))]))
        return out
    # recanting twins and separable effects share one mapping
    prefix = "RT" if fam == "recanting_twins" else "SE"
    out.append((f"{prefix}1", [(1.0, nat(1, 1, 1)), (-1.0, nat(0, 1, 1))]))
    out.append((f"{prefix}2", [(1.0, rnd(0, 1, 1, 1)), (-1.0, rnd(0, 0, 1, 1))]))
    out.append((f"{prefix}3", [(1.0, rnd(0, 0, 1, 1)), (-1.0, rnd(0, 0, 1, 0))]))
    out.append((f"{prefix}4", [(1.0, nat(0, 1, 0)), (-1.0, nat(0, 0, 0))]))
    if request.include_intermediate_confounding:
        # remainder of the total effect after the four paths
        out.append(
            (
                "IC",
                [
                    (1.0, nat(0, 1, 1)),
                    (-1.0, nat(0, 1, 0)),
                    (-1.0, rnd(0, 1, 1, 1)),
                    (1.0, rnd(0, 0, 1, 0)),
                ],
            )
        )
    out.append(("ATE", [(1.0, nat(1, 1, 1)), (-1.0, nat(0, 0, 0))]))
    return out


@dataclass
class EffectReport:
    """Named estimates plus decomposition residuals and run metadata."""

    effects: list[EffectEstimate]
    residuals: dict[str, float]
    metadata: dict
    gradients: dict = field(default_factory=dict, repr=False)

    def effect(self, name: str) -> EffectEstimate:
        for eff in self.effects:
            if eff.name == name:
                return eff
        raise KeyError(name)

    def to_json_dict(self) -> dict:
        return {
            "effects": [e.to_json_dict() for e in self.effects],
            "decomposition_residuals": self.residuals,
            "metadata": self.metadata,
        }

    def to_csv_rows(self) -> list[list]:
        rows = [["effect", "estimate", "std_error", "ci_low", "ci_high"]]
        for e in self.effects:
            rows.append([e.name, repr(e.estimate), repr(e.std_error), repr(e.ci_low), repr(e.ci_high)])
        return rows


def _validate_request(dataset: MediationDataset, request: EffectRequest) -> None:
    if request.family in RANDOMIZED_FAMILIES:
        if dataset.z.shape[1] == 0:
            raise ConfigurationError(f"family {request.family!r} requires a Z block")
        if dataset.zpi is None:
            raise ConfigurationError(
                f"family {request.family!r} requires the matched zpi block; "
                "construct it before estimating"
            )
    if request.mode == "binary" and dataset.treatment_kind != "binary":
        raise ConfigurationError("binary-level effects require a binary treatment")


def run_effects(
    dataset: MediationDataset,
    request: EffectRequest,
    learners: LearnerPlan,
    folds: FoldPlan,
    alpha_max: float = 500.0,
    level: float = 0.95,
) -> EffectReport:
    """Estimate every effect in the family with shared nuisance fits."""
    _validate_request(dataset, request)
    named = resolve_targets(request)
    cache: dict[tuple, GradientValues] = {}

    def grads_for(target: PsiTarget) -> GradientValues:
        key = (target.family, target.levels)
        if key not in cache:
            _, grads = estimate_psi(dataset, target, learners, folds, alpha_max)
            cache[key] = grads
        return cache[key]

    effects = []
    for name, terms in named:
        est = contrast([(coef, grads_for(t)) for coef, t in terms], level=level, name=name)
        effects.append(est)
    by_name = {e.name: e for e in effects}
    residuals: dict[str, float] = {}
    if request.family in ("natural", "decision_theoretic", "organic"):
        de, ie = effects[0], effects[1]
        residuals["direct_plus_indirect_minus_total"] = (
            de.estimate + ie.estimate - by_name["ATE"].estimate
        )
    elif request.family == "interventional":
        residuals["direct_plus_indirect_minus_total"] = (
            by_name["RIDE"].estimate + by_name["RIIE"].estimate - by_name["ITE"].estimate
        )
    else:
        prefix = "RT" if request.family == "recanting_twins" else "SE"
        path_sum = sum(by_name[f"{prefix}{j}"].estimate for j in range(1, 5))
        if request.include_intermediate_confounding:
            path_sum += by_name["IC"].estimate
        residuals["paths_minus_total"] = path_sum - by_name["ATE"].estimate
    if request.include_proportion_mediated:
        ie_name = {
            "natural": "NIE",
            "decision_theoretic": "DTIE",
            "organic": "OIE",
            "interventional": "RIIE",
        }.get(request.family)
        total_name = "ITE" if request.family == "interventional" else "ATE"
        if ie_name is not None and by_name[total_name].estimate != 0.0:
            effects.append(
                ratio_contrast(
                    by_name[ie_name], by_name[total_name], level=level, name="proportion_mediated"
                )
            )
    diag = {}
    for grads in cache.values():
        for key, vals in grads.term_means().items():
            if key.startswith("res"):
                diag.setdefault("max_abs_residual_term_mean", 0.0)
                diag["max_abs_residual_term_mean"] = max(
                    diag["max_abs_residual_term_mean"], abs(vals)
                )
    metadata = {
        "family": request.family,
        "mode": request.mode,
        "n": dataset.n,
        "folds": folds.J,
        "fold_seed": folds.seed,
        "alpha_max": alpha_max,
        "confidence_level": level,
        "theta_learner": learners.theta.kind,
        "alpha_learner": learners.alpha.kind,
        "orthogonality_proxy": diag,
    }
    return EffectReport(effects=effects, residuals=residuals, metadata=metadata, gradients=cache)
