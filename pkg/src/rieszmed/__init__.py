"""Cross-fitted one-step estimation of mediation effect families with
Riesz-representer learning for all density-ratio weights."""

__version__ = "0.1.0"

from .data import ColumnRoles, FoldPlan, MediationDataset, load_csv, make_folds, write_csv
from .effects import EffectReport, EffectRequest, resolve_targets, run_effects
from .estimator import (
    EffectEstimate,
    GradientValues,
    contrast,
    estimate_psi,
    ratio_contrast,
)
from .learners import LearnerSpec, RieszLoss, fit, predict
from .nuisance import LearnerPlan, NuisanceSet, PolicySpec, PsiTarget, fit_nuisances
from .oracle import DiscreteDGP, exact_psi_natural, exact_psi_randomized
from .permute import (
    DistanceMatrix,
    PermutationPlan,
    apply_permutation,
    build_distance,
    construct_zpi,
    solve_zero_trace_assignment,
)
from .sim import SimConfig, SimReport, draw_dgp, replicate, truth_values

__all__ = [
    "ColumnRoles",
    "DiscreteDGP",
    "DistanceMatrix",
    "EffectEstimate",
    "EffectReport",
    "EffectRequest",
    "FoldPlan",
    "GradientValues",
    "LearnerPlan",
    "LearnerSpec",
    "MediationDataset",
    "NuisanceSet",
    "PermutationPlan",
    "PolicySpec",
    "PsiTarget",
    "RieszLoss",
    "SimConfig",
    "SimReport",
    "apply_permutation",
    "build_distance",
    "construct_zpi",
    "contrast",
    "draw_dgp",
    "estimate_psi",
    "exact_psi_natural",
    "exact_psi_randomized",
    "fit",
    "fit_nuisances",
    "load_csv",
    "make_folds",
    "predict",
    "ratio_contrast",
    "replicate",
    "resolve_targets",
    "run_effects",
    "truth_values",
    "write_csv",
]
