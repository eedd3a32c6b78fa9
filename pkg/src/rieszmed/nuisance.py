"""Sequential nuisance fits for one target functional on one training fold.

Each target defines a regression chain (pseudo-outcomes regressed downward
through the blocks) and a representer chain (density-ratio weights learned
by minimizing the Riesz loss, each link feeding the next link's linear
term).  Counterfactual evaluation only ever replaces the treatment
coordinate, plus the Z block with its matched permutation where the
four-index family requires it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import MediationDataset
from .learners import ClippedPredictor, LearnerSpec, RieszLoss, fit


@dataclass(frozen=True)
class PolicySpec:
    """A treatment policy d(a, w) producing post-intervention values.

    ``cap`` bounds shifts: a constant, or an integer index into the W block
    giving a per-row cap column.  A shifted value at or beyond the cap
    falls back to the natural treatment value.
    """

    kind: str
    value: float | None = None
    shift: float | None = None
    cap: float | int | None = None
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("set_value", "identity", "additive_shift", "multiplicative_shift"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "set_value" and self.value is None:
            raise ValueError("set_value policies need a value")
        if self.kind.endswith("_shift") and self.shift is None:
            raise ValueError(f"{self.kind} policies need a shift")

    def evaluate(self, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if self.kind == "set_value":
            return np.full(a.shape, float(self.value))
        if self.kind == "identity":
            return a.copy()
        shifted = a + self.shift if self.kind == "additive_shift" else a * self.shift
        if self.cap is None:
            return shifted
        cap = w[:, self.cap] if isinstance(self.cap, (int, np.integer)) else float(self.cap)
        return np.where(shifted < cap, shifted, a)


@dataclass(frozen=True)
class PsiTarget:
    """One value of a master functional: family plus per-slot levels.

    Natural targets carry three slots, randomized four.  A slot is either a
    binary level in {0, 1} or a PolicySpec; slot 1 is the innermost
    (outcome-model) evaluation.
    """

    family: str
    levels: tuple

    def __post_init__(self):
        if self.family not in ("natural", "randomized"):
            raise ValueError(f"unknown family {self.family!r}")
        arity = 3 if self.family == "natural" else 4
        levels = tuple(self.levels)
        if len(levels) != arity:
            raise ValueError(f"{self.family} targets take {arity} levels, got {len(levels)}")
        norm = []
        for lev in levels:
            if isinstance(lev, PolicySpec):
                norm.append(lev)
            elif float(lev) in (0.0, 1.0):
                norm.append(int(lev))
            else:
                raise ValueError(f"binary slot levels must be 0 or 1, got {lev!r}")
        object.__setattr__(self, "levels", tuple(norm))

    @property
    def is_mtp(self) -> bool:
        return any(isinstance(lev, PolicySpec) for lev in self.levels)

    def slot_values(self, slot: int, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Per-row treatment values for 1-based slot ``slot``."""
        lev = self.levels[slot - 1]
        if isinstance(lev, PolicySpec):
            return lev.evaluate(a, w)
        return np.full(len(a), float(lev))


@dataclass(frozen=True)
class LearnerPlan:
    """Learner choices for the regression chain and the representer chain."""

    theta: LearnerSpec
    alpha: LearnerSpec

    @staticmethod
    def single(spec: LearnerSpec) -> "LearnerPlan":
        return LearnerPlan(theta=spec, alpha=spec)


@dataclass(frozen=True)
class NuisanceSet:
    """Fitted chains for one target on one training fold.

    ``theta`` is ordered outcome-model first (theta_K..theta_1); ``alpha``
    is ordered alpha_1..alpha_K.  Alpha predictors are clipped to
    [0, alpha_max].
    """

    theta: tuple
    alpha: tuple
    target: PsiTarget
    alpha_max: float
    fit_log: tuple
    diagnostics: dict = field(default_factory=dict)


def _warn_degenerate_arms(train: MediationDataset, target: PsiTarget) -> None:
    if train.treatment_kind != "binary":
        return
    for lev in target.levels:
        if isinstance(lev, PolicySpec):
            continue
        count = int(np.sum(train.a == float(lev)))
        if count == 0:
            warnings.warn(
                f"training fold has no rows with treatment level {lev}; "
                "counterfactual evaluation proceeds but representer weights "
                "for that arm are extrapolated",
                stacklevel=3,
            )


def _range_excess(values: np.ndarray, y: np.ndarray) -> float:
    return float(max(0.0, values.max() - y.max()) + max(0.0, y.min() - values.min()))


def fit_theta_chain_natural(
    train: MediationDataset, target: PsiTarget, learner: LearnerSpec
) -> tuple[tuple, tuple, dict]:
    """theta_3 on (A,Z,M,W), then pseudo-outcomes down to theta_1 on (A,W)."""
    if target.family != "natural":
        raise ValueError("target family must be natural")
    a, w, z, m, y = train.a, train.w, train.z, train.m, train.y
    log = []
    diag = {}
    x3 = np.column_stack([a, z, m, w])
    try:
        theta3 = fit(learner, x3, "squared_error", y)
    except Exception as exc:
        raise RuntimeError(f"theta chain failed at position 3: {exc}") from exc
    log.append("theta3")
    b3 = theta3.predict(np.column_stack([target.slot_values(1, a, w), z, m, w]))
    diag["b3_range_excess"] = _range_excess(b3, y)
    x2 = np.column_stack([a, z, w])
    try:
        theta2 = fit(learner, x2, "squared_error", b3)
    except Exception as exc:
        raise RuntimeError(f"theta chain failed at position 2: {exc}") from exc
    log.append("theta2")
    b2 = theta2.predict(np.column_stack([target.slot_values(2, a, w), z, w]))
    diag["b2_range_excess"] = _range_excess(b2, y)
    x1 = np.column_stack([a, w])
    try:
        theta1 = fit(learner, x1, "squared_error", b2)
    except Exception as exc:
        raise RuntimeError(f"theta chain failed at position 1: {exc}") from exc
    log.append("theta1")
    return (theta3, theta2, theta1), tuple(log), diag


def fit_theta_chain_randomized(
    train: MediationDataset, target: PsiTarget, learner: LearnerSpec
) -> tuple[tuple, tuple, dict]:
    """theta_4 on (A,Z,M,W); its pseudo-outcome is evaluated at the matched
    Z column before the (A,M,W) regression."""
    if target.family != "randomized":
        raise ValueError("target family must be randomized")
    if train.zpi is None:
        raise ValueError("randomized chains require the matched zpi block")
    a, w, z, m, y, zpi = train.a, train.w, train.z, train.m, train.y, train.zpi
    log = []
    diag = {}
    x4 = np.column_stack([a, z, m, w])
    try:
        theta4 = fit(learner, x4, "squared_error", y)
    except Exception as exc:
        raise RuntimeError(f"theta chain failed at position 4: {exc}") from exc
    log.append("theta4")
    b4 = theta4.predict(np.column_stack([target.slot_values(1, a, w), zpi, m, w]))
    diag["b4_range_excess"] = _range_excess(b4, y)
    x3 = np.column_stack([a, m, w])
    try:
        theta3 = fit(learner, x3, "squared_error", b4)
    except Exception as exc:
        raise RuntimeError(f"theta chain failed at position 3: {exc}") from exc
    log.append("theta3")
    b3 = theta3.predict(np.column_stack([target.slot_values(2, a, w), m, w]))
    x2 = np.column_stack([a, z, w])
    try:
        theta2 = fit(learner, x2, "squared_error", b3)
    except Exception as exc:
        raise RuntimeError(f"theta chain failed at position 2: {exc}") from exc
    log.append("theta2")
    b2 = theta2.predict(np.column_stack([target.slot_values(3, a, w), z, w]))
    x1 = np.column_stack([a, w])
    try:
        theta1 = fit(learner, x1, "squared_error", b2)
    except Exception as exc:
        raise RuntimeError(f"theta chain failed at position 1: {exc}") from exc
    log.append("theta1")
    return (theta4, theta3, theta2, theta1), tuple(log), diag


def _riesz_fit(learner: LearnerSpec, x: np.ndarray, shifted: np.ndarray, weights: np.ndarray):
    if learner.kind == "ensemble":
        raise ValueError("representer fits allow single learners only, not ensembles")
    return fit(learner, x, RieszLoss(shifted=shifted, weights=weights))


def fit_alpha_chain_natural(
    train: MediationDataset,
    target: PsiTarget,
    learner: LearnerSpec,
    alpha_max: float,
) -> tuple[tuple, tuple]:
    """Sequential Riesz minimization: alpha_1 on (A,W) up to alpha_3 on (A,Z,M,W)."""
    if target.family != "natural":
        raise ValueError("target family must be natural")
    a, w, z, m = train.a, train.w, train.z, train.m
    log = []
    x1 = np.column_stack([a, w])
    s1 = np.column_stack([target.slot_values(3, a, w), w])
    alpha1 = ClippedPredictor(_riesz_fit(learner, x1, s1, np.ones(train.n)), 0.0, alpha_max)
    log.append("alpha1")
    w2 = alpha1.predict(x1)
    x2 = np.column_stack([a, z, w])
    s2 = np.column_stack([target.slot_values(2, a, w), z, w])
    alpha2 = ClippedPredictor(_riesz_fit(learner, x2, s2, w2), 0.0, alpha_max)
    log.append("alpha2")
    w3 = alpha2.predict(x2)
    x3 = np.column_stack([a, z, m, w])
    s3 = np.column_stack([target.slot_values(1, a, w), z, m, w])
    alpha3 = ClippedPredictor(_riesz_fit(learner, x3, s3, w3), 0.0, alpha_max)
    log.append("alpha3")
    return (alpha1, alpha2, alpha3), tuple(log)


def fit_alpha_chain_randomized(
    train: MediationDataset,
    target: PsiTarget,
    learner: LearnerSpec,
    alpha_max: float,
) -> tuple[tuple, tuple]:
    """Four-link chain; the last linear term evaluates the candidate at the
    matched Z column weighted by the (A,M,W) link."""
    if target.family != "randomized":
        raise ValueError("target family must be randomized")
    if train.zpi is None:
        raise ValueError("randomized chains require the matched zpi block")
    a, w, z, m, zpi = train.a, train.w, train.z, train.m, train.zpi
    log = []
    x1 = np.column_stack([a, w])
    s1 = np.column_stack([target.slot_values(4, a, w), w])
    alpha1 = ClippedPredictor(_riesz_fit(learner, x1, s1, np.ones(train.n)), 0.0, alpha_max)
    log.append("alpha1")
    w2 = alpha1.predict(x1)
    x2 = np.column_stack([a, z, w])
    s2 = np.column_stack([target.slot_values(3, a, w), z, w])
    alpha2 = ClippedPredictor(_riesz_fit(learner, x2, s2, w2), 0.0, alpha_max)
    log.append("alpha2")
    w3 = alpha2.predict(x2)
    x3 = np.column_stack([a, m, w])
    s3 = np.column_stack([target.slot_values(2, a, w), m, w])
    alpha3 = ClippedPredictor(_riesz_fit(learner, x3, s3, w3), 0.0, alpha_max)
    log.append("alpha3")
    w4 = alpha3.predict(x3)
    x4 = np.column_stack([a, z, m, w])
    s4 = np.column_stack([target.slot_values(1, a, w), zpi, m, w])
    alpha4 = ClippedPredictor(_riesz_fit(learner, x4, s4, w4), 0.0, alpha_max)
    log.append("alpha4")
    return (alpha1, alpha2, alpha3, alpha4), tuple(log)


def fit_nuisances(
    train: MediationDataset,
    target: PsiTarget,
    learners: LearnerPlan,
    alpha_max: float = 500.0,
) -> NuisanceSet:
    """Fit both chains for one target on one training fold."""
    _warn_degenerate_arms(train, target)
    if target.family == "natural":
        theta, theta_log, diag = fit_theta_chain_natural(train, target, learners.theta)
        alpha, alpha_log = fit_alpha_chain_natural(train, target, learners.alpha, alpha_max)
    else:
        theta, theta_log, diag = fit_theta_chain_randomized(train, target, learners.theta)
        alpha, alpha_log = fit_alpha_chain_randomized(train, target, learners.alpha, alpha_max)
    return NuisanceSet(
        theta=theta,
        alpha=alpha,
        target=target,
        alpha_max=alpha_max,
        fit_log=theta_log + alpha_log,
        diagnostics=diag,
    )
