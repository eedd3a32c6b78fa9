"""Synthetic study: data generator, Monte Carlo truths, replication metrics.

The generator draws Beta covariates, a logistic binary treatment, truncated
normal intermediates and mediators, and a Gaussian outcome whose
conditional mean is available in closed form.  Truth values for every
effect are computed by Monte Carlo on the identification formulas with
common random numbers across functional values, so contrasts of truths are
tightly coupled.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .data import MediationDataset, make_folds
from .effects import ConfigurationError, EffectRequest, resolve_targets, run_effects
from .nuisance import LearnerPlan, PolicySpec, PsiTarget
from .permute import construct_zpi


@dataclass(frozen=True)
class SimConfig:
    """Structural coefficients and replication settings.

    ``natural_mode`` forces the two coefficients that break natural-effect
    identifiability to zero.
    """

    n: int
    reps: int
    seed: int
    eps: float = 0.5
    lam1: float = 0.4
    lam2: float = 0.6
    gam1: float = 0.6
    gam2: float = 0.4
    natural_mode: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.natural_mode and (self.eps != 0.0 or self.lam1 != 0.0):
            raise ValueError("natural_mode requires eps = lam1 = 0")

    @staticmethod
    def natural(n: int, reps: int, seed: int, **kw) -> "SimConfig":
        kw.setdefault("lam2", 0.6)
        kw.setdefault("gam1", 0.6)
        kw.setdefault("gam2", 0.4)
        return SimConfig(
            n=n, reps=reps, seed=seed, eps=0.0, lam1=0.0, natural_mode=True, **kw
        )

    def params(self) -> tuple:
        return (self.eps, self.lam1, self.lam2, self.gam1, self.gam2)


def truncated_normal(
    rng: np.random.Generator, lo: float, hi: float, mean, sd: float = 1.0, size=None
) -> np.ndarray:
    """Inverse-CDF draws from a normal restricted to [lo, hi]."""
    mean = np.asarray(mean, dtype=np.float64)
    if size is None:
        size = mean.shape
    u = rng.uniform(size=size)
    lo_q = ndtr((lo - mean) / sd)
    hi_q = ndtr((hi - mean) / sd)
    return mean + sd * ndtri(lo_q + u * (hi_q - lo_q))


def _draw_w(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.beta(2.0, 3.0, size=(n, 3))


def treatment_probability(w: np.ndarray) -> np.ndarray:
    return expit(0.5 * w[:, 0] + 0.5 * w[:, 1] - 1.0)


def _draw_z(rng, a, w, cfg: SimConfig) -> np.ndarray:
    z1 = truncated_normal(rng, -1.0, 1.0, -0.4 + cfg.eps * a + 0.2 * w[:, 2] ** 2)
    z2 = truncated_normal(rng, -1.0, 1.0, 0.2 - cfg.eps * a + 0.5 * np.sin(w[:, 1]))
    return np.column_stack([z1, z2])


def _draw_m(rng, a, z, w, cfg: SimConfig) -> np.ndarray:
    m1 = truncated_normal(
        rng, -1.0, 1.0, -0.5 + cfg.lam1 * z[:, 0] + cfg.lam2 * a + 0.4 * w[:, 1] + 0.2 * w[:, 2]
    )
    m2 = truncated_normal(
        rng, -1.0, 1.0, -0.5 + cfg.lam1 * z[:, 1] + cfg.lam2 * a + 0.4 * w[:, 0] + 0.2 * w[:, 2]
    )
    return np.column_stack([m1, m2])


def outcome_mean(a, z, m, w, cfg: SimConfig) -> np.ndarray:
    return (
        0.2 * m[:, 0]
        + 0.2 * m[:, 1]
        + cfg.gam1 * z[:, 0] / 2.0
        + cfg.gam1 * z[:, 1] / 2.0
        + cfg.gam2 * a
        - 0.5 * np.cos(w[:, 0])
        - 1.5
    )


def draw_dgp(cfg: SimConfig, seed: int | None = None) -> MediationDataset:
    """One sample of size cfg.n, deterministic given the seed."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    w = _draw_w(rng, cfg.n)
    a = (rng.uniform(size=cfg.n) < treatment_probability(w)).astype(np.float64)
    z = _draw_z(rng, a, w, cfg)
    m = _draw_m(rng, a, z, w, cfg)
    y = outcome_mean(a, z, m, w, cfg) + rng.standard_normal(cfg.n)
    return MediationDataset(w=w, a=a, z=z, m=m, y=y, treatment_kind="binary")


# ---------------------------------------------------------------------- truths

def _slot_arm(level, a_nat: np.ndarray, w: np.ndarray) -> np.ndarray:
    if isinstance(level, PolicySpec):
        return level.evaluate(a_nat, w)
    return np.full(len(a_nat), float(level))


def _psi_truth_draws(cfg: SimConfig, target: PsiTarget, mc_n: int, seed: int) -> np.ndarray:
    """Per-draw functional values; common random numbers across targets via
    a fixed draw order and a shared seed."""
    rng = np.random.default_rng(seed)
    w = _draw_w(rng, mc_n)
    a_nat = (rng.uniform(size=mc_n) < treatment_probability(w)).astype(np.float64)
    lv = target.levels
    if target.family == "natural":
        z = _draw_z(rng, _slot_arm(lv[2], a_nat, w), w, cfg)
        m = _draw_m(rng, _slot_arm(lv[1], a_nat, w), z, w, cfg)
        return outcome_mean(_slot_arm(lv[0], a_nat, w), z, m, w, cfg)
    z = _draw_z(rng, _slot_arm(lv[3], a_nat, w), w, cfg)
    m = _draw_m(rng, _slot_arm(lv[2], a_nat, w), z, w, cfg)
    zp = _draw_z(rng, _slot_arm(lv[1], a_nat, w), w, cfg)
    return outcome_mean(_slot_arm(lv[0], a_nat, w), zp, m, w, cfg)


@dataclass(frozen=True)
class TruthValue:
    value: float
    mc_se: float


def _request_cache_key(cfg: SimConfig, request: EffectRequest, mc_n: int, seed: int) -> str:
    payload = repr((cfg.params(), request, mc_n, seed))
    return hashlib.sha1(payload.encode()).hexdigest()


def truth_values(
    cfg: SimConfig,
    request: EffectRequest,
    mc_n: int = 1_000_000,
    seed: int = 0,
    cache_dir: str | None = None,
) -> dict[str, TruthValue]:
    """Effect truths via Monte Carlo on the identification formulas.

    Results are cached on disk keyed by (parameters, request, mc_n, seed)
    because they are expensive and shared across replication runs.
    """
    cache_path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        key = _request_cache_key(cfg, request, mc_n, seed)
        cache_path = os.path.join(cache_dir, f"truths_{key}.json")
        if os.path.exists(cache_path):
            with open(cache_path, encoding="utf-8") as fh:
                blob = json.load(fh)
            return {k: TruthValue(v["value"], v["mc_se"]) for k, v in blob.items()}
    draws: dict[tuple, np.ndarray] = {}

    def draws_for(target: PsiTarget) -> np.ndarray:
        key = (target.family, target.levels)
        if key not in draws:
            draws[key] = _psi_truth_draws(cfg, target, mc_n, seed)
        return draws[key]

    out: dict[str, TruthValue] = {}
    for name, terms in resolve_targets(request):
        combo = np.zeros(mc_n)
        for coef, target in terms:
            combo += coef * draws_for(target)
        out[name] = TruthValue(
            value=float(combo.mean()),
            mc_se=float(combo.std(ddof=1) / np.sqrt(mc_n)),
        )
    if cache_path is not None:
        with open(cache_path, "w", encoding="utf-8") as fh:
            json.dump({k: {"value": v.value, "mc_se": v.mc_se} for k, v in out.items()}, fh)
    return out


# ---------------------------------------------------------------------- replication

@dataclass(frozen=True)
class RepResult:
    seed: int
    estimates: dict
    failed: str | None = None


def _needs_zpi(requests) -> bool:
    return any(
        t.family == "randomized" for r in requests for _, terms in resolve_targets(r) for _, t in terms
    )


def _run_one_rep(args) -> RepResult:
    (cfg, requests, learners, folds_j, alpha_max, level, rep_seed) = args
    try:
        dataset = draw_dgp(cfg, seed=rep_seed)
        if _needs_zpi(requests):
            dataset, _ = construct_zpi(dataset)
        folds = make_folds(cfg.n, folds_j, seed=rep_seed)
        plan = LearnerPlan(
            theta=replace(learners.theta, seed=rep_seed % (2**31)),
            alpha=replace(learners.alpha, seed=(rep_seed + 1) % (2**31)),
        )
        estimates = {}
        for request in requests:
            report = run_effects(dataset, request, plan, folds, alpha_max, level)
            for eff in report.effects:
                if eff.name in estimates:
                    raise ConfigurationError(f"duplicate effect name {eff.name!r} across requests")
                estimates[eff.name] = (eff.estimate, eff.std_error, eff.ci_low, eff.ci_high)
        return RepResult(seed=rep_seed, estimates=estimates)
    except Exception as exc:  # recorded, not raised: acceptance runs require zero
        return RepResult(seed=rep_seed, estimates={}, failed=f"{type(exc).__name__}: {exc}")


@dataclass
class SimReport:
    """Replication metrics per effect plus the truths they reference."""

    config: SimConfig
    truths: dict[str, TruthValue]
    metrics: dict[str, dict[str, float]]
    reps_used: int
    n_failures: int
    failures: list
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "config": {
                "n": self.config.n,
                "reps": self.config.reps,
                "seed": self.config.seed,
                "eps": self.config.eps,
                "lam1": self.config.lam1,
                "lam2": self.config.lam2,
                "gam1": self.config.gam1,
                "gam2": self.config.gam2,
                "natural_mode": self.config.natural_mode,
            },
            "truths": {k: {"value": v.value, "mc_se": v.mc_se} for k, v in self.truths.items()},
            "metrics": self.metrics,
            "reps_used": self.reps_used,
            "n_failures": self.n_failures,
            "failures": self.failures,
            "metadata": self.metadata,
        }

    def to_csv_rows(self) -> list[list]:
        names = list(self.metrics)
        rows = [["metric", *names]]
        for metric in ("bias", "sqrt_n_bias", "nmse", "coverage"):
            rows.append([metric, *[repr(self.metrics[n][metric]) for n in names]])
        return rows


def replicate(
    cfg: SimConfig,
    requests: list[EffectRequest],
    learners: LearnerPlan,
    truths: dict[str, TruthValue],
    folds_j: int = 5,
    alpha_max: float = 500.0,
    level: float = 0.95,
    threads: int = 1,
) -> SimReport:
    """Independent replications with deterministic per-rep seeds."""
    seeds = [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(cfg.reps)]
    args = [(cfg, requests, learners, folds_j, alpha_max, level, s) for s in seeds]
    if threads > 1:
        # fork avoids re-importing the world per worker and needs no
        # __main__ guard in caller scripts
        try:
            ctx = get_context("fork")
        except ValueError:
            ctx = get_context("spawn")
        with ctx.Pool(processes=threads) as pool:
            results = pool.map(_run_one_rep, args)
    else:
        results = [_run_one_rep(a) for a in args]
    ok = [r for r in results if r.failed is None]
    failures = [{"seed": r.seed, "error": r.failed} for r in results if r.failed is not None]
    metrics: dict[str, dict[str, float]] = {}
    names = list(ok[0].estimates) if ok else []
    for name in names:
        if name not in truths:
            raise ValueError(f"no truth value supplied for effect {name!r}")
        truth = truths[name].value
        est = np.array([r.estimates[name][0] for r in ok])
        lo = np.array([r.estimates[name][2] for r in ok])
        hi = np.array([r.estimates[name][3] for r in ok])
        bias = float(est.mean() - truth)
        metrics[name] = {
            "truth": truth,
            "bias": bias,
            "sqrt_n_bias": float(np.sqrt(cfg.n) * bias),
            "nmse": float(cfg.n * np.mean((est - truth) ** 2)),
            "coverage": float(np.mean((lo <= truth) & (truth <= hi))),
        }
    return SimReport(
        config=cfg,
        truths=truths,
        metrics=metrics,
        reps_used=len(ok),
        n_failures=len(failures),
        failures=failures,
        metadata={"folds": folds_j, "alpha_max": alpha_max, "level": level, "threads": threads},
    )
