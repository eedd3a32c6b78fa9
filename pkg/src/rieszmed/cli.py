"""Batch entry point: estimate effects, run the synthetic study, or audit
the matched permutation.  Configuration is UTF-8 JSON; command-line flags
override file values; every output embeds the fully resolved configuration
so runs are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .data import ColumnRoles, ParseError, SchemaError, ValidationError, load_csv, make_folds
from .effects import ConfigurationError, EffectRequest, run_effects
from .learners import LearnerSpec
from .nuisance import LearnerPlan, PolicySpec
from .permute import construct_zpi, permutation_diagnostics
from .sim import SimConfig, replicate, truth_values


def _json_fmt(obj, indent=0) -> str:
    """Serialize with floats at 17 significant digits (exact round-trip)."""
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad} {json.dumps(str(k))}: {_json_fmt(v, indent + 1)}' for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = ",\n".join(f"{pad} {_json_fmt(v, indent + 1)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return format(obj, ".17g")
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_json_fmt(obj))
        fh.write("\n")


def _write_csv_rows(path: str, rows: list[list]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None


def _roles_from_config(config: dict) -> ColumnRoles:
    try:
        roles = config["roles"]
    except KeyError:
        raise ConfigurationError("config field 'roles' is required") from None
    try:
        return ColumnRoles(
            covariates=tuple(roles.get("covariates", ())),
            treatment=roles["treatment"],
            intermediate=tuple(roles.get("intermediate", ())),
            mediators=tuple(roles["mediators"]),
            outcome=roles["outcome"],
        )
    except KeyError as exc:
        raise ConfigurationError(f"config field 'roles.{exc.args[0]}' is required") from None


def _policy_from_config(obj: dict, roles: ColumnRoles | None) -> PolicySpec:
    cap = obj.get("cap")
    if isinstance(cap, str):
        if roles is None or cap not in roles.covariates:
            raise ConfigurationError(f"policy cap column {cap!r} is not a covariate")
        cap = roles.covariates.index(cap)
    return PolicySpec(
        kind=obj["kind"],
        value=obj.get("value"),
        shift=obj.get("shift"),
        cap=cap,
        description=obj.get("description", ""),
    )


_LEARNER_FIELDS = (
    "kind",
    "ridge_penalty",
    "hidden",
    "epochs",
    "batch_size",
    "step_size",
    "clip_norm",
    "seed",
    "max_levels",
)


def _learner_from_config(obj: dict) -> LearnerSpec:
    unknown = set(obj) - set(_LEARNER_FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown learner fields: {sorted(unknown)}")
    if "hidden" in obj:
        obj = {**obj, "hidden": tuple(obj["hidden"])}
    return LearnerSpec(**obj)


def _plan_from_config(config: dict) -> LearnerPlan:
    learner = config.get("learner", {"kind": "ridge"})
    if "theta" in learner or "alpha" in learner:
        theta = _learner_from_config(learner.get("theta", {"kind": "ridge"}))
        alpha = _learner_from_config(learner.get("alpha", {"kind": "ridge"}))
        return LearnerPlan(theta=theta, alpha=alpha)
    spec = _learner_from_config(learner)
    return LearnerPlan.single(spec)


def _plan_echo(plan: LearnerPlan) -> dict:
    def one(spec: LearnerSpec) -> dict:
        return {f: getattr(spec, f) if f != "hidden" else list(spec.hidden) for f in _LEARNER_FIELDS}

    return {"theta": one(plan.theta), "alpha": one(plan.alpha)}


def _cmd_estimate(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.folds is not None:
        config["folds"] = args.folds
    if args.family is not None:
        config["family"] = args.family
    roles = _roles_from_config(config)
    family = config.get("family")
    if family is None:
        raise ConfigurationError("config field 'family' is required")
    mode = config.get("mode", "binary")
    d0 = d1 = None
    if mode == "mtp":
        pols = config.get("policies")
        if not pols or "d0" not in pols or "d1" not in pols:
            raise ConfigurationError("config field 'policies' must supply both 'd0' and 'd1'")
        d0 = _policy_from_config(pols["d0"], roles)
        d1 = _policy_from_config(pols["d1"], roles)
    request = EffectRequest(
        family=family,
        mode=mode,
        d0=d0,
        d1=d1,
        include_proportion_mediated=bool(config.get("include_proportion_mediated", False)),
        organic_appendix_slots=bool(config.get("organic_appendix_slots", False)),
    )
    treatment_kind = config.get("treatment_kind", "binary")
    dataset = load_csv(args.data, roles, treatment_kind=treatment_kind)
    seed = int(config.get("seed", 0))
    folds_j = int(config.get("folds", 5))
    alpha_max = float(config.get("alpha_max", 500.0))
    level = float(config.get("confidence_level", 0.95))
    plan = _plan_from_config(config)
    from .effects import RANDOMIZED_FAMILIES

    permutation_info = None
    if family in RANDOMIZED_FAMILIES:
        dataset, perm_plan = construct_zpi(dataset)
        permutation_info = permutation_diagnostics(dataset, perm_plan)
    folds = make_folds(dataset.n, folds_j, seed)
    report = run_effects(dataset, request, plan, folds, alpha_max, level)
    if args.dump_gradients:
        import os

        os.makedirs(args.dump_gradients, exist_ok=True)
        for (fam, levels), grads in report.gradients.items():
            tag = "-".join(
                str(lev) if not hasattr(lev, "kind") else lev.kind for lev in levels
            )
            _write_csv_rows(
                os.path.join(args.dump_gradients, f"gradients_{fam}_{tag}.csv"),
                grads.to_csv_rows(),
            )
    resolved = {
        "command": "estimate",
        "data": args.data,
        "roles": {
            "covariates": list(roles.covariates),
            "treatment": roles.treatment,
            "intermediate": list(roles.intermediate),
            "mediators": list(roles.mediators),
            "outcome": roles.outcome,
        },
        "treatment_kind": treatment_kind,
        "family": family,
        "mode": mode,
        "seed": seed,
        "folds": folds_j,
        "alpha_max": alpha_max,
        "confidence_level": level,
        "learner": _plan_echo(plan),
    }
    out = {
        "version": __version__,
        "config": resolved,
        "permutation": permutation_info,
        "report": report.to_json_dict(),
    }
    _write_json(args.out, out)
    if args.csv:
        _write_csv_rows(args.csv, report.to_csv_rows())
    return 0


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    n = args.n if args.n is not None else config.get("n")
    reps = args.reps if args.reps is not None else config.get("reps")
    family = args.family if args.family is not None else config.get("family")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    if n is None or reps is None or family is None:
        raise ConfigurationError("simulate requires 'n', 'reps', and 'family'")
    natural_mode = bool(config.get("natural_mode", args.natural_mode))
    params = config.get("params", {})
    kw = {}
    for name in ("eps", "lam1", "lam2", "gam1", "gam2"):
        if name in params:
            kw[name] = float(params[name])
    if natural_mode:
        kw["eps"] = 0.0
        kw["lam1"] = 0.0
    cfg = SimConfig(n=int(n), reps=int(reps), seed=int(seed), natural_mode=natural_mode, **kw)
    request = EffectRequest(family=family)
    plan = _plan_from_config(config)
    mc_n = int(config.get("mc_n", args.mc_n))
    truths = truth_values(cfg, request, mc_n=mc_n, seed=int(seed), cache_dir=args.cache_dir)
    report = replicate(
        cfg,
        [request],
        plan,
        truths,
        folds_j=int(config.get("folds", 5)),
        alpha_max=float(config.get("alpha_max", 500.0)),
        level=float(config.get("confidence_level", 0.95)),
        threads=args.threads,
    )
    resolved = {
        "command": "simulate",
        "n": cfg.n,
        "reps": cfg.reps,
        "seed": cfg.seed,
        "family": family,
        "natural_mode": natural_mode,
        "params": {
            "eps": cfg.eps,
            "lam1": cfg.lam1,
            "lam2": cfg.lam2,
            "gam1": cfg.gam1,
            "gam2": cfg.gam2,
        },
        "mc_n": mc_n,
        "folds": int(config.get("folds", 5)),
        "learner": _plan_echo(plan),
    }
    out = {"version": __version__, "config": resolved, "report": report.to_json_dict()}
    _write_json(args.out, out)
    if args.csv:
        _write_csv_rows(args.csv, report.to_csv_rows())
    return 0


def _cmd_permute_check(args) -> int:
    config = _load_config(args.config)
    roles = _roles_from_config(config)
    dataset = load_csv(args.data, roles, treatment_kind=config.get("treatment_kind", "binary"))
    dataset, plan = construct_zpi(dataset, force_assignment=bool(args.force_assignment))
    diag = permutation_diagnostics(dataset, plan)
    out = {
        "version": __version__,
        "config": {"command": "permute-check", "data": args.data},
        "diagnostics": diag,
    }
    _write_json(args.out, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rieszmed")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate one effect family from a CSV")
    est.add_argument("--data", required=True)
    est.add_argument("--config", required=True)
    est.add_argument("--out", required=True)
    est.add_argument("--csv", default=None)
    est.add_argument("--seed", type=int, default=None)
    est.add_argument("--folds", type=int, default=None)
    est.add_argument("--family", default=None)
    est.add_argument("--threads", type=int, default=1)
    est.add_argument("--dump-gradients", default=None, metavar="DIR")
    est.set_defaults(func=_cmd_estimate)

    simp = sub.add_parser("simulate", help="replication study on the synthetic generator")
    simp.add_argument("--n", type=int, default=None)
    simp.add_argument("--reps", type=int, default=None)
    simp.add_argument("--family", default=None)
    simp.add_argument("--seed", type=int, default=None)
    simp.add_argument("--natural-mode", action="store_true")
    simp.add_argument("--config", default=None)
    simp.add_argument("--mc-n", type=int, default=200_000)
    simp.add_argument("--cache-dir", default=None)
    simp.add_argument("--out", required=True)
    simp.add_argument("--csv", default=None)
    simp.add_argument("--threads", type=int, default=1)
    simp.set_defaults(func=_cmd_simulate)

    perm = sub.add_parser("permute-check", help="audit the matched permutation")
    perm.add_argument("--data", required=True)
    perm.add_argument("--config", required=True)
    perm.add_argument("--out", required=True)
    perm.add_argument("--force-assignment", action="store_true")
    perm.add_argument("--threads", type=int, default=1)
    perm.set_defaults(func=_cmd_permute_check)
    return parser


CONFIG_ERRORS = (ConfigurationError, SchemaError, ValidationError, ParseError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
