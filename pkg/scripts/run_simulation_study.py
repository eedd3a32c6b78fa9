"""Nine-parameter replication study on the built-in generator.

Runs the four path effects plus the intermediate-confounding remainder and
the two interventional effects on the default coefficients, then the
natural direct/indirect pair with the identifiability coefficients zeroed.
Writes one JSON report per run plus a combined metrics table.
"""

import argparse
import json
import os
import time

from rieszmed.effects import EffectRequest
from rieszmed.learners import LearnerSpec
from rieszmed.nuisance import LearnerPlan
from rieszmed.sim import SimConfig, replicate, truth_values


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=90210)
    ap.add_argument("--mc-n", type=int, default=1_000_000)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out-dir", default="sim_study_out")
    ap.add_argument("--alpha-epochs", type=int, default=120)
    ap.add_argument("--theta-epochs", type=int, default=60)
    ap.add_argument("--step-size", type=float, default=1e-2)
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    cache = os.path.join(args.out_dir, "truth_cache")
    plan = LearnerPlan(
        theta=LearnerSpec(kind="ensemble", epochs=args.theta_epochs, step_size=args.step_size),
        alpha=LearnerSpec(kind="mlp", epochs=args.alpha_epochs, step_size=args.step_size),
    )

    combined = {}
    t0 = time.time()

    cfg = SimConfig(n=args.n, reps=args.reps, seed=args.seed)
    requests = [EffectRequest(family="recanting_twins"), EffectRequest(family="interventional")]
    truths = {}
    for req in requests:
        truths.update(truth_values(cfg, req, mc_n=args.mc_n, seed=4, cache_dir=cache))
    report = replicate(cfg, requests, plan, truths, folds_j=5, threads=args.threads)
    with open(os.path.join(args.out_dir, "paths_and_interventional.json"), "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
    combined.update(report.metrics)
    print(f"paths + interventional done in {time.time()-t0:.0f}s, failures={report.n_failures}")

    cfg_nat = SimConfig.natural(n=args.n, reps=args.reps, seed=args.seed + 1)
    req_nat = EffectRequest(family="natural")
    truths_nat = truth_values(cfg_nat, req_nat, mc_n=args.mc_n, seed=4, cache_dir=cache)
    report_nat = replicate(cfg_nat, [req_nat], plan, truths_nat, folds_j=5, threads=args.threads)
    with open(os.path.join(args.out_dir, "natural.json"), "w") as fh:
        json.dump(report_nat.to_json_dict(), fh, indent=1)
    combined.update(report_nat.metrics)
    print(f"natural done, failures={report_nat.n_failures}")

    names = [n for n in ("RT1", "RT2", "RT3", "RT4", "IC", "RIDE", "RIIE", "NDE", "NIE") if n in combined]
    with open(os.path.join(args.out_dir, "metrics.csv"), "w") as fh:
        fh.write("metric," + ",".join(names) + "\n")
        for metric in ("truth", "bias", "sqrt_n_bias", "nmse", "coverage"):
            fh.write(metric + "," + ",".join(repr(combined[n][metric]) for n in names) + "\n")
    print(f"total {time.time()-t0:.0f}s; table at {args.out_dir}/metrics.csv")
    for name in names:
        m = combined[name]
        print(
            f"  {name:5s} bias={m['bias']:+.4f} sqrt_n_bias={m['sqrt_n_bias']:+.3f} "
            f"nmse={m['nmse']:.3f} coverage={m['coverage']:.3f}"
        )


if __name__ == "__main__":
    main()
