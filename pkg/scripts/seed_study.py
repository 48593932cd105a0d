"""Learned weights across master seeds, one CSV row per (seed, direction).

    python scripts/seed_study.py rl_circuit --seeds 0-9 --out seeds.csv
"""

import argparse
import csv
import sys
import time

import numpy as np

from boundary_rl.config import default_config
from boundary_rl.critic import BENCHMARK_BASES
from boundary_rl.learner import NonConvergence, PEViolation, heldout_bellman_residual, \
    train_regulator
from boundary_rl.sim import DivergenceError


def seed_range(text):
    lo, _, hi = text.partition("-")
    return range(int(lo), int(hi or lo) + 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("benchmark", choices=sorted(BENCHMARK_BASES))
    ap.add_argument("--seeds", type=seed_range, default=seed_range("0-4"))
    ap.add_argument("--out", default="-")
    args = ap.parse_args()

    basis = BENCHMARK_BASES[args.benchmark]
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["seed", "direction", "status", "seconds", "iterations", "pe_time",
                 "heldout_bellman"] + [f"w_{k + 1}" for k in range(basis.N)])
    for seed in args.seeds:
        cfg = default_config(args.benchmark)
        cfg.seed = seed
        problem, seeds = cfg.problem(), cfg.phase_seeds()
        for d in ("forward", "backward"):
            lc = cfg.learner_config(d)
            t0 = time.perf_counter()
            status, log = "ok", None
            try:
                w, log = train_regulator(problem, basis, lc, d, seeds[f"train_{d}"],
                                         cfg.integrator_config())
            except NonConvergence as exc:
                status, w, log = "nonconvergence", exc.weights, exc.log
            except (PEViolation, DivergenceError) as exc:
                status, w = type(exc).__name__, None
            dt = time.perf_counter() - t0
            bell = (heldout_bellman_residual(problem, basis, w, lc, seeds["heldout"])
                    if w is not None else float("nan"))
            ws = w.w if w is not None else np.full(basis.N, np.nan)
            pe = log.pe_time if log else None
            wr.writerow([seed, d, status, f"{dt:.1f}", len(log.rows) if log else 0,
                         "" if pe is None else f"{pe:.3g}", f"{bell:.4g}"]
                        + [f"{v:.6g}" for v in ws])
            fh.flush()
    if fh is not sys.stdout:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
