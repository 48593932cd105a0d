"""Cubic plant: learned critic against the analytic value and its projection.

Prints the least-squares projection of the analytic forward and backward values
on [x^2, x^4], the HJB residual of each candidate weight vector on the grid
[-1.5, 1.5], and (unless --no-train) the learned weights.
"""

import argparse

import numpy as np

from boundary_rl.acceptance import cubic_grid
from boundary_rl.config import default_config
from boundary_rl.critic import BENCHMARK_BASES, eval_basis_gradient
from boundary_rl.learner import train_regulator
from boundary_rl.oracle import cubic_value, project_value_on_basis, relative_hjb_residual


def hjb(problem, w, direction):
    basis = BENCHMARK_BASES["cubic"]
    return relative_hjb_residual(problem, lambda x: eval_basis_gradient(basis, x).T @ w,
                                 cubic_grid(), direction)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--no-train", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--compare", type=float, nargs=2, default=None,
                    help="an extra forward weight pair to score")
    args = ap.parse_args()

    cfg = default_config("cubic")
    cfg.seed = args.seed
    problem, basis = cfg.problem(), BENCHMARK_BASES["cubic"]
    rows = []
    for d in ("forward", "backward"):
        proj = project_value_on_basis(lambda x: cubic_value(x[0], d)[0], basis, ([-1.5], [1.5]))
        rows.append((f"projection/{d}", d, proj))
    if args.compare:
        rows.append(("given/forward", "forward", np.array(args.compare)))
    if not args.no_train:
        seeds = cfg.phase_seeds()
        for d in ("forward", "backward"):
            w, _ = train_regulator(problem, basis, cfg.learner_config(d), d,
                                   seeds[f"train_{d}"], cfg.integrator_config())
            rows.append((f"learned/{d}", d, w.w))
    print(f"{'weights':<20} {'w_x2':>9} {'w_x4':>9} {'HJB resid':>10}")
    for name, d, w in rows:
        print(f"{name:<20} {w[0]:9.4f} {w[1]:9.4f} {100 * hjb(problem, w, d):9.2f}%")


if __name__ == "__main__":
    main()
