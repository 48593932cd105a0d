"""Command-line experiment runner: train, simulate, sweep, oracle, verify.

Exit codes: 0 ok, 1 config error, 2 training did not converge (or diverged),
3 persistent-excitation failure, 4 missing or unreadable weights, 5 shooting
oracle diverged, 6 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import acceptance
from .composer import CompositeController, RegulatorPolicy, compose, sweep, sweep_to_csv
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .critic import (BACKWARD, BENCHMARK_BASES, FORWARD, CorruptWeightsError, load_weights,
                     save_weights)
from .dynamics import BENCHMARKS
from .learner import NonConvergence, PEViolation, train_regulator
from .oracle import NoStabilizingSolution, ShootingDiverged, linearize, \
    quadratic_weight, solve_riccati, solve_tpbvp_shooting
from .sim import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_PE, EXIT_WEIGHTS, EXIT_SHOOTING, EXIT_VERIFY = range(7)


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config(args.benchmark)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _weights_path(out, direction):
    return os.path.join(out, f"weights_{direction}.json")


def _load_pair(cfg):
    problem = cfg.problem()
    pols = {}
    for d in (FORWARD, BACKWARD):
        basis, w, bench, _ = load_weights(_weights_path(cfg.output_dir, d))
        if w.direction != d:
            raise CorruptWeightsError(f"weights_{d}.json holds a {w.direction} record")
        if bench and bench != cfg.benchmark:
            raise CorruptWeightsError(f"weights_{d}.json was trained on {bench}")
        pols[d] = RegulatorPolicy.from_critic(problem, basis, w)
    return problem, pols[FORWARD], pols[BACKWARD]


def cmd_train(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    problem = cfg.problem()
    basis = BENCHMARK_BASES[cfg.benchmark]
    seeds = cfg.phase_seeds()
    for d in (FORWARD, BACKWARD):
        try:
            w, log = train_regulator(problem, basis, cfg.learner_config(d), d,
                                     seeds[f"train_{d}"], cfg.integrator_config())
        except PEViolation as exc:
            print(f"{d}: PEViolation: {exc}", file=sys.stderr)
            return EXIT_PE
        except NonConvergence as exc:
            if exc.log is not None:
                exc.log.to_csv(os.path.join(cfg.output_dir, f"train_{d}.csv"))
            print(f"{d}: NonConvergence: {exc}", file=sys.stderr)
            return EXIT_NONCONV
        except DivergenceError as exc:
            print(f"{d}: DivergenceError: {exc}", file=sys.stderr)
            return EXIT_NONCONV
        log.to_csv(os.path.join(cfg.output_dir, f"train_{d}.csv"))
        save_weights(_weights_path(cfg.output_dir, d), basis, w, cfg.benchmark, cfg.config_hash())
        print(f"{d}: w = {np.array2string(w.w, precision=5)} after {len(log.rows)} iterations")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig) -> int:
    try:
        problem, pf, pb = _load_pair(cfg)
    except (OSError, CorruptWeightsError) as exc:
        print(f"weights: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    ctrl = CompositeController(pf, pb, problem.horizon, cfg.mode)
    traj = compose(ctrl, problem, cfg.integrator_config())
    path = os.path.join(cfg.output_dir, f"composite_{cfg.mode}.csv")
    traj.to_csv(path)
    err = float(np.linalg.norm(traj.final_state - problem.xT))
    print(f"T={problem.horizon:g} cost={traj.total_cost:.6g} terminal_error={err:.3e} -> {path}")
    return EXIT_OK


def _oracle_solver(cfg: ExperimentConfig):
    opts = dict(cfg.oracle)
    tol = opts.pop("tol", 1e-8)
    problem = cfg.problem()
    integ = cfg.integrator_config()

    def solve(T):
        return solve_tpbvp_shooting(problem.with_horizon(T), integ, tol=tol, **opts)
    return solve


def cmd_sweep(cfg: ExperimentConfig, train_first: bool = False) -> int:
    if train_first:
        code = cmd_train(cfg)
        if code:
            return code
    try:
        problem, pf, pb = _load_pair(cfg)
    except (OSError, CorruptWeightsError) as exc:
        print(f"weights: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    solve = _oracle_solver(cfg)
    try:
        rows, trajs = sweep(problem, pf, pb, cfg.epsilon_list,
                            lambda T: solve(T).optimal_cost, cfg.integrator_config(), cfg.mode)
    except ShootingDiverged as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        return EXIT_SHOOTING
    os.makedirs(cfg.output_dir, exist_ok=True)
    sweep_to_csv(rows, os.path.join(cfg.output_dir, "sweep.csv"))
    for r, tr in zip(rows, trajs):
        tr.to_csv(os.path.join(cfg.output_dir, f"traj_eps_{r.epsilon:g}.csv"))
    for r in rows:
        print(f"eps={r.epsilon:g} T={r.T:g} terminal_error={r.terminal_error:.3e} "
              f"J={r.J_learned:.5g} J*={r.J_oracle:.5g} gap={r.gap:.3e} quiet={r.quietness:.3e}")
    return EXIT_OK


def cmd_oracle(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    problem = cfg.problem()
    try:
        sol = _oracle_solver(cfg)(problem.horizon)
    except ShootingDiverged as exc:
        if exc.best is not None:
            print(f"best residual {exc.best.residual:.3e}", file=sys.stderr)
        print(f"oracle: {exc}", file=sys.stderr)
        return EXIT_SHOOTING
    sol.trajectory.to_csv(os.path.join(cfg.output_dir, "oracle_trajectory.csv"))
    sol.to_json(os.path.join(cfg.output_dir, "oracle.json"), cfg.benchmark)
    A, B = linearize(problem)
    lin = {"A": A.tolist(), "B": B.tolist()}
    Q = quadratic_weight(problem)
    for d in (FORWARD, BACKWARD):
        try:
            ric = solve_riccati(A, B, Q, problem.cost.control_weight, d)
            lin[d] = {"P": ric.p.tolist(),
                      "closed_loop_eigs": [[float(e.real), float(e.imag)]
                                           for e in ric.closed_loop_eigs]}
        except NoStabilizingSolution as exc:
            lin[d] = {"error": str(exc)}
    with open(os.path.join(cfg.output_dir, "riccati.json"), "w") as fh:
        json.dump(lin, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"T={problem.horizon:g} J*={sol.optimal_cost:.8g} residual={sol.residual:.2e} "
          f"segments={sol.segments}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.list:
        for name, fn in acceptance.CHECKS.items():
            print(f"{name}: {fn.__doc__.strip().splitlines()[0]}")
        return EXIT_OK
    seed = args.seed if args.seed is not None else 0
    session = acceptance.Session(seed)
    results = []
    if args.weights_dir:
        paths = sorted(os.path.join(args.weights_dir, f) for f in os.listdir(args.weights_dir)
                       if f.startswith("weights_") and f.endswith(".json"))
        res = acceptance.check_weight_files(paths)
        print(res.line(), flush=True)
        results.append(res)
    try:
        results += acceptance.run_checks(args.check or None, session,
                                         report=lambda r: print(r.line(), flush=True))
    except KeyError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} checks passed")
    return EXIT_OK if n_ok == len(results) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML experiment config")
    common.add_argument("--benchmark", choices=BENCHMARKS, default=argparse.SUPPRESS,
                        help="use the packaged default config for this benchmark")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (u64)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    p = argparse.ArgumentParser(prog="boundary-rl", description=__doc__.splitlines()[0],
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="learn forward and backward regulators")
    s = sub.add_parser("simulate", parents=[common], help="simulate the composite controller")
    s.add_argument("--mode", choices=("overlay", "additive"), default=None)
    s = sub.add_parser("sweep", parents=[common], help="compose over the epsilon list")
    s.add_argument("--train-first", action="store_true")
    s.add_argument("--mode", choices=("overlay", "additive"), default=None)
    sub.add_parser("oracle", parents=[common], help="solve the boundary problem by shooting")
    s = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    s.add_argument("--list", action="store_true", help="print check names and exit")
    s.add_argument("--check", action="append", help="run only this check (repeatable)")
    s.add_argument("--weights-dir", default=None, help="also validate weight records here")
    return p


_GLOBAL_DEFAULTS = {"config": None, "benchmark": "rl_circuit", "seed": None, "out": None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # global flags may sit before or after the subcommand; absent ones are unset
    for key, val in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, val)
    if args.command == "verify":
        return cmd_verify(args)
    try:
        cfg = _resolve(args)
        if getattr(args, "mode", None):
            cfg.mode = args.mode
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "sweep":
        return cmd_sweep(cfg, args.train_first)
    return cmd_oracle(cfg)


if __name__ == "__main__":
    sys.exit(main())
