"""Train, sweep and solve the oracle for one benchmark; everything lands in --out.

    python scripts/run_benchmark.py manipulator --out runs/manipulator
"""

import argparse
import sys

from boundary_rl.cli import main as cli

STEPS = ("train", "sweep", "oracle")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("benchmark", choices=("rl_circuit", "cubic", "manipulator"))
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", choices=("overlay", "additive"), default="overlay")
    args = ap.parse_args()
    out = args.out or f"runs/{args.benchmark}"
    for step in STEPS:
        argv = [step, "--benchmark", args.benchmark, "--out", out, "--seed", str(args.seed)]
        if step == "sweep":
            argv += ["--mode", args.mode]
        print(f"== {step}", flush=True)
        code = cli(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
