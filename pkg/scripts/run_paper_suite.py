#!/usr/bin/env python3
"""Run the full experiment battery at publication scale into one run root.

Covers the dispersion factorial, the 15-point representation scan with its
uniform-control repeat, threshold estimation on the scan, the matched
two-phase experiment, the convergence scenarios, the negative controls, and
the stress suite.  Expect this to take a while at the default sizes; use
--quick for a smoke pass.

Usage:
    python scripts/run_paper_suite.py --root runs/paper --seed 42 [--quick] [--jobs 4]
"""

from __future__ import annotations

import argparse

from repmarket.cli import main as cli_main


def run(argv: list[str]) -> None:
    print("+ repmarket " + " ".join(argv))
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(f"subcommand failed with exit code {code}: {argv}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default="runs/paper")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--quick", action="store_true", help="small sizes for a smoke pass")
    args = parser.parse_args()

    seed = str(args.seed)
    jobs = str(args.jobs)
    reps = "8" if args.quick else "50"
    steps = ["--steps", "1200"] if args.quick else []
    points = "8" if args.quick else "15"
    candidates = "300" if args.quick else "2000"

    base = lambda name: ["--seed", seed, "--jobs", jobs, "--force",
                         "--output", f"{args.root}/{name}"]

    run(["simulate", *base("simulate"), *steps])
    run(["metrics", *base("metrics"), *steps])
    run(["factorial", *base("factorial"), "--reps", reps, *steps])
    run(["scan", *base("scan"), "--points", points, "--reps", reps, *steps])
    run(["scan", *base("scan-uniform"), "--points", points, "--reps", reps,
         "--mode", "uniform", *steps])
    run(["threshold", "--input", f"{args.root}/scan/scan_long.tsv",
         "--outcome", "crash_freq", "--method", "all",
         "--output", f"{args.root}/threshold", "--force"])
    run(["matched", *base("matched"), "--candidates", candidates,
         "--reps", "8" if args.quick else "20",
         *(["--calm-steps", "600", "--stress-steps", "150"] if args.quick else [])])
    run(["converge", *base("converge"), "--reps", "5" if args.quick else "20",
         *(["--steps", "1500"] if args.quick else ["--steps", "5000"])])
    run(["controls", *base("controls"), "--reps", "5" if args.quick else "20", *steps])
    run(["stress", *base("stress"), "--reps", "5" if args.quick else "20", *steps])
    print(f"\nsuite complete under {args.root}/")


if __name__ == "__main__":
    main()
