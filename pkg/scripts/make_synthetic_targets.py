#!/usr/bin/env python3
"""Regenerate the shipped synthetic target-moment file.

The targets are simulated at the documented baseline pricing parameters
(the package defaults) with 20 replications at desk scale, so calibration
has a fully reproducible, data-free reference point.

Usage:
    python scripts/make_synthetic_targets.py [--out data/targets/synthetic_baseline.moments]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from repmarket.calibration import SmmConfig, default_bounds, save_moment_file, synthetic_targets
from repmarket.core import RunConfig

TARGET_SEED = 271828
TARGET_REPS = 20


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/targets/synthetic_baseline.moments")
    parser.add_argument("--reps", type=int, default=TARGET_REPS)
    args = parser.parse_args()

    cfg = RunConfig()
    smm = SmmConfig(
        targets=None,  # type: ignore[arg-type]
        bounds=default_bounds(cfg.pricing),
        base_config=cfg,
    )
    targets, reps = synthetic_targets(cfg.pricing, smm, seed=TARGET_SEED, reps=args.reps)
    se = np.nanstd(reps, axis=0, ddof=1) / np.sqrt(reps.shape[0])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_moment_file(out, targets, se)
    print(f"wrote {out}")
    for name, value, err in zip(type(targets).NAMES, targets.as_array(), se):
        print(f"  {name:16s} {value:12.6g}  (se {err:.3g})")


if __name__ == "__main__":
    main()
