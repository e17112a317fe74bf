"""Toy dose planning: 16 voxels, four clinical-style constraints.

Run with ``python3 notebooks/02_toy_dose.py [output_dir]`` (about two minutes).
Voxels 0-7 are tumor, 8-9 urethra, 10-12 bladder, 13-15 other tissue. The
objective charges dose to healthy voxels and distance from the prescription.
"""
import sys
from pathlib import Path

import numpy as np

from ipman.experiments import load_config, read_points_csv, run_full
from ipman.regions import toy_dose_feasible

out = Path(sys.argv[1] if len(sys.argv) > 1 else "walkthrough_out")
cfg = load_config("toy_dose")
summary = run_full(cfg, out=out)
run_dir = cfg.run_dir(out)

s = summary.samples
print(f"stage-1 AUC {summary.stage1['auc']:.3f}, coverage {summary.stage1['coverage']['fraction_feasible']:.3f}")
print(f"{s['feasible_fraction']:.1%} of generated plans satisfy every constraint")
print(f"mean objective: generated {s['mean_objective']:.3f}, training plans {s['training_mean_objective']:.3f}, "
      f"best known {summary.optimal_value:.3f}")

# Which constraint does a typical failing plan break? Only the sign of some voxel, usually.
plans, extra = read_points_csv(run_dir / "generated.csv")
failing = plans[~extra["feasible"].astype(bool)]
if len(failing):
    print(f"{len(failing)} failing plans; share with a negative voxel: {(failing.min(axis=1) < 0).mean():.1%}")
best = plans[np.argmin(np.where(extra["feasible"].astype(bool), extra["objective"], np.inf))]
print("best feasible plan:", np.round(best, 3).tolist())
print(toy_dose_feasible(cfg.build_region().spec, best))
