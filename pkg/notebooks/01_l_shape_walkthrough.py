"""Walkthrough: minimise a quadratic over the L-shaped set, one stage at a time.

Run with ``python3 notebooks/01_l_shape_walkthrough.py [output_dir]``.
It uses the hyperparameters of the packaged ``quadratic`` config but calls the
library pieces directly instead of ``run_full``, so each step is visible.
Takes about a minute on one core.
"""
import sys
from pathlib import Path

import numpy as np

from ipman import (
    SampleSet, compute_certificate, coverage_report, discriminator_auc, grid_optimize, l_shape,
    make_quadratic, metrics_report, sample_feasible, sample_infeasible, train_stage1, train_stage2,
)
from ipman.experiments import emit_svg_scatter, load_config

out = Path(sys.argv[1] if len(sys.argv) > 1 else "walkthrough_out")
out.mkdir(parents=True, exist_ok=True)
cfg = load_config("quadratic")
rng = np.random.default_rng(cfg.seed)

# %% The feasible set is known to us, but the method only ever sees samples.
region = l_shape()
f = make_quadratic()
feasible = sample_feasible(region, cfg.sampler, rng)
infeasible = sample_infeasible(region, cfg.sampler, rng)
print(f"{len(feasible)} feasible and {len(infeasible)} infeasible training points")

# %% Stage 1: a GAN learns the set. The discriminator becomes the barrier.
model, _ = train_stage1(feasible, infeasible, cfg.gan, rng=rng)
held_in = region.sample_uniform(2000, rng)
held_out = sample_infeasible(region, cfg.sampler, rng, n=2000)
print(f"discriminator AUC on held-out points: {discriminator_auc(model, held_in, held_out):.4f}")
print(f"stage-1 generator coverage: {coverage_report(model, region, 2000, rng).to_dict()}")
for point in ([5.0, 11.0], [9.5, 9.5], [5.0, 5.0]):
    print(f"  D{tuple(point)} = {model.score(np.array([point]))[0]:.4f}")

# %% Stage 2: freeze D, retrain the generator on f + lambda * (-log D).
model2, log = train_stage2(model, f, cfg.barrier, rng=rng, region=region)
print(f"lambda grew from {log.lam[0]:.3g} to {log.lam[-1]:.3g} over {len(log.lam)} outer iterations")

# %% Compare with brute force on a grid.
oracle = grid_optimize(region, f, cfg.oracle.grid_step)
samples = SampleSet.evaluate(model2.generate(1000, rng), f, region)
report = metrics_report(samples, oracle.best_value, f.optimal_set)
print(f"grid optimum {oracle.best_point.tolist()} with value {oracle.best_value}")
print(f"generated samples: {report.to_dict()}")

# %% The epsilon-certificate brackets the true optimum.
cert = compute_certificate(model2, f, region, 1000, rng=1, lam=log.lam[-1])
print(f"certificate: f(x~) = {cert.f_tilde:.4f}, epsilon = {cert.epsilon:.4f}, "
      f"bound holds: {cert.f_tilde - cert.epsilon <= oracle.best_value <= cert.f_tilde}")

svg = emit_svg_scatter(SampleSet.evaluate(feasible[:1000], f, region), samples, region,
                       out / "quadratic.svg")
print(f"scatter written to {svg}")
