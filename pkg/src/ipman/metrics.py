"""Sample-quality metrics and brute-force ground-truth oracles."""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import as_batch, make_rng
from .objectives import Objective, OptimalSet
from .regions import ToyDoseRegion, order_statistic


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    objective_values: np.ndarray
    feasible: np.ndarray

    def __post_init__(self):
        n = len(self.points)
        if len(self.objective_values) != n or len(self.feasible) != n:
            raise ShapeError("points, objective values and feasibility flags differ in length")

    @classmethod
    def evaluate(cls, points, objective: Objective, region) -> "SampleSet":
        pts = as_batch(points)
        return cls(pts, objective.value(pts), np.asarray(region.contains(pts), dtype=bool))

    def __len__(self):
        return len(self.points)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.points[idx], self.objective_values[idx], self.feasible[idx])


@dataclass(frozen=True)
class MetricsReport:
    delta_f: float
    var90: float
    delta_x: float | None
    n_samples: int
    n_feasible: int
    convention: str = "untrimmed"

    def to_dict(self) -> dict:
        return asdict(self)


def _values(samples, f):
    if isinstance(samples, SampleSet):
        return samples.objective_values
    return f.value(samples)


def delta_f(samples, f, optimal_value: float) -> float:
    """Mean absolute objective error ``E|f(x) - f*|``."""
    err = np.abs(_values(samples, f) - optimal_value)
    if err.size == 0:
        raise ValueError("no samples")
    return float(err.mean())


def var_alpha(values, alpha: float) -> float:
    """Value-at-Risk: ascending order statistic at index ``ceil(alpha * m)``."""
    return order_statistic(values, alpha)


def delta_x(samples, optimal_set: OptimalSet) -> float:
    """Mean Euclidean distance from the samples to the optimal set."""
    pts = samples.points if isinstance(samples, SampleSet) else as_batch(samples)
    if len(pts) == 0:
        raise ValueError("no samples")
    return float(optimal_set.distance(pts).mean())


def trim_outliers(samples: SampleSet, optimal_value: float, percentile: float = 90) -> SampleSet:
    """Keep the ``ceil(p/100 * N)`` samples with the smallest ``|f(x) - f*|``."""
    if len(samples) == 0:
        raise ValueError("no samples")
    keep = max(1, math.ceil(percentile / 100.0 * len(samples) - 1e-9))
    err = np.abs(samples.objective_values - optimal_value)
    order = np.argsort(err, kind="stable")[:keep]
    return samples.subset(np.sort(order))


def metrics_report(samples: SampleSet, optimal_value: float, optimal_set=None,
                   convention: str = "untrimmed") -> MetricsReport:
    """Delta_f, VaR_90 of the absolute error and Delta_x, on raw or trimmed samples."""
    if convention == "trimmed":
        samples = trim_outliers(samples, optimal_value)
    elif convention != "untrimmed":
        raise ConfigError(f"unknown metric convention {convention!r}")
    err = np.abs(samples.objective_values - optimal_value)
    return MetricsReport(
        delta_f=float(err.mean()),
        var90=var_alpha(err, 0.9),
        delta_x=None if optimal_set is None else delta_x(samples, optimal_set),
        n_samples=len(samples),
        n_feasible=int(samples.feasible.sum()),
        convention=convention,
    )


# -- grid oracle -------------------------------------------------------------


@dataclass(frozen=True)
class GridResult:
    best_point: np.ndarray
    best_value: float
    argmin_points: np.ndarray   # grid points tying the minimum (to 1e-9 relative)
    near_optimal: np.ndarray    # grid points within ``tolerance`` of the minimum
    tolerance: float
    step: float
    n_feasible: int

    def to_dict(self) -> dict:
        return {
            "best_point": self.best_point.tolist(),
            "best_value": self.best_value,
            "argmin_points": self.argmin_points.tolist(),
            "n_near_optimal": int(len(self.near_optimal)),
            "tolerance": self.tolerance,
            "step": self.step,
            "n_feasible": self.n_feasible,
        }

    def optimal_set(self) -> OptimalSet:
        return OptimalSet.from_points(self.argmin_points, self.best_value)


def max_workers() -> int:
    """Worker cap from ``IPMAN_MAX_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("IPMAN_MAX_WORKERS", "1")))
    except ValueError:
        return 1


def _grid_axes(box, step):
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        n = int(math.floor((hi - lo) / step + 1e-9))
        axes.append(lo + step * np.arange(n + 1))
    return axes


def _eval_block(args):
    region, f, axes, rows = args
    first = axes[0][rows]
    mesh = np.meshgrid(first, *axes[1:], indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    ok = np.asarray(region.contains(pts), dtype=bool)
    pts = pts[ok]
    return pts, f.value(pts) if len(pts) else np.empty(0)


def grid_optimize(region, f: Objective, step: float, tolerance: float | None = None,
                  workers: int | None = None) -> GridResult:
    """Exhaustive minimisation of ``f`` over the grid ``lower + step * k`` of the
    region's bounding box, restricted to feasible grid points.

    The grid is split along the first axis into blocks which may be evaluated
    in parallel; blocks are combined by exact minimum, so the result does not
    depend on the worker count. ``tolerance`` defaults to the largest change of
    ``f`` between the best grid point and its axis neighbours.
    """
    if step <= 0:
        raise ConfigError("grid step must be positive")
    box = region.bounding_box
    if not all(np.isfinite(box.lower)) or not all(np.isfinite(box.upper)):
        raise ConfigError("region bounding box must be finite")
    axes = _grid_axes(box, step)
    n_points = math.prod(len(a) for a in axes)
    if n_points > 50_000_000:
        raise ConfigError(f"grid of {n_points} points is too large; use a coarser step")
    per_block = max(1, 200_000 // max(1, n_points // len(axes[0])))
    blocks = [slice(i, i + per_block) for i in range(0, len(axes[0]), per_block)]
    jobs = [(region, f, axes, b) for b in blocks]
    workers = workers or max_workers()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(_eval_block, jobs))
    else:
        results = [_eval_block(j) for j in jobs]
    pts = np.concatenate([r[0] for r in results])
    vals = np.concatenate([r[1] for r in results])
    if len(pts) == 0:
        raise ConfigError("no grid point is feasible; refine the step")
    best_value = float(vals.min())
    tie = 1e-9 * max(1.0, abs(best_value))
    argmin = pts[vals <= best_value + tie]
    best_point = argmin[0]
    if tolerance is None:
        neigh = []
        for d in range(len(axes)):
            for s in (-step, step):
                q = best_point.copy()
                q[d] += s
                neigh.append(q)
        neigh = np.array(neigh)
        tolerance = float(np.max(np.abs(f.value(neigh) - best_value)))
    near = pts[vals <= best_value + tolerance + tie]
    return GridResult(best_point, best_value, argmin, near, float(tolerance), float(step), len(pts))


def cache_key(region, f: Objective, step: float) -> str:
    payload = json.dumps({"region": region.describe(), "objective": f.describe(), "step": step},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cached_grid_optimize(region, f: Objective, step: float, cache_dir) -> dict:
    """:func:`grid_optimize` with results memoised as JSON under ``cache_dir``."""
    path = Path(cache_dir) / f"oracle-{cache_key(region, f, step)}.json"
    if path.exists():
        return json.loads(path.read_text())
    result = grid_optimize(region, f, step).to_dict()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


# -- dose oracle ---------------------------------------------------------------


@dataclass(frozen=True)
class MultistartResult:
    best_point: np.ndarray
    best_value: float
    start_values: np.ndarray   # final value reached from each start

    def to_dict(self) -> dict:
        return {
            "best_point": self.best_point.tolist(),
            "best_value": self.best_value,
            "n_starts": int(len(self.start_values)),
            "spread": float(self.start_values.max() - self.start_values.min()),
            "median": float(np.median(self.start_values)),
        }


def multistart_dose_search(region: ToyDoseRegion, f: Objective, n_starts=32, n_steps=2000,
                           rng=0) -> MultistartResult:
    """Projected subgradient descent from random feasible starts.

    The projection clips tumor voxels to ``[0.9P, 1.2P]``, organ voxels to
    ``[0, limit]`` and the rest to ``[0, inf)``, a convex inner approximation of
    the feasible set, so every iterate stays feasible. Quality is reported via
    the spread of per-start results rather than assumed.
    """
    rng = make_rng(rng)
    s, P = region.spec, region.spec.prescription
    lo = np.zeros(region.dimension)
    hi = np.full(region.dimension, np.inf)
    lo[list(s.tumor_idx)] = s.low_fraction * P
    hi[list(s.tumor_idx)] = s.high_fraction * P
    hi[list(s.urethra_idx)] = s.urethra_limit
    hi[list(s.bladder_idx)] = s.bladder_limit
    x = region.sample_uniform(n_starts, rng)
    best = x.copy()
    best_val = f.value(x)
    for k in range(n_steps):
        x = np.clip(x - (0.1 * P / math.sqrt(k + 1)) * f.grad(x), lo, hi)
        v = f.value(x)
        better = v < best_val
        best[better] = x[better]
        best_val = np.where(better, v, best_val)
    i = int(np.argmin(best_val))
    return MultistartResult(best[i], float(best_val[i]), best_val)
