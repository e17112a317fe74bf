"""End-to-end experiment runner: configs, pipeline stages, artifacts.

A run is fully determined by its :class:`ExperimentConfig` (including the
seed). Every random stream used by a run is spawned from that seed, so the
numeric contents of ``summary.json`` are reproducible bit for bit; wall-clock
timings are kept under their own key and are the only exception.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .barrier import BarrierConfig, compute_certificate, train_stage2
from .errors import CertificateError, ConfigError, DependencyError, ShapeError, StageError
from .gan import GanConfig, GanModel, coverage_report, discriminator_auc, train_stage1
from .metrics import (
    SampleSet, cached_grid_optimize, metrics_report, multistart_dose_search, trim_outliers,
)
from .objectives import OptimalSet, objective_from_config
from .regions import (
    BoxUnion, SamplerConfig, ToyDoseRegion, region_from_config, sample_feasible, sample_infeasible,
)

log = logging.getLogger(__name__)

GROUPS = ("paper_specified", "implementation_chosen")
SECTIONS = {
    "region": dict, "objective": dict, "sampler": dict, "gan": dict, "barrier": dict,
    "oracle": dict, "n_eval_samples": int, "metric_convention": str,
}
TOP_LEVEL = {"name", "seed", "output_dir", "notes", *GROUPS}
CONVENTIONS = ("untrimmed", "trimmed")
#: Random streams spawned from the run seed, in a fixed order.
STREAMS = ("feasible", "infeasible", "stage1", "holdout", "stage2", "evaluate", "oracle")


@dataclass(frozen=True)
class OracleConfig:
    """Ground-truth search settings: a grid for box regions, multistart
    projected descent for the dose region."""

    grid_step: float = 0.25
    n_starts: int = 32
    n_steps: int = 2000

    def __post_init__(self):
        if self.grid_step <= 0 or self.n_starts < 1 or self.n_steps < 1:
            raise ConfigError("oracle settings must be positive")


@dataclass
class ExperimentConfig:
    """Everything a run needs. ``seed`` is mandatory; ``output_dir`` is the
    parent directory under which the per-run directory is created."""

    name: str
    seed: int
    region: dict
    objective: dict
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    n_eval_samples: int = 1000
    metric_convention: str = "untrimmed"
    output_dir: str = "runs"
    paper_keys: tuple = ()

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.barrier.mu <= 1.0:
            raise ConfigError(f"barrier growth rate mu must be > 1 (got {self.barrier.mu})")
        if self.n_eval_samples < 1:
            raise ConfigError("n_eval_samples must be >= 1")
        if self.metric_convention not in CONVENTIONS:
            raise ConfigError(f"metric_convention must be one of {CONVENTIONS}")
        if "name" not in self.objective:
            raise ConfigError("objective needs a 'name'")
        extra = set(self.objective) - {"name", "params"}
        if extra:
            raise ConfigError(f"unknown keys for objective: {sorted(extra)}")
        # fail fast on a bad region/objective pairing, before any training
        self.build_objective()

    def build_region(self):
        return region_from_config(self.region)

    def build_objective(self):
        region = self.build_region()
        f = objective_from_config(self.objective["name"], self.objective.get("params"), region)
        if f.dimension != region.dimension:
            raise ConfigError(f"objective dimension {f.dimension} != region dimension {region.dimension}")
        return f

    def semantic_dict(self) -> dict:
        """Every field that influences numeric results (no seed, no output dir)."""
        return {
            "region": self.region,
            "objective": self.objective,
            "sampler": dataclasses.asdict(self.sampler),
            "gan": _strip_seed(dataclasses.asdict(self.gan)),
            "barrier": _strip_seed(dataclasses.asdict(self.barrier)),
            "oracle": dataclasses.asdict(self.oracle),
            "n_eval_samples": self.n_eval_samples,
            "metric_convention": self.metric_convention,
        }

    def config_hash(self) -> str:
        return _hash(self.semantic_dict())

    def run_dir(self, out=None) -> Path:
        return Path(out or self.output_dir) / f"{self.config_hash()[:12]}-seed{self.seed}"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict:
        d = self.semantic_dict()
        d.update(name=self.name, seed=self.seed)
        return d


def _strip_seed(d: dict) -> dict:
    d = dict(d)
    d.pop("seed", None)
    d.pop("log_every", None)
    return d


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _hash(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()


def _build(cls, section: str, values: dict):
    allowed = {f.name for f in dataclasses.fields(cls)} - {"seed"}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad '{section}' section: {exc}") from None


def _merge(groups: dict) -> tuple[dict, set]:
    """Merge the paper-specified and implementation-chosen groups. A setting
    may appear in only one of them."""
    merged, paper = {}, set()
    for group in GROUPS:
        body = groups.get(group) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"'{group}' must be a mapping")
        for key, value in body.items():
            if key not in SECTIONS:
                raise ConfigError(f"unknown section '{key}' in '{group}'")
            if SECTIONS[key] is dict:
                if not isinstance(value, dict):
                    raise ConfigError(f"'{group}.{key}' must be a mapping")
                target = merged.setdefault(key, {})
                for k, v in value.items():
                    if k in target:
                        raise ConfigError(f"'{key}.{k}' is set in both groups")
                    target[k] = v
                    if group == "paper_specified":
                        paper.add(f"{key}.{k}")
            else:
                if key in merged:
                    raise ConfigError(f"'{key}' is set in both groups")
                merged[key] = value
                if group == "paper_specified":
                    paper.add(key)
    return merged, paper


def config_from_dict(raw: dict, seed: int | None = None, output_dir=None) -> ExperimentConfig:
    """Validate a parsed config mapping. ``seed``/``output_dir`` override the file."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    merged, paper = _merge(raw)
    seed = raw.get("seed") if seed is None else seed
    if seed is None:
        raise ConfigError("a seed is required (set 'seed' in the config or pass --seed)")
    for required in ("region", "objective"):
        if required not in merged:
            raise ConfigError(f"missing section '{required}'")
    return ExperimentConfig(
        name=str(raw.get("name", merged["objective"].get("name"))),
        seed=seed,
        region=merged["region"],
        objective=merged["objective"],
        sampler=_build(SamplerConfig, "sampler", merged.get("sampler", {})),
        gan=_build(GanConfig, "gan", merged.get("gan", {})),
        barrier=_build(BarrierConfig, "barrier", merged.get("barrier", {})),
        oracle=_build(OracleConfig, "oracle", merged.get("oracle", {})),
        n_eval_samples=merged.get("n_eval_samples", 1000),
        metric_convention=merged.get("metric_convention", "untrimmed"),
        output_dir=str(output_dir or raw.get("output_dir", "runs")),
        paper_keys=tuple(sorted(paper)),
    )


PACKAGED = ("linear", "quadratic", "bilinear", "rosenbrock", "toy_dose")


def packaged_config_path(name: str) -> Path:
    if name not in PACKAGED:
        raise ConfigError(f"no packaged config {name!r}; choose from {PACKAGED}")
    return Path(str(resources.files("ipman") / "configs" / f"{name}.yaml"))


def load_config(source, seed: int | None = None, output_dir=None) -> ExperimentConfig:
    """Load a YAML config from a path, or a packaged one by name."""
    path = Path(source)
    if not path.exists():
        if str(source) in PACKAGED:
            path = packaged_config_path(str(source))
        else:
            raise DependencyError(f"config file not found: {source}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, seed=seed, output_dir=output_dir)


def streams(seed: int) -> dict:
    """Independent generators for each pipeline stage."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


# -- file helpers ----------------------------------------------------------------


def write_points_csv(path, points, extra: dict | None = None) -> Path:
    path = Path(path)
    pts = np.asarray(points, dtype=np.float64)
    extra = extra or {}
    header = [f"x{i + 1}" for i in range(pts.shape[1])] + list(extra)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        cols = [np.asarray(v) for v in extra.values()]
        for i, row in enumerate(pts):
            w.writerow([repr(float(v)) for v in row] + [_cell(c[i]) for c in cols])
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return repr(float(v))


def read_points_csv(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing upstream artifact: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
    xcols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    extra = {h: body[:, i] for i, h in enumerate(header) if i not in xcols}
    return body[:, xcols], extra


def write_rows_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: _flat(v) for k, v in r.items()})
    return path


def _flat(v):
    if isinstance(v, tuple):
        return " ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return v


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing upstream artifact: {path}")
    return json.loads(path.read_text())


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing upstream artifact: {path}")
    return path


# -- stages ------------------------------------------------------------------------


def _tagged(stage):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except (StageError, DependencyError):
                raise
            except Exception as exc:
                raise StageError(stage, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_tagged("sample")
def stage_sample(cfg: ExperimentConfig, run_dir: Path) -> dict:
    region = cfg.build_region()
    rs = streams(cfg.seed)
    feasible = sample_feasible(region, cfg.sampler, rs["feasible"])
    infeasible = sample_infeasible(region, cfg.sampler, rs["infeasible"])
    write_points_csv(run_dir / "feasible.csv", feasible)
    write_points_csv(run_dir / "infeasible.csv", infeasible)
    return {"feasible": feasible, "infeasible": infeasible}


def stage1_cache_key(cfg: ExperimentConfig) -> str:
    return _hash({"region": cfg.region, "sampler": dataclasses.asdict(cfg.sampler),
                  "gan": _strip_seed(dataclasses.asdict(cfg.gan)), "seed": cfg.seed})[:16]


@_tagged("stage1")
def stage_stage1(cfg: ExperimentConfig, run_dir: Path, feasible=None, infeasible=None,
                 cache_dir=None) -> dict:
    """Train (or fetch from ``cache_dir``) the stage-1 GAN and score it."""
    if feasible is None:
        feasible, _ = read_points_csv(run_dir / "feasible.csv")
        infeasible, _ = read_points_csv(run_dir / "infeasible.csv")
    region = cfg.build_region()
    rs = streams(cfg.seed)
    names = ("stage1.npz", "stage1_log.csv", "stage1.json")
    cached = Path(cache_dir) / f"stage1-{stage1_cache_key(cfg)}" if cache_dir else None
    if cached is not None and all((cached / n).exists() for n in names):
        for n in names:
            shutil.copyfile(cached / n, run_dir / n)
        return {"model": GanModel.load(run_dir / "stage1.npz"), **read_json(run_dir / "stage1.json")}

    model, trace = train_stage1(feasible, infeasible, cfg.gan, rng=rs["stage1"])
    hold = rs["holdout"]
    held_f = region.sample_uniform(2000, hold)
    held_i = sample_infeasible(region, cfg.sampler, hold, n=2000)
    cov = coverage_report(model, region, 2000, hold)
    stats = {"auc": discriminator_auc(model, held_f, held_i), "coverage": cov.to_dict(),
             "good_generator": cov.good()}
    if not cov.good():
        log.warning("stage 1 generator is not 'good': %s", cov.to_dict())
    model.save(run_dir / "stage1.npz", meta={"stage": 1, "config_hash": cfg.config_hash()})
    write_rows_csv(run_dir / "stage1_log.csv", list(trace.rows()))
    write_json(run_dir / "stage1.json", stats)
    if cached is not None:
        cached.mkdir(parents=True, exist_ok=True)
        for n in names:
            shutil.copyfile(run_dir / n, cached / n)
    return {"model": model, **stats}


@_tagged("stage2")
def stage_stage2(cfg: ExperimentConfig, run_dir: Path, model: GanModel | None = None) -> dict:
    if model is None:
        model = GanModel.load(require(run_dir / "stage1.npz"))
    region = cfg.build_region()
    f = cfg.build_objective()
    rs = streams(cfg.seed)
    new, trace = train_stage2(model, f, cfg.barrier, rng=rs["stage2"], region=region)
    final_lam = trace.lam[-1] if trace.lam else cfg.barrier.lambda0
    new.save(run_dir / "stage2.npz", meta={"stage": 2, "final_lambda": final_lam,
                                           "config_hash": cfg.config_hash()})
    write_rows_csv(run_dir / "stage2_log.csv", list(trace.rows()))
    info = {"final_lambda": final_lam, "outer_iterations_run": len(trace.lam),
            "converged": trace.converged, "n_warnings": len(trace.warnings),
            "tail": trace.tail(5)}
    write_json(run_dir / "stage2.json", info)
    return {"model": new, **info}


@_tagged("oracle")
def stage_oracle(cfg: ExperimentConfig, run_dir: Path, cache_dir=None) -> dict:
    """Ground truth: exhaustive grid on box regions, multistart search on the dose region."""
    region = cfg.build_region()
    f = cfg.build_objective()
    if isinstance(region, ToyDoseRegion):
        res = multistart_dose_search(region, f, cfg.oracle.n_starts, cfg.oracle.n_steps,
                                     streams(cfg.seed)["oracle"]).to_dict()
        res["method"] = "multistart"
    else:
        res = cached_grid_optimize(region, f, cfg.oracle.grid_step, cache_dir or run_dir)
        res["method"] = "grid"
    write_json(run_dir / "oracle.json", res)
    return res


def _optimal_set(f, oracle: dict) -> OptimalSet:
    if f.optimal_set is not None:
        return f.optimal_set
    pts = oracle.get("argmin_points") or [oracle["best_point"]]
    return OptimalSet.from_points(pts, oracle["best_value"])


@_tagged("evaluate")
def stage_evaluate(cfg: ExperimentConfig, run_dir: Path, model: GanModel | None = None,
                   oracle: dict | None = None, final_lambda: float | None = None) -> dict:
    if model is None:
        model = GanModel.load(require(run_dir / "stage2.npz"))
    if oracle is None:
        oracle = read_json(run_dir / "oracle.json")
    if final_lambda is None:
        final_lambda = read_json(run_dir / "stage2.json")["final_lambda"]
    region = cfg.build_region()
    f = cfg.build_objective()
    eval_seed = int(np.random.SeedSequence(cfg.seed).spawn(len(STREAMS))[STREAMS.index("evaluate")]
                    .generate_state(1)[0])
    pts = model.generate(cfg.n_eval_samples, np.random.default_rng(eval_seed))
    samples = SampleSet.evaluate(pts, f, region)
    write_points_csv(run_dir / "generated.csv", samples.points,
                     {"objective": samples.objective_values, "feasible": samples.feasible})
    f_star = float(oracle["best_value"])
    opt = _optimal_set(f, oracle)
    reports = {c: metrics_report(samples, f_star, opt, c).to_dict() for c in CONVENTIONS}

    feasible, _ = read_points_csv(run_dir / "feasible.csv")
    train_obj = f.value(feasible[np.asarray(region.contains(feasible), dtype=bool)])
    extra = {
        "feasible_fraction": float(samples.feasible.mean()),
        "mean_objective": float(samples.objective_values.mean()),
        "mean_objective_feasible": (float(samples.objective_values[samples.feasible].mean())
                                    if samples.feasible.any() else None),
        "training_mean_objective": float(train_obj.mean()) if train_obj.size else None,
    }
    if isinstance(region, BoxUnion) and f.optimal_set is not None:
        targets = f.optimal_set.representative_points()
        d = np.linalg.norm(samples.points[:, None, :] - targets[None], axis=2)
        extra["fraction_within_3"] = [float(v) for v in (d <= 3.0).mean(axis=0)]
    try:
        cert = compute_certificate(model, f, region, cfg.n_eval_samples, rng=eval_seed,
                                   lam=final_lambda).to_dict()
        cert["bounds_hold"] = bool(cert["f_tilde"] - cert["epsilon"] <= f_star <= cert["f_tilde"])
    except CertificateError as exc:
        cert = {"error": str(exc)}
    out = {"metrics": reports[cfg.metric_convention], "metrics_by_convention": reports,
           "samples": extra, "certificate": cert, "optimal_value": f_star}
    write_json(run_dir / "evaluation.json", out)
    return out


@_tagged("plot")
def stage_plot(cfg: ExperimentConfig, run_dir: Path, trim: bool = True) -> Path | None:
    """Scatter of feasible training data and generated samples (2-D regions only).
    Generated samples are trimmed to the 90th error percentile when ``trim``."""
    region = cfg.build_region()
    if region.dimension != 2:
        return None
    f = cfg.build_objective()
    feas, _ = read_points_csv(run_dir / "feasible.csv")
    gen, _ = read_points_csv(run_dir / "generated.csv")
    gset = SampleSet.evaluate(gen, f, region)
    if trim and len(gset):
        gset = trim_outliers(gset, float(read_json(run_dir / "oracle.json")["best_value"]))
    return emit_svg_scatter(SampleSet.evaluate(feas, f, region), gset, region, run_dir / "scatter.svg")


# -- plotting --------------------------------------------------------------------


def region_outline(region: BoxUnion) -> list[list[tuple]]:
    """Closed outline rings of a 2-D box union, collinear vertices removed."""
    from shapely.geometry import box as sbox
    from shapely.ops import unary_union

    shape = unary_union([sbox(b.lower[0], b.lower[1], b.upper[0], b.upper[1]) for b in region.boxes])
    shape = shape.simplify(0.0)
    polys = list(getattr(shape, "geoms", [shape]))
    rings = []
    for p in sorted(polys, key=lambda p: p.bounds):
        coords = [tuple(map(float, c)) for c in p.exterior.coords]
        rings.append(coords)
    return rings


def emit_svg_scatter(feasible: SampleSet, generated: SampleSet, region, path,
                     width: int = 480, height: int = 480) -> Path:
    """Standalone SVG scatter: region outline, feasible points (muted) and
    generated points (accent). Output bytes depend only on the inputs."""
    if getattr(region, "dimension", None) != 2 or not isinstance(region, BoxUnion):
        raise ShapeError("scatter plots support 2-D box regions only")
    for s in (feasible, generated):
        if len(s) and s.points.shape[1] != 2:
            raise ShapeError("scatter plots support 2-D points only")
    bb = region.bounding_box
    pad = 0.3 * float(max(np.subtract(bb.upper, bb.lower)))
    lo = np.asarray(bb.lower, dtype=float) - pad
    hi = np.asarray(bb.upper, dtype=float) + pad
    m = 40.0
    sx = (width - 2 * m) / (hi[0] - lo[0])
    sy = (height - 2 * m) / (hi[1] - lo[1])

    def tx(p):
        return m + (p[0] - lo[0]) * sx, height - m - (p[1] - lo[1]) * sy

    def in_view(pts):
        return pts[np.all((pts >= lo) & (pts <= hi), axis=1)] if len(pts) else pts

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for ring in region_outline(region):
        d = " ".join(("M" if i == 0 else "L") + "%.2f,%.2f" % tx(c) for i, c in enumerate(ring[:-1]))
        out.append(f'<path class="region" d="{d} Z" fill="none" stroke="black" stroke-width="1.5"/>')
    hidden = 0
    for cls, colour, r, s in (("feasible", "#d8c8a0", 1.5, feasible), ("generated", "#c0392b", 2.0, generated)):
        pts = np.asarray(s.points, dtype=float).reshape(-1, 2)
        shown = in_view(pts)
        hidden += len(pts) - len(shown)
        out.append(f'<g class="{cls}" fill="{colour}">')
        out.extend('<circle cx="%.2f" cy="%.2f" r="%s"/>' % (*tx(p), r) for p in shown)
        out.append("</g>")
    out.append(f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">x1</text>')
    out.append(f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})">x2</text>')
    out.append('<g class="legend" font-size="11">'
               '<circle cx="60" cy="20" r="4" fill="#d8c8a0"/><text x="70" y="24">feasible data</text>'
               '<circle cx="180" cy="20" r="4" fill="#c0392b"/><text x="190" y="24">generated</text>'
               f'<text x="300" y="24">{hidden} points outside view</text></g>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


# -- full run ----------------------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    name: str
    seed: int
    config_hash: str
    stage1: dict
    stage2: dict
    metrics: dict
    metrics_by_convention: dict
    samples: dict
    certificate: dict
    optimal_value: float
    artifacts: dict
    timings: dict

    def numeric(self) -> dict:
        """Everything except timings: the part that must reproduce exactly."""
        d = dataclasses.asdict(self)
        d.pop("timings")
        return d

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_full(cfg: ExperimentConfig, out=None, stage1_cache=None, oracle_cache=None) -> RunSummary:
    """Sample, stage 1, stage 2, oracle, evaluation, certificate and artifacts.

    ``stage1_cache`` lets runs that share region, sampler, GAN settings and seed
    reuse one trained stage-1 model (results are identical either way).
    """
    run_dir = cfg.run_dir(out)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "config.json", cfg.to_dict())
    timings = {}

    def timed(name, fn, *a, **k):
        t = time.perf_counter()
        res = fn(*a, **k)
        timings[name] = time.perf_counter() - t
        return res

    data = timed("sample", stage_sample, cfg, run_dir)
    s1 = timed("stage1", stage_stage1, cfg, run_dir, data["feasible"], data["infeasible"],
               cache_dir=stage1_cache)
    s2 = timed("stage2", stage_stage2, cfg, run_dir, s1["model"])
    oracle = timed("oracle", stage_oracle, cfg, run_dir, cache_dir=oracle_cache)
    ev = timed("evaluate", stage_evaluate, cfg, run_dir, s2["model"], oracle, s2["final_lambda"])
    timed("plot", stage_plot, cfg, run_dir)
    artifacts = {p.name: str(p) for p in sorted(run_dir.iterdir()) if p.is_file()}
    artifacts["summary.json"] = str(run_dir / "summary.json")
    summary = RunSummary(
        name=cfg.name, seed=cfg.seed, config_hash=cfg.config_hash(),
        stage1={k: v for k, v in s1.items() if k != "model"},
        stage2={k: v for k, v in s2.items() if k != "model"},
        metrics=ev["metrics"], metrics_by_convention=ev["metrics_by_convention"],
        samples=ev["samples"], certificate=ev["certificate"], optimal_value=ev["optimal_value"],
        artifacts=artifacts, timings=timings,
    )
    write_json(run_dir / "summary.json", summary.to_dict())
    return summary
