"""Objective functions with analytic gradients and known optimal sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import as_batch, make_rng
from .regions import ToyDoseRegion, ToyDoseSpec, l_shape


@dataclass(frozen=True)
class OptimalSet:
    """Ground-truth minimiser set: a finite point list or a line segment."""

    kind: str  # "points" | "segment"
    points: tuple
    optimal_value: float

    @classmethod
    def from_points(cls, points, value):
        return cls("points", tuple(tuple(map(float, p)) for p in points), float(value))

    @classmethod
    def segment(cls, a, b, value):
        return cls("segment", (tuple(map(float, a)), tuple(map(float, b))), float(value))

    def representative_points(self, n_segment: int = 3) -> np.ndarray:
        pts = np.asarray(self.points, dtype=np.float64)
        if self.kind == "segment":
            t = np.linspace(0.0, 1.0, n_segment)[:, None]
            return pts[0] + t * (pts[1] - pts[0])
        return pts

    def distance(self, x) -> np.ndarray:
        """Exact Euclidean distance from each row of ``x`` to the set."""
        X = as_batch(x)
        pts = np.asarray(self.points, dtype=np.float64)
        if self.kind == "segment":
            a, b = pts
            ab = b - a
            denom = float(ab @ ab)
            t = np.zeros(len(X)) if denom == 0 else np.clip((X - a) @ ab / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            return np.linalg.norm(X - proj, axis=1)
        d = np.linalg.norm(X[:, None, :] - pts[None, :, :], axis=2)
        return d.min(axis=1)


@dataclass(frozen=True)
class Objective:
    """``f(x)`` and its gradient, both vectorised over rows.

    ``value`` maps an ``(n, d)`` batch to ``(n,)``; ``grad`` maps it to ``(n, d)``.
    Calling the objective on a single 1-D point returns a float.
    """

    name: str
    dimension: int
    value_fn: Callable
    grad_fn: Callable
    optimal_set: OptimalSet | None = None
    params: dict = field(default_factory=dict)

    def _batch(self, x):
        X = as_batch(x)
        if X.shape[1] != self.dimension:
            raise ShapeError(f"objective {self.name} expects dimension {self.dimension}, got {X.shape[1]}")
        return X

    def value(self, x) -> np.ndarray:
        return self.value_fn(self._batch(x))

    def grad(self, x) -> np.ndarray:
        return self.grad_fn(self._batch(x))

    def __call__(self, x):
        v = self.value(x)
        return float(v[0]) if np.ndim(x) == 1 else v

    def describe(self) -> dict:
        return {"name": self.name, **{k: np.asarray(v).tolist() for k, v in self.params.items()}}


def _check_optimal_set(obj: Objective, region, tol=1e-9) -> Objective:
    pts = obj.optimal_set.representative_points(n_segment=17)
    if not np.all(region.contains(pts)):
        raise ValueError(f"{obj.name}: optimal set leaves the feasible region")
    vals = obj.value(pts)
    if np.max(np.abs(vals - obj.optimal_set.optimal_value)) > tol:
        raise ValueError(f"{obj.name}: optimal set does not attain the optimal value")
    return obj


def make_linear(coefficients=(1.0, 0.0)) -> Objective:
    """``f(x) = c . x``; the default ``c = (1, 0)`` is the benchmark ``f(x) = x1``."""
    c = np.asarray(coefficients, dtype=np.float64)
    opt = None
    if np.array_equal(c, [1.0, 0.0]):
        opt = OptimalSet.segment((-1.0, 9.0), (-1.0, 17.0), -1.0)
    obj = Objective(
        "linear", len(c),
        lambda X: X @ c,
        lambda X: np.broadcast_to(c, X.shape).copy(),
        opt, {"coefficients": c},
    )
    return _check_optimal_set(obj, l_shape()) if opt else obj


def make_quadratic(center=(5.0, 11.0), weights=(1.0, 1.0)) -> Objective:
    """``f(x) = sum_i w_i (x_i - c_i)^2``; default ``(x1-5)^2 + (x2-11)^2``."""
    c = np.asarray(center, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if c.shape != w.shape:
        raise ConfigError("quadratic center and weights differ in length")
    opt = None
    if np.all(w > 0) and c.shape == (2,) and l_shape().contains(c):
        opt = OptimalSet.from_points([c], 0.0)
    obj = Objective(
        "quadratic", len(c),
        lambda X: ((X - c) ** 2) @ w,
        lambda X: 2.0 * w * (X - c),
        opt, {"center": c, "weights": w},
    )
    return _check_optimal_set(obj, l_shape()) if opt else obj


def make_bilinear() -> Objective:
    """``f(x) = x1 x2 - 4 x1 - 4 x2``: two minimisers at opposite ends of the L."""

    def value(X):
        return X[:, 0] * X[:, 1] - 4.0 * X[:, 0] - 4.0 * X[:, 1]

    def grad(X):
        return np.stack([X[:, 1] - 4.0, X[:, 0] - 4.0], axis=1)

    opt = OptimalSet.from_points([(-1.0, 17.0), (17.0, -1.0)], -81.0)
    return _check_optimal_set(Objective("bilinear", 2, value, grad, opt), l_shape())


def make_rosenbrock(a: float = 3.5, b: float = 100.0) -> Objective:
    """``f(x) = (a - x1)^2 + b (x2 - x1^2)^2``, global minimum at ``(a, a^2)``."""

    def value(X):
        return (a - X[:, 0]) ** 2 + b * (X[:, 1] - X[:, 0] ** 2) ** 2

    def grad(X):
        r = X[:, 1] - X[:, 0] ** 2
        return np.stack([-2.0 * (a - X[:, 0]) - 4.0 * b * X[:, 0] * r, 2.0 * b * r], axis=1)

    opt = None
    if l_shape().contains(np.array([a, a * a])):
        opt = OptimalSet.from_points([(a, a * a)], 0.0)
    obj = Objective("rosenbrock", 2, value, grad, opt, {"a": a, "b": b})
    return _check_optimal_set(obj, l_shape()) if opt else obj


def default_dose_penalties(spec: ToyDoseSpec) -> np.ndarray:
    """1.0 on urethra/bladder voxels, 0.25 on unlabeled healthy voxels, 0 on tumor."""
    c = np.full(spec.n_voxels, 0.25)
    c[list(spec.tumor_idx)] = 0.0
    c[list(spec.urethra_idx)] = 1.0
    c[list(spec.bladder_idx)] = 1.0
    return c


def default_dose_target(spec: ToyDoseSpec) -> np.ndarray:
    x_hat = np.zeros(spec.n_voxels)
    x_hat[list(spec.tumor_idx)] = spec.prescription
    return x_hat


def make_toy_dose(spec: ToyDoseSpec | None = None, penalties=None, prescription=None) -> Objective:
    """``f(x) = sum_i c_i x_i + ||x - x_hat||_2`` (excess-dose penalty plus distance
    to the prescribed dose). The subgradient at ``x = x_hat`` is taken as ``c``
    (norm part zero).
    """
    spec = spec or ToyDoseSpec()
    c = default_dose_penalties(spec) if penalties is None else np.asarray(penalties, dtype=np.float64)
    x_hat = default_dose_target(spec) if prescription is None else np.asarray(prescription, dtype=np.float64)
    if c.shape != (spec.n_voxels,) or x_hat.shape != (spec.n_voxels,):
        raise ShapeError("penalties and prescription must have one entry per voxel")
    if np.any(c < 0) or np.any(c[list(spec.tumor_idx)] != 0):
        raise ConfigError("penalties must be non-negative and zero on the tumor")

    def value(X):
        return X @ c + np.linalg.norm(X - x_hat, axis=1)

    def grad(X):
        diff = X - x_hat
        norm = np.linalg.norm(diff, axis=1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return c + np.where(norm > 0, diff / safe, 0.0)

    opt = None
    if np.allclose(x_hat, default_dose_target(spec)):
        opt = OptimalSet.from_points([x_hat], float(c @ x_hat))
    obj = Objective("toy_dose", spec.n_voxels, value, grad, opt, {"penalties": c, "prescription": x_hat})
    return _check_optimal_set(obj, ToyDoseRegion(spec)) if opt else obj


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def central_difference(fn, x, step=1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a 1-D point."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return g


def grad_check(obj: Objective, n_trials: int, rng=0, box=None, step=1e-5) -> float:
    """Largest relative error between ``obj.grad`` and central differences over
    ``n_trials`` uniform points of ``box`` (default: the L-shape bounding box for
    2-D objectives, ``[0, 1.2 P]^n`` for the dose objective)."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = make_rng(rng)
    if box is None:
        box = l_shape().bounding_box if obj.dimension == 2 else ToyDoseRegion().bounding_box
    worst = 0.0
    for _ in range(n_trials):
        x = box.sample(1, rng)[0]
        fd = central_difference(lambda p: float(obj.value(p)[0]), x, step)
        worst = max(worst, relative_error(obj.grad(x)[0], fd))
    return worst


SYNTHETIC = {
    "linear": make_linear,
    "quadratic": make_quadratic,
    "bilinear": make_bilinear,
    "rosenbrock": make_rosenbrock,
}


def objective_from_config(name: str, params: dict | None = None, region=None) -> Objective:
    params = dict(params or {})
    if name == "toy_dose":
        spec = region.spec if isinstance(region, ToyDoseRegion) else ToyDoseSpec()
        return make_toy_dose(spec, **params)
    if name not in SYNTHETIC:
        raise ConfigError(f"unknown objective {name!r}")
    try:
        return SYNTHETIC[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for objective {name!r}: {exc}") from None
