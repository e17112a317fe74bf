"""Explicit feasible sets: membership tests and samplers.

Two kinds of region are supported:

* :class:`BoxUnion` -- a union of closed axis-aligned boxes (the L-shaped
  benchmark set is a union of two boxes).
* :class:`ToyDoseRegion` -- a 16-voxel dose vector that must satisfy the four
  Table-2-style clinical constraints (two quantile constraints on the tumor,
  maximum-dose limits on urethra and bladder).

Feasible training data is drawn uniformly from the region eroded by
``shrink_margin`` and then blurred by Gaussian noise; infeasible data is
rejection-sampled from a padded bounding box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .nn import as_batch, make_rng


def order_statistic(values, alpha: float) -> float:
    """Ascending order statistic at 1-based index ``ceil(alpha * m)``.

    This is the one quantile rule used everywhere (dose constraints and VaR
    metrics); there is no interpolation.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise ValueError("order_statistic of an empty sample")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    # the small guard keeps products like 0.9 * 10 from rounding up past 9
    k = max(1, math.ceil(alpha * v.size - 1e-9))
    return float(v[k - 1])


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``lower <= x <= upper``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ShapeError("lower and upper bounds differ in length")
        if any(l > h for l, h in zip(lo, hi)):
            raise ConfigError(f"box has lower > upper: {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def contains(self, x) -> np.ndarray:
        pts = as_batch(x)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def inflate(self, pad: float) -> "Box":
        return Box(tuple(l - pad for l in self.lower), tuple(u + pad for u in self.upper))

    def sample(self, n: int, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dimension))


def _subtract(piece: Box, cut: Box) -> list[Box]:
    """``piece`` minus ``cut`` as a list of boxes with disjoint interiors."""
    lo, hi = list(piece.lower), list(piece.upper)
    if any(h <= cl or l >= ch for l, h, cl, ch in zip(lo, hi, cut.lower, cut.upper)):
        return [piece]
    out = []
    for d in range(len(lo)):
        if lo[d] < cut.lower[d]:
            out.append(Box(tuple(lo), tuple(hi[:d] + [cut.lower[d]] + hi[d + 1:])))
            lo[d] = cut.lower[d]
        if hi[d] > cut.upper[d]:
            out.append(Box(tuple(lo[:d] + [cut.upper[d]] + lo[d + 1:]), tuple(hi)))
            hi[d] = cut.upper[d]
    return out


class BoxUnion:
    """Union of closed boxes of a common dimension."""

    kind = "boxes"

    def __init__(self, boxes):
        boxes = [b if isinstance(b, Box) else Box(*b) for b in boxes]
        if not boxes:
            raise ConfigError("a box union needs at least one box")
        dims = {b.dimension for b in boxes}
        if len(dims) != 1:
            raise ShapeError(f"boxes have mixed dimensions {sorted(dims)}")
        self.boxes = tuple(boxes)
        self.dimension = dims.pop()
        self.bounding_box = Box(
            tuple(np.min([b.lower for b in boxes], axis=0)),
            tuple(np.max([b.upper for b in boxes], axis=0)),
        )

    def __repr__(self):
        return f"BoxUnion({[(b.lower, b.upper) for b in self.boxes]})"

    def describe(self) -> dict:
        return {"kind": self.kind, "boxes": [[list(b.lower), list(b.upper)] for b in self.boxes]}

    @property
    def n_components(self) -> int:
        return len(self.boxes)

    def _check_dim(self, pts):
        if pts.shape[1] != self.dimension:
            raise ShapeError(f"points have dimension {pts.shape[1]}, region has {self.dimension}")

    def membership(self, x) -> np.ndarray:
        """Boolean matrix ``(n_points, n_boxes)``: which boxes contain each point."""
        pts = as_batch(x)
        self._check_dim(pts)
        return np.stack([b.contains(pts) for b in self.boxes], axis=1)

    def contains(self, x):
        """Exact (closed) membership. Scalar bool for one point, array for a batch."""
        hit = self.membership(x).any(axis=1)
        return bool(hit[0]) if np.ndim(x) == 1 else hit

    def component_of(self, x) -> np.ndarray:
        """Index of the first box containing each point, or -1."""
        m = self.membership(x)
        return np.where(m.any(axis=1), m.argmax(axis=1), -1)

    def _cube_inside(self, center, margin) -> bool:
        if margin == 0:
            return bool(self.membership(center).any())
        pieces = [Box(tuple(center - margin), tuple(center + margin))]
        for b in self.boxes:
            pieces = [p for piece in pieces for p in _subtract(piece, b)]
            # drop measure-zero slivers left over from closed boundaries
            pieces = [p for p in pieces if p.volume > 1e-12 * (2 * margin) ** self.dimension]
            if not pieces:
                return True
        return False

    def shrunk_contains(self, x, margin: float) -> np.ndarray:
        """Membership in the erosion of the union: the cube of half-width ``margin``
        around the point lies entirely inside the region."""
        pts = as_batch(x)
        self._check_dim(pts)
        inside = self.membership(pts).any(axis=1)
        if margin == 0:
            return inside
        out = np.zeros(len(pts), dtype=bool)
        for i in np.flatnonzero(inside):
            out[i] = self._cube_inside(pts[i], margin)
        return out

    def sample_uniform(self, n: int, rng, margin: float = 0.0) -> np.ndarray:
        """Uniform draws on the union (eroded by ``margin``)."""
        rng = make_rng(rng)
        vols = np.array([b.volume for b in self.boxes])
        if vols.sum() <= 0:
            raise ConfigError("region has zero volume")
        probs = vols / vols.sum()
        out, have, proposed = [], 0, 0
        while have < n:
            m = max(2 * (n - have), 64)
            which = rng.choice(len(self.boxes), size=m, p=probs)
            cand = np.empty((m, self.dimension))
            for k, b in enumerate(self.boxes):
                sel = which == k
                cand[sel] = b.sample(int(sel.sum()), rng)
            # boxes may overlap: thin by multiplicity so the union is sampled uniformly
            mult = self.membership(cand).sum(axis=1)
            keep = rng.uniform(size=m) * mult <= 1.0
            if margin > 0:
                keep &= self.shrunk_contains(cand, margin)
            proposed += m
            out.append(cand[keep])
            have += int(keep.sum())
            if have == 0 and proposed >= 100_000:
                raise ConfigError(f"shrinking by {margin} empties the region")
        return np.concatenate(out)[:n]


@dataclass(frozen=True)
class ToyDoseSpec:
    """Sixteen-voxel stand-in for a radiotherapy dose distribution.

    Constraints, with ``P`` the tumor prescription:

    1. ``order_statistic(x[tumor], 0.05) >= 0.9 P`` (at least 95% of tumor voxels
       receive 0.9 P or more)
    2. ``order_statistic(x[tumor], 0.99) <= 1.2 P``
    3. ``max(x[urethra]) <= 0.9 P``
    4. ``max(x[bladder]) <= 1.1 P``
    """

    n_voxels: int = 16
    tumor_idx: tuple = (0, 1, 2, 3, 4, 5, 6, 7)
    urethra_idx: tuple = (8, 9)
    bladder_idx: tuple = (10, 11, 12)
    prescription: float = 1.0
    low_quantile: float = 0.05
    low_fraction: float = 0.9
    high_quantile: float = 0.99
    high_fraction: float = 1.2
    urethra_fraction: float = 0.9
    bladder_fraction: float = 1.1

    def __post_init__(self):
        sets = [set(self.tumor_idx), set(self.urethra_idx), set(self.bladder_idx)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise ConfigError("tumor/urethra/bladder index sets overlap")
        if any(i < 0 or i >= self.n_voxels for s in sets for i in s):
            raise ConfigError("voxel index out of range")
        if not self.tumor_idx:
            raise ConfigError("tumor index set is empty")
        if self.prescription <= 0:
            raise ConfigError("prescription must be positive")

    @property
    def other_idx(self) -> tuple:
        used = set(self.tumor_idx) | set(self.urethra_idx) | set(self.bladder_idx)
        return tuple(i for i in range(self.n_voxels) if i not in used)

    @property
    def urethra_limit(self) -> float:
        return self.urethra_fraction * self.prescription

    @property
    def bladder_limit(self) -> float:
        return self.bladder_fraction * self.prescription

    def upper_bounds(self) -> np.ndarray:
        """Per-voxel upper bound of the feasible set's bounding box."""
        P = self.prescription
        ub = np.full(self.n_voxels, self.high_fraction * P)
        ub[list(self.urethra_idx)] = self.urethra_limit
        ub[list(self.bladder_idx)] = self.bladder_limit
        return ub


@dataclass(frozen=True)
class DoseReport:
    tumor_low: bool
    tumor_high: bool
    urethra_max: bool
    bladder_max: bool

    @property
    def all_ok(self) -> bool:
        return self.tumor_low and self.tumor_high and self.urethra_max and self.bladder_max


def toy_dose_feasible(spec: ToyDoseSpec, x) -> DoseReport:
    """Evaluate constraints (1)-(4) for one dose vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != spec.n_voxels:
        raise ShapeError(f"dose vector has {x.shape[0]} voxels, expected {spec.n_voxels}")
    if np.any(x < 0):
        raise DomainError("dose entries must be non-negative")
    P = spec.prescription
    tumor = x[list(spec.tumor_idx)]
    ureth = x[list(spec.urethra_idx)]
    blad = x[list(spec.bladder_idx)]
    return DoseReport(
        tumor_low=bool(order_statistic(tumor, spec.low_quantile) >= spec.low_fraction * P),
        tumor_high=bool(order_statistic(tumor, spec.high_quantile) <= spec.high_fraction * P),
        urethra_max=bool(ureth.size == 0 or ureth.max() <= spec.urethra_limit),
        bladder_max=bool(blad.size == 0 or blad.max() <= spec.bladder_limit),
    )


def _batch_order_statistic(v: np.ndarray, alpha: float) -> np.ndarray:
    k = max(1, math.ceil(alpha * v.shape[1] - 1e-9))
    return np.sort(v, axis=1)[:, k - 1]


class ToyDoseRegion:
    """Feasible set of the toy dose problem (see :class:`ToyDoseSpec`)."""

    kind = "toy_dose"
    n_components = 1

    def __init__(self, spec: ToyDoseSpec | None = None):
        self.spec = spec or ToyDoseSpec()
        self.dimension = self.spec.n_voxels
        self.bounding_box = Box((0.0,) * self.dimension, tuple(self.spec.upper_bounds()))

    def __repr__(self):
        return f"ToyDoseRegion({self.spec})"

    def describe(self) -> dict:
        from dataclasses import asdict

        return {"kind": self.kind, **{k: list(v) if isinstance(v, tuple) else v
                                      for k, v in asdict(self.spec).items()}}

    def constraint_flags(self, x) -> np.ndarray:
        """Boolean ``(n, 4)`` matrix of constraints (1)-(4); vectorised, no domain check."""
        pts = as_batch(x)
        if pts.shape[1] != self.dimension:
            raise ShapeError(f"points have dimension {pts.shape[1]}, region has {self.dimension}")
        s, P = self.spec, self.spec.prescription
        tumor = pts[:, list(s.tumor_idx)]
        flags = np.ones((len(pts), 4), dtype=bool)
        flags[:, 0] = _batch_order_statistic(tumor, s.low_quantile) >= s.low_fraction * P
        flags[:, 1] = _batch_order_statistic(tumor, s.high_quantile) <= s.high_fraction * P
        if s.urethra_idx:
            flags[:, 2] = pts[:, list(s.urethra_idx)].max(axis=1) <= s.urethra_limit
        if s.bladder_idx:
            flags[:, 3] = pts[:, list(s.bladder_idx)].max(axis=1) <= s.bladder_limit
        return flags

    def contains(self, x):
        """All four constraints hold and no dose is negative."""
        pts = as_batch(x)
        ok = self.constraint_flags(pts).all(axis=1) & np.all(pts >= 0, axis=1)
        return bool(ok[0]) if np.ndim(x) == 1 else ok

    def component_of(self, x) -> np.ndarray:
        return np.where(self.contains(as_batch(x)), 0, -1)

    def shrunk_contains(self, x, margin: float) -> np.ndarray:
        pts = as_batch(x)
        s, P = self.spec, self.spec.prescription
        # tighten each bound by the margin
        ok = self.contains(pts) & np.all(pts >= margin, axis=1)
        tumor = pts[:, list(s.tumor_idx)]
        ok &= _batch_order_statistic(tumor, s.low_quantile) >= s.low_fraction * P + margin
        ok &= _batch_order_statistic(tumor, s.high_quantile) <= s.high_fraction * P - margin
        if s.urethra_idx:
            ok &= pts[:, list(s.urethra_idx)].max(axis=1) <= s.urethra_limit - margin
        if s.bladder_idx:
            ok &= pts[:, list(s.bladder_idx)].max(axis=1) <= s.bladder_limit - margin
        return ok

    def sample_uniform(self, n: int, rng, margin: float = 0.0) -> np.ndarray:
        """Tumor voxels uniform in ``[0.9P + m, 1.2P - m]``, organ voxels uniform in
        ``[m, limit - m]``, the rest uniform in ``[m, 1.2P - m]``; then rejected on
        the full constraint report. (``m`` also erodes the ``x >= 0`` bound.)"""
        rng = make_rng(rng)
        s, P = self.spec, self.spec.prescription
        lo = np.full(self.dimension, float(margin))
        hi = np.full(self.dimension, s.high_fraction * P - margin)
        lo[list(s.tumor_idx)] = s.low_fraction * P + margin
        hi[list(s.tumor_idx)] = s.high_fraction * P - margin
        hi[list(s.urethra_idx)] = s.urethra_limit - margin
        hi[list(s.bladder_idx)] = s.bladder_limit - margin
        if np.any(hi < lo):
            raise ConfigError(f"shrinking by {margin} empties the dose region")
        out, have, proposed = [], 0, 0
        while have < n:
            m = max(2 * (n - have), 64)
            cand = rng.uniform(lo, hi, size=(m, self.dimension))
            keep = self.contains(cand)
            out.append(cand[keep])
            have += int(keep.sum())
            proposed += m
            if have == 0 and proposed >= 100_000:
                raise ConfigError("dose sampler accepted no proposals")
        return np.concatenate(out)[:n]


Region = BoxUnion | ToyDoseRegion


def l_shape() -> BoxUnion:
    """The non-convex benchmark set
    ``{-1<=x1<=17, 9<=x2<=17} or {9<=x1<=17, -1<=x2<=9}``."""
    return BoxUnion([Box((-1.0, 9.0), (17.0, 17.0)), Box((9.0, -1.0), (17.0, 9.0))])


@dataclass
class SamplerConfig:
    """Training-set construction.

    Attributes:
        shrink_margin: feasible draws come from the region eroded by this much.
        noise_std: isotropic Gaussian blur added to feasible draws.
        infeasible_pad: infeasible proposals come from the bounding box padded by
            this much on every side.
        boundary_fraction: share of the infeasible set drawn near the boundary
            instead, by blurring uniform feasible draws with ``boundary_std``
            Gaussian noise and keeping the draws that leave the region.
        axis_fraction: share drawn by moving a random subset of the coordinates
            of a uniform feasible draw (subset size uniform on 1..d) by
            independent ``U(-infeasible_pad, infeasible_pad)`` offsets. In high
            dimension these few-constraint violations are what the padded box
            almost never produces.
        n_feasible, n_infeasible: dataset sizes.
    """

    shrink_margin: float = 0.5
    noise_std: float = 0.25
    infeasible_pad: float = 2.0
    n_feasible: int = 5000
    n_infeasible: int = 5000
    boundary_fraction: float = 0.0
    boundary_std: float = 0.1
    axis_fraction: float = 0.0

    def __post_init__(self):
        if self.shrink_margin < 0:
            raise ConfigError("shrink_margin must be >= 0")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.infeasible_pad <= 0:
            raise ConfigError("infeasible_pad must be > 0")
        for name in ("boundary_fraction", "axis_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.boundary_fraction + self.axis_fraction > 1.0:
            raise ConfigError("boundary_fraction + axis_fraction must not exceed 1")
        if self.boundary_std <= 0:
            raise ConfigError("boundary_std must be > 0")
        if self.n_feasible < 1 or self.n_infeasible < 0:
            raise ConfigError("sample counts must be positive")


def sample_feasible(region, cfg: SamplerConfig, rng) -> np.ndarray:
    """Uniform draws from the shrunk region plus Gaussian noise (``n_feasible`` rows).

    Dose vectors are clipped at zero after the noise is added.
    """
    rng = make_rng(rng)
    pts = region.sample_uniform(cfg.n_feasible, rng, margin=cfg.shrink_margin)
    if cfg.noise_std > 0:
        pts = pts + rng.normal(0.0, cfg.noise_std, size=pts.shape)
    if isinstance(region, ToyDoseRegion):
        pts = np.maximum(pts, 0.0)
    return pts


def infeasible_box(region, pad: float) -> Box:
    """Proposal box for infeasible samples: the bounding box padded on every side.
    For dose regions the lower pad produces negative (physically impossible) doses,
    which the discriminator must learn to reject as well."""
    return region.bounding_box.inflate(pad)


def _reject_feasible(region, propose, n: int, what: str) -> np.ndarray:
    out, have, proposed = [np.empty((0, region.dimension))], 0, 0
    while have < n:
        m = max(2 * (n - have), 1024)
        cand = propose(m)
        keep = ~np.asarray(region.contains(cand), dtype=bool)
        out.append(cand[keep])
        have += int(keep.sum())
        proposed += m
        if proposed >= 100_000 and have < 0.01 * proposed:
            raise ConfigError(f"infeasible acceptance rate {have / proposed:.4f} below 1%; enlarge {what}")
    return np.concatenate(out)[:n]


def sample_infeasible(region, cfg: SamplerConfig, rng, n: int | None = None) -> np.ndarray:
    """Rejection-sample infeasible points: from the padded bounding box, plus a
    ``boundary_fraction`` share of blurred feasible draws and an ``axis_fraction``
    share of feasible draws with a few coordinates moved, all kept only if they
    left the region."""
    rng = make_rng(rng)
    n = cfg.n_infeasible if n is None else n
    if n == 0:
        return np.empty((0, region.dimension))
    n_near = int(round(cfg.boundary_fraction * n))
    n_axis = int(round(cfg.axis_fraction * n))
    box = infeasible_box(region, cfg.infeasible_pad)
    parts = [_reject_feasible(region, lambda m: box.sample(m, rng), n - n_near - n_axis,
                              "infeasible_pad")]
    if n_near:
        def near(m):
            base = region.sample_uniform(m, rng)
            return base + rng.normal(0.0, cfg.boundary_std, size=base.shape)
        parts.append(_reject_feasible(region, near, n_near, "boundary_std"))
    if n_axis:
        def axis(m):
            base = region.sample_uniform(m, rng)
            d = region.dimension
            k = rng.integers(1, d + 1, size=(m, 1))
            moved = rng.random((m, d)).argsort(axis=1) < k  # k distinct coordinates per row
            return base + moved * rng.uniform(-cfg.infeasible_pad, cfg.infeasible_pad, size=(m, d))
        parts.append(_reject_feasible(region, axis, n_axis, "infeasible_pad"))
    return np.concatenate(parts)


def region_from_config(spec: dict):
    """Build a region from its config mapping (``kind: boxes`` / ``kind: toy_dose``)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "l_shape":
        if spec:
            raise ConfigError(f"unknown keys for l_shape region: {sorted(spec)}")
        return l_shape()
    if kind == "boxes":
        boxes = spec.pop("boxes", None)
        if spec:
            raise ConfigError(f"unknown keys for boxes region: {sorted(spec)}")
        if not boxes:
            raise ConfigError("boxes region needs a 'boxes' list")
        return BoxUnion([Box(tuple(lo), tuple(hi)) for lo, hi in boxes])
    if kind == "toy_dose":
        allowed = set(ToyDoseSpec.__dataclass_fields__)
        unknown = set(spec) - allowed
        if unknown:
            raise ConfigError(f"unknown keys for toy_dose region: {sorted(unknown)}")
        spec = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.items()}
        return ToyDoseRegion(ToyDoseSpec(**spec))
    raise ConfigError(f"unknown region kind {kind!r}")
