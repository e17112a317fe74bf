"""Stage 2: the discriminator as a barrier, and generator retraining.

With the discriminator frozen, ``B(x) = -log D(x)`` is finite on the feasible
set and large outside it. The generator is retrained to minimise
``E_z[f(G(z)) + lam * B(G(z))]`` while ``lam`` grows geometrically, which
drives the generated distribution onto the minimisers of ``f`` over the learned
feasible set. :func:`compute_certificate` turns the result into an
epsilon-optimality statement ``f(x~) - eps <= f(x*) <= f(x~)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, ConfigError, TrainingError
from .gan import GanModel, coverage_report
from .nn import CLAMP, Adam, as_batch, make_rng

log = logging.getLogger(__name__)


class Barrier:
    """``B(x) = -log D(x)`` over a private snapshot of a discriminator."""

    def __init__(self, model: GanModel, clamp: float = CLAMP):
        self._disc = model.discriminator.copy()
        self._center = model.center.copy()
        self._scale = model.scale.copy()
        self.clamp = clamp

    def score(self, x) -> np.ndarray:
        u = (as_batch(x) - self._center) / self._scale
        return np.clip(self._disc.predict(u)[:, 0], self.clamp, 1.0 - self.clamp)

    def value(self, x) -> np.ndarray:
        return -np.log(self.score(x))

    def __call__(self, x):
        v = self.value(x)
        return float(v[0]) if np.ndim(x) == 1 else v

    def value_and_grad(self, x):
        """Barrier values and their gradient with respect to ``x`` (not thread-safe:
        uses the snapshot's backward cache)."""
        u = (as_batch(x) - self._center) / self._scale
        d = np.clip(self._disc.forward(u), self.clamp, 1.0 - self.clamp)
        grad_u = self._disc.backward(-1.0 / d)
        return -np.log(d[:, 0]), grad_u / self._scale


def barrier_value(b: Barrier, x):
    return b(x)


def modified_objective(f, b: Barrier, lam: float, delta: float, x):
    """``f(x) + lam * (delta + B(x))``; training uses ``delta = 0``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    v = f.value(x) + lam * (delta + b.value(x))
    return float(v[0]) if np.ndim(x) == 1 else v


@dataclass
class BarrierConfig:
    """Stage-2 schedule: ``lam_i = lambda0 * mu**i`` for outer iteration ``i``.

    ``mu == 1`` is accepted here (a constant schedule, useful for testing);
    full experiment configs require ``mu > 1``.
    """

    lambda0: float = 0.05
    mu: float = 1.01
    outer_iterations: int = 100
    inner_steps: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    window: int = 5
    tolerance: float = 1e-3
    min_outer_iterations: int = 0
    coverage_samples: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.lambda0 <= 0:
            raise ConfigError("lambda0 must be > 0")
        if self.mu < 1:
            raise ConfigError("mu must be >= 1")
        if self.outer_iterations < 0 or self.inner_steps < 0:
            raise ConfigError("iteration counts must be >= 0")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("batch_size and learning_rate must be positive")


@dataclass
class Stage2Log:
    outer_iter: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    mean_f: list = field(default_factory=list)
    mean_B: list = field(default_factory=list)
    coverage: list = field(default_factory=list)
    converged: bool = False
    warnings: list = field(default_factory=list)

    def rows(self):
        for i in range(len(self.outer_iter)):
            yield {
                "outer_iter": self.outer_iter[i],
                "lambda": self.lam[i],
                "mean_f": self.mean_f[i],
                "mean_B": self.mean_B[i],
                "coverage": self.coverage[i],
            }

    def tail(self, n=5) -> list:
        return list(self.rows())[-n:]


def _converged(mean_f, window, tol) -> bool:
    if len(mean_f) < 2 * window:
        return False
    prev = float(np.mean(mean_f[-2 * window:-window]))
    last = float(np.mean(mean_f[-window:]))
    # relative improvement, with a unit floor so objectives near zero still settle
    return (prev - last) / max(abs(prev), 1.0) < tol


def train_stage2(model: GanModel, f, cfg: BarrierConfig, rng=None, region=None):
    """Retrain the generator against ``f + lam * B`` with the discriminator frozen.

    Latent draws are resampled at every inner step. After each outer iteration
    the mean ``f`` and mean ``B`` over that iteration's minibatches are logged
    (plus generator coverage of ``region`` when given), then ``lam *= mu``.
    Stops once the windowed mean of ``f`` improves by less than
    ``cfg.tolerance`` (relative) or after ``cfg.outer_iterations``.

    Returns:
        ``(GanModel, Stage2Log)`` -- a new model holding the retrained generator and
        an untouched copy of the discriminator; ``model`` itself is not modified.
    """
    rng = make_rng(cfg.seed if rng is None else rng)
    out_model = model.copy()
    gen = out_model.generator
    barrier = Barrier(out_model)
    opt = Adam(gen.params, cfg.learning_rate, cfg.beta1, cfg.beta2)
    trace = Stage2Log()
    lam = cfg.lambda0
    scale = out_model.scale
    for i in range(cfg.outer_iterations):
        fs, bs = [], []
        for _ in range(cfg.inner_steps):
            z = rng.standard_normal((cfg.batch_size, out_model.latent_dim))
            x = out_model.denormalize(gen.forward(z))
            fx = f.value(x)
            bx, gb = barrier.value_and_grad(x)
            if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(bx))):
                raise TrainingError("stage-2 loss is not finite", i)
            grad_x = (f.grad(x) + lam * gb) / cfg.batch_size
            gen.backward(grad_x * scale)
            opt.step(gen.grads)
            fs.append(fx.mean())
            bs.append(bx.mean())
        if cfg.inner_steps == 0:
            x = out_model.generate(cfg.batch_size, rng)
            fs.append(f.value(x).mean())
            bs.append(barrier.value(x).mean())
        cov = float("nan")
        if region is not None:
            cov = coverage_report(out_model, region, cfg.coverage_samples, rng).fraction_feasible
            if cov < 0.1:
                msg = f"outer iteration {i}: generator coverage {cov:.3f} < 0.1"
                trace.warnings.append(msg)
                log.warning(msg)
        trace.outer_iter.append(i)
        trace.lam.append(lam)
        trace.mean_f.append(float(np.mean(fs)))
        trace.mean_B.append(float(np.mean(bs)))
        trace.coverage.append(cov)
        lam = cfg.lambda0 * cfg.mu ** (i + 1)
        if i + 1 >= cfg.min_outer_iterations and _converged(trace.mean_f, cfg.window, cfg.tolerance):
            trace.converged = True
            break
    return out_model, trace


@dataclass(frozen=True)
class Certificate:
    """Epsilon-optimality certificate for the best feasible generated sample.

    ``epsilon = lambda_tilde * (log D(x_tilde) - delta_tilde)``; if ``x_tilde``
    minimises ``f + lambda_tilde * (delta_tilde - log D)`` then
    ``f(x_tilde) - epsilon <= f(x*) <= f(x_tilde)``.
    """

    x_tilde: tuple
    f_tilde: float
    log_d_tilde: float
    lambda_tilde: float
    delta_tilde: float
    epsilon: float
    feasible_flag: bool

    def __post_init__(self):
        if not self.delta_tilde < self.log_d_tilde:
            raise CertificateError("delta_tilde must lie below log D(x_tilde)")
        if not self.lambda_tilde > 0:
            raise CertificateError("lambda_tilde must be positive")
        expected = self.lambda_tilde * (self.log_d_tilde - self.delta_tilde)
        if not np.isclose(self.epsilon, expected, rtol=1e-12, atol=0.0) or self.epsilon <= 0:
            raise CertificateError("epsilon is inconsistent with lambda_tilde and delta_tilde")

    @property
    def lower_bound(self) -> float:
        return self.f_tilde - self.epsilon

    def bounds_hold(self, f_star: float) -> bool:
        return self.lower_bound <= f_star <= self.f_tilde

    def to_dict(self) -> dict:
        return {
            "x_tilde": list(self.x_tilde),
            "f_tilde": self.f_tilde,
            "log_d_tilde": self.log_d_tilde,
            "lambda_tilde": self.lambda_tilde,
            "delta_tilde": self.delta_tilde,
            "epsilon": self.epsilon,
            "feasible_flag": self.feasible_flag,
        }


#: Cap ``M`` on the certification shift; far below ``log(CLAMP) ~ -16.1``.
DELTA_CAP = -20.0


def certificate_for_point(x, f, barrier: Barrier, region, lam=None, epsilon=None,
                          delta_cap=DELTA_CAP) -> Certificate:
    """Certificate for a given point. Exactly one of ``lam`` (the barrier weight
    the point was trained under) or ``epsilon`` (a target gap) must be given."""
    if (lam is None) == (epsilon is None):
        raise ValueError("give exactly one of lam or epsilon")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if not region.contains(x):
        raise CertificateError(f"x_tilde={x.tolist()} is infeasible; certificate refused")
    log_d = float(np.log(barrier.score(x)[0]))
    delta = min(log_d, delta_cap)
    if delta >= log_d:
        delta = log_d - 1.0
    if epsilon is not None:
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        lam = -epsilon / (delta - log_d)
    eps = lam * (log_d - delta)
    return Certificate(tuple(x.tolist()), float(f.value(x)[0]), log_d, float(lam), delta, float(eps), True)


def compute_certificate(model: GanModel, f, region, n_samples: int, rng=0, lam=None,
                        epsilon=None, delta_cap=DELTA_CAP) -> Certificate:
    """Draw ``n_samples`` generator outputs, take the feasible one with the lowest
    ``f`` as ``x_tilde`` and certify it.

    With ``lam`` (normally the final stage-2 barrier weight) the gap follows as
    ``epsilon = lam * (log D(x_tilde) - delta_tilde)``; with ``epsilon`` the weight
    follows as ``lambda_tilde = -epsilon / (delta_tilde - log D(x_tilde))``.
    ``delta_tilde = min(log D(x_tilde), delta_cap)``.
    """
    pts = model.generate(n_samples, make_rng(rng))
    ok = np.asarray(region.contains(pts), dtype=bool)
    if not ok.any():
        raise CertificateError(f"none of {n_samples} generated samples is feasible")
    cand = pts[ok]
    best = cand[int(np.argmin(f.value(cand)))]
    return certificate_for_point(best, f, Barrier(model), region, lam=lam, epsilon=epsilon,
                                 delta_cap=delta_cap)
