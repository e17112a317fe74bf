"""Stage 1: learn the feasible set from samples with a GAN.

The discriminator learns to separate feasible data from generator output (and,
late in training, from known infeasible points); it later serves as the
barrier. The generator learns to cover the feasible set and is the starting
distribution for stage 2.

Both networks work in normalised coordinates ``u = (x - center) / scale``
fixed from the feasible data, so learning rates do not depend on the units of
the problem.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, ShapeError, TrainingError
from .nn import (
    CLAMP, IDENTITY, LEAKY_RELU, SIGMOID, Adam, Mlp, as_batch, bce_loss, load_checkpoint, make_rng,
    save_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass
class GanConfig:
    """Stage-1 hyperparameters.

    ``total_iterations`` counts generator updates; each is preceded by
    ``disc_updates_per_gen_update`` discriminator updates. From
    ``injection_start`` (a fraction of ``total_iterations``) on, a
    ``replace_fraction`` share of every fake minibatch is replaced by rows of the
    infeasible dataset.

    ``refine_steps`` further discriminator-only updates (learning rate
    ``lr_refine``) follow the adversarial phase with the generator frozen. In
    them a ``refine_replace_fraction`` share of each fake minibatch is drawn
    from the infeasible dataset; at 1.0 the discriminator becomes a plain
    feasibility classifier that saturates inside the set, which keeps the
    barrier flat there and steep at the boundary.
    """

    latent_dim: int = 8
    hidden_width: int = 64
    batch_size: int = 128
    total_iterations: int = 2000
    disc_updates_per_gen_update: int = 10
    injection_start: float = 0.5
    replace_fraction: float = 0.5
    lr_disc: float = 1e-4
    lr_gen: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    refine_steps: int = 0
    lr_refine: float = 1e-3
    refine_replace_fraction: float = 1.0
    slope: float = 0.2
    log_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.disc_updates_per_gen_update < 1:
            raise ConfigError("disc_updates_per_gen_update must be >= 1")
        for name in ("replace_fraction", "refine_replace_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.injection_start <= 1.0:
            raise ConfigError("injection_start must lie in [0, 1]")
        if self.latent_dim < 1 or self.hidden_width < 1 or self.batch_size < 1:
            raise ConfigError("network sizes and batch size must be positive")
        if self.total_iterations < 0:
            raise ConfigError("total_iterations must be >= 0")
        if self.refine_steps < 0:
            raise ConfigError("refine_steps must be >= 0")
        if min(self.lr_disc, self.lr_gen, self.lr_refine) <= 0:
            raise ConfigError("learning rates must be positive")


@dataclass
class GanModel:
    generator: Mlp        # latent -> normalised point, identity output
    discriminator: Mlp    # normalised point -> (0, 1), sigmoid output
    center: np.ndarray
    scale: np.ndarray

    @property
    def latent_dim(self) -> int:
        return self.generator.input_dim

    @property
    def dimension(self) -> int:
        return self.generator.output_dim

    def normalize(self, x) -> np.ndarray:
        return (as_batch(x) - self.center) / self.scale

    def denormalize(self, u) -> np.ndarray:
        return self.center + self.scale * u

    def latent(self, n: int, rng) -> np.ndarray:
        return make_rng(rng).standard_normal((n, self.latent_dim))

    def generate(self, n: int, rng) -> np.ndarray:
        """``n`` generator samples in problem coordinates."""
        return self.denormalize(self.generator.predict(self.latent(n, rng)))

    def score(self, x) -> np.ndarray:
        """Discriminator output ``D(x)`` (clamped into ``(0, 1)``) for each row."""
        return np.clip(self.discriminator.predict(self.normalize(x))[:, 0], CLAMP, 1.0 - CLAMP)

    def copy(self) -> "GanModel":
        return GanModel(self.generator.copy(), self.discriminator.copy(),
                        self.center.copy(), self.scale.copy())

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta.update(center=self.center.tolist(), scale=self.scale.tolist())
        # json floats round-trip exactly, so center/scale are restored bit-for-bit
        return save_checkpoint(path, {"generator": self.generator, "discriminator": self.discriminator}, meta)

    @classmethod
    def load(cls, path) -> "GanModel":
        nets, meta = load_checkpoint(path)
        return cls(nets["generator"], nets["discriminator"],
                   np.asarray(meta["center"], dtype=np.float64), np.asarray(meta["scale"], dtype=np.float64))


def build_model(feasible, cfg: GanConfig, rng) -> GanModel:
    data = as_batch(feasible)
    lo, hi = data.min(axis=0), data.max(axis=0)
    center = (lo + hi) / 2.0
    scale = np.where(hi > lo, (hi - lo) / 2.0, 1.0)
    d = data.shape[1]
    h = cfg.hidden_width
    gen = Mlp.build([cfg.latent_dim, h, d], [LEAKY_RELU, IDENTITY], rng, cfg.slope)
    disc = Mlp.build([d, h, 1], [LEAKY_RELU, SIGMOID], rng, cfg.slope)
    return GanModel(gen, disc, center, scale)


@dataclass
class TrainingLog:
    """Per-iteration stage-1 record (one row per generator update)."""

    iteration: list = field(default_factory=list)
    disc_loss: list = field(default_factory=list)
    gen_loss: list = field(default_factory=list)
    injected: list = field(default_factory=list)
    refine_loss: list = field(default_factory=list)        # one entry per refinement step
    real_score_range: list = field(default_factory=list)   # (min, max) of D on real batch
    fake_score_range: list = field(default_factory=list)   # (min, max) of D on generated batch
    auc_snapshot: list = field(default_factory=list)       # NaN where not evaluated

    @property
    def injection_events(self) -> int:
        return int(sum(self.injected))

    def rows(self):
        for i in range(len(self.iteration)):
            yield {
                "iteration": self.iteration[i],
                "disc_loss": self.disc_loss[i],
                "gen_loss": self.gen_loss[i],
                "injected": int(self.injected[i]),
                "auc_snapshot": self.auc_snapshot[i],
            }


def discriminator_update(disc: Mlp, opt: Adam, real: np.ndarray, fake: np.ndarray) -> float:
    """One Adam step on ``BCE(D(real), 1) + BCE(D(fake), 0)`` (inputs normalised)."""
    batch = np.concatenate([real, fake])
    labels = np.concatenate([np.ones((len(real), 1)), np.zeros((len(fake), 1))])
    loss, grad = bce_loss(disc.forward(batch), labels)
    disc.backward(grad)
    opt.step(disc.grads)
    return loss


def train_stage1(feasible, infeasible, cfg: GanConfig, rng=None, auc_holdout=None):
    """Train a GAN on feasible samples.

    Args:
        feasible: ``(n, d)`` samples of the feasible distribution.
        infeasible: ``(m, d)`` points outside the feasible set, injected into
            the fake minibatches late in training. May be empty when
            ``replace_fraction == 0``.
        cfg: hyperparameters.
        rng: seed or generator; defaults to ``cfg.seed``.
        auc_holdout: optional ``(feasible, infeasible)`` pair scored every
            ``cfg.log_every`` iterations into ``TrainingLog.auc_snapshot``.

    Returns:
        ``(GanModel, TrainingLog)``.
    """
    rng = make_rng(cfg.seed if rng is None else rng)
    feasible = as_batch(feasible)
    if len(feasible) == 0:
        raise ConfigError("feasible dataset is empty")
    infeasible = np.empty((0, feasible.shape[1])) if infeasible is None else as_batch(infeasible)
    if cfg.replace_fraction > 0 and len(infeasible) == 0:
        raise ConfigError("infeasible dataset is empty but replace_fraction > 0")
    if len(infeasible) and infeasible.shape[1] != feasible.shape[1]:
        raise ShapeError("feasible and infeasible datasets differ in dimension")

    model = build_model(feasible, cfg, rng)
    real_u = model.normalize(feasible)
    bad_u = model.normalize(infeasible) if len(infeasible) else infeasible
    gen, disc = model.generator, model.discriminator
    adam = dict(beta1=cfg.beta1, beta2=cfg.beta2, epsilon_hat=cfg.epsilon_hat)
    opt_d = Adam(disc.params, cfg.lr_disc, **adam)
    opt_g = Adam(gen.params, cfg.lr_gen, **adam)

    bs = cfg.batch_size
    n_replace = int(round(cfg.replace_fraction * bs))
    start = int(np.ceil(cfg.injection_start * cfg.total_iterations))
    out = TrainingLog()

    for it in range(cfg.total_iterations):
        inject = n_replace > 0 and it >= start
        d_loss = 0.0
        real_rng = fake_rng = (1.0, 0.0)
        for _ in range(cfg.disc_updates_per_gen_update):
            real = real_u[rng.integers(0, len(real_u), bs)]
            fake = gen.predict(rng.standard_normal((bs, cfg.latent_dim)))
            if inject:
                fake[:n_replace] = bad_u[rng.integers(0, len(bad_u), n_replace)]
            d_loss = discriminator_update(disc, opt_d, real, fake)

        # non-saturating generator step: minimise -log D(G(z))
        z = rng.standard_normal((bs, cfg.latent_dim))
        u = gen.forward(z)
        scores = disc.forward(u)
        g_loss, grad = bce_loss(scores, 1.0)
        grad_u = disc.backward(grad)
        gen.backward(grad_u)
        opt_g.step(gen.grads)

        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise TrainingError("stage-1 loss is not finite", it)
        real_scores = disc.predict(real)
        out.iteration.append(it)
        out.disc_loss.append(d_loss)
        out.gen_loss.append(g_loss)
        out.injected.append(inject)
        out.real_score_range.append((float(real_scores.min()), float(real_scores.max())))
        out.fake_score_range.append((float(scores.min()), float(scores.max())))
        snap = float("nan")
        if auc_holdout is not None and (it % cfg.log_every == 0 or it == cfg.total_iterations - 1):
            snap = discriminator_auc(model, *auc_holdout)
        out.auc_snapshot.append(snap)
        if it % cfg.log_every == 0:
            log.debug("stage1 it=%d d_loss=%.4f g_loss=%.4f", it, d_loss, g_loss)

    if cfg.refine_steps:
        opt_r = Adam(disc.params, cfg.lr_refine, **adam)
        n_bad = int(round(cfg.refine_replace_fraction * bs)) if len(bad_u) else 0
        for step in range(cfg.refine_steps):
            real = real_u[rng.integers(0, len(real_u), bs)]
            fake = gen.predict(rng.standard_normal((bs - n_bad, cfg.latent_dim)))
            if n_bad:
                fake = np.concatenate([bad_u[rng.integers(0, len(bad_u), n_bad)], fake])
            loss = discriminator_update(disc, opt_r, real, fake)
            if not np.isfinite(loss):
                raise TrainingError("discriminator refinement loss is not finite", cfg.total_iterations + step)
            out.refine_loss.append(loss)
    return model, out


def discriminator_auc(model, held_out_feasible, held_out_infeasible) -> float:
    """Area under the ROC curve of discriminator scores (feasible = positive class).

    Mann-Whitney form with average ranks for ties. ``model`` may be a
    :class:`GanModel` or any callable returning one score per row.
    """
    score = model.score if hasattr(model, "score") else model
    pos = np.asarray(score(as_batch(held_out_feasible)), dtype=np.float64).reshape(-1)
    neg = np.asarray(score(as_batch(held_out_infeasible)), dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both held-out sets must be non-empty")
    ranks = rankdata(np.concatenate([pos, neg]))
    return float((ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size))


@dataclass(frozen=True)
class CoverageReport:
    fraction_feasible: float
    component_hits: tuple          # number of samples landing in each component
    n_samples: int

    @property
    def component_fractions(self) -> tuple:
        return tuple(h / self.n_samples for h in self.component_hits)

    @property
    def all_components_hit(self) -> bool:
        return all(h > 0 for h in self.component_hits)

    def good(self, threshold=0.8) -> bool:
        """The operational "good generator" test: enough feasible mass and every
        component reached."""
        return self.fraction_feasible >= threshold and self.all_components_hit

    def to_dict(self) -> dict:
        return {
            "fraction_feasible": self.fraction_feasible,
            "component_hits": list(self.component_hits),
            "n_samples": self.n_samples,
        }


def coverage_report(model, region, n_samples: int, rng=0) -> CoverageReport:
    """Share of generator samples inside ``region`` and hits per region component.

    ``model`` may be a :class:`GanModel` or a callable ``(n, rng) -> points``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    draw = model.generate if hasattr(model, "generate") else model
    pts = as_batch(draw(n_samples, make_rng(rng)))
    comp = region.component_of(pts)
    hits = tuple(int(np.sum(comp == k)) for k in range(region.n_components))
    return CoverageReport(float(np.mean(comp >= 0)), hits, n_samples)


def config_dict(cfg) -> dict:
    return asdict(cfg)
