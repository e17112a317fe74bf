"""Data-driven constrained optimisation with a GAN discriminator as the barrier.

Stage 1 trains a GAN on feasible samples; stage 2 freezes the discriminator,
uses ``-log D`` as a barrier and retrains the generator so that it emits
(near-)optimal feasible points.
"""
from .barrier import Barrier, BarrierConfig, Certificate, compute_certificate, train_stage2
from .errors import (
    CertificateError, ConfigError, DependencyError, DomainError, IpmanError, ShapeError,
    StageError, StateError, TrainingError,
)
from .gan import GanConfig, GanModel, coverage_report, discriminator_auc, train_stage1
from .metrics import SampleSet, delta_f, delta_x, grid_optimize, metrics_report, var_alpha
from .objectives import (
    Objective, OptimalSet, make_bilinear, make_linear, make_quadratic, make_rosenbrock, make_toy_dose,
)
from .regions import (
    Box, BoxUnion, SamplerConfig, ToyDoseRegion, ToyDoseSpec, l_shape, sample_feasible,
    sample_infeasible,
)

__version__ = "0.1.0"

__all__ = [
    "Barrier", "BarrierConfig", "Box", "BoxUnion", "Certificate", "CertificateError", "ConfigError",
    "DependencyError", "DomainError", "GanConfig", "GanModel", "IpmanError", "Objective", "OptimalSet",
    "SampleSet", "SamplerConfig", "ShapeError", "StageError", "StateError", "ToyDoseRegion",
    "ToyDoseSpec", "TrainingError", "compute_certificate", "coverage_report", "delta_f", "delta_x",
    "discriminator_auc", "grid_optimize", "l_shape", "make_bilinear", "make_linear", "make_quadratic",
    "make_rosenbrock", "make_toy_dose", "metrics_report", "sample_feasible", "sample_infeasible",
    "train_stage1", "train_stage2", "var_alpha",
]
