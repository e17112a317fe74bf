import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipman.errors import ConfigError, DomainError, ShapeError
from ipman.regions import (
    Box, BoxUnion, SamplerConfig, ToyDoseRegion, ToyDoseSpec, infeasible_box, l_shape,
    order_statistic, region_from_config, sample_feasible, sample_infeasible, toy_dose_feasible,
)

L = l_shape()


@pytest.mark.parametrize("pt, inside", [
    ((-1, 9), True), ((17, 17), True), ((9, -1), True), ((9, 9), True),
    ((0, 0), False), ((8.999, 8.999), False), ((-1.001, 12), False), ((17, 17.0001), False),
    ((5, 13), True), ((13, 4), True),
])
def test_l_shape_membership(pt, inside):
    assert L.contains(np.array(pt, float)) is inside


def test_contains_batch_and_components():
    pts = np.array([[5, 13], [13, 4], [12, 12], [0, 0]], float)
    np.testing.assert_array_equal(L.contains(pts), [True, True, True, False])
    comp = L.component_of(pts)
    assert comp[0] == 0 and comp[1] == 1 and comp[3] == -1


def test_membership_dimension_check():
    with pytest.raises(ShapeError):
        L.contains(np.zeros((2, 3)))


@given(st.floats(-5, 22), st.floats(-5, 22))
@settings(max_examples=300, deadline=None)
def test_l_shape_matches_explicit_inequalities(x1, x2):
    ref = (-1 <= x1 <= 17 and 9 <= x2 <= 17) or (9 <= x1 <= 17 and -1 <= x2 <= 9)
    assert L.contains(np.array([x1, x2])) is ref


def test_shrunk_region_is_an_erosion():
    m = 0.5
    pts = np.array([[-0.5, 12], [-0.6, 12], [9.5, 5], [9.4, 5], [5, 9.5], [16.5, 16.5], [9, 9], [9.5, 9.5]], float)
    np.testing.assert_array_equal(L.shrunk_contains(pts, m), [True, False, True, False, True, True, False, True])


@given(st.floats(-2, 18), st.floats(-2, 18), st.floats(0.05, 1.5))
@settings(max_examples=200, deadline=None)
def test_shrunk_points_have_their_whole_cube_inside(x1, x2, m):
    if L.shrunk_contains(np.array([x1, x2]), m)[0]:
        corners = np.array([[x1 + a * m, x2 + b * m] for a in (-1, 1) for b in (-1, 1)])
        assert np.all(L.contains(corners))


def test_uniform_sampler_covers_both_arms_proportionally():
    pts = L.sample_uniform(20000, 0)
    assert np.all(L.contains(pts))
    comp = L.component_of(pts)
    # upper arm area 18*8 = 144, lower-right arm 8*10 = 80 (shared edge has no area)
    assert np.mean(comp == 0) == pytest.approx(144 / 224, abs=0.02)


def test_feasible_sampler_reproducible_and_mostly_inside():
    cfg = SamplerConfig(shrink_margin=0.5, noise_std=0.25, n_feasible=4000)
    a = sample_feasible(L, cfg, 3)
    b = sample_feasible(L, cfg, 3)
    assert np.array_equal(a, b)
    assert np.mean(L.contains(a)) > 0.95


def test_infeasible_sampler_invariants():
    cfg = SamplerConfig(n_infeasible=3000)
    pts = sample_infeasible(L, cfg, 0)
    assert len(pts) == 3000
    assert not np.any(L.contains(pts))
    corner = (pts[:, 0] < 9) & (pts[:, 1] < 9) & (pts[:, 0] > -1) & (pts[:, 1] > -1)
    assert corner.any()
    assert np.array_equal(pts, sample_infeasible(L, cfg, 0))


def test_infeasible_sampler_reports_low_acceptance():
    full = BoxUnion([Box((0, 0), (1, 1))])
    with pytest.raises(ConfigError):
        sample_infeasible(full, SamplerConfig(infeasible_pad=1e-4, n_infeasible=100), 0)


def test_box_union_validation():
    with pytest.raises(ConfigError):
        BoxUnion([])
    with pytest.raises(ShapeError):
        BoxUnion([Box((0, 0), (1, 1)), Box((0, 0, 0), (1, 1, 1))])
    with pytest.raises((ConfigError, ValueError)):
        Box((1, 0), (0, 1))


def test_region_from_config():
    assert region_from_config({"kind": "l_shape"}).describe() == L.describe()
    r = region_from_config({"kind": "boxes", "boxes": [[[0, 0], [1, 1]]]})
    assert r.contains(np.array([0.5, 0.5]))
    with pytest.raises(ConfigError):
        region_from_config({"kind": "l_shape", "extra": 1})
    with pytest.raises(ConfigError):
        region_from_config({"kind": "torus"})


def test_order_statistic_rule():
    v = np.arange(1, 21, dtype=float)  # 20 values
    assert order_statistic(v, 0.9) == 18.0    # ceil(0.9 * 20) = 18
    assert order_statistic(v, 0.05) == 1.0    # ceil(1.0) = 1
    assert order_statistic(v[::-1], 0.5) == 10.0
    assert order_statistic(np.array([7.0]), 0.99) == 7.0


# -- dose region ------------------------------------------------------------


def dose(tumor=1.0, urethra=0.0, bladder=0.0, other=0.0):
    x = np.full(16, other)
    x[:8] = tumor
    x[8:10] = urethra
    x[10:13] = bladder
    return x


def test_dose_constraints():
    spec = ToyDoseSpec()
    assert toy_dose_feasible(spec, dose()).all_ok
    r = toy_dose_feasible(spec, dose(tumor=0.85))
    assert not r.tumor_low and r.tumor_high
    assert not toy_dose_feasible(spec, dose(tumor=1.25)).tumor_high
    assert not toy_dose_feasible(spec, dose(urethra=0.95)).urethra_max
    assert toy_dose_feasible(spec, dose(bladder=1.05)).bladder_max
    assert not toy_dose_feasible(spec, dose(bladder=1.15)).bladder_max


def test_dose_tumor_quantiles_with_eight_voxels():
    # with 8 tumor voxels, ceil(0.05 * 8) = 1: the coldest voxel decides coverage
    x = dose()
    x[0] = 0.89
    assert not ToyDoseRegion().contains(x)
    x[0] = 0.9
    assert ToyDoseRegion().contains(x)


def test_negative_dose_is_domain_error():
    with pytest.raises(DomainError):
        toy_dose_feasible(ToyDoseSpec(), dose(other=-0.1))
    assert not ToyDoseRegion().contains(dose(other=-0.1))


def test_dose_sampler_and_infeasible_box():
    r = ToyDoseRegion()
    pts = r.sample_uniform(500, 0, margin=0.02)
    assert np.all(r.shrunk_contains(pts, 0.02))
    box = infeasible_box(r, 0.5)
    assert np.all(np.asarray(box.lower) == -0.5)
    bad = sample_infeasible(r, SamplerConfig(infeasible_pad=0.5, n_infeasible=500), 1)
    assert not np.any(r.contains(bad))


def test_dose_spec_validation():
    with pytest.raises(ConfigError):
        ToyDoseSpec(urethra_idx=(0, 8))
    with pytest.raises(ConfigError):
        ToyDoseSpec(bladder_idx=(16,))


def test_boundary_infeasible_samples_stay_close():
    cfg = SamplerConfig(n_infeasible=1000, boundary_fraction=1.0, boundary_std=0.1)
    pts = sample_infeasible(L, cfg, 0)
    assert len(pts) == 1000 and not np.any(L.contains(pts))
    # every point is within a few noise widths of the feasible set
    assert np.all(L.shrunk_contains(pts, 0.0) == False)  # noqa: E712
    near = L.bounding_box.inflate(0.6).contains(pts)
    assert np.all(near)
    mixed = sample_infeasible(L, SamplerConfig(n_infeasible=1000, boundary_fraction=0.3), 0)
    assert len(mixed) == 1000


def test_axis_infeasible_samples_move_few_coordinates():
    r = ToyDoseRegion()
    cfg = SamplerConfig(n_infeasible=2000, axis_fraction=1.0, infeasible_pad=0.5)
    pts = sample_infeasible(r, cfg, 0)
    assert len(pts) == 2000 and not np.any(r.contains(pts))
    box = r.bounding_box
    outside = ((pts < np.array(box.lower)) | (pts > np.array(box.upper))).sum(axis=1)
    assert np.any(outside == 1) and np.any(outside >= 4)
    assert np.all(pts >= -0.5) and np.all(pts <= np.array(box.upper) + 0.5)
    with pytest.raises(ConfigError):
        SamplerConfig(boundary_fraction=0.6, axis_fraction=0.6)
