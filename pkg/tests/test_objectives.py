import numpy as np
import pytest

from ipman.errors import ConfigError, ShapeError
from ipman.objectives import (
    SYNTHETIC, OptimalSet, grad_check, make_bilinear, make_linear, make_quadratic, make_rosenbrock,
    make_toy_dose, objective_from_config,
)
from ipman.regions import Box, ToyDoseRegion


@pytest.mark.parametrize("name", sorted(SYNTHETIC))
def test_synthetic_gradients_match_finite_differences(name):
    assert grad_check(SYNTHETIC[name](), n_trials=50, rng=1) <= 1e-4


def test_dose_gradient_matches_finite_differences_away_from_kink():
    f = make_toy_dose()
    assert grad_check(f, n_trials=50, rng=2, box=Box(tuple([0.1] * 16), tuple([1.1] * 16))) <= 1e-4


def test_known_values():
    assert make_linear()(np.array([-1.0, 12.0])) == -1.0
    assert make_quadratic()(np.array([5.0, 11.0])) == 0.0
    assert make_quadratic()(np.array([6.0, 13.0])) == 5.0
    b = make_bilinear()
    assert b(np.array([-1.0, 17.0])) == -81.0
    assert b(np.array([17.0, -1.0])) == -81.0
    r = make_rosenbrock()
    assert r(np.array([3.5, 12.25])) == 0.0
    assert r(np.array([0.0, 0.0])) == pytest.approx(12.25)


def test_optimal_sets_are_declared():
    assert make_linear().optimal_set.kind == "segment"
    assert make_bilinear().optimal_set.points == ((-1.0, 17.0), (17.0, -1.0))
    assert make_rosenbrock().optimal_set.optimal_value == 0.0


def test_segment_distance():
    s = OptimalSet.segment((-1, 9), (-1, 17), -1)
    d = s.distance(np.array([[-1, 12], [0, 12], [-1, 18], [2, 5]], float))
    np.testing.assert_allclose(d, [0.0, 1.0, 1.0, 5.0])


def test_point_set_distance_is_nearest_point():
    s = OptimalSet.from_points([(0, 0), (10, 0)], 0)
    np.testing.assert_allclose(s.distance(np.array([[1, 0], [9, 0], [5, 3]], float)),
                               [1.0, 1.0, np.hypot(5, 3)])


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        make_linear().value(np.zeros((3, 3)))


def test_toy_dose_objective():
    f = make_toy_dose()
    x_hat = np.zeros(16)
    x_hat[:8] = 1.0
    assert f(x_hat) == 0.0
    assert ToyDoseRegion().contains(x_hat)
    # subgradient at the kink is the linear part
    np.testing.assert_array_equal(f.grad(x_hat)[0], f.params["penalties"])
    y = x_hat.copy()
    y[8] = 0.5
    assert f(y) == pytest.approx(0.5 * 1.0 + 0.5)


def test_toy_dose_rejects_bad_penalties():
    with pytest.raises(ConfigError):
        make_toy_dose(penalties=np.ones(16))
    with pytest.raises(ShapeError):
        make_toy_dose(penalties=np.zeros(3))


def test_objective_from_config():
    assert objective_from_config("quadratic", {"center": [6, 12]})(np.array([6.0, 12.0])) == 0.0
    with pytest.raises(ConfigError):
        objective_from_config("cubic")
    with pytest.raises(ConfigError):
        objective_from_config("linear", {"slope": 2})
