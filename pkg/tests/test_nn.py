import numpy as np
import pytest

from ipman.errors import ShapeError, StateError
from ipman.nn import (
    CLAMP, IDENTITY, LEAKY_RELU, SIGMOID, Adam, Dense, Mlp, adam_step, bce_loss, load_checkpoint,
    save_checkpoint,
)
from ipman.objectives import central_difference, relative_error


def small_net(seed=0, out_act=SIGMOID):
    return Mlp.build([3, 7, 5, 1], [LEAKY_RELU, LEAKY_RELU, out_act], seed)


def scalar_loss(net, x, weights):
    return float(np.sum(net.predict(x) * weights))


def test_forward_shapes_and_range():
    net = small_net()
    out = net.forward(np.random.default_rng(1).normal(size=(11, 3)))
    assert out.shape == (11, 1)
    assert np.all((out > 0) & (out < 1))


def test_single_row_input_is_promoted():
    net = small_net()
    assert net.forward(np.zeros(3)).shape == (1, 1)


def test_wrong_width_rejected():
    with pytest.raises(ShapeError):
        small_net().forward(np.zeros((2, 4)))


def test_backward_before_forward_is_state_error():
    with pytest.raises(StateError):
        small_net().backward(np.ones((1, 1)))


def test_predict_does_not_touch_cache():
    net = small_net()
    x = np.ones((2, 3))
    net.forward(x)
    net.predict(np.zeros((5, 3)))
    g = net.backward(np.ones((2, 1)))
    assert g.shape == (2, 3)


def test_mismatched_layers_rejected():
    with pytest.raises(ShapeError):
        Mlp([Dense(np.zeros((2, 3)), np.zeros(3), IDENTITY), Dense(np.zeros((4, 1)), np.zeros(1), IDENTITY)])


@pytest.mark.parametrize("out_act", [SIGMOID, IDENTITY])
def test_input_gradient_matches_finite_differences(out_act):
    rng = np.random.default_rng(2)
    worst = 0.0
    for trial in range(50):
        net = small_net(trial, out_act)
        x = rng.normal(size=(1, 3))
        w = rng.normal(size=(1, 1))
        net.forward(x)
        g = net.backward(w)[0]
        fd = central_difference(lambda p: scalar_loss(net, p, w), x[0], 1e-6)
        worst = max(worst, relative_error(g, fd))
    assert worst <= 1e-4


def test_parameter_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(50):
        net = small_net(100 + trial)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(4, 1))
        net.forward(x)
        net.backward(w)
        k = trial % len(net.params)
        p, g = net.params[k], net.grads[k]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        old = p[idx]
        p[idx] = old + 1e-6
        up = scalar_loss(net, x, w)
        p[idx] = old - 1e-6
        down = scalar_loss(net, x, w)
        p[idx] = old
        worst = max(worst, relative_error(g[idx], (up - down) / 2e-6))
    assert worst <= 1e-4


def test_bce_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        p = rng.uniform(0.05, 0.95, size=(6, 1))
        y = rng.integers(0, 2, size=(6, 1)).astype(float)
        _, g = bce_loss(p, y)
        fd = central_difference(lambda q: bce_loss(q.reshape(6, 1), y)[0], p.ravel(), 1e-7)
        worst = max(worst, relative_error(g.ravel(), fd))
    assert worst <= 1e-4


def test_bce_known_values():
    loss, _ = bce_loss(np.array([[0.5]]), 1.0)
    assert loss == pytest.approx(np.log(2.0))
    loss, _ = bce_loss(np.array([[1.0]]), 1.0)
    assert loss == pytest.approx(-np.log1p(-CLAMP), abs=1e-12)
    loss, _ = bce_loss(np.array([[0.0]]), 1.0)
    assert np.isfinite(loss) and loss == pytest.approx(-np.log(CLAMP))


def test_adam_first_step_moves_by_learning_rate():
    p = np.array([1.0, -2.0, 0.0])
    opt = Adam([p], learning_rate=0.1)
    opt.step([np.array([3.0, -0.5, 0.0])])
    # bias-corrected first step is lr * sign(g) (zero gradient: no move)
    np.testing.assert_allclose(p, [0.9, -1.9, 0.0], atol=1e-8)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(5)
    p = rng.normal(size=4)
    ref = p.copy()
    opt = Adam([p], learning_rate=0.01, beta1=0.9, beta2=0.99)
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 30):
        g = rng.normal(size=4)
        opt.step([g])
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * g * g
        ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_adam_minimises_quadratic():
    p = np.array([5.0, -3.0])
    opt = Adam([p], learning_rate=0.05, beta1=0.9)
    for _ in range(2000):
        opt.step([2 * p])
    assert np.linalg.norm(p) < 1e-2


def test_adam_shape_mismatch():
    p = np.zeros(3)
    opt = Adam([p])
    with pytest.raises(ShapeError):
        opt.step([np.zeros(2)])
    with pytest.raises(ShapeError):
        opt.step([])


def test_adam_step_requires_tracked_arrays():
    p = np.zeros(2)
    st = Adam([p], learning_rate=0.1)
    adam_step(st, [p], [np.ones(2)])
    assert np.all(p < 0)
    with pytest.raises(ShapeError):
        adam_step(st, [p.copy()], [np.ones(2)])


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    g = Mlp.build([2, 4, 2], [LEAKY_RELU, IDENTITY], 0, slope=0.1)
    d = small_net(1)
    path = save_checkpoint(tmp_path / "ck.npz", {"gen": g, "disc": d}, {"note": "x"})
    nets, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    for a, b in ((g, nets["gen"]), (d, nets["disc"])):
        assert [l.activation for l in a.layers] == [l.activation for l in b.layers]
        assert [l.slope for l in a.layers] == [l.slope for l in b.layers]
        for pa, pb in zip(a.params, b.params):
            assert pa.tobytes() == pb.tobytes()
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(d.predict(x), nets["disc"].predict(x))


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, header=np.array('{"format": "other", "version": 1}'))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_copy_is_independent():
    a = small_net()
    b = a.copy()
    b.params[0][0, 0] += 1.0
    assert a.params[0][0, 0] != b.params[0][0, 0]
