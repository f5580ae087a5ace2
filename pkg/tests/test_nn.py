import numpy as np
import pytest

from operon.exceptions import DimensionError, StateError
from operon.nn import MLP, Adam, DenseLayer, matmul


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_matmul_identity_and_hand_values():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(a, np.eye(2)), a)
    np.testing.assert_array_equal(matmul([[1.0, 2.0]], [[3.0], [4.0]]), [[11.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match="2x3.*2x3"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative():
    rng = np.random.default_rng(1)
    a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-10)


def test_relu_layer_clamps():
    layer = DenseLayer(2, 1, "relu")
    layer.weights[:] = [[1.0, -1.0]]
    np.testing.assert_array_equal(layer.forward(np.array([[2.0, 5.0]])), [[0.0]])


def test_identity_layer_passes_input_through():
    layer = DenseLayer(3, 3, "identity")
    layer.weights[:] = np.eye(3)
    x = np.array([[1.0, -2.0, 3.5]])
    np.testing.assert_array_equal(layer.forward(x), x)
    np.testing.assert_array_equal(layer.backward(np.ones((1, 3))), np.ones((1, 3)))


def test_tanh_layer_matches_scalar_loop():
    rng = np.random.default_rng(2)
    layer = DenseLayer(4, 3, "tanh", rng)
    layer.bias[:] = rng.normal(size=3)
    x = rng.normal(size=(5, 4))
    expected = np.zeros((5, 3))
    for n in range(5):
        for o in range(3):
            z = layer.bias[o]
            for i in range(4):
                z += x[n, i] * layer.weights[o, i]
            expected[n, o] = np.tanh(z)
    np.testing.assert_allclose(layer.forward(x), expected, rtol=0, atol=1e-12)


def test_relu_dead_unit_blocks_gradient():
    layer = DenseLayer(1, 1, "relu")
    layer.weights[:] = [[1.0]]
    layer.forward(np.array([[-3.0]]))
    grad_in = layer.backward(np.array([[1.0]]))
    assert grad_in[0, 0] == 0.0
    assert layer.grad_weights[0, 0] == 0.0 and layer.grad_bias[0] == 0.0


def test_backward_before_forward_raises():
    with pytest.raises(StateError):
        DenseLayer(2, 2).backward(np.ones((1, 2)))


def test_forward_shape_mismatch():
    with pytest.raises(DimensionError):
        DenseLayer(3, 2).forward(np.ones((1, 2)))


def _mlp_loss(net, x, t):
    return np.mean((net.forward(x, cache=False) - t) ** 2)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_mlp_gradients_match_central_differences(activation):
    rng = np.random.default_rng(3)
    net = MLP([3, 5, 2], activation, rng)
    for p in net.parameters():
        p += rng.normal(scale=0.3, size=p.shape)
    x, t = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    out = net.forward(x)
    net.zero_grad()
    net.backward(2.0 * (out - t) / out.size)
    h = 1e-6
    for p, g in zip(net.parameters(), net.gradients()):
        assert g.shape == p.shape
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + h
            up = _mlp_loss(net, x, t)
            p[i] = orig - h
            down = _mlp_loss(net, x, t)
            p[i] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - g[i]) <= 1e-5 * max(abs(fd), abs(g[i]), 1e-6)


def test_gradients_accumulate_until_zeroed():
    rng = np.random.default_rng(4)
    layer = DenseLayer(2, 2, "identity", rng)
    x = rng.normal(size=(3, 2))
    layer.forward(x)
    layer.backward(np.ones((3, 2)))
    once = layer.grad_weights.copy()
    layer.backward(np.ones((3, 2)))
    np.testing.assert_allclose(layer.grad_weights, 2 * once)
    layer.zero_grad()
    assert not layer.grad_weights.any()


def test_inference_forward_keeps_cache():
    rng = np.random.default_rng(5)
    layer = DenseLayer(2, 2, "relu", rng)
    x = rng.normal(size=(3, 2))
    layer.forward(x)
    layer.forward(rng.normal(size=(7, 2)), cache=False)
    assert layer.cached_input is x


def test_adam_zero_gradient_leaves_parameters():
    p = np.array([1.0, -2.0])
    g = np.zeros(2)
    opt = Adam([p], lr=0.1)
    for _ in range(5):
        opt.step([p], [g])
    np.testing.assert_array_equal(p, [1.0, -2.0])
    assert opt.step_count == 5


def test_adam_first_step_is_lr():
    p, g = np.array([0.0]), np.array([1.0])
    Adam([p], lr=0.1).step([p], [g])
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert g[0] == 0.0


def test_adam_on_square_matches_scalar_recurrence():
    w = np.array([1.0])
    g = np.zeros(1)
    opt = Adam([w], lr=0.1)
    ref_w, m, v = 1.0, 0.0, 0.0
    values = [w[0] ** 2]
    for t in range(1, 11):
        g[0] = 2 * w[0]
        opt.step([w], [g])
        grad = 2 * ref_w
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        ref_w -= 0.1 * (m / (1 - 0.9 ** t)) / ((v / (1 - 0.999 ** t)) ** 0.5 + 1e-8)
        assert w[0] == pytest.approx(ref_w, abs=1e-14)
        values.append(w[0] ** 2)
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_shape_mismatch():
    opt = Adam([np.zeros(2)])
    with pytest.raises(StateError):
        opt.step([np.zeros(3)], [np.zeros(3)])


def test_same_seed_same_parameters_after_training():
    def run():
        rng = np.random.default_rng(9)
        net = MLP([2, 4, 1], "relu", np.random.default_rng(0))
        opt = Adam(net.parameters(), lr=1e-2)
        for _ in range(20):
            x = rng.normal(size=(5, 2))
            out = net.forward(x)
            net.backward(2 * (out - x[:, :1]) / 5)
            opt.step(net.parameters(), net.gradients())
        return [p.copy() for p in net.parameters()]

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)
