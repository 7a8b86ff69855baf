import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvsid.errors import NumericError, ValidationError
from pvsid.nn import (Mlp, adamw_init, adamw_step, count_params, loss_and_param_gradient, mlp_forward, mlp_init,
                      output_input_jacobian)


def reference_forward(weights, biases, x):
    """Straight-line loop re-implementation, one sample at a time."""
    out = []
    for row in np.atleast_2d(x):
        h = list(row)
        for li, (W, b) in enumerate(zip(weights, biases)):
            nxt = []
            for j in range(W.shape[1]):
                acc = b[j]
                for i in range(W.shape[0]):
                    acc += h[i] * W[i, j]
                if li < len(weights) - 1:
                    acc = max(acc, 0.0)
                nxt.append(acc)
            h = nxt
        out.append(h)
    return np.array(out)


def random_net(rng, n_in=None, n_out=None):
    depth = rng.integers(1, 4)
    dims = [n_in or int(rng.integers(1, 6))] + [int(rng.integers(2, 8)) for _ in range(depth - 1)]
    dims.append(n_out or int(rng.integers(1, 5)))
    net = mlp_init(dims, int(rng.integers(1 << 30)))
    for b in net.biases:
        b[:] = rng.normal(0, 0.3, b.shape)
    return net


def test_param_count_example():
    assert count_params([3, 4, 2]) == 26
    assert mlp_init([3, 4, 2], seed=11).n_params == 26


@given(st.lists(st.integers(1, 20), min_size=2, max_size=6))
@settings(max_examples=50, deadline=None)
def test_param_count_formula(dims):
    net = mlp_init(dims, 0)
    assert net.n_params == count_params(dims) == sum(p.size for p in net.params())


def test_init_deterministic_and_he_scaled():
    a = mlp_init([5, 32, 32, 32, 8], seed=4)
    b = mlp_init([5, 32, 32, 32, 8], seed=4)
    for pa, pb in zip(a.params(), b.params()):
        assert np.array_equal(pa, pb)
    big = mlp_init([400, 400], seed=1)
    assert np.std(big.weights[0]) == pytest.approx(np.sqrt(2 / 400), rel=0.02)
    assert not np.any(big.biases[0])


def test_zero_weights_give_zero_output():
    net = mlp_init([2, 1], seed=7)
    net.weights[0][:] = 0
    assert np.all(mlp_forward(net, np.random.default_rng(0).normal(size=(5, 2))) == 0)


def test_identity_layer_and_dead_relu():
    ident = Mlp([np.eye(2)], [np.zeros(2)])
    assert np.array_equal(mlp_forward(ident, [1.0, -2.0]), [1.0, -2.0])
    dead = Mlp([np.array([[1.0]]), np.array([[1.0]])], [np.array([-1.0]), np.array([0.0])])
    assert mlp_forward(dead, [0.5])[0] == 0.0


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        net = random_net(rng)
        x = rng.normal(size=(4, net.n_in))
        np.testing.assert_allclose(mlp_forward(net, x), reference_forward(net.weights, net.biases, x),
                                   rtol=0, atol=1e-12)


def test_forward_is_pure():
    net = mlp_init([3, 5, 2], 0)
    x = np.ones(3)
    before = [p.copy() for p in net.params()]
    assert np.array_equal(mlp_forward(net, x), mlp_forward(net, x))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))


def test_forward_rejects_bad_shape():
    with pytest.raises(ValidationError):
        mlp_forward(mlp_init([3, 2], 0), np.ones(4))


def max_rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))


def fd_param_gradient(net, X, T, w, h=1e-6):
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp, _ = loss_and_param_gradient(net, X, T, w)
            p[idx] = old - h
            lm, _ = loss_and_param_gradient(net, X, T, w)
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def test_param_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        net = random_net(rng)
        X = rng.normal(size=(3, net.n_in))
        T = rng.normal(size=(3, net.n_out))
        w = rng.uniform(0.1, 1.0, net.n_out)
        _, grads = loss_and_param_gradient(net, X, T, w)
        for g, f in zip(grads, fd_param_gradient(net, X, T, w)):
            worst = max(worst, max_rel_err(g, f))
    assert worst < 1e-4


def test_zero_weights_and_perfect_fit():
    rng = np.random.default_rng(2)
    net = random_net(rng)
    X = rng.normal(size=(4, net.n_in))
    T = rng.normal(size=(4, net.n_out))
    loss, grads = loss_and_param_gradient(net, X, T, np.zeros(net.n_out))
    assert loss == 0 and all(not np.any(g) for g in grads)
    loss, grads = loss_and_param_gradient(net, X, mlp_forward(net, X), 1.0)
    assert loss == 0 and all(not np.any(g) for g in grads)


def test_loss_definition():
    net = Mlp([np.array([[2.0]])], [np.array([0.0])])
    loss, _ = loss_and_param_gradient(net, [[1.0], [3.0]], [[1.0], [5.0]], [0.5])
    # mean over batch of 0.5 * err^2: (0.5 * 1 + 0.5 * 1) / 2
    assert loss == pytest.approx(0.5)


def fd_input_jacobian(net, x, cols, h=1e-6):
    J = np.zeros((net.n_out, len(range(*cols.indices(net.n_in)))))
    for k, j in enumerate(range(*cols.indices(net.n_in))):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, k] = (mlp_forward(net, xp) - mlp_forward(net, xm)) / (2 * h)
    return J


def test_input_jacobian_matches_finite_differences():
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(100):
        net = random_net(rng)
        x = rng.normal(size=net.n_in)
        a = int(rng.integers(0, net.n_in))
        b = int(rng.integers(a + 1, net.n_in + 1))
        J = output_input_jacobian(net, x, slice(a, b))
        assert J.shape == (net.n_out, b - a)
        worst = max(worst, max_rel_err(J, fd_input_jacobian(net, x, slice(a, b))))
    assert worst < 1e-4


def test_input_jacobian_linear_and_empty():
    W = np.random.default_rng(1).normal(size=(3, 2))
    lin = Mlp([W], [np.zeros(2)])
    assert np.array_equal(output_input_jacobian(lin, np.ones(3)), W.T)
    net = mlp_init([4, 6, 3], 0)
    assert output_input_jacobian(net, np.ones(4), slice(2, 2)).shape == (3, 0)
    with pytest.raises(ValidationError):
        output_input_jacobian(net, np.ones(4), slice(0, 5))


def test_adamw_zero_gradient_is_pure_decay():
    net = mlp_init([3, 4, 2], 1)
    before = [p.copy() for p in net.params()]
    state = adamw_init(net.params(), lr=0.01, weight_decay=0.1)
    adamw_step(net.params(), [np.zeros_like(p) for p in net.params()], state)
    for b, a in zip(before, net.params()):
        np.testing.assert_allclose(a, b * (1 - 0.01 * 0.1), rtol=1e-15, atol=0)


def test_adamw_first_step_hand_oracle():
    p = np.array([1.0, -2.0, 0.5])
    g = np.full(3, 0.3)
    lr, wd, eps = 1e-3, 1e-2, 1e-8
    state = adamw_init([p], lr=lr, weight_decay=wd, eps=eps)
    adamw_step([p], [g], state)
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps) after decay
    expected = np.array([1.0, -2.0, 0.5]) * (1 - lr * wd) - lr * 0.3 / (0.3 + eps)
    np.testing.assert_allclose(p, expected, rtol=0, atol=1e-15)


def test_adamw_second_step_hand_oracle():
    p = np.array([0.7])
    g1, g2 = 0.2, -0.5
    lr, wd, b1, b2, eps = 0.01, 0.05, 0.9, 0.999, 1e-8
    state = adamw_init([p], lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)
    adamw_step([p], [np.array([g1])], state)
    adamw_step([p], [np.array([g2])], state)
    x = 0.7
    m = v = 0.0
    for t, g in enumerate((g1, g2), start=1):
        x *= 1 - lr * wd
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert p[0] == pytest.approx(x, abs=1e-15)


def test_adamw_deterministic_and_rejects_nan():
    def run():
        net = mlp_init([3, 5, 1], 9)
        state = adamw_init(net.params())
        rng = np.random.default_rng(0)
        for _ in range(20):
            X, T = rng.normal(size=(8, 3)), rng.normal(size=(8, 1))
            _, grads = loss_and_param_gradient(net, X, T, 1.0)
            adamw_step(net.params(), grads, state)
        return net
    a, b = run(), run()
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    before = [p.copy() for p in a.params()]
    bad = [np.zeros_like(p) for p in a.params()]
    bad[0][0, 0] = np.nan
    with pytest.raises(NumericError):
        adamw_step(a.params(), bad, adamw_init(a.params()))
    assert all(np.array_equal(x, y) for x, y in zip(before, a.params()))
