import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvsid.errors import ValidationError
from pvsid.identification import (NormStats, PvsidModel, TrainConfig, Windows, compute_norm_stats, discounted_loss,
                                  estimate_state, init_model, kstep_mse, make_windows, predict_future,
                                  predict_windows, split_log, train, _encode, _forward)
from pvsid.nn import Mlp
from pvsid.plant import IoLog

from linsys import first_order_log


def random_log(n, seed=0, n_y=3):
    rng = np.random.default_rng(seed)
    return IoLog(rng.normal(size=(n, 2)), rng.normal(size=(n, n_y)), rng.normal(size=(n, 2)))


def small_model(h_p=3, h_f=4, n_y=3, gamma=0.9, seed=0, y_channels=None, stats=None):
    y_channels = tuple(range(n_y)) if y_channels is None else y_channels
    cfg = TrainConfig(n_xhat=4, gamma=gamma, seed=seed, estimator_hidden=(6,), predictor_hidden=(8,))
    stats = stats or NormStats.identity(2, len(y_channels), 2)
    return init_model(cfg, h_p, h_f, 2, 2, y_channels, stats)


def test_window_boundaries():
    assert len(make_windows(random_log(150), 50, 100)) == 1
    with pytest.raises(ValidationError):
        make_windows(random_log(149), 50, 100)


@given(st.integers(2, 60), st.integers(1, 8), st.integers(1, 8))
@settings(max_examples=40, deadline=None)
def test_window_count_formula(n, h_p, h_f):
    if n < h_p + h_f:
        return
    assert len(make_windows(random_log(n), h_p, h_f)) == n - h_p - h_f + 1


def test_window_indexing():
    log = random_log(40)
    w = make_windows(log, 5, 7)
    assert np.array_equal(w.u_past[0, -1], log.u[4])
    assert np.array_equal(w.u_future[3, 0], log.u[3 + 5])
    assert np.array_equal(w.w_future[3, -1], log.w[3 + 5 + 6])
    assert np.array_equal(w.y_past[10], log.y[10:15])


def test_norm_stats_examples():
    log = IoLog(np.array([[0.0, 3.0], [2.0, 3.0]]), np.zeros((2, 1)), np.zeros((2, 2)))
    s = compute_norm_stats(make_windows(log, 1, 1))
    assert s.u_mean.tolist() == [1.0, 3.0]
    assert s.u_std.tolist() == [1.0, 1e-9]
    w = make_windows(random_log(500), 4, 6)
    s = compute_norm_stats(w)
    norm = Windows((w.u_past - s.u_mean) / s.u_std, (w.y_past - s.y_mean) / s.y_std,
                   (w.u_future - s.u_mean) / s.u_std, (w.w_future - s.w_mean) / s.w_std)
    s2 = compute_norm_stats(norm)
    # u stats mix past and future blocks, so check y and w exactly
    np.testing.assert_allclose(s2.y_mean, 0, atol=1e-12)
    np.testing.assert_allclose(s2.y_std, 1, atol=1e-12)
    np.testing.assert_allclose(s2.w_mean, 0, atol=1e-12)
    np.testing.assert_allclose(s2.w_std, 1, atol=1e-12)


def constant_model(h_f, n_w, value, gamma):
    """Estimator and predictor that ignore their inputs and emit ``value``."""
    est = Mlp([np.zeros((1 * 2, 1))], [np.zeros(1)])
    pred = Mlp([np.zeros((1 + h_f, h_f * n_w))], [np.asarray(value, dtype=float).ravel()])
    return PvsidModel(est, pred, 1, h_f, 1, gamma, NormStats.identity(1, 1, n_w), (0,), 1, n_w)


def one_window(w_future):
    w_future = np.asarray(w_future, dtype=float)
    h_f = len(w_future)
    return Windows(np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, h_f, 1)), w_future[None])


def test_discounted_loss_manual_expansion():
    model = constant_model(2, 1, [0.0, 0.0], 0.5)
    win = one_window([[3.0], [2.0]])
    assert discounted_loss(model, win) == pytest.approx(9 + 0.5 * 4, abs=1e-15)
    perfect = constant_model(2, 1, [3.0, 2.0], 0.5)
    assert discounted_loss(perfect, win) == 0.0


def test_discounted_loss_gamma_one_is_plain_sum():
    for seed in range(10):
        model = small_model(gamma=1.0, seed=seed)
        w = make_windows(random_log(30, seed), 3, 4)
        A, UF, WF = _encode(model, w)
        _, out = _forward(model, A, UF)
        plain = np.sum((out - WF) ** 2) / len(w)
        assert discounted_loss(model, w) == pytest.approx(plain, rel=1e-12, abs=1e-12)


def test_discounted_loss_monotone_in_gamma():
    w = make_windows(random_log(30), 3, 4)
    losses = [discounted_loss(small_model(gamma=g), w) for g in (0.3, 0.6, 0.9, 1.0)]
    assert losses == sorted(losses)


def test_train_learns_first_order_system():
    log = first_order_log(5000)
    tr, va, te = (make_windows(p, 4, 4) for p in split_log(log))
    cfg = TrainConfig(n_xhat=2, gamma=1.0, epochs=150, batch_size=128, estimator_hidden=(16,),
                      predictor_hidden=(32, 32), seed=0)
    model, hist = train(tr, va, cfg)
    # standardized targets: every horizon step has unit variance
    assert min(hist.val_loss) < 0.01 * model.h_f
    assert hist.val_loss[hist.best_epoch] == min(hist.val_loss)
    mse = kstep_mse(model, te)
    assert np.all(mse < 0.01 * te.w_future.var())


def test_train_deterministic_and_constant_targets():
    log = random_log(200)
    log.w[:] = 0.25
    tr, va, _ = (make_windows(p, 3, 4) for p in split_log(log))
    cfg = TrainConfig(n_xhat=3, epochs=20, batch_size=32, estimator_hidden=(8,), predictor_hidden=(8,), seed=5)
    m1, h1 = train(tr, va, cfg)
    m2, h2 = train(tr, va, cfg)
    assert h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss
    assert all(np.array_equal(a, b) for a, b in zip(m1.predictor.params(), m2.predictor.params()))
    np.testing.assert_allclose(predict_windows(m1, va), 0.25, atol=1e-6)


def test_estimate_state_layout_invariance():
    model = small_model(n_y=3, y_channels=(0, 2))
    rng = np.random.default_rng(3)
    u = rng.normal(size=(3, 2))
    y_full = rng.normal(size=(3, 3))
    base = estimate_state(model, u, y_full[:, [0, 2]])
    assert np.array_equal(base, estimate_state(model, u, y_full[:, [0, 2]]))
    permuted = estimate_state(model, u, y_full[:, [2, 1, 0]], y_layout=(2, 1, 0))
    assert np.array_equal(base, permuted)
    with pytest.raises(ValidationError):
        estimate_state(model, u, y_full[:, [1]], y_layout=(1,))


def test_prediction_matches_training_forward_path():
    w = make_windows(random_log(40, 4), 3, 4)
    stats = compute_norm_stats(w)
    model = small_model(stats=stats)
    A, UF, _ = _encode(model, w)
    _, out = _forward(model, A, UF)
    raw = out.reshape(len(w), 4, 2) * stats.w_std + stats.w_mean
    assert np.array_equal(predict_windows(model, w), raw)
    # same batch shape, so the same BLAS kernels: single window against the forward path on one row
    _, out1 = _forward(model, A[:1], UF[:1])
    xhat = estimate_state(model, w.u_past[0], w.y_past[0])
    assert np.array_equal(predict_future(model, xhat, w.u_future[0]), out1.reshape(4, 2) * stats.w_std + stats.w_mean)


def test_kstep_mse_reductions():
    model = constant_model(3, 2, np.zeros(6), 0.9)
    win = one_window(np.array([[1.0, 1.0], [0.0, 2.0], [3.0, 0.0]]))
    assert kstep_mse(model, win).tolist() == [2.0, 4.0, 9.0]
    # constant predictor at the mean -> per-step variance
    rng = np.random.default_rng(0)
    wf = rng.normal(1.0, 2.0, size=(20000, 3, 2))
    mean = wf.mean(axis=0)
    model = constant_model(3, 2, mean.ravel(), 0.9)
    big = Windows(np.zeros((20000, 1, 1)), np.zeros((20000, 1, 1)), np.zeros((20000, 3, 1)), wf)
    np.testing.assert_allclose(kstep_mse(model, big), wf.var(axis=0).sum(axis=1), rtol=1e-12)
    perfect = constant_model(3, 2, np.array([[1.0, 1.0], [0.0, 2.0], [3.0, 0.0]]).ravel(), 0.9)
    assert not np.any(kstep_mse(perfect, win))
