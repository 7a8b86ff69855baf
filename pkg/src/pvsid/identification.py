"""Joint training of the state estimator and multi-step output predictor.

A window at index ``t`` takes log rows ``[t, t+h_p)`` as the past block
(``u`` and ``y``) and rows ``[t+h_p, t+h_p+h_f)`` as the future block (``u``
and ``w``). Network inputs are standardized with training-split statistics
and flattened time-major: all channels of the oldest step first, and within
a past step the ``u`` channels precede the ``y`` channels.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import TrainingFailure, ValidationError
from .nn import Mlp, adamw_init, adamw_step, backward, forward_cache, mlp_init
from .plant import IoLog

log = logging.getLogger(__name__)

STD_FLOOR = 1e-9


@dataclass
class WindowSample:
    u_past: np.ndarray
    y_past: np.ndarray
    u_future: np.ndarray
    w_future: np.ndarray


@dataclass
class Windows:
    """A batch of windows stored as stacked arrays, shape ``(N, steps, channels)``."""
    u_past: np.ndarray
    y_past: np.ndarray
    u_future: np.ndarray
    w_future: np.ndarray

    def __len__(self):
        return len(self.u_past)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return WindowSample(self.u_past[idx], self.y_past[idx], self.u_future[idx], self.w_future[idx])
        return Windows(self.u_past[idx], self.y_past[idx], self.u_future[idx], self.w_future[idx])

    @property
    def h_p(self):
        return self.u_past.shape[1]

    @property
    def h_f(self):
        return self.u_future.shape[1]

    @classmethod
    def from_samples(cls, samples) -> "Windows":
        samples = list(samples)
        if not samples:
            raise ValidationError("no windows given")
        return cls(*(np.stack([getattr(s, name) for s in samples])
                     for name in ("u_past", "y_past", "u_future", "w_future")))


def make_windows(log_: IoLog, h_p: int, h_f: int) -> Windows:
    if h_p < 1 or h_f < 1:
        raise ValidationError("horizons must be >= 1")
    n = len(log_)
    if n < h_p + h_f:
        raise ValidationError(f"log has {n} rows; at least h_p + h_f = {h_p + h_f} are required")
    m = n - h_p - h_f + 1

    def view(arr, start, length):
        # (N, length, channels) read-only view, copied so windows own their data
        v = sliding_window_view(arr[start:start + m + length - 1], length, axis=0)
        return np.ascontiguousarray(v.transpose(0, 2, 1))

    return Windows(view(log_.u, 0, h_p), view(log_.y, 0, h_p), view(log_.u, h_p, h_f), view(log_.w, h_p, h_f))


@dataclass
class NormStats:
    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    w_mean: np.ndarray
    w_std: np.ndarray

    @classmethod
    def identity(cls, n_u, n_y, n_w) -> "NormStats":
        return cls(np.zeros(n_u), np.ones(n_u), np.zeros(n_y), np.ones(n_y), np.zeros(n_w), np.ones(n_w))

    def select_y(self, channels) -> "NormStats":
        ch = list(channels)
        return NormStats(self.u_mean, self.u_std, self.y_mean[ch], self.y_std[ch], self.w_mean, self.w_std)


def _mean_std(blocks):
    flat = np.concatenate([b.reshape(-1, b.shape[-1]) for b in blocks])
    return flat.mean(axis=0), np.maximum(flat.std(axis=0), STD_FLOOR)


def compute_norm_stats(windows: Windows) -> NormStats:
    """Per-channel population mean/std over every time step in the windows."""
    if len(windows) == 0:
        raise ValidationError("cannot compute statistics of an empty window set")
    u_mean, u_std = _mean_std([windows.u_past, windows.u_future])
    y_mean, y_std = _mean_std([windows.y_past])
    w_mean, w_std = _mean_std([windows.w_future])
    return NormStats(u_mean, u_std, y_mean, y_std, w_mean, w_std)


@dataclass
class PvsidModel:
    estimator: Mlp
    predictor: Mlp
    h_p: int
    h_f: int
    n_xhat: int
    gamma: float
    stats: NormStats  # y statistics only for the channels in ``y_channels``
    y_channels: tuple
    n_u: int
    n_w: int

    def __post_init__(self):
        self.y_channels = tuple(int(c) for c in self.y_channels)
        n_y = len(self.y_channels)
        if self.estimator.n_in != self.h_p * (self.n_u + n_y) or self.estimator.n_out != self.n_xhat:
            raise ValidationError("estimator shape does not match horizons and channel counts")
        if self.predictor.n_in != self.n_xhat + self.h_f * self.n_u or self.predictor.n_out != self.h_f * self.n_w:
            raise ValidationError("predictor shape does not match horizons and channel counts")
        if not (0 < self.gamma <= 1):
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")

    @property
    def n_y(self) -> int:
        return len(self.y_channels)

    @property
    def layout(self) -> list[str]:
        """Names of the estimator input entries for one past step, in order."""
        return [f"u{i + 1}" for i in range(self.n_u)] + [f"y{c + 1}" for c in self.y_channels]

    @property
    def step_weights(self) -> np.ndarray:
        """Loss weight of every flattened predictor output."""
        return np.repeat(self.gamma ** np.arange(self.h_f), self.n_w)

    def select_y(self, y_full):
        return np.asarray(y_full)[..., list(self.y_channels)]


# ---------------------------------------------------------------- encoders

def _estimator_input(model: PvsidModel, u_past, y_past_sel) -> np.ndarray:
    s = model.stats
    un = (u_past - s.u_mean) / s.u_std
    yn = (y_past_sel - s.y_mean) / s.y_std
    z = np.concatenate([un, yn], axis=-1)
    return z.reshape(*z.shape[:-2], -1)


def _future_input(model: PvsidModel, u_future) -> np.ndarray:
    s = model.stats
    un = (u_future - s.u_mean) / s.u_std
    return un.reshape(*un.shape[:-2], -1)


def _w_target(model: PvsidModel, w_future) -> np.ndarray:
    wn = (w_future - model.stats.w_mean) / model.stats.w_std
    return wn.reshape(*wn.shape[:-2], -1)


def _encode(model: PvsidModel, win: Windows):
    return (_estimator_input(model, win.u_past, model.select_y(win.y_past)),
            _future_input(model, win.u_future), _w_target(model, win.w_future))


def _forward(model: PvsidModel, A: np.ndarray, UF: np.ndarray):
    """Shared normalized forward path; returns (xhat, flattened normalized prediction)."""
    xhat, _ = forward_cache(model.estimator, A)
    out, _ = forward_cache(model.predictor, np.concatenate([xhat, UF], axis=1))
    return xhat, out


def _check_windows(model: PvsidModel, win: Windows):
    if len(win) == 0:
        raise ValidationError("empty window batch")
    if win.h_p != model.h_p or win.h_f != model.h_f:
        raise ValidationError(f"windows have horizons ({win.h_p}, {win.h_f}), model expects ({model.h_p}, {model.h_f})")
    if win.u_past.shape[2] != model.n_u or win.w_future.shape[2] != model.n_w \
            or win.y_past.shape[2] <= max(model.y_channels):
        raise ValidationError("window channel counts do not match the model")


def discounted_loss(model: PvsidModel, windows) -> float:
    """Batch mean of ``sum_k gamma**(k-1) * ||e_k||**2`` on standardized ``w``."""
    if isinstance(windows, WindowSample):
        windows = Windows.from_samples([windows])
    elif not isinstance(windows, Windows):
        windows = Windows.from_samples(windows)
    _check_windows(model, windows)
    A, UF, WF = _encode(model, windows)
    _, out = _forward(model, A, UF)
    err = out - WF
    return float(np.sum(model.step_weights * err * err) / len(windows))


def _loss_and_grads(model: PvsidModel, A, UF, WF, weights):
    n = len(A)
    xhat, acts_e = forward_cache(model.estimator, A)
    out, acts_p = forward_cache(model.predictor, np.concatenate([xhat, UF], axis=1))
    err = out - WF
    werr = weights * err
    loss = float(np.sum(werr * err) / n)
    grads_p, d_in = backward(model.predictor, acts_p, (2.0 / n) * werr, need_input_grad=True)
    grads_e, _ = backward(model.estimator, acts_e, np.ascontiguousarray(d_in[:, :model.n_xhat]))
    return loss, grads_e + grads_p


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    n_xhat: int = 8
    gamma: float = 0.9
    epochs: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    estimator_hidden: tuple = (32, 32, 32)
    predictor_hidden: tuple = (128, 128, 128)
    y_channels: tuple | None = None  # None selects every y channel


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    def rows(self):
        return list(zip(self.epochs, self.train_loss, self.val_loss))

    def to_csv(self, path, comment=None):
        from .csvio import write_csv
        write_csv(path, ["epoch", "train_loss", "val_loss"], self.rows(), comment=comment)


def init_model(cfg: TrainConfig, h_p: int, h_f: int, n_u: int, n_w: int, y_channels, stats: NormStats) -> PvsidModel:
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    n_y = len(y_channels)
    est = mlp_init([h_p * (n_u + n_y), *cfg.estimator_hidden, cfg.n_xhat], int(seeds[0]))
    pred = mlp_init([cfg.n_xhat + h_f * n_u, *cfg.predictor_hidden, h_f * n_w], int(seeds[1]))
    return PvsidModel(est, pred, h_p, h_f, cfg.n_xhat, cfg.gamma, stats, tuple(y_channels), n_u, n_w)


def train(train_windows: Windows, val_windows: Windows, cfg: TrainConfig, stats: NormStats | None = None,
          callback=None):
    """Minimize the discounted loss with mini-batch AdamW.

    Returns ``(model, history)`` where ``model`` holds the parameters of the
    epoch with the lowest validation loss (earliest epoch on ties).
    ``stats`` defaults to statistics of ``train_windows``.
    """
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ValidationError("training and validation splits must be nonempty")
    if (train_windows.h_p, train_windows.h_f) != (val_windows.h_p, val_windows.h_f):
        raise ValidationError("training and validation windows use different horizons")
    n_y_full = train_windows.y_past.shape[2]
    y_channels = tuple(range(n_y_full)) if cfg.y_channels is None else tuple(cfg.y_channels)
    if not y_channels or max(y_channels) >= n_y_full or min(y_channels) < 0:
        raise ValidationError(f"y channel selection {y_channels} is invalid for {n_y_full} channels")
    full_stats = stats if stats is not None else compute_norm_stats(train_windows)
    model = init_model(cfg, train_windows.h_p, train_windows.h_f, train_windows.u_past.shape[2],
                       train_windows.w_future.shape[2], y_channels, full_stats.select_y(y_channels))
    _check_windows(model, val_windows)
    A, UF, WF = _encode(model, train_windows)
    vA, vUF, vWF = _encode(model, val_windows)
    weights = model.step_weights
    params = model.estimator.params() + model.predictor.params()
    opt = adamw_init(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    n = len(A)
    bs = max(1, min(cfg.batch_size, n))
    history = TrainHistory()
    best_val = np.inf
    best = (model.estimator.copy(), model.predictor.copy())
    # divergence is detected below and reported as TrainingFailure, so overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                loss, grads = _loss_and_grads(model, A[idx], UF[idx], WF[idx], weights)
                if not np.isfinite(loss):
                    raise TrainingFailure("non-finite training loss", epoch - 1)
                adamw_step(params, grads, opt)
                total += loss * len(idx)
            _, vout = _forward(model, vA, vUF)
            verr = vout - vWF
            val = float(np.sum(weights * verr * verr) / len(vA))
            train_loss = total / n
            if not (np.isfinite(val) and np.isfinite(train_loss)):
                raise TrainingFailure("non-finite loss", epoch - 1)
            history.epochs.append(epoch)
            history.train_loss.append(train_loss)
            history.val_loss.append(val)
            if val < best_val:
                best_val = val
                history.best_epoch = epoch
                best = (model.estimator.copy(), model.predictor.copy())
            if callback is not None:
                callback(epoch, train_loss, val)
    model.estimator, model.predictor = best
    log.info("training finished: best epoch %d, val loss %.6g", history.best_epoch, best_val)
    return model, history


# ---------------------------------------------------------------- inference

def estimate_state(model: PvsidModel, u_past, y_past, y_layout=None) -> np.ndarray:
    """State estimate from past inputs and outputs.

    ``y_past`` columns follow ``y_layout`` (a sequence of y channel indices);
    by default they are the model's own ``y_channels`` in order. Leading batch
    dimensions are allowed.
    """
    u_past = np.asarray(u_past, dtype=np.float64)
    y_past = np.asarray(y_past, dtype=np.float64)
    layout = model.y_channels if y_layout is None else tuple(int(c) for c in y_layout)
    if u_past.shape[-2:] != (model.h_p, model.n_u):
        raise ValidationError(f"u_past has shape {u_past.shape}, expected (..., {model.h_p}, {model.n_u})")
    if y_past.shape[-2:] != (model.h_p, len(layout)) or y_past.shape[:-2] != u_past.shape[:-2]:
        raise ValidationError(f"y_past has shape {y_past.shape}, expected (..., {model.h_p}, {len(layout)})")
    try:
        order = [layout.index(c) for c in model.y_channels]
    except ValueError:
        raise ValidationError(f"y layout {layout} lacks channels required by the model {model.y_channels}") from None
    A = _estimator_input(model, u_past, y_past[..., order])
    batch = A.shape[:-1]
    xhat, _ = forward_cache(model.estimator, A.reshape(-1, A.shape[-1]))
    return xhat.reshape(*batch, model.n_xhat)


def predict_normalized(model: PvsidModel, xhat, u_future) -> np.ndarray:
    """Flattened standardized prediction; the quantity the loss is computed on."""
    xhat = np.asarray(xhat, dtype=np.float64)
    u_future = np.asarray(u_future, dtype=np.float64)
    if xhat.shape[-1] != model.n_xhat or u_future.shape[-2:] != (model.h_f, model.n_u) \
            or xhat.shape[:-1] != u_future.shape[:-2]:
        raise ValidationError(f"xhat {xhat.shape} / u_future {u_future.shape} do not match the model")
    z = np.concatenate([xhat, _future_input(model, u_future)], axis=-1)
    batch = z.shape[:-1]
    out, _ = forward_cache(model.predictor, z.reshape(-1, z.shape[-1]))
    return out.reshape(*batch, -1)


def predict_future(model: PvsidModel, xhat, u_future) -> np.ndarray:
    """Predicted ``w`` over the future horizon, shape ``(..., h_f, n_w)``, raw units."""
    out = predict_normalized(model, xhat, u_future)
    wn = out.reshape(*out.shape[:-1], model.h_f, model.n_w)
    return wn * model.stats.w_std + model.stats.w_mean


def predict_windows(model: PvsidModel, windows: Windows) -> np.ndarray:
    _check_windows(model, windows)
    xhat = estimate_state(model, windows.u_past, model.select_y(windows.y_past))
    return predict_future(model, xhat, windows.u_future)


def kstep_mse(model: PvsidModel, windows: Windows) -> np.ndarray:
    """Mean over windows of the squared prediction error at each step, raw units."""
    if len(windows) == 0:
        raise ValidationError("k-step MSE needs at least one test window")
    err = predict_windows(model, windows) - windows.w_future
    return np.sum(err * err, axis=2).mean(axis=0)


def split_log(log_: IoLog, fractions=(0.6, 0.2, 0.2)):
    """Contiguous train/validation/test split of a log."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValidationError("split needs three positive fractions")
    total = sum(fractions)
    n = len(log_)
    a = int(round(n * fractions[0] / total))
    b = a + int(round(n * fractions[1] / total))
    return log_.slice(0, a), log_.slice(a, b), log_.slice(b, n)


def clone_model(model: PvsidModel) -> PvsidModel:
    return copy.deepcopy(model)
