"""Dense ReLU networks with hand-written reverse-mode gradients and AdamW.

Weights are stored as ``(d_in, d_out)`` matrices so a batch of row vectors
propagates as ``x @ W + b``. All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise ValidationError("network needs matching, nonempty weight and bias lists")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValidationError(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ValidationError(f"layer {i}: input dim {W.shape[0]} != previous output dim")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def count_params(layer_dims) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def mlp_init(layer_dims, seed: int) -> Mlp:
    """He-initialized network: ``W ~ N(0, 2/fan_in)``, zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) != d or d < 1 for d in dims):
        raise ValidationError(f"layer_dims must be >= 2 positive integers, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in))
        biases.append(np.zeros(d_out))
    return Mlp(weights, biases)


def _check_input(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.n_in:
        raise ValidationError(f"input has shape {x.shape}, network expects last dim {net.n_in}")
    return x


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network on one input vector or a ``(batch, d_in)`` array."""
    h = _check_input(net, x)
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def forward_cache(net: Mlp, X: np.ndarray):
    """Batched forward pass that keeps the layer inputs for ``backward``."""
    X = _check_input(net, X)
    if X.ndim == 1:
        X = X[None, :]
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W
        h += b
        if i < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    return h, acts


def backward(net: Mlp, acts, d_out: np.ndarray, need_input_grad: bool = False):
    """Reverse pass. Returns ``(grads, d_input)`` with grads in ``params()`` order."""
    grads = [None] * (2 * len(net.weights))
    delta = d_out
    for i in range(len(net.weights) - 1, -1, -1):
        a_in = acts[i]
        grads[2 * i] = a_in.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0 and not need_input_grad:
            return grads, None
        delta = delta @ net.weights[i].T
        if i > 0:
            # ReLU subgradient at 0 is 0; hidden activations are > 0 exactly where active
            delta *= acts[i] > 0.0
    return grads, delta


def loss_and_param_gradient(net: Mlp, inputs, targets, weights):
    """Weighted squared error averaged over the batch, and its exact gradient.

    ``loss = mean_b sum_j weights[j] * (net(x_b)_j - t_bj)**2``. ``weights``
    broadcasts against the ``(batch, d_out)`` error array, so it may be a
    per-output vector or a full per-sample array.
    """
    X = _check_input(net, inputs)
    if X.ndim == 1:
        X = X[None, :]
    T = np.asarray(targets, dtype=np.float64).reshape(X.shape[0], -1) if np.size(targets) else None
    if X.shape[0] == 0 or T is None or T.shape != (X.shape[0], net.n_out):
        raise ValidationError(f"targets must have shape ({X.shape[0]}, {net.n_out})")
    wts = np.asarray(weights, dtype=np.float64)
    try:
        wts = np.broadcast_to(wts, T.shape)
    except ValueError:
        raise ValidationError(f"weights of shape {wts.shape} do not broadcast to {T.shape}") from None
    if np.any(wts < 0):
        raise ValidationError("weights must be nonnegative")
    out, acts = forward_cache(net, X)
    err = out - T
    n = X.shape[0]
    loss = float(np.sum(wts * err * err) / n)
    grads, _ = backward(net, acts, (2.0 / n) * wts * err)
    return loss, grads


def output_input_jacobian(net: Mlp, x, cols: slice | range | None = None) -> np.ndarray:
    """``d net(x) / d x`` restricted to the input columns in ``cols``.

    Computed as a product of weight matrices masked by the active ReLU set,
    so the cost scales with the number of requested columns.
    """
    x = _check_input(net, x)
    if x.ndim != 1:
        raise ValidationError("Jacobian is evaluated at a single input vector")
    if cols is None:
        cols = slice(0, net.n_in)
    start = 0 if cols.start is None else cols.start
    stop = net.n_in if cols.stop is None else cols.stop
    if cols.step not in (None, 1) or not (0 <= start <= stop <= net.n_in):
        raise ValidationError(f"column range {cols} is outside input dim {net.n_in}")
    # rows of M: d(layer activation)/d(x_j) for each selected input j
    M = net.weights[0][start:stop, :]
    h = x @ net.weights[0] + net.biases[0]
    for W, b in zip(net.weights[1:], net.biases[1:]):
        active = h > 0.0
        M = (M * active) @ W
        h = np.maximum(h, 0.0) @ W + b
    return np.ascontiguousarray(M.T)


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_init(params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2) -> OptimizerState:
    return OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay,
                          m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adamw_step(params, grads, state: OptimizerState):
    """One bias-corrected Adam update with decoupled weight decay, in place.

    ``params`` is a list of arrays (e.g. ``net.params()``); they are mutated and
    also returned together with the state for convenience.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("gradient structure does not match parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericError("non-finite gradient entries; parameters left unchanged", iteration=state.step + 1)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2_sqrt = np.sqrt(1.0 - b2 ** state.step)
    step_size = state.lr / bc1
    decay = 1.0 - state.lr * state.weight_decay
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p *= decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v)
        denom /= bc2_sqrt
        denom += state.eps
        p -= step_size * (m / denom)
    return params, state
