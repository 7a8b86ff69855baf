"""Receding-horizon control on an identified model with Levenberg-Marquardt.

Per cycle the controller estimates the state from the last ``h_p`` input and
output samples, then minimizes ``0.5 * ||l(u_f)||**2`` over the future input
sequence, where ``l`` stacks the scaled tracking errors over the horizon and
the scaled input increments. Only the first input of the optimized sequence
is applied.

Timing convention: ``y_t`` measured at cycle ``t`` belongs to the same row as
``u_t``, so it enters the estimator window one cycle later, together with
``u_t``. The first predicted output ``w_t`` therefore does not depend on the
decision ``u_t``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .csvio import write_csv
from .errors import NotWarmedUpError, NumericError, ValidationError
from .identification import PvsidModel, estimate_state, predict_normalized
from .kinematics import ArmGeometry, Trajectory, ik_path
from .nn import output_input_jacobian
from .plant import PlantParams, PlantState, measure_w, measure_y, plant_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NmpcConfig:
    zeta: float = 0.5
    lam: float = 1e-7
    max_iter: int = 5

    def __post_init__(self):
        if self.zeta < 0 or not self.lam > 0 or self.max_iter < 1:
            raise ValidationError("need zeta >= 0, lam > 0 and max_iter >= 1")


def _as_future(model: PvsidModel, u_future):
    u = np.asarray(u_future, dtype=np.float64).reshape(-1)
    if u.size != model.h_f * model.n_u:
        raise ValidationError(f"u_future has {u.size} entries, expected {model.h_f * model.n_u}")
    return u.reshape(model.h_f, model.n_u)


def residual(model: PvsidModel, xhat, u_future, u_last, reference, zeta: float = 0.5) -> np.ndarray:
    """Stacked residual: all tracking rows first, then all input-rate rows, time-major."""
    uf = _as_future(model, u_future)
    u_last = np.asarray(u_last, dtype=np.float64).reshape(-1)
    ref = np.asarray(reference, dtype=np.float64)
    if u_last.shape != (model.n_u,) or ref.shape != (model.h_f, model.n_w):
        raise ValidationError(f"u_last must have {model.n_u} entries and reference shape ({model.h_f}, {model.n_w})")
    s = model.stats
    wn = predict_normalized(model, xhat, uf).reshape(model.h_f, model.n_w)
    # (w_mean + w_std * wn - r) / w_std
    track = wn + (s.w_mean - ref) / s.w_std
    delta = np.vstack([u_last[None, :], uf[:-1]]) - uf
    rate = zeta * delta / s.u_std
    return np.concatenate([track.ravel(), rate.ravel()])


def rate_block(model: PvsidModel, zeta: float) -> np.ndarray:
    """``zeta * (S - I) / u_std`` for the time-major flattened input sequence."""
    n = model.h_f * model.n_u
    shift = np.eye(n, k=-model.n_u)
    scale = np.tile(1.0 / model.stats.u_std, model.h_f)
    return zeta * (shift - np.eye(n)) * scale[None, :]


def residual_jacobian(model: PvsidModel, xhat, u_future, zeta: float = 0.5) -> np.ndarray:
    uf = _as_future(model, u_future)
    xhat = np.asarray(xhat, dtype=np.float64).reshape(-1)
    if xhat.shape != (model.n_xhat,):
        raise ValidationError(f"xhat must have {model.n_xhat} entries")
    s = model.stats
    z = np.concatenate([xhat, ((uf - s.u_mean) / s.u_std).ravel()])
    jp = output_input_jacobian(model.predictor, z, slice(model.n_xhat, model.predictor.n_in))
    top = jp * np.tile(1.0 / s.u_std, model.h_f)[None, :]
    return np.vstack([top, rate_block(model, zeta)])


def lm_iterate(residual_fn, jacobian_fn, u0, lam: float, iters: int):
    """Fixed-count damped Gauss-Newton: ``u <- u - (J'J + lam I)^-1 J' l(u)``.

    Returns the final iterate and the cost ``0.5 * ||l||**2`` before every
    iteration plus after the last one (``iters + 1`` entries).
    """
    if not lam > 0 or iters < 1:
        raise ValidationError("need lam > 0 and iters >= 1")
    u = np.array(u0, dtype=np.float64).reshape(-1)
    costs = []
    for it in range(iters):
        r = np.asarray(residual_fn(u), dtype=np.float64)
        if not np.all(np.isfinite(r)):
            raise NumericError("non-finite residual", iteration=it)
        costs.append(0.5 * float(r @ r))
        J = np.asarray(jacobian_fn(u), dtype=np.float64)
        H = J.T @ J
        H[np.diag_indices_from(H)] += lam
        try:
            factor = scipy.linalg.cho_factor(H, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"damped normal matrix is not positive definite ({exc})", iteration=it) from None
        u = u - scipy.linalg.cho_solve(factor, J.T @ r)
    r = np.asarray(residual_fn(u), dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise NumericError("non-finite residual", iteration=iters)
    costs.append(0.5 * float(r @ r))
    return u, costs


@dataclass
class NmpcState:
    """Rolling controller memory. Treated as an immutable value by ``mpc_step``."""
    u_past: np.ndarray  # (k, n_u), oldest first, k <= h_p
    y_past: np.ndarray  # (k, n_y_full)
    plan: np.ndarray | None = None  # (h_f, n_u) optimized sequence of the previous cycle
    pending_y: np.ndarray | None = None
    cycle: int = 0

    @classmethod
    def empty(cls, n_u: int, n_y: int) -> "NmpcState":
        return cls(np.zeros((0, n_u)), np.zeros((0, n_y)))

    def push(self, u, y, h_p: int) -> "NmpcState":
        """Append one complete ``(u_s, y_s)`` sample, keeping the last ``h_p``."""
        up = np.vstack([self.u_past, np.asarray(u, dtype=np.float64)[None, :]])[-h_p:]
        yp = np.vstack([self.y_past, np.asarray(y, dtype=np.float64)[None, :]])[-h_p:]
        return replace(self, u_past=up, y_past=yp)

    def warmed_up(self, h_p: int) -> bool:
        return len(self.u_past) >= h_p


@dataclass
class MpcResult:
    u: np.ndarray
    state: NmpcState
    costs: list
    xhat: np.ndarray


def shift_plan(plan: np.ndarray) -> np.ndarray:
    return np.vstack([plan[1:], plan[-1:]])


def mpc_step(model: PvsidModel, state: NmpcState, y_t, u_prev, reference, cfg: NmpcConfig = NmpcConfig(),
             cold_start=None) -> MpcResult:
    """One control cycle.

    ``y_t`` is the full measurement vector of this cycle and ``u_prev`` the
    input applied in the previous one. ``reference`` holds the desired ``w``
    for rows ``t .. t+h_f-1``. ``cold_start`` seeds the optimizer when there
    is no previous plan; otherwise the previous plan is shifted by one step
    with its last entry repeated.
    """
    if state.pending_y is not None:
        state = state.push(u_prev, state.pending_y, model.h_p)
    state = replace(state, pending_y=np.asarray(y_t, dtype=np.float64).copy())
    if not state.warmed_up(model.h_p):
        raise NotWarmedUpError(f"controller holds {len(state.u_past)} of {model.h_p} past samples")
    ref = np.asarray(reference, dtype=np.float64)
    xhat = estimate_state(model, state.u_past, model.select_y(state.y_past))
    u_last = state.u_past[-1]
    if state.plan is not None:
        u0 = shift_plan(state.plan)
    elif cold_start is not None:
        u0 = np.asarray(cold_start, dtype=np.float64).reshape(model.h_f, model.n_u)
    else:
        u0 = np.tile(u_last, (model.h_f, 1))
    u_opt, costs = lm_iterate(lambda u: residual(model, xhat, u, u_last, ref, cfg.zeta),
                              lambda u: residual_jacobian(model, xhat, u, cfg.zeta),
                              u0.ravel(), cfg.lam, cfg.max_iter)
    plan = u_opt.reshape(model.h_f, model.n_u)
    new_state = replace(state, plan=plan, cycle=state.cycle + 1)
    return MpcResult(plan[0].copy(), new_state, costs, xhat)


def reference_slice(points: np.ndarray, t: int, h_f: int) -> np.ndarray:
    """Rows ``t .. t+h_f-1`` of the reference, holding the final point past the end."""
    idx = np.minimum(np.arange(t, t + h_f), len(points) - 1)
    return points[idx]


@dataclass
class ControlLog:
    controller: str
    period: float
    reference: np.ndarray
    w: np.ndarray
    u: np.ndarray
    costs: np.ndarray | None = None  # (N, max_iter + 1) for nmpc
    warmup_w: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self):
        return len(self.reference)

    @property
    def tip_errors(self) -> np.ndarray:
        return np.hypot(*(self.w - self.reference).T) if len(self) else np.zeros(0)

    @property
    def tip_mse(self) -> float:
        e = self.tip_errors
        return float(np.mean(e * e)) if len(e) else 0.0

    @property
    def tip_rms(self) -> float:
        return float(np.sqrt(self.tip_mse))

    def to_csv(self, path, comment=None):
        header = ["t", "rx", "ry", "wx", "wy", "u1", "u2"]
        cols = [np.arange(len(self)) * self.period, self.reference, self.w, self.u]
        if self.costs is not None:
            header += [f"cost{k}" for k in range(self.costs.shape[1])]
            cols.append(self.costs)
        data = np.column_stack(cols) if len(self) else np.zeros((0, len(header)))
        summary = f"summary: controller={self.controller} tip_mse_mm2={self.tip_mse * 1e6:.9g} " \
                  f"tip_rms_mm={self.tip_rms * 1e3:.9g}"
        write_csv(path, header, data, comment=comment)
        with open(path, "a") as fh:
            fh.write(f"# {summary}\n")


def run_closed_loop(params: PlantParams, controller: str, trajectory: Trajectory, seed: int = 0,
                    model: PvsidModel | None = None, cfg: NmpcConfig = NmpcConfig(), warmup: int | None = None,
                    geom: ArmGeometry | None = None) -> ControlLog:
    """Run ``"nmpc"`` or ``"ik_ff"`` along a tip trajectory on the simulated plant.

    The arm starts at rest at the trajectory start and is held there for
    ``warmup`` cycles (default ``h_p``) before the trajectory is played.
    Errors raised mid-run carry the partial log in ``exc.partial_log``.
    """
    if controller not in ("nmpc", "ik_ff"):
        raise ValidationError(f"unknown controller '{controller}'")
    if controller == "nmpc" and model is None:
        raise ValidationError("nmpc controller needs an identified model")
    geom = geom or params.geometry
    pts = np.asarray(trajectory.points, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        q_ref = ik_path(geom, pts)
        start = q_ref[0]
    else:
        q_ref = np.zeros((0, 2))
        start = np.zeros(2)
    h_p = model.h_p if model is not None else 10
    warmup = h_p if warmup is None else warmup
    rng = np.random.default_rng(seed)
    s = PlantState.at_rest(start)
    prev = s
    nstate = NmpcState.empty(2, 7)
    warm_w = []
    for _ in range(warmup):
        y = measure_y(params, s, prev, rng)
        warm_w.append(measure_w(params, s, rng))
        nstate = nstate.push(start, y, h_p)
        prev, s = s, plant_step(params, s, start)
    n = len(pts)
    ws, us = np.zeros((n, 2)), np.zeros((n, 2))
    costs = np.full((n, cfg.max_iter + 1), np.nan) if controller == "nmpc" else None
    u_prev = start.copy()
    result = ControlLog(controller, params.period, pts, ws, us, costs, np.array(warm_w).reshape(-1, 2))
    try:
        for t in range(n):
            y = measure_y(params, s, prev, rng)
            ws[t] = measure_w(params, s, rng)
            if controller == "ik_ff":
                u = q_ref[t]
            else:
                ref = reference_slice(pts, t, model.h_f)
                cold = None
                if nstate.plan is None:
                    cold = reference_slice(q_ref, t, model.h_f)
                res = mpc_step(model, nstate, y, u_prev, ref, cfg, cold_start=cold)
                nstate, u = res.state, res.u
                costs[t] = res.costs
            us[t] = u
            u_prev = np.asarray(u, dtype=np.float64)
            prev, s = s, plant_step(params, s, u)
    except Exception as exc:
        result.reference, result.w, result.u = pts[:t], ws[:t], us[:t]
        if costs is not None:
            result.costs = costs[:t]
        exc.partial_log = result
        raise
    return result
