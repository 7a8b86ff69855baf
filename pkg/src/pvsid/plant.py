"""Simulated 2-DoF direct-drive arm used in place of physical hardware.

The arm moves in a horizontal plane (no gravity). Each joint is driven by a
position-controlled actuator: ``tau = clamp(Kp (u - q) - Kd qdot, +-limit)``.
Link 2 carries one lightly damped structural mode, modelled as a small
rotation ``xi / l2`` of link 2 about the elbow that is excited by the link's
absolute angular acceleration. The mode does not load the rigid dynamics.

Measurements per control period:

* ``y`` (7 channels): ``alpha, beta, gyro_z, acc_x, acc_y, qdot1, qdot2`` where
  the IMU sits on link 2 at ``imu_offset`` from the elbow and reports
  acceleration in the link-2 frame.
* ``w`` (2 channels): tip position including the mode deflection.

Parameter defaults are surrogate choices, not measured values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from numba import njit

from .csvio import read_numeric_csv, write_csv
from .errors import ValidationError
from .kinematics import ArmGeometry

Y_CHANNELS = ("alpha", "beta", "gyro", "acc_x", "acc_y", "qdot1", "qdot2")
IMU_CHANNELS = (2, 3, 4)
Y_IMU_ON = (0, 1, 2, 3, 4, 5, 6)
Y_IMU_OFF = (0, 1, 5, 6)


@dataclass(frozen=True)
class PlantParams:
    geometry: ArmGeometry = field(default_factory=ArmGeometry)
    masses: tuple = (0.06, 0.04)
    # about each link's centre of mass; uniform rods by default
    inertias: tuple = (0.06 * 0.1 ** 2 / 12, 0.04 * 0.1 ** 2 / 12)
    friction: tuple = (0.2, 0.2)
    kp: float = 3.0
    kd: float = 0.05
    torque_limit: float = 0.3
    vib_freq: float = 12.0
    vib_damping: float = 0.05
    vib_coupling: float = 0.1
    imu_offset: float = 0.05
    noise_angle: float = 1e-4
    noise_gyro: float = 5e-3
    noise_accel: float = 5e-2
    noise_tip: float = 2e-4
    period: float = 0.02
    substeps: int = 50

    def __post_init__(self):
        positive = [*self.masses, *self.inertias, self.kp, self.period, self.vib_freq]
        if any(not (v > 0) for v in positive):
            raise ValidationError("masses, inertias, kp, period and vib_freq must be positive")
        if any(f < 0 for f in self.friction) or self.kd < 0 or self.torque_limit < 0 or self.vib_coupling < 0:
            raise ValidationError("friction, kd, torque_limit and vib_coupling must be nonnegative")
        if not (0 < self.vib_damping <= 1):
            raise ValidationError("vibration damping ratio must lie in (0, 1]")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValidationError("substeps must be an integer >= 1")
        noises = (self.noise_angle, self.noise_gyro, self.noise_accel, self.noise_tip)
        if any(s < 0 for s in noises):
            raise ValidationError("noise standard deviations must be nonnegative")

    def noiseless(self) -> "PlantParams":
        return replace(self, noise_angle=0.0, noise_gyro=0.0, noise_accel=0.0, noise_tip=0.0)

    @cached_property
    def packed(self) -> np.ndarray:
        m1, m2 = self.masses
        i1, i2 = self.inertias
        l1 = self.geometry.l1
        c1, c2 = 0.5 * l1, 0.5 * self.geometry.l2
        w = 2 * math.pi * self.vib_freq
        m22 = i2 + m2 * c2 * c2
        # m11 = m11_0 + 2 m2 l1 c2 cos(beta); m12 = m22 + m2 l1 c2 cos(beta)
        m11_0 = i1 + m1 * c1 * c1 + i2 + m2 * (l1 * l1 + c2 * c2)
        return np.array([self.kp, self.kd, self.torque_limit, self.friction[0], self.friction[1],
                         2 * self.vib_damping * w, w * w, m22, m2 * l1 * c2, m11_0, self.vib_coupling])

    @property
    def y_noise(self) -> np.ndarray:
        a, g, c = self.noise_angle, self.noise_gyro, self.noise_accel
        return np.array([a, a, g, c, c, g, g])


@dataclass(frozen=True)
class PlantState:
    q: tuple = (0.0, 0.0)
    qdot: tuple = (0.0, 0.0)
    vib: tuple = (0.0, 0.0)  # deflection (m) and its rate
    u: tuple = (0.0, 0.0)

    @classmethod
    def at_rest(cls, q) -> "PlantState":
        q = (float(q[0]), float(q[1]))
        return cls(q=q, u=q)


def mass_matrix(p: PlantParams, beta: float):
    m1, m2 = p.masses
    i1, i2 = p.inertias
    l1 = p.geometry.l1
    c1, c2 = 0.5 * l1, 0.5 * p.geometry.l2
    cb = math.cos(beta)
    m22 = i2 + m2 * c2 * c2
    m12 = m22 + m2 * l1 * c2 * cb
    m11 = i1 + m1 * c1 * c1 + i2 + m2 * (l1 * l1 + c2 * c2 + 2 * l1 * c2 * cb)
    return m11, m12, m22


def kinetic_energy(p: PlantParams, s: PlantState) -> float:
    m11, m12, m22 = mass_matrix(p, s.q[1])
    v1, v2 = s.qdot
    return 0.5 * (m11 * v1 * v1 + 2 * m12 * v1 * v2 + m22 * v2 * v2)


@njit(cache=True)
def _derivatives(c, x, u1, u2, out):
    # c: packed constants, see PlantParams.packed
    q1, q2, v1, v2, xi, xid = x[0], x[1], x[2], x[3], x[4], x[5]
    kp, kd, lim, f1, f2 = c[0], c[1], c[2], c[3], c[4]
    t1 = min(max(kp * (u1 - q1) - kd * v1, -lim), lim) - f1 * v1
    t2 = min(max(kp * (u2 - q2) - kd * v2, -lim), lim) - f2 * v2
    cb = math.cos(q2)
    m22 = c[7]
    m12 = m22 + c[8] * cb
    m11 = c[9] + 2.0 * c[8] * cb
    hc = c[8] * math.sin(q2)
    r1 = t1 + hc * v2 * (2.0 * v1 + v2)
    r2 = t2 - hc * v1 * v1
    det = m11 * m22 - m12 * m12
    a1 = (m22 * r1 - m12 * r2) / det
    a2 = (m11 * r2 - m12 * r1) / det
    out[0] = v1
    out[1] = v2
    out[2] = a1
    out[3] = a2
    out[4] = xid
    out[5] = -c[5] * xid - c[6] * xi - c[10] * (a1 + a2)


@njit(cache=True)
def _rk4_period(c, x, u1, u2, h, n):
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    tmp = np.empty(6)
    for _ in range(n):
        _derivatives(c, x, u1, u2, k1)
        for i in range(6):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        _derivatives(c, tmp, u1, u2, k2)
        for i in range(6):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        _derivatives(c, tmp, u1, u2, k3)
        for i in range(6):
            tmp[i] = x[i] + h * k3[i]
        _derivatives(c, tmp, u1, u2, k4)
        for i in range(6):
            x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return x


def plant_step(p: PlantParams, s: PlantState, u) -> PlantState:
    """Advance one control period with fixed-step RK4 sub-steps.

    The input is held constant over the period. The light second link makes
    the damping terms stiff: explicit RK4 needs roughly
    ``h * (kd + friction) / lambda_min(M) < 2.7``, hence the default of 50
    sub-steps per 20 ms period.
    """
    u1, u2 = float(u[0]), float(u[1])
    if not (math.isfinite(u1) and math.isfinite(u2)):
        raise ValidationError(f"non-finite input {u!r}")
    x = np.array([*s.q, *s.qdot, *s.vib], dtype=np.float64)
    x = _rk4_period(p.packed, x, u1, u2, p.period / p.substeps, p.substeps)
    return PlantState(q=(float(x[0]), float(x[1])), qdot=(float(x[2]), float(x[3])),
                      vib=(float(x[4]), float(x[5])), u=(u1, u2))


def measure_y(p: PlantParams, s: PlantState, prev: PlantState, rng: np.random.Generator | None = None) -> np.ndarray:
    """Joint angles, link-2 IMU (gyro, accel in link frame) and joint rates.

    Accelerations are backward differences over one control period against
    ``prev`` (pass ``prev = s`` when there is no history).
    """
    l1, l2 = p.geometry.l1, p.geometry.l2
    rm = p.imu_offset
    a, b = s.q
    v1, v2 = s.qdot
    xi, xid = s.vib
    acc1 = (v1 - prev.qdot[0]) / p.period
    acc12 = (v1 + v2 - prev.qdot[0] - prev.qdot[1]) / p.period
    xidd = (xid - prev.vib[1]) / p.period
    om2 = v1 + v2
    # link-1 contribution expressed in link-2 frame (rotate by -beta)
    cb, sb = math.cos(b), math.sin(b)
    ax1, ay1 = -l1 * v1 * v1, l1 * acc1
    ax = cb * ax1 + sb * ay1 - rm * om2 * om2
    ay = -sb * ax1 + cb * ay1 + rm * acc12 + (rm / l2) * xidd
    y = np.array([a, b, om2 + xid / l2, ax, ay, v1, v2])
    if rng is not None:
        y = y + p.y_noise * rng.standard_normal(7)
    return y


def measure_w(p: PlantParams, s: PlantState, rng: np.random.Generator | None = None) -> np.ndarray:
    l1, l2 = p.geometry.l1, p.geometry.l2
    a, b = s.q
    th2 = a + b
    xi = s.vib[0]
    w = np.array([l1 * math.cos(a) + l2 * math.cos(th2) - xi * math.sin(th2),
                  l1 * math.sin(a) + l2 * math.sin(th2) + xi * math.cos(th2)])
    if rng is not None:
        w = w + p.noise_tip * rng.standard_normal(2)
    return w


@dataclass
class IoLog:
    """Aligned samples: row ``t`` holds ``u_t`` and ``y_t, w_t`` measured at state ``x_t``."""
    u: np.ndarray
    y: np.ndarray
    w: np.ndarray
    period: float = 0.02

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        n = len(self.u)
        if self.u.ndim != 2 or self.y.ndim != 2 or self.w.ndim != 2 or len(self.y) != n or len(self.w) != n:
            raise ValidationError("u, y, w must be 2-D arrays with equal row counts")

    def __len__(self):
        return len(self.u)

    def slice(self, start, stop) -> "IoLog":
        return IoLog(self.u[start:stop], self.y[start:stop], self.w[start:stop], self.period)

    @property
    def header(self):
        return (["t"] + [f"u{i + 1}" for i in range(self.u.shape[1])]
                + [f"y{i + 1}" for i in range(self.y.shape[1])] + [f"w{i + 1}" for i in range(self.w.shape[1])])

    def to_csv(self, path, comment: str | None = None):
        t = np.arange(len(self)) * self.period
        write_csv(path, self.header, np.column_stack([t, self.u, self.y, self.w]), comment=comment)

    @classmethod
    def from_csv(cls, path) -> "IoLog":
        header, data, _ = read_numeric_csv(path)
        if not header or header[0] != "t":
            raise ValidationError(f"{path}: first column must be 't'")
        groups = {}
        for i, name in enumerate(header[1:], start=1):
            kind = name[:1]
            if kind not in "uyw" or not name[1:].isdigit():
                raise ValidationError(f"{path}: unexpected column '{name}'")
            groups.setdefault(kind, []).append(i)
        if set(groups) != {"u", "y", "w"}:
            raise ValidationError(f"{path}: needs u, y and w columns")
        period = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.02
        return cls(data[:, groups["u"]], data[:, groups["y"]], data[:, groups["w"]], period)


def simulate_log(p: PlantParams, u_seq, init: PlantState | None = None, seed: int = 0,
                 return_states: bool = False):
    """Roll the plant over ``u_seq`` and record ``(u_t, y_t, w_t)``."""
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.ndim != 2 or u_seq.shape[1] != 2 or len(u_seq) == 0:
        raise ValidationError("u sequence must be a nonempty (N, 2) array")
    rng = np.random.default_rng(seed)
    s = init if init is not None else PlantState.at_rest(u_seq[0])
    prev = s
    n = len(u_seq)
    ys, ws = np.empty((n, 7)), np.empty((n, 2))
    states = []
    for t in range(n):
        ys[t] = measure_y(p, s, prev, rng)
        ws[t] = measure_w(p, s, rng)
        if return_states:
            states.append(s)
        prev = s
        s = plant_step(p, s, u_seq[t])
    log = IoLog(u_seq.copy(), ys, ws, p.period)
    if return_states:
        return log, states, s
    return log
