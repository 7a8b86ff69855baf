"""Planar 2-link arm kinematics and tip reference trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfWorkspaceError, ValidationError

# regular pentagram inner/outer radius ratio, rounded
STAR_INNER_RATIO = 0.382


@dataclass(frozen=True)
class ArmGeometry:
    l1: float = 0.1
    l2: float = 0.1

    def __post_init__(self):
        if not (self.l1 > 0 and self.l2 > 0):
            raise ValidationError("link lengths must be positive")

    @property
    def r_min(self) -> float:
        return abs(self.l1 - self.l2)

    @property
    def r_max(self) -> float:
        return self.l1 + self.l2


@dataclass
class Trajectory:
    period: float
    points: np.ndarray  # (N, 2) tip positions in metres

    def __len__(self):
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.points)) * self.period

    def to_csv(self, path, comment: str | None = None):
        from .csvio import write_csv
        data = np.column_stack([self.times, self.points]) if len(self) else np.zeros((0, 3))
        write_csv(path, ["t", "x", "y"], data, comment=comment)


def forward_kinematics(geom: ArmGeometry, alpha, beta):
    """Tip position; accepts scalars or arrays."""
    a12 = alpha + beta
    x = geom.l1 * np.cos(alpha) + geom.l2 * np.cos(a12)
    y = geom.l1 * np.sin(alpha) + geom.l2 * np.sin(a12)
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def _elbow_angle(geom: ArmGeometry, r2: float) -> float:
    l1, l2 = geom.l1, geom.l2
    # factored forms of 1 - cos(beta) and 1 + cos(beta) avoid cancellation at full extension / fold
    r = math.sqrt(r2)
    one_minus_c = (l1 + l2 - r) * (l1 + l2 + r) / (2 * l1 * l2)
    one_plus_c = (r - abs(l1 - l2)) * (r + abs(l1 - l2)) / (2 * l1 * l2)
    s = math.sqrt(max(one_minus_c, 0.0) * max(one_plus_c, 0.0))
    c = (r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    return math.atan2(s, c)


def inverse_kinematics(geom: ArmGeometry, x: float, y: float, slack: float = 1e-12):
    """Joint angles on the branch ``beta in [0, pi]``."""
    r2 = x * x + y * y
    r = math.sqrt(r2)
    if r > geom.r_max + slack or r < geom.r_min - slack:
        raise OutOfWorkspaceError(r)
    beta = _elbow_angle(geom, r2)
    alpha = math.atan2(y, x) - math.atan2(geom.l2 * math.sin(beta), geom.l1 + geom.l2 * math.cos(beta))
    return alpha, beta


def ik_path(geom: ArmGeometry, points) -> np.ndarray:
    """Joint references for a tip path, unwrapped so ``alpha`` is continuous."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    q = np.array([inverse_kinematics(geom, px, py) for px, py in pts]).reshape(-1, 2)
    if len(q):
        q[:, 0] = np.unwrap(q[:, 0])
    return q


def _sample_polyline(vertices: np.ndarray, speeds: np.ndarray, period: float, n_samples: int | None = None):
    """Sample a polyline traversed with a constant speed per segment."""
    seg = np.diff(vertices, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    durations = lengths / speeds
    t_knots = np.concatenate([[0.0], np.cumsum(durations)])
    if n_samples is None:
        n_samples = int(math.floor(t_knots[-1] / period + 1e-9)) + 1
    t = np.arange(n_samples) * period
    idx = np.clip(np.searchsorted(t_knots, t, side="right") - 1, 0, len(seg) - 1)
    frac = np.clip((t - t_knots[idx]) / durations[idx], 0.0, 1.0)
    return vertices[idx] + frac[:, None] * seg[idx]


def _segment_min_radius(p: np.ndarray, q: np.ndarray) -> float:
    d = q - p
    dd = float(d @ d)
    s = 0.0 if dd == 0 else min(max(-float(p @ d) / dd, 0.0), 1.0)
    return float(np.hypot(*(p + s * d)))


def waypoint_trajectory(geom: ArmGeometry, duration: float, period: float, speed_range=(0.03, 0.3),
                        margin: float = 0.03, seed: int = 0, sector=(-math.pi / 2, math.pi / 2)) -> Trajectory:
    """Random straight-line exploration between targets inside the workspace.

    Targets are drawn uniformly (by area) from the annulus shrunk by
    ``margin`` and restricted to polar angles in ``sector``; segments that
    would dip into the inner hole are redrawn. Each segment gets its own
    uniformly drawn speed. Motion is continuous, with no dwell at targets.
    """
    if duration <= 0 or period <= 0:
        raise ValidationError("duration and period must be positive")
    v_lo, v_hi = speed_range
    if not (0 < v_lo <= v_hi):
        raise ValidationError(f"speed range must be positive and ordered, got {speed_range}")
    r_lo, r_hi = geom.r_min + margin, geom.r_max - margin
    if margin < 0 or r_lo >= r_hi:
        raise ValidationError(f"margin {margin} leaves no sampling region in the workspace")
    th_lo, th_hi = sector
    if not th_lo < th_hi:
        raise ValidationError("sector bounds must be ordered")
    rng = np.random.default_rng(seed)

    def draw():
        r = math.sqrt(rng.uniform(r_lo * r_lo, r_hi * r_hi))
        th = rng.uniform(th_lo, th_hi)
        return np.array([r * math.cos(th), r * math.sin(th)])

    n_samples = int(round(duration / period))
    vertices = [draw()]
    speeds = []
    total_time = 0.0
    while total_time < duration + period:
        for _ in range(1000):
            nxt = draw()
            if _segment_min_radius(vertices[-1], nxt) >= r_lo:
                break
        else:
            raise ValidationError("could not find a feasible segment; margin too large for this sector")
        v = rng.uniform(v_lo, v_hi)
        total_time += float(np.hypot(*(nxt - vertices[-1]))) / v
        vertices.append(nxt)
        speeds.append(v)
    pts = _sample_polyline(np.array(vertices), np.array(speeds), period, n_samples)
    return Trajectory(period, pts)


def star_vertices(center, outer_radius: float, points: int = 5, inner_ratio: float = STAR_INNER_RATIO) -> np.ndarray:
    """Closed star polygon starting and ending at the top outer vertex."""
    k = np.arange(2 * points + 1)
    radius = np.where(k % 2 == 0, outer_radius, outer_radius * inner_ratio)
    ang = math.pi / 2 + k * math.pi / points
    verts = np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
    verts[-1] = verts[0]
    return verts


def star_trajectory(center=(0.11, 0.0), outer_radius: float = 0.05, points: int = 5, speed: float = 0.06,
                    period: float = 0.02, geom: ArmGeometry | None = None,
                    inner_ratio: float = STAR_INNER_RATIO) -> Trajectory:
    """Closed star traversed once at constant tip speed.

    Uses ``round(L / (speed * period)) + 1`` samples spread evenly along the
    perimeter, so the first and last samples coincide.
    """
    if speed <= 0 or period <= 0 or outer_radius <= 0 or points < 2:
        raise ValidationError("star needs positive speed, period, radius and >= 2 points")
    geom = geom or ArmGeometry()
    verts = star_vertices(center, outer_radius, points, inner_ratio)
    r = np.hypot(verts[:, 0], verts[:, 1])
    # the inner hole is only a concern for l1 != l2 or stars around the base; check the edges
    min_r = min(_segment_min_radius(p, q) for p, q in zip(verts[:-1], verts[1:]))
    if r.max() > geom.r_max or min_r < geom.r_min:
        bad = r.max() if r.max() > geom.r_max else min_r
        raise OutOfWorkspaceError(bad, f"star reaches radius {bad:.6g} m outside the workspace")
    seg = np.diff(verts, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    length = cum[-1]
    n = int(round(length / (speed * period))) + 1
    s = np.linspace(0.0, length, n)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / (cum[idx + 1] - cum[idx])
    pts = verts[idx] + frac[:, None] * seg[idx]
    pts[-1] = verts[0]
    return Trajectory(period, pts)


def path_length(points) -> float:
    d = np.diff(np.asarray(points), axis=0)
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))
