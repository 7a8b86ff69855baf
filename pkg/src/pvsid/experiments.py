"""End-to-end workflow: collect, train, evaluate, ablate and compare controllers."""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .errors import PvsidError
from .identification import kstep_mse, make_windows, split_log, train
from .kinematics import ik_path, star_trajectory, waypoint_trajectory
from .nmpc import ControlLog, run_closed_loop
from .plant import IoLog, simulate_log

log = logging.getLogger(__name__)


def sub_seeds(seed: int, n: int = 3) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def dither(n: int, std: float, max_hold: int, rng: np.random.Generator, n_u: int = 2) -> np.ndarray:
    """Piecewise-constant Gaussian offsets held for 1..max_hold samples each."""
    out = np.zeros((n, n_u))
    t = 0
    while t < n:
        hold = int(rng.integers(1, max_hold + 1))
        out[t:t + hold] = rng.normal(0.0, std, n_u)
        t += hold
    return out


def collect(cfg: ExperimentConfig, seed: int | None = None) -> IoLog:
    """Identification run: random straight-line tip exploration tracked by IK references."""
    seed = cfg.seed if seed is None else seed
    d = cfg["data"]
    params = cfg.plant_params()
    traj_seed, dither_seed, noise_seed = sub_seeds(seed)
    traj = waypoint_trajectory(params.geometry, d["minutes"] * 60.0, params.period,
                               (d["speed_min"], d["speed_max"]), d["margin"], traj_seed)
    u = ik_path(params.geometry, traj.points)
    if d["dither_std"] > 0:
        u = u + dither(len(u), d["dither_std"], d["dither_max_hold"], np.random.default_rng(dither_seed))
    return simulate_log(params, u, seed=noise_seed)


def split_windows(cfg: ExperimentConfig, io_log: IoLog):
    m = cfg["model"]
    return tuple(make_windows(part, m["h_p"], m["h_f"]) for part in split_log(io_log, cfg["data"]["split"]))


def train_model(cfg: ExperimentConfig, io_log: IoLog, seed: int | None = None, n_xhat=None, imu=None, gamma=None,
                callback=None):
    tr, va, te = split_windows(cfg, io_log)
    tcfg = cfg.train_config(seed=seed, n_xhat=n_xhat, imu=imu, gamma=gamma)
    model, history = train(tr, va, tcfg, callback=callback)
    return model, history, te


@dataclass(frozen=True)
class Cell:
    n_xhat: int
    imu: bool
    gamma: float
    seed: int


def ablation_cells(cfg: ExperimentConfig) -> list[Cell]:
    a = cfg["ablation"]
    return [Cell(n, imu, g, s) for n, imu, g, s in itertools.product(a["n_xhat"], a["imu"], a["gamma"], a["seeds"])]


def _run_cell(args):
    cfg, cell, io_log = args
    try:
        model, _, test = train_model(cfg, io_log, seed=cell.seed, n_xhat=cell.n_xhat, imu=cell.imu, gamma=cell.gamma)
        return cell, kstep_mse(model, test), None
    except PvsidError as exc:
        return cell, None, str(exc)


def run_ablation(cfg: ExperimentConfig, logs: dict | None = None, progress=None):
    """Train every grid cell and evaluate its k-step MSE on the test split.

    The identification data for a cell is collected with the cell's seed, so
    seeds are independent replications. Returns ``(rows, failures)`` with
    rows ``(n_xhat, imu, gamma, seed, k, mse)`` in grid order.
    """
    cells = ablation_cells(cfg)
    logs = dict(logs or {})
    for seed in sorted({c.seed for c in cells}):
        if seed not in logs:
            logs[seed] = collect(cfg, seed)
    jobs = [(cfg, c, logs[c.seed]) for c in cells]
    workers = cfg["ablation"]["workers"]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_cell(job))
            if progress is not None:
                progress(results[-1])
    h_f = cfg["model"]["h_f"]
    rows, failures = [], []
    for cell, mse, err in results:
        if err is not None:
            log.warning("cell %s failed: %s", cell, err)
            failures.append((cell, err))
            mse = np.full(h_f, math.nan)
        for k in range(h_f):
            rows.append((cell.n_xhat, int(cell.imu), cell.gamma, cell.seed, k + 1, float(mse[k])))
    return rows, failures


def write_ablation(path, rows, comment=None):
    from .csvio import write_csv
    write_csv(path, ["n_xhat", "imu", "gamma", "seed", "k", "mse"], rows, comment=comment)


def star_from_config(cfg: ExperimentConfig):
    t = cfg["trajectory"]
    params = cfg.plant_params()
    return star_trajectory((t["center_x"], t["center_y"]), t["radius"], t["points"], t["speed"], params.period,
                           params.geometry, t["inner_ratio"])


def run_control(cfg: ExperimentConfig, controller: str, model=None, seed: int | None = None) -> ControlLog:
    seed = cfg.seed if seed is None else seed
    warmup = model.h_p if model is not None else cfg["model"]["h_p"]
    return run_closed_loop(cfg.plant_params(), controller, star_from_config(cfg), seed=sub_seeds(seed, 4)[3],
                           model=model, cfg=cfg.nmpc_config(), warmup=warmup)


@dataclass
class Comparison:
    nmpc: ControlLog
    ik_ff: ControlLog

    @property
    def ratio(self) -> float:
        return self.ik_ff.tip_rms / self.nmpc.tip_rms if self.nmpc.tip_rms > 0 else math.inf

    def summary_rows(self):
        return [("nmpc", self.nmpc.tip_rms * 1e3, self.nmpc.tip_mse * 1e6),
                ("ik_ff", self.ik_ff.tip_rms * 1e3, self.ik_ff.tip_mse * 1e6),
                ("ratio_ikff_over_nmpc", self.ratio, self.ratio ** 2)]

    def write_summary(self, path, comment=None):
        from .csvio import write_csv
        write_csv(path, ["controller", "tip_rms_mm", "tip_mse_mm2"], self.summary_rows(), comment=comment)


def run_compare(cfg: ExperimentConfig, model, seed: int | None = None) -> Comparison:
    return Comparison(run_control(cfg, "nmpc", model, seed), run_control(cfg, "ik_ff", model, seed))


def mean_short_horizon(mse: np.ndarray, k_max: int = 5) -> float:
    return float(np.mean(mse[:k_max]))
