"""Experiment configuration: a strict ``[section]`` / ``key = value`` text format.

Every key has a default supplied by a named profile (``desk`` or ``paper``).
The profile itself is the one required setting: it comes from the
``--profile`` flag or from ``profile`` in ``[experiment]``. Lists are
comma-separated; booleans are ``true``/``false``. Unknown sections or keys,
duplicates, and values of the wrong type are rejected with the offending key
and line number.
"""
from __future__ import annotations

import copy
import hashlib
import os
from dataclasses import dataclass, field

from .errors import ConfigError, ValidationError
from .identification import TrainConfig
from .kinematics import ArmGeometry
from .nmpc import NmpcConfig
from .plant import Y_IMU_OFF, Y_IMU_ON, PlantParams

PROFILES = ("desk", "paper")

_DESK = {
    "experiment": {"profile": "desk", "seed": 0, "out": "runs"},
    "plant": {
        "l1": 0.1, "l2": 0.1, "mass1": 0.06, "mass2": 0.04,
        "inertia1": 0.06 * 0.1 ** 2 / 12, "inertia2": 0.04 * 0.1 ** 2 / 12,
        "friction1": 0.2, "friction2": 0.2, "kp": 3.0, "kd": 0.05, "torque_limit": 0.3,
        "vib_freq": 12.0, "vib_damping": 0.05, "vib_coupling": 0.5, "imu_offset": 0.05,
        "noise_angle": 1e-4, "noise_gyro": 5e-3, "noise_accel": 5e-2, "noise_tip": 2e-4,
        "period": 0.02, "substeps": 50,
    },
    "data": {
        "minutes": 20.0, "speed_min": 0.03, "speed_max": 0.3, "margin": 0.03,
        "dither_std": 0.03, "dither_max_hold": 10, "split": (0.6, 0.2, 0.2), "log": "",
    },
    "model": {
        "h_p": 10, "h_f": 20, "n_xhat": 8, "gamma": 0.9, "imu": True,
        "estimator_hidden": (32, 32, 32), "predictor_hidden": (128, 128, 128),
    },
    "train": {
        "epochs": 250, "batch_size": 256, "lr": 1e-3, "weight_decay": 1e-2,
        "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
    },
    "nmpc": {"zeta": 0.5, "lam": 1e-7, "max_iter": 5, "model": ""},
    "trajectory": {
        "center_x": 0.11, "center_y": 0.0, "radius": 0.05, "points": 5, "speed": 0.06,
        "inner_ratio": 0.382,
    },
    "ablation": {
        "n_xhat": (2, 4, 6, 8, 10), "imu": (True, False), "gamma": (0.9,), "seeds": (0,), "workers": 1,
    },
}

_PAPER = copy.deepcopy(_DESK)
_PAPER["experiment"]["profile"] = "paper"
_PAPER["data"]["minutes"] = 60.0
_PAPER["model"].update(h_p=50, h_f=100, estimator_hidden=(32, 32, 32), predictor_hidden=(256, 256, 256))
_PAPER["train"]["epochs"] = 100000

_DEFAULTS = {"desk": _DESK, "paper": _PAPER}

# keys whose value names a file that must exist when set
_PATH_KEYS = {("data", "log"), ("nmpc", "model")}


def profile_defaults(profile: str) -> dict:
    if profile not in _DEFAULTS:
        raise ConfigError(f"unknown profile '{profile}', expected one of {PROFILES}", key="profile")
    return copy.deepcopy(_DEFAULTS[profile])


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: profile_defaults("desk"))

    def __getitem__(self, section) -> dict:
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    @property
    def profile(self) -> str:
        return self.values["experiment"]["profile"]

    @property
    def seed(self) -> int:
        return self.values["experiment"]["seed"]

    def plant_params(self) -> PlantParams:
        p = self["plant"]
        return PlantParams(
            geometry=ArmGeometry(p["l1"], p["l2"]), masses=(p["mass1"], p["mass2"]),
            inertias=(p["inertia1"], p["inertia2"]), friction=(p["friction1"], p["friction2"]),
            kp=p["kp"], kd=p["kd"], torque_limit=p["torque_limit"], vib_freq=p["vib_freq"],
            vib_damping=p["vib_damping"], vib_coupling=p["vib_coupling"], imu_offset=p["imu_offset"],
            noise_angle=p["noise_angle"], noise_gyro=p["noise_gyro"], noise_accel=p["noise_accel"],
            noise_tip=p["noise_tip"], period=p["period"], substeps=p["substeps"])

    def train_config(self, seed=None, n_xhat=None, imu=None, gamma=None) -> TrainConfig:
        m, t = self["model"], self["train"]
        imu = m["imu"] if imu is None else imu
        return TrainConfig(
            n_xhat=m["n_xhat"] if n_xhat is None else n_xhat,
            gamma=m["gamma"] if gamma is None else gamma,
            epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], weight_decay=t["weight_decay"],
            betas=(t["beta1"], t["beta2"]), eps=t["eps"], seed=self.seed if seed is None else seed,
            estimator_hidden=tuple(m["estimator_hidden"]), predictor_hidden=tuple(m["predictor_hidden"]),
            y_channels=Y_IMU_ON if imu else Y_IMU_OFF)

    def nmpc_config(self) -> NmpcConfig:
        n = self["nmpc"]
        return NmpcConfig(zeta=n["zeta"], lam=n["lam"], max_iter=n["max_iter"])

    def serialize(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, value in keys.items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_scalar(text: str, like, key, line):
    if isinstance(like, bool):
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"expected true/false, got '{text}'", key, line)
    if isinstance(like, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"expected an integer, got '{text}'", key, line) from None
    if isinstance(like, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got '{text}'", key, line) from None
    return text


def _parse_value(text: str, like, key, line):
    if isinstance(like, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if not items:
            raise ConfigError("expected a nonempty comma-separated list", key, line)
        return tuple(_parse_scalar(s, like[0], key, line) for s in items)
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    return _parse_scalar(text, like, key, line)


def _scan(text: str):
    """Yield ``(section, key, raw_value, line_no)`` for every assignment."""
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header '{line}'", line=no)
            section = line[1:-1].strip()
            yield section, None, None, no
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", line=no)
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            raise ConfigError("assignment before any [section] header", key, no)
        yield section, key, value, no


def parse_config_text(text: str, profile: str | None = None, base_dir: str = ".") -> ExperimentConfig:
    entries = list(_scan(text))
    file_profile = None
    for section, key, value, no in entries:
        if section == "experiment" and key == "profile":
            file_profile = (value, no)
    if profile is None and file_profile is None:
        raise ConfigError("missing required key; pass --profile or set it in [experiment]", key="profile")
    if profile is not None and file_profile is not None and file_profile[0] != profile:
        raise ConfigError(f"file selects profile '{file_profile[0]}' but '{profile}' was requested",
                          key="profile", line=file_profile[1])
    name = profile if profile is not None else file_profile[0]
    values = profile_defaults(name)
    lines = {}
    seen = set()
    for section, key, value, no in entries:
        if section not in values:
            raise ConfigError(f"unknown section [{section}]", line=no)
        if key is None:
            continue
        if key not in values[section]:
            raise ConfigError(f"unknown key in [{section}]", key, no)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key in [{section}]", key, no)
        seen.add((section, key))
        values[section][key] = _parse_value(value, values[section][key], key, no)
        lines[(section, key)] = no
    for section, key in _PATH_KEYS:
        path = values[section][key]
        if path:
            resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
            if not os.path.exists(resolved):
                raise ConfigError(f"referenced file '{path}' does not exist", key, lines.get((section, key)))
            values[section][key] = resolved
    cfg = ExperimentConfig(values)
    _validate(cfg, lines)
    return cfg


def parse_config(path=None, profile: str | None = None) -> ExperimentConfig:
    """Parse a config file; ``path=None`` yields the pure profile defaults."""
    if path is None:
        return parse_config_text("", profile or "desk")
    if not os.path.isfile(path):
        raise ConfigError(f"config file '{path}' does not exist")
    with open(path) as fh:
        text = fh.read()
    return parse_config_text(text, profile, base_dir=os.path.dirname(os.path.abspath(path)))


def _validate(cfg: ExperimentConfig, lines: dict):
    def check(section, key, ok, what):
        value = cfg[section][key]
        if not ok(value):
            raise ConfigError(f"value {_format(value)} out of range: {what}", key, lines.get((section, key)))

    check("model", "gamma", lambda g: 0 < g <= 1, "must lie in (0, 1]")
    for key in ("h_p", "h_f", "n_xhat"):
        check("model", key, lambda v: v >= 1, "must be >= 1")
    for key in ("estimator_hidden", "predictor_hidden"):
        check("model", key, lambda v: all(d >= 1 for d in v), "dims must be >= 1")
    check("train", "epochs", lambda v: v >= 1, "must be >= 1")
    check("train", "batch_size", lambda v: v >= 1, "must be >= 1")
    check("train", "lr", lambda v: v > 0, "must be > 0")
    check("train", "weight_decay", lambda v: v >= 0, "must be >= 0")
    check("train", "beta1", lambda v: 0 <= v < 1, "must lie in [0, 1)")
    check("train", "beta2", lambda v: 0 <= v < 1, "must lie in [0, 1)")
    check("nmpc", "zeta", lambda v: v >= 0, "must be >= 0")
    check("nmpc", "lam", lambda v: v > 0, "must be > 0")
    check("nmpc", "max_iter", lambda v: v >= 1, "must be >= 1")
    check("data", "minutes", lambda v: v > 0, "must be > 0")
    check("data", "split", lambda v: len(v) == 3 and all(f > 0 for f in v), "three positive fractions")
    check("data", "speed_min", lambda v: v > 0, "must be > 0")
    check("data", "speed_max", lambda v: v >= cfg["data"]["speed_min"], "must be >= speed_min")
    check("data", "dither_std", lambda v: v >= 0, "must be >= 0")
    check("data", "dither_max_hold", lambda v: v >= 1, "must be >= 1")
    check("trajectory", "speed", lambda v: v > 0, "must be > 0")
    check("trajectory", "radius", lambda v: v > 0, "must be > 0")
    check("ablation", "n_xhat", lambda v: all(n >= 1 for n in v), "dims must be >= 1")
    check("ablation", "gamma", lambda v: all(0 < g <= 1 for g in v), "must lie in (0, 1]")
    check("ablation", "workers", lambda v: v >= 1, "must be >= 1")
    check("experiment", "seed", lambda v: v >= 0, "must be >= 0")
    try:
        cfg.plant_params()
    except ValidationError as exc:
        raise ConfigError(f"invalid plant parameters: {exc}", key="plant") from None
