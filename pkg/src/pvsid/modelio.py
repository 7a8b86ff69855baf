"""Versioned JSON model files.

Layout (``format_version`` 1)::

    {
      "format": "pvsid-model",
      "format_version": 1,
      "horizons": {"h_p": int, "h_f": int},
      "dims": {"n_u": int, "n_w": int, "n_xhat": int, "y_channels": [int, ...]},
      "gamma": float,
      "layout": ["u1", "u2", "y1", ...],        # estimator entries per past step
      "norm": {"u_mean": [...], "u_std": [...], "y_mean": [...], ...},
      "estimator": {"layers": [{"shape": [d_in, d_out], "weight": [...], "bias": [...]}, ...]},
      "predictor": {...same...},
      "training_fingerprint": str,
      "checksum": "sha256:<hex>"
    }

Weights are ``(d_in, d_out)`` matrices flattened row-major; a layer computes
``x @ W + b``. The checksum covers the canonical JSON of every other field.
Floats are written with ``repr`` so values survive the round trip exactly.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import ModelFormatError, ValidationError
from .identification import NormStats, PvsidModel
from .nn import Mlp

FORMAT = "pvsid-model"
FORMAT_VERSION = 1


def _net_to_dict(net: Mlp) -> dict:
    return {"layers": [{"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
                       for W, b in zip(net.weights, net.biases)]}


def _net_from_dict(d: dict) -> Mlp:
    weights, biases = [], []
    for i, layer in enumerate(d["layers"]):
        d_in, d_out = (int(v) for v in layer["shape"])
        w = np.array(layer["weight"], dtype=np.float64)
        b = np.array(layer["bias"], dtype=np.float64)
        if w.size != d_in * d_out or b.shape != (d_out,):
            raise ModelFormatError(f"layer {i}: arrays do not match declared shape {[d_in, d_out]}")
        weights.append(w.reshape(d_in, d_out))
        biases.append(b)
    return Mlp(weights, biases)


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def model_to_dict(model: PvsidModel, fingerprint: str = "") -> dict:
    s = model.stats
    payload = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "horizons": {"h_p": model.h_p, "h_f": model.h_f},
        "dims": {"n_u": model.n_u, "n_w": model.n_w, "n_xhat": model.n_xhat,
                 "y_channels": list(model.y_channels)},
        "gamma": float(model.gamma),
        "layout": model.layout,
        "norm": {name: getattr(s, name).tolist()
                 for name in ("u_mean", "u_std", "y_mean", "y_std", "w_mean", "w_std")},
        "estimator": _net_to_dict(model.estimator),
        "predictor": _net_to_dict(model.predictor),
        "training_fingerprint": fingerprint,
    }
    payload["checksum"] = "sha256:" + hashlib.sha256(_canonical(payload).encode()).hexdigest()
    return payload


def dumps_model(model: PvsidModel, fingerprint: str = "") -> str:
    return json.dumps(model_to_dict(model, fingerprint), indent=1, sort_keys=True) + "\n"


def save_model(path, model: PvsidModel, fingerprint: str = ""):
    text = dumps_model(model, fingerprint)
    with open(path, "w") as fh:
        fh.write(text)


def model_from_dict(d: dict) -> PvsidModel:
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise ModelFormatError("not a pvsid model file")
    if d.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {d.get('format_version')!r}, expected {FORMAT_VERSION}")
    body = {k: v for k, v in d.items() if k != "checksum"}
    expected = "sha256:" + hashlib.sha256(_canonical(body).encode()).hexdigest()
    if d.get("checksum") != expected:
        raise ModelFormatError("checksum mismatch; file is corrupted or was edited")
    try:
        norm = NormStats(**{k: np.array(v, dtype=np.float64) for k, v in d["norm"].items()})
        model = PvsidModel(
            estimator=_net_from_dict(d["estimator"]), predictor=_net_from_dict(d["predictor"]),
            h_p=int(d["horizons"]["h_p"]), h_f=int(d["horizons"]["h_f"]), n_xhat=int(d["dims"]["n_xhat"]),
            gamma=float(d["gamma"]), stats=norm, y_channels=tuple(d["dims"]["y_channels"]),
            n_u=int(d["dims"]["n_u"]), n_w=int(d["dims"]["n_w"]))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"missing or malformed field: {exc}") from None
    except ValidationError as exc:
        raise ModelFormatError(f"inconsistent shapes: {exc}") from None
    if model.layout != d.get("layout"):
        raise ModelFormatError("layout descriptor does not match dims")
    if any(getattr(norm, f).shape != (n,) for f, n in
           (("u_mean", model.n_u), ("u_std", model.n_u), ("y_mean", model.n_y), ("y_std", model.n_y),
            ("w_mean", model.n_w), ("w_std", model.n_w))):
        raise ModelFormatError("normalization statistics have the wrong length")
    return model


def loads_model(text: str) -> PvsidModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from None
    return model_from_dict(d)


def load_model(path) -> PvsidModel:
    with open(path) as fh:
        return loads_model(fh.read())


def model_fingerprint(path) -> str:
    with open(path) as fh:
        return json.loads(fh.read()).get("training_fingerprint", "")
