"""JSON model artifacts.

Floats are written with ``repr`` precision by the standard ``json`` module,
so a save/load round trip reproduces every array bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .errors import InvalidInputError
from .estimator import CrtbConfig, CrtbFit, TwoblockFit
from .preprocess import ScalingModel
from .robustweights import PsiSpec
from .twoblock import TwoblockModel

FORMAT = "crtb-model"
VERSION = 1

_MODEL_ARRAYS = ("W", "P", "T", "V", "Q", "U", "Bs")
_CRTB_ARRAYS = ("floor_x", "floor_y", "wx", "wy", "Xs_imputed", "Ys_imputed")


def _arr(a) -> list:
    return np.asarray(a).tolist()


def _scaler_to_dict(s: ScalingModel) -> dict:
    return {
        "centers": _arr(s.centers),
        "scales": _arr(s.scales),
        "location_kind": s.location_kind.value,
        "scale_kind": s.scale_kind.value,
        "degenerate": list(s.degenerate),
    }


def _scaler_from_dict(d: dict) -> ScalingModel:
    return ScalingModel(
        np.asarray(d["centers"], dtype=float),
        np.asarray(d["scales"], dtype=float),
        d["location_kind"],
        d["scale_kind"],
        tuple(d.get("degenerate", ())),
    )


def _config_to_dict(cfg: CrtbConfig) -> dict:
    out = asdict(cfg)
    out["location"] = cfg.location.value
    out["scale"] = cfg.scale.value
    out["psi"] = {
        "family": cfg.psi.family.value,
        "probs": list(cfg.psi.probs),
        "calibration": cfg.psi.calibration.value,
    }
    return out


def _config_from_dict(d: dict) -> CrtbConfig:
    d = dict(d)
    psi = d.pop("psi")
    return CrtbConfig(psi=PsiSpec(psi["family"], tuple(psi["probs"]), psi["calibration"]), **d)


def to_dict(fit: TwoblockFit, meta: dict | None = None) -> dict:
    """Plain-data form of a fit; ``meta`` (e.g. column names) is stored
    verbatim and ignored on load."""
    m = fit.model
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": "crtb" if isinstance(fit, CrtbFit) else "twoblock",
        "model": {name: _arr(getattr(m, name)) for name in _MODEL_ARRAYS},
        "eta_x": m.eta_x,
        "eta_y": m.eta_y,
        "k_x": m.k_x,
        "k_y": m.k_y,
        "scaler_x": _scaler_to_dict(fit.scaler_x),
        "scaler_y": _scaler_to_dict(fit.scaler_y),
        "B": _arr(fit.B),
        "intercept": _arr(fit.intercept),
    }
    if isinstance(fit, CrtbFit):
        doc["config"] = _config_to_dict(fit.config)
        doc.update({name: _arr(getattr(fit, name)) for name in _CRTB_ARRAYS})
        doc["n_iter"] = fit.n_iter
        doc["converged"] = fit.converged
        doc["trace"] = list(fit.trace)
    if meta:
        doc["meta"] = meta
    return doc


def _matrix(values, rows: int | None = None) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.ndim == 1 and a.size == 0 and rows is not None:
        a = a.reshape(rows, 0)
    return a


def from_dict(doc: dict) -> TwoblockFit:
    if doc.get("format") != FORMAT:
        raise InvalidInputError("not a crtb model artifact")
    if doc.get("version") != VERSION:
        raise InvalidInputError(f"unsupported artifact version {doc.get('version')!r}")
    mm = doc["model"]
    model = TwoblockModel(
        **{name: _matrix(mm[name]) for name in _MODEL_ARRAYS},
        eta_x=float(doc["eta_x"]),
        eta_y=float(doc["eta_y"]),
        k_x=int(doc["k_x"]),
        k_y=int(doc["k_y"]),
    )
    common = dict(
        model=model,
        scaler_x=_scaler_from_dict(doc["scaler_x"]),
        scaler_y=_scaler_from_dict(doc["scaler_y"]),
        B=_matrix(doc["B"]),
        intercept=_matrix(doc["intercept"]),
    )
    if doc["kind"] == "twoblock":
        return TwoblockFit(**common)
    if doc["kind"] != "crtb":
        raise InvalidInputError(f"unknown model kind {doc['kind']!r}")
    extra = {name: np.asarray(doc[name]) for name in _CRTB_ARRAYS}
    extra["floor_x"] = extra["floor_x"].astype(np.uint8)
    extra["floor_y"] = extra["floor_y"].astype(np.uint8)
    for name in ("wx", "wy", "Xs_imputed", "Ys_imputed"):
        extra[name] = extra[name].astype(float)
    return CrtbFit(
        **common,
        config=_config_from_dict(doc["config"]),
        n_iter=int(doc["n_iter"]),
        converged=bool(doc["converged"]),
        trace=tuple(float(v) for v in doc["trace"]),
        **extra,
    )


def dumps(fit: TwoblockFit, meta: dict | None = None) -> str:
    return json.dumps(to_dict(fit, meta), indent=1)


def loads(text: str) -> TwoblockFit:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"model artifact is not valid JSON: {exc}") from None
    return from_dict(doc)


def save(fit: TwoblockFit, path: str | os.PathLike, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(fit, meta))


def load(path: str | os.PathLike) -> TwoblockFit:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def load_meta(path: str | os.PathLike) -> dict:
    """The ``meta`` block of a saved artifact (empty if none was stored)."""
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh).get("meta", {})
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"model artifact is not valid JSON: {exc}") from None
