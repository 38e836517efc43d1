"""JSON run configuration: parsing, validation with field paths, and a
canonical re-emitter (``Config.to_dict``) that round-trips."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .diffusion import DiffusionModel
from .expr import ExprError, parse_expression
from .geometry import GeneratedCone, GeometryError, PolyhedralCone, build_cone, dual_description


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


TOP_KEYS = {"dimension", "faces", "lipschitz_K", "delta", "r_A", "model", "sim", "output", "diagnose"}
MODEL_KEYS = {"drift", "sigma", "gamma_bound", "c_floor"}
SIM_DEFAULTS = {
    "h": 0.01,
    "horizon": 10.0,
    "burn_in": 0.0,
    "n_paths": 1,
    "base_seed": 0,
    "t_cap": 100.0,
    "x0": None,
    "x_list": None,
    "target": None,
    "n_controls": 32,
}
OUTPUT_DEFAULTS = {"paths": 1, "formats": ["json", "csv"], "bins": 20, "box": None}
DIAGNOSE_DEFAULTS = {
    "Delta": 1.0,
    "kappa": 1.0,
    "blocks": 1000,
    "span": 1,
    "M0_grid": [0.0, 1.0, 2.0, 4.0, 8.0],
    "estimator": "upper_bound",
}


def _check_keys(obj: dict, allowed: set, path: str):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _number(obj, key, path, default=None, positive=False, nonneg=False, integer=False, required=False):
    p = f"{path}.{key}" if path else key
    if key not in obj or obj[key] is None:
        if required:
            raise ConfigError(p, "is required")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(p, f"expected a number, got {v!r}")
    if integer:
        if float(v) != int(v):
            raise ConfigError(p, f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(p, "must be finite")
    if positive and not v > 0:
        raise ConfigError(p, "must be positive")
    if nonneg and v < 0:
        raise ConfigError(p, "must be nonnegative")
    return v


def _vector(v, path, k=None) -> tuple:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a nonempty list of numbers")
    out = []
    for i, c in enumerate(v):
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c):
            raise ConfigError(f"{path}[{i}]", f"expected a finite number, got {c!r}")
        out.append(float(c))
    if k is not None and len(out) != k:
        raise ConfigError(path, f"expected {k} entries, got {len(out)}")
    return tuple(out)


def _matrix(v, path, k) -> tuple:
    if not isinstance(v, list) or len(v) != k:
        raise ConfigError(path, f"expected a {k}x{k} matrix")
    return tuple(_vector(row, f"{path}[{i}]", k) for i, row in enumerate(v))


def _exprs(v, path, k) -> tuple:
    if not isinstance(v, list) or len(v) != k:
        raise ConfigError(path, f"expected {k} expression strings")
    out = []
    for i, text in enumerate(v):
        p = f"{path}[{i}]"
        if not isinstance(text, str):
            raise ConfigError(p, "expected a string")
        try:
            out.append(parse_expression(text, k).text)
        except ExprError as exc:
            raise ConfigError(p, str(exc)) from None
    return tuple(out)


def _drift_spec(d, path, k) -> dict:
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigError(path, "expected an object with a 'type'")
    t = d["type"]
    if t == "constant":
        _check_keys(d, {"type", "b"}, path)
        return {"type": t, "b": _vector(d.get("b"), f"{path}.b", k)}
    if t == "affine":
        _check_keys(d, {"type", "b0", "B"}, path)
        return {"type": t, "b0": _vector(d.get("b0"), f"{path}.b0", k), "B": _matrix(d.get("B"), f"{path}.B", k)}
    if t == "radial":
        _check_keys(d, {"type", "radii", "drifts"}, path)
        radii = _vector(d.get("radii"), f"{path}.radii")
        drifts = d.get("drifts")
        if not isinstance(drifts, list) or len(drifts) != len(radii) + 1:
            raise ConfigError(f"{path}.drifts", "need len(radii) + 1 drift vectors")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ConfigError(f"{path}.radii", "must be strictly increasing")
        return {
            "type": t,
            "radii": radii,
            "drifts": tuple(_vector(v, f"{path}.drifts[{i}]", k) for i, v in enumerate(drifts)),
        }
    if t == "expr":
        _check_keys(d, {"type", "exprs"}, path)
        return {"type": t, "exprs": _exprs(d.get("exprs"), f"{path}.exprs", k)}
    raise ConfigError(f"{path}.type", f"unknown drift type {t!r}")


def _sigma_spec(d, path, k) -> dict:
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigError(path, "expected an object with a 'type'")
    t = d["type"]
    if t == "constant":
        _check_keys(d, {"type", "matrix"}, path)
        return {"type": t, "matrix": _matrix(d.get("matrix"), f"{path}.matrix", k)}
    if t == "diag_expr":
        _check_keys(d, {"type", "exprs"}, path)
        return {"type": t, "exprs": _exprs(d.get("exprs"), f"{path}.exprs", k)}
    raise ConfigError(f"{path}.type", f"unknown sigma type {t!r}")


def _plain(v):
    if isinstance(v, (tuple, list)):
        return [_plain(c) for c in v]
    if isinstance(v, dict):
        return {k: _plain(c) for k, c in v.items()}
    return v


@dataclass
class ModelSpec:
    drift: dict
    sigma: dict
    gamma_bound: Optional[float]
    c_floor: Optional[float]

    def build(self, k: int) -> DiffusionModel:
        d, s = self.drift, self.sigma
        if s["type"] == "diag_expr":
            exprs = list(d["exprs"]) if d["type"] == "expr" else [repr(c) for c in d["b"]]
            return DiffusionModel.from_expressions(
                exprs, sigma_diag_exprs=list(s["exprs"]), gamma_bound=self.gamma_bound, c_floor=self.c_floor or 0.0
            )
        S = np.array(s["matrix"])
        if d["type"] == "expr":
            return DiffusionModel.from_expressions(list(d["exprs"]), S, None, self.gamma_bound, self.c_floor)
        if d["type"] == "constant":
            return DiffusionModel.constant(d["b"], S, self.gamma_bound, self.c_floor)
        if d["type"] == "affine":
            return DiffusionModel.affine(d["b0"], d["B"], S, self.gamma_bound, self.c_floor)
        return DiffusionModel.radial(d["radii"], d["drifts"], S, self.gamma_bound, self.c_floor)


@dataclass
class Config:
    dimension: int
    normals: tuple
    directions: tuple
    lipschitz_K: Optional[float]
    delta: float
    r_A: float
    model: ModelSpec
    sim: dict
    output: dict
    diagnose: dict
    cone: PolyhedralCone = field(compare=False, repr=False, default=None)
    gcone: GeneratedCone = field(compare=False, repr=False, default=None)

    def build_model(self) -> DiffusionModel:
        return self.model.build(self.dimension)

    @property
    def x0(self) -> tuple:
        return self.sim["x0"] if self.sim["x0"] is not None else tuple([0.0] * self.dimension)

    @property
    def x_list(self) -> tuple:
        return self.sim["x_list"] if self.sim["x_list"] is not None else (self.x0,)

    def to_dict(self) -> dict:
        return _plain(
            {
                "dimension": self.dimension,
                "faces": [{"normal": n, "direction": d} for n, d in zip(self.normals, self.directions)],
                "lipschitz_K": self.lipschitz_K,
                "delta": self.delta,
                "r_A": self.r_A,
                "model": {
                    "drift": self.model.drift,
                    "sigma": self.model.sigma,
                    "gamma_bound": self.model.gamma_bound,
                    "c_floor": self.model.c_floor,
                },
                "sim": self.sim,
                "output": self.output,
                "diagnose": self.diagnose,
            }
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def config_from_dict(raw: Any) -> Config:
    _check_keys(raw, TOP_KEYS, "")
    k = _number(raw, "dimension", "", integer=True, positive=True, required=True)
    faces = raw.get("faces")
    if not isinstance(faces, list) or not faces:
        raise ConfigError("faces", "expected a nonempty list")
    normals, directions = [], []
    for i, f in enumerate(faces):
        p = f"faces[{i}]"
        _check_keys(f, {"normal", "direction"}, p)
        normals.append(_vector(f.get("normal"), f"{p}.normal", k))
        directions.append(_vector(f.get("direction"), f"{p}.direction", k))
    K = _number(raw, "lipschitz_K", "")
    if K is not None and K < 1:
        raise ConfigError("lipschitz_K", "must be >= 1")
    delta = _number(raw, "delta", "", positive=True, required=True)
    r_A = _number(raw, "r_A", "", default=0.0, nonneg=True)

    m = raw.get("model")
    if m is None:
        raise ConfigError("model", "is required")
    _check_keys(m, MODEL_KEYS, "model")
    if "drift" not in m or "sigma" not in m:
        raise ConfigError("model", "needs 'drift' and 'sigma'")
    model = ModelSpec(
        drift=_drift_spec(m["drift"], "model.drift", k),
        sigma=_sigma_spec(m["sigma"], "model.sigma", k),
        gamma_bound=_number(m, "gamma_bound", "model", positive=True),
        c_floor=_number(m, "c_floor", "model", nonneg=True),
    )
    if model.sigma["type"] == "diag_expr":
        if model.gamma_bound is None:
            raise ConfigError("model.gamma_bound", "is required for expression sigma")
        if model.drift["type"] not in ("constant", "expr"):
            raise ConfigError("model.drift.type", "expression sigma needs a constant or expr drift")

    s = raw.get("sim", {})
    _check_keys(s, set(SIM_DEFAULTS), "sim")
    sim = dict(SIM_DEFAULTS)
    for key in ("h", "horizon", "t_cap"):
        sim[key] = _number(s, key, "sim", SIM_DEFAULTS[key], positive=True)
    sim["burn_in"] = _number(s, "burn_in", "sim", 0.0, nonneg=True)
    sim["n_paths"] = _number(s, "n_paths", "sim", 1, positive=True, integer=True)
    sim["n_controls"] = _number(s, "n_controls", "sim", 32, positive=True, integer=True)
    sim["base_seed"] = _number(s, "base_seed", "sim", 0, nonneg=True, integer=True)
    if s.get("x0") is not None:
        sim["x0"] = _vector(s["x0"], "sim.x0", k)
    if s.get("x_list") is not None:
        xl = s["x_list"]
        if not isinstance(xl, list) or not xl:
            raise ConfigError("sim.x_list", "expected a nonempty list of points")
        sim["x_list"] = tuple(_vector(x, f"sim.x_list[{i}]", k) for i, x in enumerate(xl))
    if s.get("target") is not None:
        t = s["target"]
        if isinstance(t, dict) and set(t) == {"ball"}:
            sim["target"] = {"ball": _number(t, "ball", "sim.target", positive=True)}
        elif isinstance(t, dict) and set(t) == {"box"}:
            if not isinstance(t["box"], list) or len(t["box"]) != 2:
                raise ConfigError("sim.target.box", "expected [lower, upper]")
            sim["target"] = {"box": (_vector(t["box"][0], "sim.target.box[0]", k), _vector(t["box"][1], "sim.target.box[1]", k))}
        else:
            raise ConfigError("sim.target", "expected {'ball': r} or {'box': [lo, hi]}")
    for key in ("horizon", "burn_in"):
        steps = sim[key] / sim["h"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"sim.{key}", f"must be a multiple of sim.h = {sim['h']}")
    if sim["burn_in"] >= sim["horizon"] and sim["burn_in"] > 0:
        raise ConfigError("sim.burn_in", "must be smaller than sim.horizon")

    o = raw.get("output", {})
    _check_keys(o, set(OUTPUT_DEFAULTS), "output")
    output = dict(OUTPUT_DEFAULTS)
    output["paths"] = _number(o, "paths", "output", 1, nonneg=True, integer=True)
    if "formats" in o:
        fm = o["formats"]
        if not isinstance(fm, list) or any(f not in ("json", "csv") for f in fm):
            raise ConfigError("output.formats", "expected a list drawn from ['json', 'csv']")
        output["formats"] = list(fm)
    output["formats"] = tuple(output["formats"])
    b = o.get("bins", 20)
    if isinstance(b, list):
        output["bins"] = tuple(int(_number({"b": v}, "b", f"output.bins[{i}]", positive=True, integer=True)) for i, v in enumerate(b))
        if len(output["bins"]) != k:
            raise ConfigError("output.bins", f"expected {k} entries")
    else:
        output["bins"] = _number(o, "bins", "output", 20, positive=True, integer=True)
    if o.get("box") is not None:
        bx = o["box"]
        if not isinstance(bx, list) or len(bx) != 2:
            raise ConfigError("output.box", "expected [lower, upper]")
        lo, hi = _vector(bx[0], "output.box[0]", k), _vector(bx[1], "output.box[1]", k)
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError("output.box", "upper corner must exceed lower corner")
        output["box"] = (lo, hi)

    dg = raw.get("diagnose", {})
    _check_keys(dg, set(DIAGNOSE_DEFAULTS), "diagnose")
    diag = dict(DIAGNOSE_DEFAULTS)
    diag["Delta"] = _number(dg, "Delta", "diagnose", 1.0, positive=True)
    diag["kappa"] = _number(dg, "kappa", "diagnose", 1.0, positive=True)
    diag["blocks"] = _number(dg, "blocks", "diagnose", 1000, positive=True, integer=True)
    diag["span"] = _number(dg, "span", "diagnose", 1, positive=True, integer=True)
    diag["M0_grid"] = _vector(dg.get("M0_grid", DIAGNOSE_DEFAULTS["M0_grid"]), "diagnose.M0_grid")
    est = dg.get("estimator", "upper_bound")
    if est not in ("upper_bound", "exact_1d"):
        raise ConfigError("diagnose.estimator", "expected 'upper_bound' or 'exact_1d'")
    if est == "exact_1d" and k != 1:
        raise ConfigError("diagnose.estimator", "'exact_1d' needs dimension 1")
    diag["estimator"] = est

    try:
        cone = build_cone(normals, directions, K=K)
    except GeometryError as exc:
        msg = str(exc)
        path = msg.split(":")[0] if msg.startswith("faces[") else "faces"
        raise ConfigError(path, msg) from None
    gcone = dual_description(cone)
    cfg = Config(
        dimension=k,
        normals=tuple(normals),
        directions=tuple(directions),
        lipschitz_K=K,
        delta=delta,
        r_A=r_A,
        model=model,
        sim=sim,
        output=output,
        diagnose=diag,
        cone=cone,
        gcone=gcone,
    )
    for x in ([cfg.x0] if sim["x0"] is not None else []) + list(sim["x_list"] or []):
        if not cone.contains(x):
            raise ConfigError("sim", f"start point {list(x)} is not in G")
    return cfg


def loads_config(text: str) -> Config:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw)


def load_config(path) -> Config:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {p}: {exc.strerror}") from None
    return loads_config(text)
