"""Command-line entry point.

    conestab <subcommand> --config FILE [--out DIR] [--seed S] [--paths N]
             [--horizon T] [--dt H] [--jobs J]

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure,
3 a requested check failed. ``CONESTAB_LOG`` sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import Config, ConfigError, config_from_dict, load_config
from .diffusion import SimulationError, simulate_ensemble, simulate_path
from .dynamics import (
    NoAdmissibleControls,
    decay_envelope,
    exact_1d_hitting_time,
    hitting_time_bracket,
    hitting_time_upper,
    upper_bound_estimator,
)
from .ergodics import (
    estimate_hitting_time,
    estimate_invariant_measure,
    exp_moment_check,
    lyapunov_drift_diagnostic,
    tightness_diagnostic,
)
from .expr import ExprEvalError
from .geometry import (
    GeometryError,
    ModelEvaluationError,
    active_set,
    check_drift_condition,
    check_nondegeneracy,
    check_regularity,
    in_cone,
)
from .skorokhod import ProjectionError, estimate_lipschitz, project_point_with_push, project_velocity

log = logging.getLogger("conestab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CHECK_FAILED = 0, 1, 2, 3
COMMANDS = ("check", "project", "ode", "sde", "hitting", "invariant", "diagnose")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conestab", description="Reflected diffusions in polyhedral cones.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    helps = {
        "check": "cone geometry and model conditions",
        "project": "project one point (and optionally a velocity)",
        "ode": "constrained ODE under the drift, against the decay envelope",
        "sde": "simulate an ensemble of projected Euler paths",
        "hitting": "hitting-time estimates and T(x) brackets",
        "invariant": "occupation histogram and moments of one long path",
        "diagnose": "drift diagnostic, exponential moments, tail table",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", help="output directory (summary on stdout if omitted)")
        p.add_argument("--seed", type=int, help="override sim.base_seed")
        p.add_argument("--paths", type=int, help="override sim.n_paths")
        p.add_argument("--horizon", type=float, help="override sim.horizon")
        p.add_argument("--dt", type=float, help="override sim.h")
        p.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")
        if name == "project":
            p.add_argument("--point", help="comma-separated point y (default sim.x0)")
            p.add_argument("--velocity", help="comma-separated velocity v; projects (pi(y), v)")
    return parser


def _setup_logging():
    level = os.environ.get("CONESTAB_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    log.setLevel(levels.get(level, logging.WARNING))
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)


# ---------------------------------------------------------------------------
# output


def _clean(obj):
    """JSON-ready copy; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def trace_csv(times, states, push_total) -> str:
    k = states.shape[1]
    lines = [",".join(["t"] + [f"x{i}" for i in range(k)] + ["push_total"])]
    for t, x, p in zip(times.tolist(), states.tolist(), push_total.tolist()):
        lines.append(",".join(repr(float(v)) for v in [t, *x, p]))
    return "\n".join(lines) + "\n"


class _Output:
    def __init__(self, out: Optional[str], formats):
        self.dir = Path(out) if out else None
        self.formats = formats
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def summary(self, command: str, data: dict):
        text = dumps_json(data)
        if self.dir is None:
            sys.stdout.write(text)
        elif "json" in self.formats:
            (self.dir / f"{command}_summary.json").write_text(text)

    def trace(self, name: str, times, states, push_total):
        if self.dir is not None and "csv" in self.formats:
            (self.dir / f"{name}.csv").write_text(trace_csv(times, states, push_total))


# ---------------------------------------------------------------------------
# subcommands


def _K(cfg: Config) -> tuple:
    if cfg.lipschitz_K is not None:
        return cfg.lipschitz_K, "configured"
    est = estimate_lipschitz(cfg.cone, trials=200, seed=cfg.sim["base_seed"])
    log.warning("lipschitz_K not configured; using the empirical lower bound %r", est)
    return max(1.0, est), "estimated"


def _parse_vec(text: str, k: int, flag: str) -> list:
    try:
        vals = [float(c) for c in text.split(",")]
    except ValueError:
        raise ConfigError(flag, f"expected {k} comma-separated numbers") from None
    if len(vals) != k or not all(math.isfinite(v) for v in vals):
        raise ConfigError(flag, f"expected {k} finite comma-separated numbers")
    return vals


def cmd_check(cfg: Config, args, out: _Output) -> int:
    model = cfg.build_model()
    gc = cfg.gcone
    K, source = _K(cfg)
    seed = cfg.sim["base_seed"]
    K_lower = estimate_lipschitz(cfg.cone, trials=200, seed=seed)
    reports = [
        check_regularity(model.drift, model.sigma, cfg.cone, model.gamma_bound, seed=seed),
        check_drift_condition(model.b, cfg.cone, cfg.delta, cfg.r_A, gcone=gc, seed=seed),
        check_nondegeneracy(model.sigma, cfg.cone, model.c_floor, seed=seed),
    ]
    k_ok = K_lower <= K * (1 + 1e-9)
    data = {
        "command": "check",
        "cone": {
            "dimension": cfg.dimension,
            "faces": cfg.cone.n_faces,
            "fingerprint": cfg.cone.fingerprint(),
            "facet_normals": gc.facet_normals,
            "full_dimensional": gc.full_dimensional,
            "degenerate_lineality": gc.degenerate_lineality,
            "inset_empty": gc.inset_empty,
        },
        "lipschitz": {"K": K, "source": source, "empirical_lower_bound": K_lower, "consistent": k_ok},
        "conditions": [r.to_dict() for r in reports],
    }
    data["passed"] = bool(all(r.passed for r in reports) and k_ok and not gc.inset_empty)
    out.summary("check", data)
    return EXIT_OK if data["passed"] else EXIT_CHECK_FAILED


def cmd_project(cfg: Config, args, out: _Output) -> int:
    k = cfg.dimension
    y = _parse_vec(args.point, k, "--point") if args.point else list(cfg.x0)
    phi, alpha = project_point_with_push(y, cfg.cone)
    data = {
        "command": "project",
        "y": y,
        "phi": phi,
        "push": alpha,
        "active_set": sorted(active_set(phi, cfg.cone)),
    }
    if args.velocity:
        v = _parse_vec(args.velocity, k, "--velocity")
        u = project_velocity(phi, v, cfg.cone)
        data["velocity"] = {"v": v, "projected": u, "v_in_C": in_cone(v, cfg.gcone)}
    out.summary("project", data)
    return EXIT_OK


def cmd_ode(cfg: Config, args, out: _Output) -> int:
    model = cfg.build_model()
    K, source = _K(cfg)
    h, horizon = cfg.sim["h"], cfg.sim["horizon"]
    n = int(round(horizon / h))
    project = cfg.cone.projector.project
    z = list(cfg.x0)
    states, pushes = [z], [0.0]
    total = 0.0
    vmax = 0.0
    for m in range(n):
        v = list(model.drift(z))
        vmax = max(vmax, math.sqrt(sum(c * c for c in v)))
        y = [a + h * b for a, b in zip(z, v)]
        z = project(y)[0]
        total += math.sqrt(sum((a - b) ** 2 for a, b in zip(z, y)))
        states.append(z)
        pushes.append(total)
    times = np.arange(n + 1) * h
    st = np.array(states)
    norms = np.linalg.norm(st, axis=1)
    x_norm = float(norms[0])
    env = decay_envelope(x_norm, K, cfg.delta, times)
    excess = norms - env - 10.0 * K * h
    eps_hit = 1e-6 * (1.0 + x_norm)
    hit = np.flatnonzero(norms <= eps_hit)
    hit_time = float(times[hit[0]]) if hit.size else None
    upper = hitting_time_upper(x_norm, K, cfg.delta)
    envelope_ok = bool(np.all(excess <= 0.0))
    hit_ok = hit_time is not None or horizon < upper + h
    hit_ok = hit_ok and (hit_time is None or hit_time <= upper + h)
    out.trace("ode_trace", times, st, np.array(pushes))
    data = {
        "command": "ode",
        "x0": list(cfg.x0),
        "K": K,
        "K_source": source,
        "delta": cfg.delta,
        "h": h,
        "steps": n,
        "final_state": st[-1],
        "max_speed": vmax,
        "envelope": {"max_excess": float(excess.max()), "slack_term": 10.0 * K * h, "holds": envelope_ok},
        "hitting": {"eps_hit": eps_hit, "time": hit_time, "upper_bound": upper, "holds": hit_ok},
        "push_total": total,
    }
    # the envelope is only implied when the drift stays in C(delta)
    out.summary("ode", data)
    return EXIT_OK if envelope_ok and hit_ok else EXIT_CHECK_FAILED


def cmd_sde(cfg: Config, args, out: _Output) -> int:
    model = cfg.build_model()
    s = cfg.sim
    hit_radius = s["target"]["ball"] if s["target"] and "ball" in s["target"] else None
    keep = cfg.output["paths"]
    ens = simulate_ensemble(
        list(cfg.x_list), model, cfg.cone, s["horizon"], s["h"], s["n_paths"], s["base_seed"],
        hit_radius=hit_radius, nu_block=cfg.diagnose["Delta"], n_jobs=args.jobs, keep_paths=keep,
    )
    for p in ens.paths:
        out.trace(f"trace_{p.path_index}", p.times, p.states, p.push_total)
    data = {"command": "sde", **ens.to_dict()}
    out.summary("sde", data)
    if ens.failures:
        log.warning("%d of %d paths failed", ens.failures, ens.count)
    return EXIT_RUNTIME if ens.failures == ens.count else EXIT_OK


def cmd_hitting(cfg: Config, args, out: _Output) -> int:
    s = cfg.sim
    if s["target"] is None:
        raise ConfigError("sim.target", "is required for the hitting subcommand")
    model = cfg.build_model()
    K, source = _K(cfg)
    target = s["target"]
    if "box" in target:
        target = {"box": [list(target["box"][0]), list(target["box"][1])]}
    ests = estimate_hitting_time(
        model, cfg.cone, target, list(cfg.x_list), s["n_paths"], s["h"], s["t_cap"], s["base_seed"], n_jobs=args.jobs
    )
    rows = []
    for est in ests:
        row = est.to_dict()
        try:
            br = hitting_time_bracket(est.x, cfg.cone, cfg.gcone, K, cfg.delta, n_controls=s["n_controls"], seed=s["base_seed"])
            row["T_bracket"] = br.to_dict()
        except NoAdmissibleControls as exc:
            row["T_bracket"] = {"error": str(exc)}
        rows.append(row)
    data = {"command": "hitting", "K": K, "K_source": source, "target": target, "t_cap": s["t_cap"], "estimates": rows}
    data["all_censored"] = [e.all_censored for e in ests]
    out.summary("hitting", data)
    return EXIT_CHECK_FAILED if any(e.all_censored for e in ests) else EXIT_OK


def _default_box(cfg: Config, states) -> tuple:
    lo = np.zeros(cfg.dimension)
    hi = np.maximum(np.max(states, axis=0), 1e-12)
    lo = np.minimum(lo, np.min(states, axis=0))
    return lo.tolist(), hi.tolist()


def cmd_invariant(cfg: Config, args, out: _Output) -> int:
    model = cfg.build_model()
    s = cfg.sim
    path = simulate_path(cfg.x0, model, cfg.cone, s["horizon"], s["h"], s["base_seed"])
    box = cfg.output["box"] or _default_box(cfg, path.states)
    est = estimate_invariant_measure(
        model, cfg.cone, s["burn_in"], s["horizon"], s["h"], cfg.output["bins"], box, s["base_seed"], path=path
    )
    if cfg.output["paths"] > 0:
        out.trace("trace_0", path.times, path.states, path.push_total)
    data = {
        "command": "invariant",
        "x0": list(cfg.x0),
        "burn_in": s["burn_in"],
        "horizon": s["horizon"],
        "h": s["h"],
        "base_seed": s["base_seed"],
        "sigma_violations": path.sigma_violations,
        **est.to_dict(),
    }
    out.summary("invariant", data)
    return EXIT_OK


def cmd_diagnose(cfg: Config, args, out: _Output) -> int:
    model = cfg.build_model()
    K, source = _K(cfg)
    s, dg = cfg.sim, cfg.diagnose
    steps = dg["Delta"] / s["h"]
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError("diagnose.Delta", f"must be a multiple of sim.h = {s['h']}")
    path = simulate_path(cfg.x0, model, cfg.cone, s["horizon"], s["h"], s["base_seed"])
    if dg["estimator"] == "exact_1d":
        T = exact_1d_hitting_time(cfg.delta)
    else:
        T = upper_bound_estimator(K, cfg.delta)
    drift = lyapunov_drift_diagnostic(path, dg["Delta"], K, cfg.delta, T, r_A=cfg.r_A, estimator_name=dg["estimator"])
    em = exp_moment_check(
        model, cfg.cone, dg["kappa"], dg["Delta"], dg["blocks"], s["n_paths"], s["h"], s["base_seed"],
        span=dg["span"], x0=cfg.x0,
    )
    ens = simulate_ensemble(list(cfg.x_list), model, cfg.cone, s["horizon"], s["h"], s["n_paths"], s["base_seed"], n_jobs=args.jobs)
    table = tightness_diagnostic(ens, dg["M0_grid"])
    drift_assertable = dg["estimator"] == "exact_1d"
    drift_ok = drift.violations == 0 or not drift_assertable
    data = {
        "command": "diagnose",
        "K": K,
        "K_source": source,
        "drift": {**drift.to_dict(), "assertable": drift_assertable, "holds": drift_ok},
        "exp_moment": em.to_dict(),
        "tightness": [{"M0": m, "max_frequency": f} for m, f in table],
        "passed": bool(drift_ok and em.passed),
    }
    out.summary("diagnose", data)
    return EXIT_OK if data["passed"] else EXIT_CHECK_FAILED


HANDLERS = {
    "check": cmd_check,
    "project": cmd_project,
    "ode": cmd_ode,
    "sde": cmd_sde,
    "hitting": cmd_hitting,
    "invariant": cmd_invariant,
    "diagnose": cmd_diagnose,
}


def _apply_overrides(cfg: Config, args) -> Config:
    raw = cfg.to_dict()
    for flag, key in (("seed", "base_seed"), ("paths", "n_paths"), ("horizon", "horizon"), ("dt", "h")):
        val = getattr(args, flag)
        if val is not None:
            raw["sim"][key] = val
    return config_from_dict(raw)


def run_cli(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    if args.jobs < 1:
        sys.stderr.write("conestab: error: --jobs must be >= 1\n")
        return EXIT_INVALID
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = _Output(args.out, cfg.output["formats"])
        return HANDLERS[args.command](cfg, args, out)
    except ConfigError as exc:
        sys.stderr.write(f"conestab: invalid configuration: {exc}\n")
        return EXIT_INVALID
    except (SimulationError, ProjectionError, ModelEvaluationError, ExprEvalError, GeometryError) as exc:
        sys.stderr.write(f"conestab: runtime failure: {exc}\n")
        return EXIT_RUNTIME
    except ValueError as exc:
        sys.stderr.write(f"conestab: invalid input: {exc}\n")
        return EXIT_INVALID
    except OSError as exc:
        sys.stderr.write(f"conestab: i/o failure: {exc}\n")
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
