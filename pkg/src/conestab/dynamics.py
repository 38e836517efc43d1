"""Constrained ODE trajectories driven by drift-cone controls, their decay
envelope, and brackets for the hitting time to the origin ``T(x)``."""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import GeneratedCone, PolyhedralCone, dist_to_cone_boundary, dual_description
from .paths import PathGrid

__all__ = [
    "PathGrid",
    "HittingBracket",
    "integrate_constrained_ode",
    "decay_envelope",
    "hitting_time_upper",
    "lipschitz_constant_T",
    "inset_control",
    "sample_inset_controls",
    "hitting_time_bracket",
    "check_dpp",
    "exact_1d_hitting_time",
    "upper_bound_estimator",
]


class NoAdmissibleControls(ValueError):
    pass


def _velocity_caller(velocity, k: int) -> Callable:
    """Normalize ``velocity`` to ``f(m, t, z) -> list of floats``."""
    if callable(velocity):
        try:
            n_args = len(inspect.signature(velocity).parameters)
        except (TypeError, ValueError):
            n_args = 1
        if n_args >= 2:
            return lambda m, t, z: _as_floats(velocity(t, np.array(z)), t)
        return lambda m, t, z: _as_floats(velocity(t), t)
    arr = np.asarray(velocity, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite velocity samples")
    if arr.ndim == 1 and arr.shape[0] == k:
        const = arr.tolist()
        return lambda m, t, z: const
    rows = arr.reshape(-1, k).tolist()
    return lambda m, t, z: rows[m]


def _as_floats(v, t) -> list:
    out = [float(c) for c in np.ravel(v)]
    if not all(math.isfinite(c) for c in out):
        raise ValueError(f"non-finite velocity at t = {t}")
    return out


def integrate_constrained_ode(x, velocity, grid, cone: PolyhedralCone) -> PathGrid:
    """Explicit projected stepping ``z_{m+1} = pi(z_m + h_m v(t_m))``.

    ``velocity`` is a constant vector, an array with one row per step, or a
    callable ``v(t)`` / ``v(t, z)`` (the state is passed when the callable
    accepts two arguments, for feedback laws such as ``v = b(z)``).
    """
    times = np.asarray(grid.times if isinstance(grid, PathGrid) else grid, dtype=float)
    k = cone.dimension
    z = [float(c) for c in np.ravel(x)]
    if len(z) != k or not cone.contains(z):
        raise ValueError(f"initial point {z} is not in G")
    get_v = _velocity_caller(velocity, k)
    project = cone.projector.project
    out = [z]
    tl = times.tolist()
    for m in range(len(tl) - 1):
        h = tl[m + 1] - tl[m]
        v = get_v(m, tl[m], z)
        z = project([zi + h * vi for zi, vi in zip(z, v)])[0]
        out.append(z)
    return PathGrid(times, np.array(out))


def decay_envelope(x_norm: float, K: float, delta: float, t) -> np.ndarray | float:
    """``K^2 |x|^2 / (K |x| + delta t)``, the bound on ``|z(t)|``."""
    t = np.asarray(t, dtype=float)
    num = K * K * x_norm * x_norm
    if x_norm == 0.0:
        out = np.zeros_like(t)
    else:
        out = num / (K * x_norm + delta * t)
    return float(out) if out.ndim == 0 else out


def hitting_time_upper(x_norm: float, K: float, delta: float) -> float:
    return 4.0 * K * K * x_norm / delta


def lipschitz_constant_T(K: float, delta: float) -> float:
    """Lipschitz constant of the hitting-time function, ``4 K^3 / delta``."""
    return 4.0 * K**3 / delta


@dataclass(frozen=True)
class HittingBracket:
    lower: float
    upper: float
    best_control: Optional[tuple]
    samples: int
    c_estimate: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper:
            raise ValueError(f"invalid bracket [{self.lower}, {self.upper}]")

    def contains(self, t: float) -> bool:
        return self.lower <= t <= self.upper

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "width": self.upper - self.lower,
            "best_control": None if self.best_control is None else list(self.best_control),
            "samples": self.samples,
            "c_estimate": self.c_estimate,
        }


def inset_control(w, gcone: GeneratedCone, delta: float) -> np.ndarray:
    """Move ``w`` (a point of ``C``) along the central direction of ``C`` just
    far enough that its boundary distance is at least ``delta``."""
    F = gcone.facet_normals
    c0 = gcone.central_direction
    w = np.asarray(w, dtype=float)
    if F.shape[0] == 0:
        return w
    rate = F @ c0
    need = (delta - F @ w) / rate
    s = max(0.0, float(np.max(need)))
    v = w + s * (1.0 + 1e-12) * c0
    return v


def sample_inset_controls(gcone: GeneratedCone, delta: float, n: int, seed: int = 0) -> np.ndarray:
    """Constant controls in ``C(delta)``: the inset tip, insets of scaled
    extreme rays, then insets of random conic combinations."""
    if gcone.inset_empty:
        raise NoAdmissibleControls("no admissible controls: C(delta) is empty")
    rng = np.random.default_rng(seed)
    G = gcone.generators
    cands = [np.zeros(G.shape[1])]
    for g in G:
        for scale in (0.5, 1.0, 2.0):
            cands.append(scale * delta * g)
    out = []
    tries = 0
    i = 0
    while len(out) < n:
        if i < len(cands):
            w = cands[i]
            i += 1
        else:
            w = (rng.exponential(delta, size=G.shape[0])) @ G
        v = inset_control(w, gcone, delta)
        tries += 1
        if dist_to_cone_boundary(v, gcone) >= delta * (1 - 1e-12):
            out.append(v)
        elif tries > 100 * n:
            raise NoAdmissibleControls("could not sample from C(delta)")
    return np.array(out)


def hitting_time_bracket(
    x,
    cone: PolyhedralCone,
    gcone: Optional[GeneratedCone],
    K: float,
    delta: float,
    n_controls: int = 32,
    grid_h: float = 1e-2,
    seed: int = 0,
) -> HittingBracket:
    """Bracket ``T(x)``: the lower end is the longest observed time before a
    sampled constant control steers the trajectory into the ``eps_hit`` ball;
    the upper end is ``4 K^2 |x| / delta``."""
    gcone = dual_description(cone) if gcone is None else gcone
    x = np.asarray(x, dtype=float).reshape(-1)
    xn = float(np.linalg.norm(x))
    upper = hitting_time_upper(xn, K, delta)
    controls = sample_inset_controls(gcone, delta, n_controls, seed)
    if xn == 0.0:
        return HittingBracket(0.0, 0.0, tuple(controls[0].tolist()), len(controls), None)
    eps_hit = 1e-6 * (1.0 + xn)
    n_max = int(math.ceil(upper / grid_h)) + 2
    project = cone.projector.project
    best = 0.0
    best_v = None
    for v in controls:
        z = x.tolist()
        vh = (grid_h * v).tolist()
        last_out = 0.0
        for m in range(1, n_max + 1):
            z = project([a + b for a, b in zip(z, vh)])[0]
            if math.sqrt(sum(c * c for c in z)) <= eps_hit:
                break
            last_out = m * grid_h
        if last_out > best or best_v is None:
            best, best_v = last_out, v
    lower = min(best, upper)
    c_est = lower / xn
    return HittingBracket(lower, upper, tuple(best_v.tolist()), len(controls), c_est)


def exact_1d_hitting_time(delta: float) -> Callable:
    """``T(x) = |x| / delta`` on a half-line; exact since every admissible
    velocity points inward with speed at least ``delta``."""
    def T(z):
        return abs(float(np.ravel(z)[0])) / delta
    T.__name__ = "exact_1d"
    return T


def upper_bound_estimator(K: float, delta: float) -> Callable:
    def T(z):
        return hitting_time_upper(float(np.linalg.norm(np.ravel(z))), K, delta)
    T.__name__ = "upper_bound"
    return T


def check_dpp(trajectory: PathGrid, estimator: Callable, tol: float = 1e-9) -> bool:
    """``T(z(t)) <= (T(z(t0)) - (t - t0))^+ + tol`` at every grid time."""
    return bool(np.all(dpp_slack(trajectory, estimator) <= tol))


def dpp_slack(trajectory: PathGrid, estimator: Callable) -> np.ndarray:
    t = trajectory.times - trajectory.times[0]
    T0 = estimator(trajectory.values[0])
    vals = np.array([estimator(z) for z in trajectory.values])
    return vals - np.maximum(T0 - t, 0.0)
