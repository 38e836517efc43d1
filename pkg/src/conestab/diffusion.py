"""Diffusion models and the projected Euler-Maruyama scheme for the
reflected SDE ``X = Gamma(x + int sigma(X) dW + int b(X) ds)``."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import Expr, ExprEvalError, parse_expression
from .geometry import PolyhedralCone
from .paths import PathGrid, uniform_grid
from .rng import NormalStream

logger = logging.getLogger(__name__)

CHUNK = 4096


class SimulationError(RuntimeError):
    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


def _spectral_norm(s) -> float:
    return float(np.linalg.norm(np.asarray(s, dtype=float), 2))


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """Drift ``b`` and (square) diffusion matrix ``sigma`` on ``R^k``.

    ``drift`` maps a list of ``k`` floats to a length-``k`` sequence and
    ``sigma`` to a ``k x k`` nested sequence. When a coefficient is
    state-independent its value is also kept in ``constant_drift`` /
    ``constant_sigma`` so the integrator can skip the call.
    """

    dimension: int
    drift: Callable
    sigma: Callable
    gamma_bound: float
    c_floor: float = 0.0
    constant_drift: Optional[tuple] = None
    constant_sigma: Optional[tuple] = None
    description: dict = field(default_factory=dict)

    def b(self, x) -> np.ndarray:
        return np.asarray(self.drift([float(c) for c in np.ravel(x)]), dtype=float)

    def sig(self, x) -> np.ndarray:
        out = np.asarray(self.sigma([float(c) for c in np.ravel(x)]), dtype=float)
        return np.atleast_2d(out)

    def fingerprint(self) -> str:
        meta = {"description": self.description, "gamma_bound": self.gamma_bound, "c_floor": self.c_floor}
        blob = json.dumps(meta, sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_sigma_scale(self, factor: float) -> "DiffusionModel":
        sig = self.sigma
        const = None
        if self.constant_sigma is not None:
            const = tuple(tuple(factor * c for c in row) for row in self.constant_sigma)
        if const is not None:
            desc = dict(self.description, sigma={"type": "constant", "matrix": [list(r) for r in const]})
        else:
            desc = dict(self.description, sigma_scale=factor * self.description.get("sigma_scale", 1.0))
        return DiffusionModel(
            self.dimension,
            self.drift,
            (lambda x: const) if const is not None else (lambda x: [[factor * c for c in row] for row in sig(x)]),
            gamma_bound=abs(factor) * self.gamma_bound,
            c_floor=factor * factor * self.c_floor,
            constant_drift=self.constant_drift,
            constant_sigma=const,
            description=desc,
        )

    # -- constructors ---------------------------------------------------

    @classmethod
    def constant(cls, b, sigma, gamma_bound=None, c_floor=None) -> "DiffusionModel":
        b = tuple(float(c) for c in np.ravel(b))
        k = len(b)
        S = np.atleast_2d(np.asarray(sigma, dtype=float))
        if S.shape == (1, 1) and k > 1:
            S = S[0, 0] * np.eye(k)
        if S.shape != (k, k):
            raise ValueError(f"sigma has shape {S.shape}, expected {(k, k)}")
        Sc = tuple(tuple(float(c) for c in row) for row in S)
        gamma = _spectral_norm(S) if gamma_bound is None else float(gamma_bound)
        c = float(np.linalg.eigvalsh(S @ S.T)[0]) if c_floor is None else float(c_floor)
        return cls(
            k,
            lambda x: b,
            lambda x: Sc,
            gamma_bound=gamma,
            c_floor=c,
            constant_drift=b,
            constant_sigma=Sc,
            description={"drift": {"type": "constant", "b": list(b)}, "sigma": {"type": "constant", "matrix": S.tolist()}},
        )

    @classmethod
    def affine(cls, b0, B, sigma, gamma_bound=None, c_floor=None) -> "DiffusionModel":
        """Drift ``b0 + B x`` with a constant ``sigma``."""
        base = cls.constant(b0, sigma, gamma_bound, c_floor)
        b0 = base.constant_drift
        k = base.dimension
        Bm = np.asarray(B, dtype=float).reshape(k, k)
        rows = [tuple(float(c) for c in r) for r in Bm]

        def drift(x):
            return [b0[i] + sum(r * xi for r, xi in zip(rows[i], x)) for i in range(k)]

        desc = dict(base.description, drift={"type": "affine", "b0": list(b0), "B": Bm.tolist()})
        if gamma_bound is None:
            # the Lipschitz part of the regularity constant
            gamma = max(base.gamma_bound, base.gamma_bound + _spectral_norm(Bm))
        else:
            gamma = float(gamma_bound)
        return cls(k, drift, base.sigma, gamma, base.c_floor, None, base.constant_sigma, desc)

    @classmethod
    def radial(cls, radii, drifts, sigma, gamma_bound=None, c_floor=None) -> "DiffusionModel":
        """Piecewise-constant drift by radius: ``drifts[j]`` on the shell
        ``radii[j-1] < |x| <= radii[j]``; the last entry applies beyond
        ``radii[-1]`` (``len(drifts) == len(radii) + 1``)."""
        radii = [float(r) for r in radii]
        vecs = [tuple(float(c) for c in np.ravel(v)) for v in drifts]
        if len(vecs) != len(radii) + 1:
            raise ValueError("need one more drift vector than radii")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly increasing")
        base = cls.constant(vecs[-1], sigma, gamma_bound, c_floor)

        def drift(x):
            r = math.sqrt(sum(c * c for c in x))
            for rad, v in zip(radii, vecs):
                if r <= rad:
                    return v
            return vecs[-1]

        desc = dict(base.description, drift={"type": "radial", "radii": radii, "drifts": [list(v) for v in vecs]})
        return cls(base.dimension, drift, base.sigma, base.gamma_bound, base.c_floor, None, base.constant_sigma, desc)

    @classmethod
    def from_expressions(
        cls,
        drift_exprs: Sequence,
        sigma=None,
        sigma_diag_exprs: Optional[Sequence] = None,
        gamma_bound: Optional[float] = None,
        c_floor: float = 0.0,
    ) -> "DiffusionModel":
        """Drift from one expression per coordinate; sigma either a constant
        matrix or a diagonal of expressions."""
        k = len(drift_exprs)
        bex = [e if isinstance(e, Expr) else parse_expression(e, k) for e in drift_exprs]

        def drift(x):
            return [e(x) for e in bex]

        desc = {"drift": {"type": "expr", "exprs": [e.text for e in bex]}}
        if sigma_diag_exprs is not None:
            sex = [e if isinstance(e, Expr) else parse_expression(e, k) for e in sigma_diag_exprs]
            if len(sex) != k:
                raise ValueError("need one diagonal sigma expression per coordinate")

            def sig(x):
                vals = [e(x) for e in sex]
                return [[vals[i] if i == j else 0.0 for j in range(k)] for i in range(k)]

            if gamma_bound is None:
                raise ValueError("gamma_bound is required for expression sigma")
            desc["sigma"] = {"type": "diag_expr", "exprs": [e.text for e in sex]}
            return cls(k, drift, sig, float(gamma_bound), float(c_floor), None, None, desc)
        base = cls.constant([0.0] * k, np.eye(k) if sigma is None else sigma, gamma_bound, c_floor or None)
        desc["sigma"] = base.description["sigma"]
        return cls(k, drift, base.sigma, base.gamma_bound, base.c_floor, None, base.constant_sigma, desc)


# ---------------------------------------------------------------------------
# integration


def euler_step(x, h: float, increment, model: DiffusionModel, cone: PolyhedralCone) -> np.ndarray:
    """``pi(x + b(x) h + sigma(x) increment)``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    inc = np.asarray(increment, dtype=float).reshape(-1)
    xs = x.tolist()
    b = model.drift(xs)
    s = model.sigma(xs)
    k = model.dimension
    y = [xs[i] + b[i] * h + sum(s[i][j] * inc[j] for j in range(k)) for i in range(k)]
    return np.array(cone.projector.project(y)[0])


@dataclass(frozen=True, eq=False)
class SimPath:
    """One simulated path with its pushing totals and per-step noise terms
    ``sigma(X_m) (W_{m+1} - W_m)``."""

    times: np.ndarray
    states: np.ndarray
    push_total: np.ndarray
    noise: np.ndarray
    seed: int
    path_index: int = 0
    sigma_violations: int = 0
    stopped_at: Optional[int] = None

    @property
    def grid(self) -> PathGrid:
        return PathGrid(self.times, self.states)

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __eq__(self, other):
        if not isinstance(other, SimPath):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.push_total, other.push_total)
            and np.array_equal(self.noise, other.noise)
            and self.seed == other.seed
            and self.path_index == other.path_index
        )


def _run(
    x0: Sequence[float],
    model: DiffusionModel,
    cone: PolyhedralCone,
    n_steps: int,
    h: float,
    stream: NormalStream,
    stop: Optional[Callable] = None,
    record: bool = True,
):
    """Core loop. Returns (states, push_totals, noise, sigma_violations, stopped_step)."""
    k = model.dimension
    project = cone.projector.project
    sqh = math.sqrt(h)
    bc = model.constant_drift
    sc = model.constant_sigma
    drift = model.drift
    sigma = model.sigma
    gamma = model.gamma_bound
    if sc is not None and _spectral_norm(sc) > gamma * (1 + 1e-12):
        logger.warning("constant sigma norm %.6g exceeds gamma_bound %.6g", _spectral_norm(sc), gamma)
    scalar = k == 1 and cone.n_faces == 1 and bc is not None and sc is not None
    x = [float(c) for c in x0]
    states = [x]
    pushes = [0.0]
    noise = []
    total = 0.0
    violations = 0
    step = 0
    stopped = None
    if stop is not None and stop(x):
        stopped = 0
        n_steps = 0
    if scalar:
        n0, d0 = cone.projector.n[0][0], cone.projector.d[0][0]
        m0 = cone.projector.M[0][0]
        drift_h = bc[0] * h
        s00 = sc[0][0]
        cur = x[0]
    if stop is None and n_steps > 0 and bc is not None and sc is not None:
        signs = _decoupled_signs(cone)
        if signs is not None:
            return _run_decoupled(x, signs, bc, sc, h, n_steps, sqh, stream, record)
    while step < n_steps:
        chunk = min(CHUNK, n_steps - step)
        Z = (stream.next(chunk) * sqh).tolist()
        if scalar:
            for z in Z:
                step += 1
                nz = s00 * z[0]
                y = cur + drift_h + nz
                w = n0 * y
                if w < 0.0:
                    a = -w / m0
                    y = y + a * d0
                    total += abs(a * d0)
                cur = y
                if record:
                    states.append([y])
                    pushes.append(total)
                    noise.append([nz])
                if stop is not None and stop([y]):
                    stopped = step
                    break
            x = [cur]
        else:
            for z in Z:
                step += 1
                b = bc if bc is not None else drift(x)
                s = sc if sc is not None else sigma(x)
                if sc is None:
                    fro = math.sqrt(sum(c * c for row in s for c in row))
                    if fro > gamma and _spectral_norm(s) > gamma * (1 + 1e-12):
                        violations += 1
                nz = [sum(s[i][j] * z[j] for j in range(k)) for i in range(k)]
                y = [x[i] + b[i] * h + nz[i] for i in range(k)]
                phi, alpha = project(y)
                if alpha is not None:
                    total += math.sqrt(sum((p - q) ** 2 for p, q in zip(phi, y)))
                if not all(math.isfinite(c) for c in phi):
                    raise SimulationError(f"non-finite state {phi}", step)
                x = phi
                if record:
                    states.append(phi)
                    pushes.append(total)
                    noise.append(nz)
                if stop is not None and stop(phi):
                    stopped = step
                    break
        if stopped is not None:
            break
    if scalar and not math.isfinite(x[0]):
        raise SimulationError(f"non-finite state {x}", step)
    if violations:
        logger.warning("sigma norm exceeded gamma_bound at %d steps", violations)
    return states, pushes, noise, violations, stopped, step, x


def _decoupled_signs(cone: PolyhedralCone):
    """Face signs when every face is a coordinate hyperplane with normal
    reflection (``G`` an orthant up to signs), else ``None``."""
    N, D = cone.normals, cone.directions
    k = cone.dimension
    if cone.n_faces != k:
        return None
    signs = [0.0] * k
    for i in range(k):
        j = int(np.argmax(np.abs(N[i])))
        if np.count_nonzero(N[i]) != 1 or np.count_nonzero(D[i]) != 1 or D[i][j] == 0.0:
            return None
        if signs[j] != 0.0:
            return None
        signs[j] = 1.0 if N[i][j] > 0 else -1.0
    return np.array(signs)


def _run_decoupled(x0, signs, bc, sc, h, n_steps, sqh, stream, record):
    # Projection onto an orthant with normal reflection acts coordinatewise,
    # so with constant coefficients each coordinate of the projected Euler
    # chain is the 1-D reflection of its free partial sums.
    k = len(x0)
    z = stream.next(n_steps) * sqh
    S = np.asarray(sc, dtype=float)
    nz = z[:, 0:1] * S[:, 0] if k == 1 else z @ S.T
    steps = np.asarray(bc, dtype=float) * h + nz
    free = np.vstack([np.asarray(x0, dtype=float)[None, :], np.asarray(x0, dtype=float) + np.cumsum(steps, axis=0)])
    push = np.maximum(0.0, np.maximum.accumulate(-signs * free, axis=0))
    states = free + signs * push
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise SimulationError("non-finite state", bad)
    x = states[-1].tolist()
    if not record:
        return [], [], [], 0, None, n_steps, x
    if k == 1:
        total = push[:, 0]
    else:
        total = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(push, axis=0), axis=1))])
    return states, total, nz, 0, None, n_steps, x


def _check_start(x, cone: PolyhedralCone, k: int) -> list:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (k,):
        raise ValueError(f"initial point has dimension {x.shape[0]}, model has {k}")
    if not cone.contains(x):
        raise ValueError(f"initial point {x.tolist()} is not in G")
    return x.tolist()


def simulate_path(
    x,
    model: DiffusionModel,
    cone: PolyhedralCone,
    horizon: float,
    h: float,
    seed: int,
    path_index: int = 0,
) -> SimPath:
    """Projected Euler path on ``[0, horizon]`` with increments from the
    counter-based stream keyed by ``(seed, path_index)``."""
    x0 = _check_start(x, cone, model.dimension)
    times = uniform_grid(horizon, h)
    n = len(times) - 1
    stream = NormalStream(seed, path_index, model.dimension)
    try:
        states, pushes, noise, viol, _, _, _ = _run(x0, model, cone, n, h, stream)
    except ExprEvalError as exc:
        raise SimulationError(f"coefficient evaluation failed: {exc}") from exc
    st = np.array(states, dtype=float)
    if not np.all(np.isfinite(st)):
        bad = int(np.argmax(~np.all(np.isfinite(st), axis=1)))
        raise SimulationError("non-finite state", bad)
    return SimPath(
        times=times,
        states=st,
        push_total=np.array(pushes),
        noise=np.array(noise, dtype=float).reshape(n, model.dimension),
        seed=seed,
        path_index=path_index,
        sigma_violations=viol,
    )


def first_entry(
    x,
    model: DiffusionModel,
    cone: PolyhedralCone,
    target: Callable,
    t_cap: float,
    h: float,
    seed: int,
    path_index: int = 0,
) -> Optional[float]:
    """First grid time at which the path lies in ``target``; None if not by ``t_cap``."""
    x0 = _check_start(x, cone, model.dimension)
    n = int(math.floor(t_cap / h + 1e-9))
    stream = NormalStream(seed, path_index, model.dimension)
    _, _, _, _, stopped, _, _ = _run(x0, model, cone, n, h, stream, stop=target, record=False)
    return None if stopped is None else stopped * h


# ---------------------------------------------------------------------------
# ensembles


def dyadic_times(horizon: float, h: float) -> list:
    """Sample times ``2^j`` inside ``[h, horizon]`` plus ``horizon`` itself,
    snapped to the grid."""
    out = []
    j = math.ceil(math.log2(h))
    while 2.0**j < horizon:
        out.append(h * round(2.0**j / h))
        j += 1
    out.append(h * round(horizon / h))
    return sorted(set(out))


@dataclass
class PathSummary:
    path_index: int
    x0: tuple
    final_state: Optional[tuple] = None
    sup_norm: Optional[float] = None
    hit_time: Optional[float] = None
    nu_max: Optional[float] = None
    snapshot_norms: Optional[tuple] = None
    block_sups: Optional[tuple] = None
    push_total: Optional[float] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "path_index": self.path_index,
            "x0": list(self.x0),
            "final_state": None if self.final_state is None else list(self.final_state),
            "sup_norm": self.sup_norm,
            "hit_time": self.hit_time,
            "nu_max": self.nu_max,
            "snapshot_norms": None if self.snapshot_norms is None else list(self.snapshot_norms),
            "block_sups": None if self.block_sups is None else list(self.block_sups),
            "push_total": self.push_total,
            "error": self.error,
        }


@dataclass
class TrajectoryEnsemble:
    model_fingerprint: str
    cone_fingerprint: str
    base_seed: int
    horizon: float
    h: float
    sample_times: tuple
    summaries: list
    paths: list = field(default_factory=list, repr=False)

    @property
    def count(self) -> int:
        return len(self.summaries)

    @property
    def failures(self) -> int:
        return sum(s.error is not None for s in self.summaries)

    def snapshot_matrix(self) -> np.ndarray:
        """``|X(t)|`` at the sample times, one row per successful path."""
        rows = [s.snapshot_norms for s in self.summaries if s.error is None]
        return np.array(rows, dtype=float).reshape(len(rows), len(self.sample_times))

    def aggregate(self) -> dict:
        ok = [s for s in self.summaries if s.error is None]
        out = {"count": self.count, "failures": self.failures}
        if ok:
            finals = np.array([s.final_state for s in ok])
            out["final_mean"] = finals.mean(axis=0).tolist()
            out["sup_norm_max"] = float(max(s.sup_norm for s in ok))
            hits = [s.hit_time for s in ok if s.hit_time is not None]
            out["hit_fraction"] = len(hits) / len(ok)
            out["hit_time_mean"] = float(np.mean(hits)) if hits else None
        return out

    def to_dict(self) -> dict:
        return {
            "model_fingerprint": self.model_fingerprint,
            "cone_fingerprint": self.cone_fingerprint,
            "base_seed": self.base_seed,
            "horizon": self.horizon,
            "h": self.h,
            "sample_times": list(self.sample_times),
            "aggregate": self.aggregate(),
            "paths": [s.to_dict() for s in self.summaries],
        }


def summarize_path(
    path: SimPath,
    sample_times: Sequence[float],
    hit_radius: Optional[float] = None,
    nu_block: Optional[float] = None,
) -> PathSummary:
    st = path.states
    norms = np.linalg.norm(st, axis=1)
    h = path.h
    idx = [int(round(t / h)) for t in sample_times]
    sups = []
    lo = 0
    for i in idx:
        sups.append(float(norms[lo : i + 1].max()))
        lo = i
    hit = None
    if hit_radius is not None:
        inside = np.flatnonzero(norms <= hit_radius)
        hit = float(path.times[inside[0]]) if inside.size else None
    nu = None
    if nu_block is not None:
        nu = float(np.max(block_nu(path.noise, int(round(nu_block / h))), initial=0.0))
    return PathSummary(
        path_index=path.path_index,
        x0=tuple(st[0].tolist()),
        final_state=tuple(st[-1].tolist()),
        sup_norm=float(norms.max()),
        hit_time=hit,
        nu_max=nu,
        snapshot_norms=tuple(float(norms[i]) for i in idx),
        block_sups=tuple(sups),
        push_total=float(path.push_total[-1]),
    )


def block_nu(noise: np.ndarray, steps_per_block: int) -> np.ndarray:
    """Per block, ``max_s |sum of noise terms from the block start to s|``
    (including the empty sum). Incomplete trailing blocks are dropped."""
    if steps_per_block < 1:
        raise ValueError("steps_per_block must be >= 1")
    nb = noise.shape[0] // steps_per_block
    if nb == 0:
        return np.zeros(0)
    blocks = noise[: nb * steps_per_block].reshape(nb, steps_per_block, -1)
    partial = np.cumsum(blocks, axis=1)
    return np.linalg.norm(partial, axis=2).max(axis=1)


def simulate_ensemble(
    x_list,
    model: DiffusionModel,
    cone: PolyhedralCone,
    horizon: float,
    h: float,
    n_paths: int,
    base_seed: int,
    hit_radius: Optional[float] = None,
    nu_block: Optional[float] = None,
    n_jobs: int = 1,
    keep_paths: int = 0,
):
    """``n_paths`` paths from each start point; path ``j`` of start ``i`` has
    index ``i * n_paths + j``.

    Per-path failures are recorded in the summary and the run continues.
    Results are identical for every ``n_jobs``. The first ``keep_paths``
    full :class:`SimPath` objects are kept on ``ensemble.paths``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x_list = [np.asarray(x, dtype=float).reshape(-1) for x in np.atleast_2d(np.asarray(x_list, dtype=float))]
    sample_times = dyadic_times(horizon, h)
    jobs = [(i * n_paths + j, x) for i, x in enumerate(x_list) for j in range(n_paths)]

    def work(job):
        idx, x = job
        try:
            path = simulate_path(x, model, cone, horizon, h, base_seed, path_index=idx)
        except (SimulationError, ValueError, ArithmeticError, RuntimeError) as exc:
            return PathSummary(path_index=idx, x0=tuple(x.tolist()), error=str(exc)), None
        summary = summarize_path(path, sample_times, hit_radius, nu_block)
        return summary, (path if idx < keep_paths else None)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    return TrajectoryEnsemble(
        model_fingerprint=model.fingerprint(),
        cone_fingerprint=cone.fingerprint(),
        base_seed=base_seed,
        horizon=horizon,
        h=h,
        sample_times=tuple(sample_times),
        summaries=[r[0] for r in results],
        paths=[r[1] for r in results if r[1] is not None],
    )
