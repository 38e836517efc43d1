"""Monte Carlo checks of positive recurrence: hitting times of compact
sets, occupation measures, the Lyapunov drift inequality over time blocks,
exponential moments of the noise budget, and tail (tightness) tables."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .diffusion import DiffusionModel, TrajectoryEnsemble, SimPath, block_nu, first_entry, simulate_path
from .dynamics import lipschitz_constant_T, upper_bound_estimator
from .geometry import PolyhedralCone


# ---------------------------------------------------------------------------
# target sets


@dataclass(frozen=True)
class Ball:
    radius: float

    def __call__(self, x) -> bool:
        return math.sqrt(sum(c * c for c in x)) <= self.radius


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __call__(self, x) -> bool:
        return all(lo <= c <= hi for c, lo, hi in zip(x, self.lower, self.upper))


def make_target(spec) -> Callable:
    """``{"ball": r}``, ``{"box": [lo, hi]}``, a :class:`Ball`/:class:`Box`,
    or a bare radius."""
    if isinstance(spec, (Ball, Box)):
        return spec
    if isinstance(spec, (int, float)):
        return Ball(float(spec))
    if "ball" in spec:
        return Ball(float(spec["ball"]))
    if "box" in spec:
        lo, hi = spec["box"]
        return Box(tuple(map(float, np.ravel(lo))), tuple(map(float, np.ravel(hi))))
    raise ValueError(f"unrecognized target set {spec!r}")


# ---------------------------------------------------------------------------
# hitting times


@dataclass
class HittingEstimate:
    x: tuple
    mean: float
    stderr: float
    censored: int
    n_paths: int
    all_censored: bool = False

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.n_paths

    def to_dict(self) -> dict:
        return {
            "x": list(self.x),
            "mean": self.mean,
            "stderr": self.stderr,
            "censored": self.censored,
            "censored_fraction": self.censored_fraction,
            "n_paths": self.n_paths,
            "all_censored": self.all_censored,
        }


def estimate_hitting_time(
    model: DiffusionModel,
    cone: PolyhedralCone,
    target,
    x_list,
    n_paths: int,
    h: float,
    t_cap: float,
    seed: int,
    n_jobs: int = 1,
) -> list:
    """Mean first-entry time into ``target`` per start point.

    Paths that have not entered by ``t_cap`` are counted as censored and
    enter the mean at ``t_cap``, so the mean is biased low whenever
    ``censored > 0``. Path ``j`` of start ``i`` uses stream index
    ``i * n_paths + j``.
    """
    tgt = make_target(target)
    x_arr = np.atleast_2d(np.asarray(x_list, dtype=float))
    out = []
    for i, x in enumerate(x_arr):
        def one(j, x=x, i=i):
            return first_entry(x, model, cone, tgt, t_cap, h, seed, path_index=i * n_paths + j)

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                times = list(pool.map(one, range(n_paths)))
        else:
            times = [one(j) for j in range(n_paths)]
        censored = sum(t is None for t in times)
        vals = np.array([t_cap if t is None else t for t in times], dtype=float)
        mean = float(vals.mean())
        stderr = float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else float("nan")
        out.append(
            HittingEstimate(
                x=tuple(x.tolist()),
                mean=mean,
                stderr=stderr,
                censored=censored,
                n_paths=n_paths,
                all_censored=censored == n_paths,
            )
        )
    return out


# ---------------------------------------------------------------------------
# occupation measures


@dataclass
class OccupationHistogram:
    """Time spent in each cell of a box, for a piecewise-constant path."""

    lower: np.ndarray
    upper: np.ndarray
    edges: list
    counts: np.ndarray
    total_time: float
    out_of_box: float

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total_time

    @property
    def out_of_box_probability(self) -> float:
        return self.out_of_box / self.total_time

    @property
    def total_mass(self) -> float:
        return float(self.probabilities.sum() + self.out_of_box_probability)

    def density(self) -> np.ndarray:
        widths = np.ix_(*[np.diff(e) for e in self.edges])
        vol = np.ones(self.counts.shape)
        for w in widths:
            vol = vol * w
        return self.probabilities / vol

    def marginal(self, axis: int) -> np.ndarray:
        other = tuple(a for a in range(self.counts.ndim) if a != axis)
        return self.probabilities.sum(axis=other)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "edges": [e.tolist() for e in self.edges],
            "probabilities": self.probabilities.tolist(),
            "total_time": self.total_time,
            "out_of_box": self.out_of_box_probability,
        }


def _box_arrays(box, k: int):
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (k,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (k,)).copy()
    if not np.all(hi > lo):
        raise ValueError(f"degenerate box {lo.tolist()} .. {hi.tolist()}")
    return lo, hi


def occupation_histogram(states: np.ndarray, weights: np.ndarray, box, bins) -> OccupationHistogram:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("empty path")
    k = states.shape[1]
    lo, hi = _box_arrays(box, k)
    nb = np.broadcast_to(np.asarray(bins), (k,))
    edges = [np.linspace(lo[a], hi[a], int(nb[a]) + 1) for a in range(k)]
    counts, _ = np.histogramdd(states, bins=edges, weights=weights)
    total = float(np.sum(weights))
    return OccupationHistogram(lo, hi, edges, counts, total, max(0.0, total - float(counts.sum())))


def occupation_measure(path, box, bins) -> OccupationHistogram:
    """State ``X_m`` holds for ``[t_m, t_{m+1})``; the final state carries no time."""
    if isinstance(path, SimPath):
        times, states = path.times, path.states
    else:
        times, states = path.times, path.values
    if len(times) < 2:
        raise ValueError("path needs at least two grid points")
    return occupation_histogram(states[:-1], np.diff(times), box, bins)


@dataclass
class InvariantEstimate:
    histogram: OccupationHistogram
    mean: np.ndarray
    second_moment: np.ndarray
    half_means: tuple
    half_discrepancy: float
    samples: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "second_moment": self.second_moment.tolist(),
            "half_means": [m.tolist() for m in self.half_means],
            "half_discrepancy": self.half_discrepancy,
            "samples": self.samples,
            "histogram": self.histogram.to_dict(),
        }


def estimate_invariant_measure(
    model: DiffusionModel,
    cone: PolyhedralCone,
    burn_in: float,
    horizon: float,
    h: float,
    bins,
    box,
    seed: int,
    x0=None,
    path: Optional[SimPath] = None,
) -> InvariantEstimate:
    """Time averages of one long path after discarding ``burn_in``."""
    if not burn_in < horizon:
        raise ValueError("burn_in must be smaller than horizon")
    if path is None:
        x0 = np.zeros(model.dimension) if x0 is None else x0
        path = simulate_path(x0, model, cone, horizon, h, seed)
    start = int(round(burn_in / h))
    states = path.states[start:-1]
    weights = np.diff(path.times[start:])
    hist = occupation_histogram(states, weights, box, bins)
    T = weights.sum()
    mean = (weights[:, None] * states).sum(axis=0) / T
    second = np.einsum("m,mi,mj->ij", weights, states, states) / T
    half = len(states) // 2
    m1 = states[:half].mean(axis=0)
    m2 = states[half:].mean(axis=0)
    return InvariantEstimate(
        histogram=hist,
        mean=mean,
        second_moment=second,
        half_means=(m1, m2),
        half_discrepancy=float(np.linalg.norm(m1 - m2)),
        samples=len(states),
    )


# ---------------------------------------------------------------------------
# Lyapunov drift over blocks


@dataclass
class DriftDiagnostic:
    delta_block: float
    T_before: np.ndarray
    T_after: np.ndarray
    nu_bar: np.ndarray
    slack: np.ndarray
    skipped: int
    violations: int
    estimator: str
    tol: float = 0.0

    @property
    def scored(self) -> int:
        return int(self.slack.shape[0])

    def to_dict(self) -> dict:
        return {
            "Delta": self.delta_block,
            "estimator": self.estimator,
            "scored_blocks": self.scored,
            "skipped_blocks": self.skipped,
            "violations": self.violations,
            "max_slack": float(self.slack.max()) if self.scored else None,
            "nu_bar_max": float(self.nu_bar.max()) if self.scored else None,
            "tol": self.tol,
        }


def lyapunov_drift_diagnostic(
    path: SimPath,
    Delta: float,
    K: float,
    delta: float,
    T_estimator: Optional[Callable] = None,
    r_A: float = 0.0,
    estimator_name: Optional[str] = None,
    tol: float = 1e-9,
) -> DriftDiagnostic:
    """Score ``T(X(u+Delta)) - [(T(X(u)) - Delta)^+ + K C nu_bar]`` per block,
    ``C = 4 K^3 / delta``.

    Only blocks whose states after the block start all lie outside the ball
    of radius ``r_A`` are scored. A block counts as a violation when its
    slack exceeds ``tol * (1 + T(X(u)))``. ``T_estimator`` defaults to the
    upper bound ``4 K^2 |x| / delta``, which is a heuristic check only.
    """
    h = path.h
    steps = Delta / h
    nb_steps = int(round(steps))
    if nb_steps < 1 or abs(steps - nb_steps) > 1e-9 * max(1.0, steps):
        raise ValueError(f"Delta = {Delta} is not a multiple of h = {h}")
    if T_estimator is None:
        T_estimator = upper_bound_estimator(K, delta)
        estimator_name = estimator_name or "upper_bound"
    C = lipschitz_constant_T(K, delta)
    n_blocks = path.noise.shape[0] // nb_steps
    nu = block_nu(path.noise, nb_steps)
    norms = np.linalg.norm(path.states, axis=1)
    before, after, nus, slack = [], [], [], []
    skipped = 0
    for j in range(n_blocks):
        a, b = j * nb_steps, (j + 1) * nb_steps
        if np.any(norms[a + 1 : b + 1] <= r_A):
            skipped += 1
            continue
        t0 = float(T_estimator(path.states[a]))
        t1 = float(T_estimator(path.states[b]))
        s = t1 - (max(t0 - Delta, 0.0) + K * C * nu[j])
        before.append(t0)
        after.append(t1)
        nus.append(nu[j])
        slack.append(s)
    before = np.array(before)
    slack = np.array(slack)
    viol = int(np.sum(slack > tol * (1.0 + before))) if slack.size else 0
    return DriftDiagnostic(
        delta_block=Delta,
        T_before=before,
        T_after=np.array(after),
        nu_bar=np.array(nus),
        slack=slack,
        skipped=skipped,
        violations=viol,
        estimator=estimator_name or getattr(T_estimator, "__name__", "custom"),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# exponential moments


def exp_moment_log_bound(kappa: float, Delta: float, gamma: float, k: int, span: int = 1) -> float:
    """``log`` of ``[2 sqrt(2) exp(k^2 kappa^2 gamma^2 Delta)]^span``."""
    return span * (1.5 * math.log(2.0) + k * k * kappa * kappa * gamma * gamma * Delta)


def exp_moment_bound(kappa: float, Delta: float, gamma: float, k: int, span: int = 1) -> float:
    return math.exp(exp_moment_log_bound(kappa, Delta, gamma, k, span))


@dataclass
class ExpMomentResult:
    estimate: float
    stderr: float
    bound: float
    log_estimate: float
    log_bound: float
    samples: int
    span: int
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def exp_moment_check(
    model: DiffusionModel,
    cone: PolyhedralCone,
    kappa: float,
    Delta: float,
    blocks: int,
    n_paths: int,
    h: float,
    seed: int,
    span: int = 1,
    x0=None,
) -> ExpMomentResult:
    """Monte Carlo ``E exp(kappa * sum of span consecutive nu_n)`` against
    the closed-form bound.

    ``blocks`` samples are split evenly over ``n_paths`` paths; each sample is
    one window of ``span`` consecutive blocks of length ``Delta``. Passes when
    ``estimate <= bound * (1 + 3 * stderr / estimate)``.
    """
    if not (kappa > 0 and Delta > 0):
        raise ValueError("kappa and Delta must be positive")
    per_path = math.ceil(blocks / n_paths)
    nb_steps = int(round(Delta / h))
    if abs(nb_steps * h - Delta) > 1e-9 * max(1.0, Delta):
        raise ValueError(f"Delta = {Delta} is not a multiple of h = {h}")
    horizon = per_path * span * nb_steps * h
    x0 = np.zeros(model.dimension) if x0 is None else x0
    logs = []
    for p in range(n_paths):
        path = simulate_path(x0, model, cone, horizon, h, seed, path_index=p)
        nu = block_nu(path.noise, nb_steps)[: per_path * span]
        sums = nu.reshape(per_path, span).sum(axis=1)
        logs.append(kappa * sums)
    logs = np.concatenate(logs)[:blocks]
    log_est = float(logsumexp(logs) - math.log(len(logs)))
    # stderr of the mean, relative to the estimate, computed stably
    rel = np.exp(logs - log_est)
    rel_stderr = float(rel.std(ddof=1) / math.sqrt(len(logs))) if len(logs) > 1 else float("inf")
    log_bound = exp_moment_log_bound(kappa, Delta, model.gamma_bound, model.dimension, span)
    passed = log_est <= log_bound + math.log1p(3.0 * rel_stderr)
    est = math.exp(log_est) if log_est < 700 else float("inf")
    bound = math.exp(log_bound) if log_bound < 700 else float("inf")
    return ExpMomentResult(
        estimate=est,
        stderr=rel_stderr * est,
        bound=bound,
        log_estimate=log_est,
        log_bound=log_bound,
        samples=len(logs),
        span=span,
        passed=bool(passed),
    )


# ---------------------------------------------------------------------------
# tightness


def tightness_diagnostic(ensemble: TrajectoryEnsemble, M0_grid: Sequence[float], use: str = "snapshot") -> list:
    """For each ``M0``: ``max_t`` of the fraction of paths with ``|X(t)| >= M0``
    over the ensemble's sample times. ``use="sup"`` replaces the snapshot at
    ``t`` by the sup over the dyadic block ending at ``t`` (conservative)."""
    ok = [s for s in ensemble.summaries if s.error is None]
    if not ok:
        return [(float(m), float("nan")) for m in M0_grid]
    if use == "snapshot":
        mat = np.array([s.snapshot_norms for s in ok])
    elif use == "sup":
        mat = np.array([s.block_sups for s in ok])
    else:
        raise ValueError(f"unknown mode {use!r}")
    rows = []
    for m in sorted(float(v) for v in M0_grid):
        freq = (mat >= m).mean(axis=0)
        rows.append((m, float(freq.max())))
    return rows
