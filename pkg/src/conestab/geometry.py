"""Polyhedral cones, the drift cone generated by the reflection directions,
and empirical checks of the standing conditions on a diffusion model.

Face indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog, nnls
from scipy.stats import qmc

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-12
FACET_TOL = 1e-10
MEMBERSHIP_TOL = 1e-10


class GeometryError(ValueError):
    """Invalid cone data or a point outside the domain."""


def _as_matrix(rows, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(rows, dtype=float))
    if arr.ndim != 2 or arr.size == 0:
        raise GeometryError(f"{name} must be a nonempty list of vectors (got an empty one)")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class PolyhedralCone:
    """The domain ``G = {x : <x, n_i> >= 0 for all i}`` with a reflection
    direction ``d_i`` attached to each face.

    ``lipschitz_K`` is ``None`` when the Skorokhod-map constant has not been
    supplied and must be estimated.
    """

    normals: np.ndarray
    directions: np.ndarray
    lipschitz_K: Optional[float] = None
    boundary_tol: float = 1e-9

    def __post_init__(self):
        for arr in (self.normals, self.directions):
            arr.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.normals.shape[1]

    @property
    def n_faces(self) -> int:
        return self.normals.shape[0]

    @property
    def K_is_estimated(self) -> bool:
        return self.lipschitz_K is None

    @cached_property
    def projector(self):
        # local import: skorokhod depends on this module
        from .skorokhod import LCPProjector

        return LCPProjector(self)

    def contains(self, x, tol: Optional[float] = None) -> bool:
        x = np.asarray(x, dtype=float)
        tol = self.boundary_tol if tol is None else tol
        scale = 1.0 + float(np.linalg.norm(x))
        return bool(np.all(self.normals @ x >= -tol * scale))

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.normals).tobytes())
        h.update(np.ascontiguousarray(self.directions).tobytes())
        h.update(repr(self.lipschitz_K).encode())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, PolyhedralCone):
            return NotImplemented
        return (
            np.array_equal(self.normals, other.normals)
            and np.array_equal(self.directions, other.directions)
            and self.lipschitz_K == other.lipschitz_K
            and self.boundary_tol == other.boundary_tol
        )

    def __hash__(self):
        return hash(self.fingerprint())


def build_cone(normals, directions, K=None, tol: float = 1e-9) -> PolyhedralCone:
    """Validate and normalize face data into a :class:`PolyhedralCone`.

    Raises :class:`GeometryError` on a dimension mismatch, a zero vector, or a
    face whose direction is not strictly acute to its normal.
    """
    n = _as_matrix(normals, "normals")
    d = _as_matrix(directions, "directions")
    if n.shape[0] != d.shape[0]:
        raise GeometryError(
            f"normals and directions must have the same number of faces ({n.shape[0]} vs {d.shape[0]})"
        )
    if n.shape[1] != d.shape[1]:
        raise GeometryError(f"dimension mismatch: normals are {n.shape[1]}-D, directions {d.shape[1]}-D")
    n_norm = np.linalg.norm(n, axis=1)
    d_norm = np.linalg.norm(d, axis=1)
    for i in range(n.shape[0]):
        if n_norm[i] == 0.0:
            raise GeometryError(f"faces[{i}].normal is the zero vector")
        if d_norm[i] == 0.0:
            raise GeometryError(f"faces[{i}].direction is the zero vector")
    n = n / n_norm[:, None]
    d = d / d_norm[:, None]
    inner = np.einsum("ij,ij->i", n, d)
    for i, val in enumerate(inner):
        if not val > 0.0:
            raise GeometryError(
                f"faces[{i}]: <d, n> = {val!r} must be strictly positive"
            )
    if K is not None:
        K = float(K)
        if not K >= 1.0:
            raise GeometryError(f"lipschitz_K = {K!r} must be >= 1")
    if not tol > 0:
        raise GeometryError("boundary_tol must be positive")
    return PolyhedralCone(normals=n, directions=d, lipschitz_K=K, boundary_tol=float(tol))


def active_set(x, cone: PolyhedralCone, tol: Optional[float] = None) -> frozenset:
    """Indices of the faces on which ``x`` lies (within a relative tolerance)."""
    x = np.asarray(x, dtype=float)
    tol = cone.boundary_tol if tol is None else tol
    scale = 1.0 + float(np.linalg.norm(x))
    w = cone.normals @ x
    if np.any(w < -10.0 * tol * scale):
        i = int(np.argmin(w))
        raise GeometryError(f"point {x.tolist()} lies outside G (<x, n_{i}> = {w[i]!r})")
    return frozenset(int(i) for i in np.flatnonzero(w <= tol * scale))


# ---------------------------------------------------------------------------
# drift cone


@dataclass(frozen=True, eq=False)
class GeneratedCone:
    """``C = {-sum a_i d_i : a_i >= 0}`` held in both generator and facet form.

    ``facet_normals`` are inward unit normals: ``C = {v : <v, f_j> >= 0}``.
    When the generators do not span the space, no facets are stored and
    membership falls back to a nonnegative least-squares solve.
    """

    generators: np.ndarray
    facet_normals: np.ndarray
    full_dimensional: bool
    degenerate_lineality: bool

    @property
    def dimension(self) -> int:
        return self.generators.shape[1]

    @property
    def inset_empty(self) -> bool:
        """True when ``C(delta)`` is empty for every ``delta > 0``."""
        return not self.full_dimensional

    @cached_property
    def central_direction(self) -> np.ndarray:
        # normalized sum of generators; strictly interior when C is full-dimensional
        s = self.generators.sum(axis=0)
        nrm = np.linalg.norm(s)
        return s / nrm if nrm > 0 else s


def _null_vector(rows: np.ndarray, k: int) -> Optional[np.ndarray]:
    if rows.shape[0] == 0:
        return np.ones(1) if k == 1 else None
    _, s, vt = np.linalg.svd(rows)
    smax = s[0] if s.size else 0.0
    if s.size < k - 1 or s[k - 2] <= FACET_TOL * max(1.0, smax):
        return None
    return vt[-1]


def _contains_line(gens: np.ndarray) -> bool:
    # a nonzero nonnegative combination of generators summing to zero
    N = gens.shape[0]
    res = linprog(
        c=np.zeros(N),
        A_eq=np.vstack([gens.T, np.ones((1, N))]),
        b_eq=np.concatenate([np.zeros(gens.shape[1]), [1.0]]),
        bounds=[(0, None)] * N,
        method="highs",
    )
    return res.status == 0


def dual_description(cone: PolyhedralCone) -> GeneratedCone:
    """Facet description of the drift cone by brute-force subset search."""
    gens = -np.asarray(cone.directions, dtype=float)
    N, k = gens.shape
    rank = np.linalg.matrix_rank(gens, tol=FACET_TOL)
    full = rank == k
    facets: list[np.ndarray] = []
    if full:
        for subset in itertools.combinations(range(N), k - 1):
            f = _null_vector(gens[list(subset)], k)
            if f is None:
                continue
            vals = gens @ f
            if np.all(vals >= -FACET_TOL):
                cand = f
            elif np.all(vals <= FACET_TOL):
                cand = -f
            else:
                continue
            cand = cand / np.linalg.norm(cand)
            if not any(np.linalg.norm(cand - g) < 1e-9 for g in facets):
                facets.append(cand)
    else:
        logger.info("generator set has rank %d < %d; C is not full-dimensional", rank, k)
    facet_arr = np.array(facets, dtype=float).reshape(-1, k)
    lineality = _contains_line(gens)
    facet_arr.setflags(write=False)
    gens.setflags(write=False)
    return GeneratedCone(gens, facet_arr, bool(full), bool(lineality))


def in_cone_nnls(v, gcone: GeneratedCone, tol: float = 1e-8) -> bool:
    """Membership by solving ``v = G' a`` with ``a >= 0``."""
    v = np.asarray(v, dtype=float)
    _, resid = nnls(gcone.generators.T, v)
    return bool(resid <= tol * (1.0 + np.linalg.norm(v)))


def in_cone(v, gcone: GeneratedCone) -> bool:
    v = np.asarray(v, dtype=float)
    if v.shape != (gcone.dimension,):
        raise GeometryError(f"vector of shape {v.shape} for a {gcone.dimension}-D cone")
    if not gcone.full_dimensional:
        return in_cone_nnls(v, gcone)
    if gcone.facet_normals.shape[0] == 0:
        return True
    scale = 1.0 + float(np.linalg.norm(v))
    return bool(np.min(gcone.facet_normals @ v) >= -MEMBERSHIP_TOL * scale)


def dist_to_cone_boundary(v, gcone: GeneratedCone, return_inside: bool = False):
    """Distance from ``v`` to the boundary of ``C``.

    Returns 0 for points outside ``C`` (and for every point when ``C`` is not
    full-dimensional). With ``return_inside=True`` a ``(distance, inside)``
    pair is returned so callers can tell the two zero cases apart.
    """
    v = np.asarray(v, dtype=float)
    inside = in_cone(v, gcone)
    if not inside or not gcone.full_dimensional:
        dist = 0.0
    elif gcone.facet_normals.shape[0] == 0:
        dist = float("inf")
    else:
        dist = max(0.0, float(np.min(gcone.facet_normals @ v)))
    return (dist, inside) if return_inside else dist


# ---------------------------------------------------------------------------
# condition checks


@dataclass
class ConditionReport:
    condition: str
    passed: bool
    margin: float
    witnesses: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and not self.witnesses:
            raise ValueError("a failing report needs at least one witness")

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "pass": self.passed,
            "margin": self.margin,
            "witnesses": [
                {"point": [float(c) for c in p], "value": float(val)}
                for p, val in self.witnesses
            ],
            "details": self.details,
        }


class ModelEvaluationError(RuntimeError):
    def __init__(self, point, cause):
        self.point = np.asarray(point, dtype=float).tolist()
        super().__init__(f"coefficient evaluation failed at x = {self.point}: {cause}")


def probe_points(
    cone: PolyhedralCone,
    n: int,
    r_min: float = 0.0,
    r_max: float = 10.0,
    seed: int = 0,
) -> np.ndarray:
    """Quasi-random points of ``G`` with radii spread evenly over ``(r_min, r_max]``.

    Directions come from a scrambled Halton sequence pushed onto ``G`` by the
    Skorokhod projection; the largest radius is always ``r_max``.
    """
    k = cone.dimension
    sampler = qmc.Halton(d=max(k, 1), scramble=True, seed=seed)
    proj = cone.projector
    pts = []
    j = 0
    while len(pts) < n:
        u = 2.0 * sampler.random(max(n, 8)) - 1.0
        for row in u:
            y = np.asarray(proj.project(row.tolist())[0])
            ny = np.linalg.norm(y)
            if ny < 1e-8:
                continue
            r = r_min + (r_max - r_min) * (len(pts) + 1) / n
            pts.append(y / ny * r)
            if len(pts) == n:
                break
        j += 1
        if j > 1000:
            raise GeometryError("could not sample probe points in G")
    return np.array(pts)


def _eval_vector(fn: Callable, x: np.ndarray, k: int) -> np.ndarray:
    try:
        out = np.asarray(fn(x), dtype=float).reshape(-1)
    except Exception as exc:  # noqa: BLE001 - re-raised with the probe attached
        raise ModelEvaluationError(x, exc) from exc
    if out.shape != (k,) or not np.all(np.isfinite(out)):
        raise ModelEvaluationError(x, f"drift returned {out!r}")
    return out


def _eval_matrix(fn: Callable, x: np.ndarray, k: int) -> np.ndarray:
    try:
        out = np.atleast_2d(np.asarray(fn(x), dtype=float))
    except Exception as exc:  # noqa: BLE001
        raise ModelEvaluationError(x, exc) from exc
    if out.shape[0] != out.shape[1]:
        raise GeometryError(f"sigma(x) has non-square shape {out.shape}")
    if out.shape != (k, k):
        raise GeometryError(f"sigma(x) has shape {out.shape}, expected {(k, k)}")
    return out


def check_drift_condition(
    drift: Callable,
    cone: PolyhedralCone,
    delta: float,
    r_A: float = 0.0,
    probes: int = 256,
    r_max: Optional[float] = None,
    gcone: Optional[GeneratedCone] = None,
    seed: int = 0,
) -> ConditionReport:
    """Check ``b(x) in C(delta)`` at probe points of ``G`` outside the ball ``r_A``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if r_A < 0 or probes < 1:
        raise ValueError("r_A must be >= 0 and probes >= 1")
    gcone = dual_description(cone) if gcone is None else gcone
    r_max = max(10.0, 2.0 * r_A + 10.0) if r_max is None else float(r_max)
    pts = probe_points(cone, probes, r_min=r_A, r_max=r_max, seed=seed)
    k = cone.dimension
    witnesses = []
    margin = np.inf
    for x in pts:
        b = _eval_vector(drift, x, k)
        dist = dist_to_cone_boundary(b, gcone)
        slack = dist - delta
        margin = min(margin, slack)
        if slack < -1e-12 * (1.0 + delta):
            witnesses.append((x, dist))
    return ConditionReport(
        "drift-cone",
        passed=not witnesses,
        margin=float(margin),
        witnesses=witnesses,
        details={"delta": delta, "r_A": r_A, "r_max": r_max, "probes": probes},
    )


def check_nondegeneracy(
    sigma: Callable,
    cone: PolyhedralCone,
    c_floor: float,
    probes: int = 256,
    r_max: float = 10.0,
    seed: int = 0,
) -> ConditionReport:
    """Smallest eigenvalue of ``sigma(x) sigma(x)'`` over probe points."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    k = cone.dimension
    pts = np.vstack([np.zeros((1, k)), probe_points(cone, probes, 0.0, r_max, seed)])
    lam = np.empty(len(pts))
    for j, x in enumerate(pts):
        s = _eval_matrix(sigma, x, k)
        lam[j] = np.linalg.eigvalsh(s @ s.T)[0]
    c_est = float(lam.min())
    passed = c_floor > 0 and c_est >= c_floor
    witnesses = [] if passed else [(pts[int(np.argmin(lam))], c_est)]
    return ConditionReport(
        "nondegeneracy",
        passed=passed,
        margin=c_est - c_floor,
        witnesses=witnesses,
        details={"c_estimate": c_est, "c_floor": c_floor, "probes": len(pts)},
    )


def check_regularity(
    drift: Callable,
    sigma: Callable,
    cone: PolyhedralCone,
    gamma: float,
    probes: int = 256,
    r_max: float = 10.0,
    seed: int = 0,
) -> ConditionReport:
    """Bound ``|sigma(x)| <= gamma`` and the joint Lipschitz estimate
    ``|sigma(x)-sigma(y)| + |b(x)-b(y)| <= gamma |x-y|`` on probe pairs."""
    k = cone.dimension
    pts = probe_points(cone, probes, 0.0, r_max, seed)
    rng = np.random.default_rng(seed)
    witnesses = []
    worst_norm = 0.0
    worst_lip = 0.0
    sig = [_eval_matrix(sigma, x, k) for x in pts]
    drv = [_eval_vector(drift, x, k) for x in pts]
    for x, s in zip(pts, sig):
        nrm = float(np.linalg.norm(s, 2))
        worst_norm = max(worst_norm, nrm)
        if nrm > gamma * (1 + 1e-12):
            witnesses.append((x, nrm))
    pairs = rng.integers(0, len(pts), size=(probes, 2))
    for i, j in pairs:
        dx = np.linalg.norm(pts[i] - pts[j])
        if dx == 0.0:
            continue
        lip = (np.linalg.norm(sig[i] - sig[j], 2) + np.linalg.norm(drv[i] - drv[j])) / dx
        worst_lip = max(worst_lip, float(lip))
        if lip > gamma * (1 + 1e-12):
            witnesses.append((pts[i], float(lip)))
    return ConditionReport(
        "regularity",
        passed=not witnesses,
        margin=float(gamma - max(worst_norm, worst_lip)),
        witnesses=witnesses,
        details={"gamma": gamma, "sigma_norm_max": worst_norm, "lipschitz_estimate": worst_lip},
    )


def orthant(k: int, directions: Optional[Sequence] = None, K=None) -> PolyhedralCone:
    """Convenience: the nonnegative orthant with (default normal) reflection."""
    normals = np.eye(k)
    dirs = normals if directions is None else directions
    return build_cone(normals, dirs, K=K)
