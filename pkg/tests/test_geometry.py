import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conestab.geometry import (
    GeometryError,
    ModelEvaluationError,
    active_set,
    build_cone,
    check_drift_condition,
    check_nondegeneracy,
    check_regularity,
    dist_to_cone_boundary,
    dual_description,
    in_cone,
    in_cone_nnls,
    orthant,
    probe_points,
)

OBLIQUE = [[1.0, 0.5], [0.5, 1.0]]


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def oblique_cone(K=None):
    return orthant(2, OBLIQUE, K=K)


def random_oblique(rng, k):
    """Orthant with each d_i tilted away from e_i by a random small angle."""
    dirs = np.eye(k) + 0.4 * rng.uniform(-1, 1, size=(k, k)) * (1 - np.eye(k))
    return orthant(k, dirs)


# ---------------------------------------------------------------------------
# build_cone


def test_half_line_is_valid():
    cone = build_cone([[1.0]], [[1.0]])
    assert cone.dimension == 1 and cone.n_faces == 1
    assert cone.K_is_estimated


def test_non_acute_pair_rejected():
    with pytest.raises(GeometryError, match=r"faces\[0\]"):
        build_cone([[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]])


def test_oblique_directions_are_normalized():
    cone = oblique_cone()
    np.testing.assert_allclose(cone.directions[0], unit([1, 0.5]), atol=1e-15)
    np.testing.assert_allclose(cone.directions[1], unit([0.5, 1]), atol=1e-15)
    assert np.all(np.abs(np.linalg.norm(cone.directions, axis=1) - 1) < 1e-12)
    assert np.all(np.abs(np.linalg.norm(cone.normals, axis=1) - 1) < 1e-12)


def test_unnormalized_normals_are_normalized():
    cone = build_cone([[3.0, 0.0], [0.0, 0.5]], [[2.0, 0.0], [0.0, 7.0]])
    np.testing.assert_allclose(cone.normals, np.eye(2))
    np.testing.assert_allclose(cone.directions, np.eye(2))


@pytest.mark.parametrize(
    "normals, directions, match",
    [
        ([[1.0, 0.0]], [[1.0]], "dimension"),
        ([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0]], "same number"),
        ([[0.0, 0.0]], [[1.0, 0.0]], r"faces\[0\]"),
        ([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 0.0]], r"faces\[1\]"),
        ([], [], "empty"),
    ],
)
def test_build_cone_errors(normals, directions, match):
    with pytest.raises(GeometryError, match=match):
        build_cone(normals, directions)


def test_K_below_one_rejected():
    with pytest.raises(GeometryError):
        build_cone([[1.0]], [[1.0]], K=0.5)


def test_cone_equality_and_fingerprint():
    a, b = oblique_cone(K=3.0), oblique_cone(K=3.0)
    assert a == b and hash(a) == hash(b)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != orthant(2, K=3.0).fingerprint()


def test_cone_arrays_are_read_only():
    cone = orthant(2)
    with pytest.raises(ValueError):
        cone.normals[0, 0] = 5.0


# ---------------------------------------------------------------------------
# active_set


def test_active_set_examples():
    cone = orthant(2)
    assert active_set([1.0, 1.0], cone) == frozenset()
    assert active_set([0.0, 1.0], cone) == frozenset({0})
    assert active_set([0.0, 0.0], cone) == frozenset({0, 1})


def test_active_set_soft_membership():
    cone = orthant(2)
    assert active_set([-5e-10, 1.0], cone) == frozenset({0})
    with pytest.raises(GeometryError, match="outside"):
        active_set([-1e-3, 1.0], cone)


@given(
    st.lists(st.floats(0, 1e-6), min_size=2, max_size=2),
    st.floats(1e-12, 1e-6),
    st.floats(0.01, 1.0),
)
def test_active_set_monotone_in_tolerance(x, tol, shrink):
    cone = orthant(2)
    big = active_set(x, cone, tol=tol)
    small = active_set(x, cone, tol=tol * shrink)
    assert small <= big


# ---------------------------------------------------------------------------
# dual description and membership


def test_dual_1d():
    gc = dual_description(orthant(1))
    np.testing.assert_allclose(gc.facet_normals, [[-1.0]])
    assert gc.full_dimensional and not gc.degenerate_lineality


def test_dual_orthant_normal():
    gc = dual_description(orthant(2))
    got = sorted(map(tuple, np.round(gc.facet_normals, 12)))
    assert got == [(-1.0, 0.0), (0.0, -1.0)]


def test_dual_oblique_facets_orthogonal_to_generators():
    gc = dual_description(oblique_cone())
    g = gc.generators
    assert gc.facet_normals.shape == (2, 2)
    # each facet is spanned by one generator ray
    dots = np.abs(gc.facet_normals @ g.T)
    assert np.all(np.min(dots, axis=1) < 1e-12)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_generators_inside_facets(k):
    rng = np.random.default_rng(k)
    for _ in range(5):
        gc = dual_description(random_oblique(rng, k))
        assert np.all(gc.generators @ gc.facet_normals.T >= -1e-10)


@pytest.mark.parametrize("k", [2, 3])
def test_facet_and_nnls_membership_agree(k):
    rng = np.random.default_rng(10 + k)
    cone = oblique_cone() if k == 2 else random_oblique(rng, k)
    gc = dual_description(cone)
    agree = 0
    n = 1000
    for _ in range(n):
        v = rng.normal(size=k)
        # keep away from the boundary where the two tolerances legitimately differ
        if gc.facet_normals.size and np.min(np.abs(gc.facet_normals @ v)) < 1e-6:
            v = v + 1e-3 * gc.central_direction
        agree += in_cone(v, gc) == in_cone_nnls(v, gc)
    assert agree == n


def test_in_cone_examples():
    g1 = dual_description(orthant(1))
    assert in_cone([-3.0], g1)
    assert not in_cone([0.1], g1)
    assert not in_cone([-1.0, 2.0], dual_description(orthant(2)))


def test_degenerate_cone_flags():
    # two opposite directions in 2-D: C is a line, not full-dimensional
    cone = build_cone([[1.0, 0.0], [-1.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]])
    gc = dual_description(cone)
    assert not gc.full_dimensional
    assert gc.inset_empty
    assert gc.degenerate_lineality
    assert dist_to_cone_boundary([1.0, 0.0], gc) == 0.0
    assert in_cone([3.0, 0.0], gc)
    assert not in_cone([0.0, 1.0], gc)


# ---------------------------------------------------------------------------
# boundary distance


def test_dist_examples():
    assert dist_to_cone_boundary([-0.7], dual_description(orthant(1))) == pytest.approx(0.7)
    assert dist_to_cone_boundary([-1.0, -1.0], dual_description(orthant(2))) == pytest.approx(1.0)


def test_dist_outside_is_zero_and_flagged():
    gc = dual_description(orthant(2))
    d, inside = dist_to_cone_boundary([1.0, -1.0], gc, return_inside=True)
    assert d == 0.0 and inside is False


def _ray_distance(v, g):
    t = max(0.0, float(v @ g) / float(g @ g))
    return float(np.linalg.norm(v - t * g))


def test_dist_matches_boundary_sampling_oracle():
    gc = dual_description(oblique_cone())
    rng = np.random.default_rng(3)
    rays = gc.generators
    checked = 0
    while checked < 200:
        v = rng.normal(size=2) * 3
        if not in_cone(v, gc):
            continue
        # dense sampling of the two boundary rays, refined by the exact ray distance
        ts = np.linspace(0, 20, 20001)
        sampled = min(np.min(np.linalg.norm(v[None, :] - ts[:, None] * g[None, :], axis=1)) for g in rays)
        exact = min(_ray_distance(v, g) for g in rays)
        assert abs(dist_to_cone_boundary(v, gc) - exact) <= 1e-6
        assert sampled >= exact - 1e-12
        checked += 1


@settings(max_examples=200)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.floats(1e-3, 1e3),
)
def test_dist_positively_homogeneous(v, lam):
    gc = dual_description(oblique_cone())
    v = np.array(v)
    d1 = dist_to_cone_boundary(lam * v, gc)
    d0 = dist_to_cone_boundary(v, gc)
    assert d1 == pytest.approx(lam * d0, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# probes


def test_probe_points_lie_in_G_with_spread_radii():
    cone = oblique_cone()
    pts = probe_points(cone, 50, r_min=1.0, r_max=5.0, seed=1)
    r = np.linalg.norm(pts, axis=1)
    assert np.all(r > 1.0) and np.isclose(r.max(), 5.0)
    assert all(cone.contains(p) for p in pts)


def test_probe_points_deterministic():
    a = probe_points(orthant(3), 20, seed=4)
    b = probe_points(orthant(3), 20, seed=4)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# condition checks


def test_drift_condition_constant_pass():
    rep = check_drift_condition(lambda x: [-1.0], orthant(1), 0.5)
    assert rep.passed and rep.margin == pytest.approx(0.5)
    assert rep.condition == "drift-cone"


def test_drift_condition_unbounded_fails_with_witness():
    rep = check_drift_condition(lambda x: [-1.0 + x[0]], orthant(1), 0.5, r_A=0.0)
    assert not rep.passed
    assert any(p[0] >= 1.0 for p, _ in rep.witnesses)


def test_drift_condition_exact_margin_zero():
    rep = check_drift_condition(lambda x: [-1.0, -1.0], orthant(2), 1.0)
    assert rep.passed and rep.margin == pytest.approx(0.0, abs=1e-12)


def test_drift_condition_ignores_ball_A():
    # bad drift only inside the ball of radius 2
    b = lambda x: [1.0] if x[0] < 2.0 else [-1.0]  # noqa: E731
    assert not check_drift_condition(b, orthant(1), 0.5, r_A=0.0).passed
    assert check_drift_condition(b, orthant(1), 0.5, r_A=2.0).passed


def test_drift_condition_records_failing_probe():
    def bad(x):
        raise ZeroDivisionError("boom")

    with pytest.raises(ModelEvaluationError) as info:
        check_drift_condition(bad, orthant(1), 0.5, probes=3)
    assert len(info.value.point) == 1


def test_nondegeneracy_identity_and_zero():
    good = check_nondegeneracy(lambda x: np.eye(2), orthant(2), c_floor=1.0)
    assert good.passed and good.details["c_estimate"] == pytest.approx(1.0)
    bad = check_nondegeneracy(lambda x: np.zeros((2, 2)), orthant(2), c_floor=0.5)
    assert not bad.passed and bad.details["c_estimate"] == 0.0
    assert bad.witnesses


def test_nondegeneracy_decaying_sigma():
    sig = lambda x: np.diag([1.0, 1.0 / (1.0 + np.linalg.norm(x))])  # noqa: E731
    rep = check_nondegeneracy(sig, orthant(2), c_floor=0.5, r_max=9.0)
    assert rep.details["c_estimate"] == pytest.approx(0.01, rel=1e-9)
    assert not rep.passed
    assert np.linalg.norm(rep.witnesses[0][0]) == pytest.approx(9.0)


def test_nondegeneracy_rejects_non_square():
    with pytest.raises(GeometryError, match="non-square"):
        check_nondegeneracy(lambda x: np.ones((2, 3)), orthant(2), c_floor=1.0)


def test_regularity_bound_and_lipschitz():
    ok = check_regularity(lambda x: -0.5 * np.asarray(x), lambda x: np.eye(1), orthant(1), gamma=1.0)
    assert ok.passed
    bad = check_regularity(lambda x: -3.0 * np.asarray(x), lambda x: np.eye(1), orthant(1), gamma=1.0)
    assert not bad.passed and bad.witnesses
    assert bad.details["lipschitz_estimate"] == pytest.approx(3.0)


def test_report_round_trips_to_dict():
    rep = check_drift_condition(lambda x: [1.0], orthant(1), 0.5, probes=4)
    d = rep.to_dict()
    assert d["pass"] is False and d["witnesses"] and d["condition"] == "drift-cone"
