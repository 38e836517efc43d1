import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conestab.dynamics import (
    HittingBracket,
    NoAdmissibleControls,
    check_dpp,
    decay_envelope,
    dpp_slack,
    exact_1d_hitting_time,
    hitting_time_bracket,
    hitting_time_upper,
    inset_control,
    integrate_constrained_ode,
    lipschitz_constant_T,
    sample_inset_controls,
    upper_bound_estimator,
)
from conestab.geometry import build_cone, dist_to_cone_boundary, dual_description, orthant
from conestab.paths import PathGrid, uniform_grid

OBLIQUE = orthant(2, [[1.0, 0.5], [0.5, 1.0]], K=6.0)
GC = dual_description(OBLIQUE)


def first_hit(path, eps):
    r = path.norms()
    idx = np.flatnonzero(r <= eps)
    return float(path.times[idx[0]]) if idx.size else None


# ---------------------------------------------------------------------------
# integration


def test_1d_constant_velocity_closed_form():
    t = uniform_grid(2.0, 0.01)
    z = integrate_constrained_ode([1.0], [-1.0], t, orthant(1))
    np.testing.assert_allclose(z.values[:, 0], np.maximum(1.0 - t, 0.0), atol=1e-12)


def test_zero_trajectory_for_C_valued_control():
    rng = np.random.default_rng(0)
    ws = rng.exponential(size=(200, 2)) @ GC.generators
    z = integrate_constrained_ode([0.0, 0.0], ws, uniform_grid(2.0, 0.01), OBLIQUE)
    assert np.max(np.abs(z.values)) <= 1e-12


def test_orthant_decoupled_coordinates():
    t = uniform_grid(3.0, 0.05)
    z = integrate_constrained_ode([1.0, 2.0], [-1.0, -1.0], t, orthant(2))
    np.testing.assert_allclose(z.values[:, 0], np.maximum(1 - t, 0), atol=1e-12)
    np.testing.assert_allclose(z.values[:, 1], np.maximum(2 - t, 0), atol=1e-12)


def test_feedback_and_time_dependent_velocity():
    t = uniform_grid(1.0, 0.1)
    z1 = integrate_constrained_ode([1.0], lambda s, x: -x, PathGrid(t, np.zeros(len(t))), orthant(1))
    np.testing.assert_allclose(z1.values[:, 0], 0.9 ** np.arange(len(t)), rtol=1e-12)
    z2 = integrate_constrained_ode([1.0], lambda s: [-2.0 * s], t, orthant(1))
    assert np.all(np.diff(z2.values[:, 0]) <= 0)


def test_ode_rejects_start_outside_G():
    with pytest.raises(ValueError, match="not in G"):
        integrate_constrained_ode([-1.0], [0.0], uniform_grid(1.0, 0.5), orthant(1))


def test_ode_stays_in_G():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(100, 2)) * 3
    z = integrate_constrained_ode([1.0, 1.0], v, uniform_grid(1.0, 0.01), OBLIQUE)
    assert all(OBLIQUE.contains(p) for p in z.values)


def test_refinement_convergence_first_order():
    def v(t):
        return [-1.0 + 0.8 * math.sin(3 * t), -1.0 + 0.8 * math.cos(2 * t)]

    x = [0.6, 0.9]
    hs = [0.02, 0.01, 0.005]
    paths = [integrate_constrained_ode(x, v, uniform_grid(2.0, h), OBLIQUE) for h in hs]

    def sup_diff(a, b):
        # compare on the coarse grid
        return np.max(np.linalg.norm(a.values - b.values[::2][: len(a.times)], axis=1))

    d1 = sup_diff(paths[0], paths[1])
    d2 = sup_diff(paths[1], paths[2])
    assert 1.5 <= d1 / d2 <= 2.5


# ---------------------------------------------------------------------------
# envelope and bounds


def test_envelope_examples():
    assert decay_envelope(3.0, 2.0, 1.0, 0.0) == pytest.approx(6.0)
    assert decay_envelope(1.0, 2.0, 1.0, 2.0) == pytest.approx(1.0)
    vals = decay_envelope(1.0, 2.0, 1.0, np.linspace(0, 1e6, 50))
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-5
    assert decay_envelope(0.0, 2.0, 1.0, 5.0) == 0.0


def test_hitting_time_upper_examples():
    assert hitting_time_upper(0.0, 1.0, 1.0) == 0.0
    assert hitting_time_upper(1.0, 1.0, 1.0) == 4.0
    assert hitting_time_upper(3.0, 2.0, 0.5) == 96.0


def test_lipschitz_constant_T():
    assert lipschitz_constant_T(2.0, 0.5) == 64.0


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.1, 5), st.floats(0.1, 5),
    st.floats(0.2, 1.0),
    st.integers(0, 10_000),
)
def test_envelope_holds_for_sampled_controls(x0, x1, delta, seed):
    h = 0.01
    controls = sample_inset_controls(GC, delta, 6, seed)
    rng = np.random.default_rng(seed)
    n = int(round(hitting_time_upper(math.hypot(x0, x1), 6.0, delta) / h)) + 2
    n = min(n, 4000)
    idx = rng.integers(0, len(controls), size=n // 50 + 1)
    v = np.repeat(controls[idx], 50, axis=0)[:n]
    z = integrate_constrained_ode([x0, x1], v, h * np.arange(n + 1), OBLIQUE)
    Lv = float(np.max(np.linalg.norm(v, axis=1)))
    env = decay_envelope(math.hypot(x0, x1), 6.0, delta, z.times)
    assert np.all(z.norms() <= env + Lv * 6.0 * h)


# ---------------------------------------------------------------------------
# inset controls


def test_inset_controls_in_C_delta():
    for delta in (0.1, 0.5, 2.0):
        vs = sample_inset_controls(GC, delta, 40, seed=3)
        assert len(vs) == 40
        assert all(dist_to_cone_boundary(v, GC) >= delta * (1 - 1e-12) for v in vs)


def test_inset_of_origin_is_tip():
    v = inset_control(np.zeros(2), dual_description(orthant(2)), 1.0)
    np.testing.assert_allclose(v, [-1.0, -1.0], rtol=1e-9)


def test_no_admissible_controls():
    cone = build_cone([[1.0, 0.0], [-1.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(NoAdmissibleControls, match="no admissible controls"):
        sample_inset_controls(dual_description(cone), 0.5, 4)
    with pytest.raises(NoAdmissibleControls):
        hitting_time_bracket([1.0, 0.0], cone, None, 2.0, 0.5)


# ---------------------------------------------------------------------------
# brackets


def test_bracket_1d_contains_exact_value():
    br = hitting_time_bracket([2.0], orthant(1), None, K=2.0, delta=1.0, grid_h=1e-3)
    assert br.contains(2.0)
    assert br.lower == pytest.approx(2.0, abs=2e-3)
    assert br.upper == 32.0


def test_bracket_at_origin():
    br = hitting_time_bracket([0.0, 0.0], OBLIQUE, GC, K=6.0, delta=0.5)
    assert (br.lower, br.upper) == (0.0, 0.0)


def test_bracket_orthant_normal():
    cone = orthant(2)
    gc = dual_description(cone)
    K = 2.0
    br = hitting_time_bracket([1.0, 0.0], cone, gc, K=K, delta=1.0, n_controls=16, grid_h=1e-3)
    v = np.array(br.best_control)
    assert br.lower >= 1.0 / (K * np.linalg.norm(v)) - 1e-3
    z = integrate_constrained_ode([1.0, 0.0], v, uniform_grid(br.upper, 1e-3), cone)
    assert br.contains(first_hit(z, 1e-6 * 2) or 0.0)
    assert 0 <= br.lower <= br.upper
    assert br.to_dict()["width"] == pytest.approx(br.upper - br.lower)


def test_bracket_rejects_inverted_interval():
    with pytest.raises(ValueError):
        HittingBracket(2.0, 1.0, None, 0)


def test_every_control_hits_before_upper_bound():
    x = np.array([0.6, 0.2])
    h = 0.01
    upper = hitting_time_upper(np.linalg.norm(x), 6.0, 0.5)
    for v in sample_inset_controls(GC, 0.5, 10, seed=8):
        z = integrate_constrained_ode(x, v, uniform_grid(h * math.ceil(upper / h + 1), h), OBLIQUE)
        t = first_hit(z, 1e-6 * (1 + np.linalg.norm(x)))
        assert t is not None and t <= upper + h


def test_hit_times_lipschitz_in_x_1d():
    K, delta, h = 2.0, 1.0, 1e-3
    C = lipschitz_constant_T(K, delta)
    rng = np.random.default_rng(11)
    for _ in range(30):
        x, y = rng.uniform(0, 3, size=2)
        v = -delta * rng.uniform(1, 3)
        t = uniform_grid(4.0, h)
        tx = first_hit(integrate_constrained_ode([x], [v], t, orthant(1)), 1e-6 * (1 + x))
        ty = first_hit(integrate_constrained_ode([y], [v], t, orthant(1)), 1e-6 * (1 + y))
        assert abs(tx - ty) <= C * abs(x - y) + h


# ---------------------------------------------------------------------------
# dynamic programming principle


def test_dpp_equality_1d_exact():
    delta = 0.7
    t = uniform_grid(5.0, 0.01)
    z = integrate_constrained_ode([2.0], [-delta], t, orthant(1))
    T = exact_1d_hitting_time(delta)
    slack = dpp_slack(z, T)
    assert np.max(np.abs(slack)) <= 1e-9
    assert check_dpp(z, T)


def test_dpp_constant_zero_path():
    z = PathGrid(np.arange(5.0), np.zeros((5, 2)))
    assert check_dpp(z, upper_bound_estimator(6.0, 0.5))


def test_dpp_upper_bound_estimator_along_compliant_trajectory():
    K, delta = 6.0, 0.5
    T = upper_bound_estimator(K, delta)
    for v in sample_inset_controls(GC, delta, 10, seed=2):
        z = integrate_constrained_ode([2.0, 3.0], v, uniform_grid(20.0, 0.01), OBLIQUE)
        assert check_dpp(z, T, tol=1e-9)
        # the estimator is dominated by the decay-envelope bound along the path
        env = decay_envelope(np.linalg.norm([2.0, 3.0]), K, delta, z.times)
        assert np.all(np.array([T(p) for p in z.values]) <= 4 * K * K * (env + K * 0.01 * np.linalg.norm(v)) / delta)


def test_dpp_detects_violation():
    # moving away from the origin breaks the inequality
    z = integrate_constrained_ode([1.0], [1.0], uniform_grid(1.0, 0.1), orthant(1))
    assert not check_dpp(z, exact_1d_hitting_time(1.0))
