import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from conestab.estimators import (
    InvariantMeasureEstimator,
    OccupationMeasureEstimator,
    SkorokhodMapTransformer,
    SkorokhodProjector,
)
from conestab.geometry import orthant
from conestab.skorokhod import project_point

N = [[1.0, 0.0], [0.0, 1.0]]
D = [[1.0, 0.5], [0.5, 1.0]]


def test_projector_params_and_clone():
    p = SkorokhodProjector(normals=N, directions=D, lipschitz_K=6.0)
    assert p.get_params() == {"normals": N, "directions": D, "lipschitz_K": 6.0}
    q = clone(p)
    assert q.get_params() == p.get_params() and q is not p
    with pytest.raises(NotFittedError):
        q.transform([[1.0, 1.0]])


def test_projector_matches_function():
    X = np.random.default_rng(0).normal(size=(50, 2))
    out = SkorokhodProjector(N, D).fit_transform(X)
    cone = orthant(2, D)
    for x, y in zip(X, out):
        np.testing.assert_allclose(y, project_point(x, cone), atol=1e-12)
    with pytest.raises(ValueError, match="features"):
        SkorokhodProjector(N, D).fit().transform([[1.0, 2.0, 3.0]])


def test_map_transformer_1d_reflection():
    t = SkorokhodMapTransformer([[1.0]], [[1.0]], dt=0.5)
    psi = np.array([[1.0], [0.0], [-1.0], [0.5], [-2.0]])
    phi = t.fit_transform(psi)
    np.testing.assert_allclose(phi[:, 0], [1.0, 0.0, 0.0, 1.5, 0.0])
    np.testing.assert_allclose(t.eta_[-1], [2.0])
    with pytest.raises(ValueError):
        SkorokhodMapTransformer([[1.0]], [[1.0]], dt=0.0).fit()


def test_pipeline_composes():
    pipe = make_pipeline(SkorokhodProjector(N, D))
    out = pipe.fit_transform(np.array([[-1.0, 2.0]]))
    assert orthant(2, D).contains(out[0])


def test_occupation_estimator():
    X = np.array([[0.1], [0.1], [0.6], [0.9]])
    est = OccupationMeasureEstimator(box=([0.0], [1.0]), bins=2).fit(X, sample_weight=[1, 1, 1, 1])
    np.testing.assert_allclose(est.histogram_.probabilities, [0.5, 0.5])
    np.testing.assert_allclose(est.score_samples([[0.2], [0.7], [1.0], [2.0], [-1.0]]), [1.0, 1.0, 1.0, 0.0, 0.0])
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(ValueError):
        OccupationMeasureEstimator().fit(X, sample_weight=[1, -1, 1, 1])
    with pytest.raises(NotFittedError):
        OccupationMeasureEstimator().score_samples(X)


def test_invariant_estimator():
    est = InvariantMeasureEstimator([[1.0]], [[1.0]], drift=[-1.0], sigma=[[1.0]], h=1e-3, horizon=500.0, burn_in=10.0)
    with pytest.raises(NotFittedError):
        est.predict()
    est.fit()
    assert abs(est.mean_[0] - 0.5) <= 0.1
    assert est.predict(np.zeros((3, 1))).shape == (3, 1)
    assert clone(est).get_params()["horizon"] == 500.0
