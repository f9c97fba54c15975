import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hpslab import HPSSolver, ParameterError
from hpslab.problems import make_analytic_helmholtz


def test_params_round_trip():
    est = HPSSolver(p=12, nx=4, solver="oracle")
    params = est.get_params()
    assert params["p"] == 12 and params["nx"] == 4 and params["solver"] == "oracle"
    other = clone(est).set_params(p=8)
    assert other.p == 8 and est.p == 12


def test_fit_predict_analytic():
    est = HPSSolver(p=14, nx=6, ppw=10).fit()
    spec = est.problem_
    X = np.random.default_rng(0).random((50, 2))
    pred = est.predict(X)
    ref = spec.true_solution(X)
    assert np.linalg.norm(pred - ref) / np.linalg.norm(ref) <= 1e-5
    assert est.errors_.relerr_res <= 1e-10
    assert est.score(X, ref) <= 0.0


def test_fit_with_problem_spec():
    spec = make_analytic_helmholtz(2 * np.pi * 2)
    est = HPSSolver(p=12, nx=4).fit(spec)
    assert est.problem_ is spec
    nodes = est.topo_.node_coords[:20]
    np.testing.assert_allclose(est.predict(nodes), est.solution_[:20], atol=1e-12)


def test_unfitted_and_bad_input():
    with pytest.raises(NotFittedError):
        HPSSolver().predict(np.zeros((1, 2)))
    est = HPSSolver(p=8, nx=3).fit()
    with pytest.raises(ParameterError):
        est.predict(np.zeros((2, 3)))
    with pytest.raises(TypeError):
        est.fit("analytic")
