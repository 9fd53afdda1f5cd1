import numpy as np
import pytest
from sklearn.base import clone

from riskstop import InvalidParams, RandomResetChain, stop_immediately
from riskstop.estimators import PolicyEvaluator, ValueIteration


def test_params_roundtrip():
    est = ValueIteration(direction="from-above", tol=1e-6)
    assert est.get_params()["direction"] == "from-above"
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert not hasattr(twin, "value_")


def test_fit_predict_score():
    model = RandomResetChain(0.9, 0.5)
    est = ValueIteration(tol=1e-12).fit(model, 5.0)
    assert est.converged_
    assert est.predict([0.0, 5.0]) == pytest.approx([0.0, 0.5748099089648594], abs=1e-10)
    assert est.score(np.arange(6.0)) > -1e-10


def test_bad_hyper_parameters():
    model = RandomResetChain(0.9, 0.5)
    with pytest.raises(InvalidParams):
        ValueIteration(direction="sideways").fit(model, 1.0)
    with pytest.raises(InvalidParams):
        ValueIteration(tol=-1.0).fit(model, 1.0)
    with pytest.raises(InvalidParams):
        PolicyEvaluator(n_traj=1).fit(model, stop_immediately(model), 1.0)


def test_policy_evaluator():
    model = RandomResetChain(0.9, 0.5)
    est = PolicyEvaluator(n_traj=100, seed=3).fit(model, stop_immediately(model), 2.0)
    assert est.predict() == 2.0
