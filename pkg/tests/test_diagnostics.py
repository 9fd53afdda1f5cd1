import math

import pytest
from hypothesis import given, settings

from riskstop import (FiniteChain, InvalidParams, LogValueFn, ModelMismatch, ParetoChain,
                      RandomResetChain, hitting_policy, iterate_from_above, iterate_from_below,
                      rule_policy, stop_immediately)
from riskstop.closed_form import Ex3Params
from riskstop.diagnostics import brute_force_ui, gap_report, regime_classifier, ui_profile

from conftest import finite_chains


def _w_policy(alpha):
    model = RandomResetChain(alpha, 0.5)
    return model, hitting_policy(iterate_from_above(model, 5.0).final)


def test_w_policy_stop_now_is_ui_in_gap_regime():
    # w = G in the gap regime, so its hitting rule stops at once and is UI
    # even though u != w
    model, pol = _w_policy(0.5)
    prof = ui_profile(model, pol, 5.0)
    assert prof.verdict == "vanishing"
    assert all(v == -math.inf for v in prof.values)
    u = iterate_from_below(model, 5.0).final
    assert u(5.0) < 5.0 - 1.0


def test_u_policy_profile_gap_regime_grows():
    model = RandomResetChain(0.5, 0.5)
    pol = hitting_policy(iterate_from_below(model, 5.0).final)
    prof = ui_profile(model, pol, 5.0)
    assert prof.verdict == "non-vanishing"
    assert prof.growth_rate == pytest.approx(Ex3Params(0.5, 0.5).ui_log_rate, abs=1e-6)


def test_u_policy_profile_wait_regime_decays():
    model = RandomResetChain(0.9, 0.5)
    pol = hitting_policy(iterate_from_below(model, 5.0).final)
    prof = ui_profile(model, pol, 5.0, T_grid=range(0, 129, 8))
    assert prof.verdict == "vanishing"
    assert prof.growth_rate == pytest.approx(Ex3Params(0.9, 0.5).ui_log_rate, abs=1e-6)


def test_stop_now_profile():
    model = RandomResetChain(0.5, 0.5)
    prof = ui_profile(model, stop_immediately(model), 2.0, T_grid=(0, 1, 2))
    assert prof.values == (-math.inf,) * 3 and prof.verdict == "vanishing"


def test_divergent_verdict_on_pareto():
    model = ParetoChain(0.5)
    pol = rule_policy(model, lambda x: x <= 1, tail_stop=False)
    prof = ui_profile(model, pol, 10.0, T_grid=(0, 1, 2, 4))
    assert prof.values[0] == 10.0
    assert prof.values[1] == math.inf
    assert prof.verdict == "divergent"


def test_mc_profile_never_claims_vanishing():
    model = RandomResetChain(0.9, 0.5)
    pol = hitting_policy(iterate_from_below(model, 5.0).final)
    prof = ui_profile(model, pol, 5.0, T_grid=(1, 2, 4, 8, 16, 32), method="monte-carlo",
                      n_traj=4000, seed=1)
    assert prof.verdict in ("non-vanishing", "inconclusive")
    assert len(prof.ci_low) == 6


def test_mc_profile_detects_growth():
    model = RandomResetChain(0.5, 0.5)
    pol = hitting_policy(iterate_from_below(model, 5.0).final)
    prof = ui_profile(model, pol, 5.0, T_grid=(1, 2, 3, 4, 5, 6), method="monte-carlo",
                      n_traj=20_000, seed=2)
    assert prof.verdict == "non-vanishing"


def test_profile_grid_checked():
    model = RandomResetChain(0.5, 0.5)
    with pytest.raises(InvalidParams):
        ui_profile(model, stop_immediately(model), 1.0, T_grid=(4, 2))
    with pytest.raises(InvalidParams):
        ui_profile(model, stop_immediately(model), 1.0, method="guess")


@settings(max_examples=60, deadline=None)
@given(finite_chains())
def test_analytic_matches_enumeration(chain):
    pol = rule_policy(chain, lambda x: x == chain.states[-1], name="last")
    x0 = chain.states[0]
    T_grid = tuple(range(7))
    prof = ui_profile(chain, pol, x0, T_grid=T_grid)
    for T, val in zip(T_grid, prof.values):
        ref = brute_force_ui(chain, pol, x0, T)
        if ref == -math.inf:
            assert val == -math.inf
        else:
            assert val == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_gap_report_regimes():
    for alpha, verdict in ((0.5, "non-unique"), (0.9, "unique"), (0.2, "unique")):
        model = RandomResetChain(alpha, 0.5)
        grid = [k / 2 for k in range(21)]
        u = iterate_from_below(model, 5.0, tol=1e-10, max_iter=2000, eval_states=grid)
        w = iterate_from_above(model, 5.0, tol=1e-10, max_iter=2000, eval_states=grid)
        rep = gap_report(u, w, grid)
        assert rep.verdict == verdict


def test_gap_report_gap_states():
    model = RandomResetChain(0.5, 0.5)
    rep = gap_report(iterate_from_below(model, 5.0), iterate_from_above(model, 5.0),
                     [0.0, 1.0, 2.0, 3.0])
    assert rep.states == [2.0, 3.0]
    assert rep.max_gap == pytest.approx(3.0 - 1.5461752700778737, abs=1e-6)


def test_gap_report_model_mismatch():
    u = iterate_from_below(RandomResetChain(0.5, 0.5), 1.0)
    w = iterate_from_above(RandomResetChain(0.6, 0.5), 1.0)
    with pytest.raises(ModelMismatch):
        gap_report(u, w)
    with pytest.raises(InvalidParams):
        gap_report(u, u)


def test_gap_report_finite_chain_default_window():
    chain = FiniteChain({0: [(1, 1.0)], 1: [(0, 1.0)]}, running=0.1, terminal={0: 1.0, 1: 2.0})
    rep = gap_report(iterate_from_below(chain, 0), iterate_from_above(chain, 0))
    assert rep.verdict == "unique"


@pytest.mark.parametrize("alpha,expected", [
    (0.0, "stop-now"), (0.2, "stop-now"), (0.3934693402873666, "stop-now"),
    (0.3934693402873667, "gap"), (0.5, "gap"), (0.7768698398515702, "gap"),
    (0.7768698398515703, "wait"), (1.0, "wait"),
])
def test_regime_classifier(alpha, expected):
    assert regime_classifier(alpha, 0.5) == expected


def test_gap_report_outside_support_is_inconclusive():
    model = RandomResetChain(0.9, 0.5)
    rep = gap_report(iterate_from_below(model, 5.0), iterate_from_above(model, 5.0), [0.5])
    assert rep.verdict == "inconclusive"
