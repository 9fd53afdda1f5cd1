import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from riskstop import LogValueFn, RandomResetChain, iterate_from_above, iterate_from_below
from riskstop.closed_form import Ex3Params, ex3_values
from riskstop.markov_model import log_mgf
from riskstop.stopping_policy import log_mean_ci

from conftest import finite_chains

alphas = st.floats(0.0, 1.0)
costs = st.floats(0.05, 2.0)


@given(finite_chains(), st.floats(-5.0, 5.0))
def test_log_mgf_of_constant(chain, k):
    v = LogValueFn(chain, {x: k for x in chain.states})
    for x in chain.states:
        assert log_mgf(chain, x, v) == pytest.approx(k, abs=1e-12)


@given(finite_chains(), st.floats(0.0, 3.0))
def test_log_mgf_shift(chain, shift):
    base = {x: chain.terminal_cost(x) for x in chain.states}
    v = LogValueFn(chain, base)
    vs = LogValueFn(chain, {x: b + shift for x, b in base.items()})
    for x in chain.states:
        assert log_mgf(chain, x, vs) == pytest.approx(log_mgf(chain, x, v) + shift, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(finite_chains())
def test_fixed_points_are_in_band(chain):
    for solve in (iterate_from_below, iterate_from_above):
        run = solve(chain, chain.states[0], tol=1e-10, max_iter=3000, eval_states=chain.states)
        for x in chain.states:
            assert -1e-12 <= run.value(x) <= chain.terminal_cost(x)


@given(alphas, costs, st.floats(0.0, 30.0))
def test_ex3_closed_form_ordering(alpha, c, x):
    u, w = ex3_values(Ex3Params(alpha, c), x)
    assert 0.0 <= u <= w <= x + 1e-15


@given(st.lists(st.floats(-50, 50), min_size=32, max_size=32), st.floats(-20, 20))
def test_log_mean_ci_shift_equivariant(vals, shift):
    costs = np.array(vals)
    a = log_mean_ci(costs, [2] * 16)
    b = log_mean_ci(costs + shift, [2] * 16)
    assert b[0] == pytest.approx(a[0] + shift, abs=1e-9)
    assert a[1] <= a[0] <= a[2]


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.1, 1.0))
def test_solver_matches_closed_form_u(alpha, c):
    p = Ex3Params(alpha, c)
    # skip a thin band around the lower boundary where convergence is very slow
    assume(abs((1 - alpha) * math.exp(c) - 1.0) >= 0.05)
    run = iterate_from_below(RandomResetChain(alpha, c), 4.0, tol=1e-10, max_iter=5000,
                             window_depth=4)
    assert run.value(4.0) == pytest.approx(ex3_values(p, 4.0)[0], abs=1e-6)
