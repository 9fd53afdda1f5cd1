import math

import pytest

from riskstop import (BadCandidate, FiniteChain, InvalidParams, LogValueFn, MaxIterExceeded,
                      ParetoChain, RandomResetChain, apply_bellman, iterate_from_above,
                      iterate_from_below, residual, truncated_terminal_iteration,
                      verify_sandwich)
from riskstop.closed_form import Ex1Params, Ex3Params, ex1_b_limit, ex3_discontinuous_solution

# frozen closed-form constants for c = 0.5
K_GAP = 1.5461752700778737      # alpha = 0.5
K_WAIT = 0.5748099089648594     # alpha = 0.9
LOG_B = 2.041942173306923
B_LIMIT = 2.0247595232257654


def test_first_step_from_zero():
    model = RandomResetChain(0.5, 0.5)
    assert apply_bellman(model, LogValueFn.zero(model), [3.0]).values[3.0] == 0.5


def test_pareto_terminal_is_fixed():
    model = ParetoChain(0.5)
    out = apply_bellman(model, LogValueFn.terminal(model), [1, 4, 10])
    assert out.values == {1.0: 1.0, 4.0: 4.0, 10.0: 10.0}


def test_k_is_a_fixed_point():
    model = RandomResetChain(0.5, 0.5)
    v = LogValueFn.from_function(model, lambda y: min(y, K_GAP))
    assert apply_bellman(model, v, [5.0]).values[5.0] == pytest.approx(K_GAP, abs=1e-12)
    assert residual(model, v, [5.0]) < 1e-12


def test_stop_now_regime_converges_to_identity():
    run = iterate_from_below(RandomResetChain(0.2, 0.5), 2.0)
    assert run.converged
    assert run.value(2.0) == 2.0


def test_gap_regime_below_and_above():
    model = RandomResetChain(0.5, 0.5)
    u = iterate_from_below(model, 5.0)
    w = iterate_from_above(model, 5.0)
    assert u.converged and w.converged
    assert u.value(5.0) == pytest.approx(K_GAP, abs=1e-7)
    assert w.value(5.0) == 5.0


def test_wait_regime_both_directions_agree():
    model = RandomResetChain(0.9, 0.5)
    u = iterate_from_below(model, 5.0, tol=1e-12)
    w = iterate_from_above(model, 5.0, tol=1e-12)
    assert u.value(5.0) == pytest.approx(K_WAIT, abs=1e-10)
    assert w.value(5.0) == pytest.approx(K_WAIT, abs=1e-10)


def test_pareto_from_below_bounded_by_log_b():
    run = iterate_from_below(ParetoChain(0.5), 10.0, tol=1e-12)
    assert run.converged
    assert run.value(10.0) == pytest.approx(B_LIMIT, abs=1e-10)
    assert run.value(10.0) <= LOG_B


def test_pareto_from_above_every_iterate_is_g():
    run = iterate_from_above(ParetoChain(0.5), 10.0)
    for vals in run.values:
        assert vals.tolist() == run.states.tolist()


def test_residual_of_closed_forms_gap_regime():
    model = RandomResetChain(0.5, 0.5)
    grid = [k / 10 for k in range(101)]
    u = LogValueFn.from_function(model, lambda y: min(y, K_GAP))
    w = LogValueFn.from_function(model, lambda y: y)
    assert residual(model, u, grid) <= 1e-12
    assert residual(model, w, grid) <= 1e-12


def test_residual_above_cap():
    model = RandomResetChain(0.5, 0.5)
    v = LogValueFn.from_function(model, lambda y: y + 1.0)
    assert residual(model, v, [0.0, 2.0, 3.5]) >= 1.0


def test_truncated_terminal_sequence():
    vals = truncated_terminal_iteration(RandomResetChain(0.5, 0.5), 5.0, [1, 2, 4, 8], tol=1e-10)
    seq = [v for _, v in vals]
    assert all(b >= a for a, b in zip(seq, seq[1:]))
    assert seq[0] == 1.0
    assert seq[-1] == pytest.approx(K_GAP, abs=1e-8)


def test_truncated_terminal_level_zero():
    assert truncated_terminal_iteration(RandomResetChain(0.5, 0.5), 5.0, [0])[0][1] == 0.0


def test_truncated_terminal_pareto():
    vals = truncated_terminal_iteration(ParetoChain(0.5), 10.0, [1, 2, 4, 8, 16])
    seq = [v for _, v in vals]
    assert all(b >= a for a, b in zip(seq, seq[1:]))
    assert all(v <= LOG_B for v in seq)


def test_truncated_levels_must_increase():
    with pytest.raises(InvalidParams):
        truncated_terminal_iteration(RandomResetChain(0.5, 0.5), 5.0, [2, 1])


def test_sandwich_discontinuous_solution():
    model = RandomResetChain(0.5, 0.5)
    params = Ex3Params(0.5, 0.5)
    grid = [k / 4 for k in range(41)]
    u = iterate_from_below(model, 0.0, tol=1e-10, eval_states=grid)
    w = iterate_from_above(model, 0.0, tol=1e-10, eval_states=grid)
    cand = LogValueFn.from_function(model, lambda y: ex3_discontinuous_solution(params, y))
    assert verify_sandwich(u, w, cand, grid).holds
    assert verify_sandwich(u, w, u.final, grid).holds
    zero = verify_sandwich(u, w, LogValueFn.zero(model), grid)
    assert not zero.holds
    assert {x for x, kind, _ in zero.violations} == {x for x in grid if x > 0}
    assert all(kind == "below-u" for _, kind, _ in zero.violations)


def test_sandwich_rejects_out_of_band_candidate():
    model = RandomResetChain(0.5, 0.5)
    u = iterate_from_below(model, 1.0)
    w = iterate_from_above(model, 1.0)
    with pytest.raises(BadCandidate):
        verify_sandwich(u, w, LogValueFn.from_function(model, lambda y: y + 1), [1.0])


def test_non_convergence_is_reported():
    run = iterate_from_below(RandomResetChain(0.2, 0.5), 3.0, max_iter=5)
    assert not run.converged
    with pytest.raises(MaxIterExceeded):
        run.raise_for_status()


def test_run_trace_shapes():
    run = iterate_from_below(RandomResetChain(0.9, 0.5), 5.0)
    assert run.iteration_count == len(run.residuals) == len(run.monotone)
    assert all(run.monotone)
    rows = list(run.csv_rows())
    assert rows[0][0] == 0 and rows[-1][0] == run.iteration_count
    assert len(run.iterates) == run.iteration_count + 1


def test_depth_restart_keeps_exactness():
    # a short initial support forces at least one restart
    model = RandomResetChain(0.5, 0.5)
    run = iterate_from_below(model, 5.0, window_depth=2, max_iter=200)
    assert run.restarts >= 1
    from riskstop.closed_form import ex3_cn
    p = Ex3Params(0.5, 0.5)
    big = iterate_from_below(model, 500.0, window_depth=2, n_iter=150)
    for n in (1, 10, 70, 150):
        assert big.value(500.0, n) == pytest.approx(ex3_cn(p, n), rel=1e-12)


def test_slack_and_closure():
    model = RandomResetChain(0.5, 0.5)
    run = iterate_from_below(model, 5.0)
    assert 0 <= run.slack(5.0) < 1e-6
    assert run.slack(12345.5) == math.inf
    assert LogValueFn.zero(model).closure == "use-zero"
    assert LogValueFn.terminal(model).closure == "use-G"


def test_finite_chain_solutions_coincide():
    chain = FiniteChain({0: [(0, 0.5), (1, 0.5)], 1: [(0, 1.0)]}, running=0.3,
                        terminal={0: 2.0, 1: 0.1})
    u = iterate_from_below(chain, 0, tol=1e-12)
    w = iterate_from_above(chain, 0, tol=1e-12)
    assert u.value(0) == pytest.approx(w.value(0), abs=1e-10)
    assert u.value(1) == 0.1


def test_pareto_b_limit_matches_engine_to_tight_tol():
    assert ex1_b_limit(Ex1Params(0.5)) == pytest.approx(B_LIMIT, abs=1e-15)
