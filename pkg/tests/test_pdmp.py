import math

import numpy as np
import pytest

from riskstop import (InvalidParams, RandomResetChain, hitting_policy, iterate_from_below,
                      rule_policy)
from riskstop.closed_form import ex3_values
from riskstop.pdmp import (PdmpParams, dyadic_finite_horizon, embed, sample_gaps,
                           simulate_and_evaluate, simulate_trajectory, write_trajectory_csv)
from riskstop.exceptions import BudgetExceeded

K_EMBED = 0.8109302162163288


def test_gap_mean():
    p = PdmpParams(2.0, 1.0, 0.9)
    gaps = sample_gaps(p, 100_000, np.random.default_rng(0))
    assert abs(gaps.mean() - 0.5) <= 3 * 0.5 / math.sqrt(len(gaps))


@pytest.mark.parametrize("lam,d,alpha", [(1.0, 1.0, 0.5), (1.0, 2.0, 0.5), (0.0, 0.1, 0.5),
                                         (2.0, 0.0, 0.5), (2.0, 1.0, 1.5)])
def test_params_rejected(lam, d, alpha):
    with pytest.raises(InvalidParams):
        PdmpParams(lam, d, alpha)


def test_embedded_cost():
    p = PdmpParams(2.0, 1.0, 0.9)
    assert p.c_embed == pytest.approx(math.log(2.0))
    assert embed(p) == RandomResetChain(0.9, math.log(2.0))
    assert p.embedded.K == pytest.approx(K_EMBED, abs=1e-14)


def test_trajectory_is_piecewise_constant(tmp_path):
    p = PdmpParams(2.0, 1.0, 0.3)
    tr = simulate_trajectory(p, 4.0, 10.0, np.random.default_rng(1))
    assert all(t <= 10.0 for t in tr.times)
    assert tr.state_at(0.0) == 4.0
    for t, x in zip(tr.times, tr.states):
        assert tr.state_at(t) == x
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, [tr])
    assert len(path.read_text().splitlines()) == len(tr.times) + 2


@pytest.mark.parametrize("lam,d,alpha", [
    (2.0, 1.0, 0.9), (3.0, 1.0, 0.95), (1.0, 0.3, 0.9), (5.0, 2.0, 0.9), (2.0, 0.5, 0.85),
    (4.0, 1.0, 1.0), (2.0, 1.0, 0.3), (1.5, 0.5, 0.6), (3.0, 2.0, 0.99), (10.0, 1.0, 0.8),
])
def test_embedding_fidelity(lam, d, alpha):
    p = PdmpParams(lam, d, alpha)
    chain = embed(p)
    x0 = 3.0
    pol = hitting_policy(iterate_from_below(chain, x0).final)
    est = simulate_and_evaluate(p, x0, pol, 20_000, 500.0, 17)
    target = ex3_values(p.embedded, x0)[0]
    assert est.ci_low - 1e-3 <= target <= est.ci_high + 1e-3


def test_simulate_divergence_and_checks():
    p = PdmpParams(2.0, 1.0, 0.9)
    chain = embed(p)
    with pytest.raises(InvalidParams):
        simulate_and_evaluate(p, 1.0, rule_policy(chain, lambda x: True), 1, 1.0, 0)
    with pytest.raises(InvalidParams):
        simulate_and_evaluate(p, 1.0, rule_policy(chain, lambda x: True), 10, 0.0, 0)


def test_dyadic_zero_horizon():
    p = PdmpParams(2.0, 1.0, 0.9)
    assert dyadic_finite_horizon(p, 5.0, 0.0, 4).value == 0.0


def test_dyadic_frozen_values():
    p = PdmpParams(2.0, 1.0, 0.9)
    frozen = {(5, 4): 1.00967, (5, 6): 0.84952, (10, 6): 0.91320, (20, 4): 1.73338}
    for (T, m), val in frozen.items():
        assert dyadic_finite_horizon(p, 5.0, T, m).value == pytest.approx(val, abs=1e-5)


def test_dyadic_monotone():
    p = PdmpParams(2.0, 1.0, 0.9)
    grid = {(T, m): dyadic_finite_horizon(p, 5.0, T, m).value for T in (2, 5, 10) for m in (2, 4, 6)}
    for m in (2, 4, 6):
        assert grid[2, m] <= grid[5, m] + 1e-12 <= grid[10, m] + 2e-12
    for T in (2, 5, 10):
        assert grid[T, 6] <= grid[T, 4] + 1e-12 <= grid[T, 2] + 2e-12


def test_dyadic_stops_at_zero_state():
    p = PdmpParams(2.0, 1.0, 0.9)
    assert dyadic_finite_horizon(p, 0.0, 5.0, 4).value == 0.0


def test_dyadic_budget_and_adaptive_order():
    p = PdmpParams(2.0, 1.0, 0.9)
    fixed = dyadic_finite_horizon(p, 5.0, 10.0, 6, k_max=12)
    auto = dyadic_finite_horizon(p, 5.0, 10.0, 6, k_max=None, accuracy=1e-10)
    assert auto.budget <= 1e-10
    assert fixed.value == pytest.approx(auto.value, abs=fixed.budget + auto.budget + 1e-12)
    with pytest.raises(BudgetExceeded):
        dyadic_finite_horizon(p, 5.0, 10.0, 0, k_max=2, accuracy=1e-12)
    with pytest.raises(BudgetExceeded):
        dyadic_finite_horizon(p, 5.0, 10.0, 6, max_states=100)
    with pytest.raises(InvalidParams):
        dyadic_finite_horizon(p, 5.0, -1.0, 6)


@pytest.mark.parametrize("T", [5.0, 10.0, 20.0])
def test_dyadic_refinement_probe(T):
    p = PdmpParams(2.0, 1.0, 0.9)
    coarse = dyadic_finite_horizon(p, 5.0, T, 6)
    fine = dyadic_finite_horizon(p, 5.0, T, 9)
    assert coarse.value >= fine.value - coarse.budget - fine.budget
