import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import brute_threshold
from voltvar.controller import (ControllerState, StepSizeSchedule, default_diameter,
                                deterministic_step, eta_at, ideal_step, stochastic_step,
                                threshold_update)
from voltvar.network import Bus, Line, PriceSchedule, build_network, load_fixture
from voltvar.relaxation import InfeasibleError, build_maps, solve_primal


def dg_two_bus(q_max=1.0, q_c=0.05, v_lim=(0.5, 1.5)):
    return build_network([Bus(0, None, "substation"),
                          Bus(1, 0, "dg", p_c=0.1, q_c=q_c, q_g_min=-q_max, q_g_max=q_max,
                              v_min=v_lim[0], v_max=v_lim[1])],
                         [Line(1, 0.01, 0.02)])


# -- step sizes ----------------------------------------------------------------

@pytest.mark.parametrize("sched, t, expect", [
    (StepSizeSchedule("decaying", D=1.0, L=1.0), 4, 0.5),
    (StepSizeSchedule("constant_horizon", D=1.0, L=2.0, T=100), 7, 0.05),
    (StepSizeSchedule("scaled_decaying", D=1.0, L=1.0, beta=2.0), 1, 2.0),
])
def test_eta_at(sched, t, expect):
    assert eta_at(sched, t) == pytest.approx(expect)


def test_eta_at_rejects_zero():
    with pytest.raises(ValueError):
        eta_at(StepSizeSchedule(D=1.0, L=1.0), 0)


@pytest.mark.parametrize("kw", [dict(kind="bogus"), dict(D=0.0), dict(L=-1.0),
                                dict(beta=0.0), dict(kind="constant_horizon", T=0),
                                dict(L_min=0.0)])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        StepSizeSchedule(**kw)


def test_default_diameter():
    net = load_fixture("feeder6")
    assert default_diameter(net) == pytest.approx(np.sqrt(2 * (0.3**2 + 0.3**2)))


# -- threshold rule ------------------------------------------------------------

@pytest.mark.parametrize("y, ec, lo, hi, expect", [
    (0.05, 0.1, -1.0, 1.0, 0.0),
    (0.5, 0.1, -1.0, 1.0, 0.4),
    (2.0, 0.1, -1.0, 1.0, 1.0),
    (-0.3, 0.0, -0.45, 0.45, -0.3),
    (-0.5, 0.1, -1.0, 1.0, -0.4),
    (-2.0, 0.1, -1.0, 1.0, -1.0),
])
def test_threshold_examples(y, ec, lo, hi, expect):
    assert threshold_update([y], [ec], [lo], [hi])[0] == pytest.approx(expect)


def test_threshold_boundaries_closed_on_zero_branch():
    assert threshold_update([0.1], [0.1], [-1.0], [1.0])[0] == 0.0
    assert threshold_update([-0.1], [0.1], [-1.0], [1.0])[0] == 0.0
    assert threshold_update([1.1], [0.1], [-1.0], [1.0])[0] == pytest.approx(1.0)


@pytest.mark.parametrize("args", [([0.0], [0.1], [1.0], [-1.0]), ([0.0], [-0.1], [-1.0], [1.0]),
                                  ([0.0], [0.1], [0.1], [1.0])])
def test_threshold_errors(args):
    with pytest.raises(ValueError):
        threshold_update(*args)


def test_threshold_against_grid():
    rng = np.random.default_rng(12)
    for _ in range(300):
        hi = rng.uniform(0, 1)
        lo = -hi
        ec = rng.uniform(0, 0.5)
        y = rng.uniform(-2, 2)
        got = threshold_update([y], [ec], [lo], [hi])[0]
        assert abs(got - brute_threshold(y, ec, lo, hi)) <= 2e-5


def kkt_residual(q, y, ec, lo, hi):
    """Multipliers reproducing stationarity for the scalar problem, per branch."""
    if q == hi and hi > 0:
        s, xi_lo, xi_hi = 1.0, 0.0, y - hi - ec
    elif q == lo and lo < 0:
        s, xi_lo, xi_hi = -1.0, lo - y - ec, 0.0
    elif q > 0:
        s, xi_lo, xi_hi = 1.0, 0.0, 0.0
    elif q < 0:
        s, xi_lo, xi_hi = -1.0, 0.0, 0.0
    else:
        s = y / ec if ec > 0 else 0.0
        xi_lo = xi_hi = 0.0
    assert xi_lo >= -1e-12 and xi_hi >= -1e-12 and -1 - 1e-12 <= s <= 1 + 1e-12
    assert xi_hi * (q - hi) == 0 and xi_lo * (lo - q) == 0
    return abs(q - y + ec * s + xi_hi - xi_lo)


@given(y=st.floats(-3, 3), ec=st.floats(0.001, 1), hi=st.floats(0.001, 2))
def test_kkt_each_branch(y, ec, hi):
    q = threshold_update([y], [ec], [-hi], [hi])[0]
    assert kkt_residual(q, y, ec, -hi, hi) <= 1e-12


# -- stochastic step -----------------------------------------------------------

def test_zero_prices_fixed_point():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    state = ControllerState.initial(net)
    z = np.zeros(net.n)
    state, q, diag = stochastic_step(state, net, maps, PriceSchedule.uniform(net, ratio=None),
                                     z, z)
    # no load means no loss sensitivity; lambda vanishes up to solver accuracy
    assert np.allclose(diag.lam, 0.0, atol=1e-6)
    assert np.allclose(q, z, atol=1e-3)


def test_dead_band_two_bus():
    net = dg_two_bus()
    maps = build_maps(net)
    prices = PriceSchedule.for_network(net, 6.6, [66.0])  # c = 10, far above lambda
    state = ControllerState.initial(net, StepSizeSchedule("decaying", D=1.0, L=1.0))
    state, q, diag = stochastic_step(state, net, maps, prices, [-0.1], [0.05])
    assert q[0] == 0.0
    assert diag.eta * prices.c[0] > abs(diag.eta * diag.lam[0])
    assert state.t == 1


def test_infeasible_holds_and_flags():
    net = dg_two_bus(q_max=0.2, v_lim=(0.999, 1.0))
    maps = build_maps(net)
    state = ControllerState.initial(net)
    state = ControllerState(np.array([0.1]), np.zeros(1), 0, state.schedule)
    state, q, diag = stochastic_step(state, net, maps, PriceSchedule.uniform(net),
                                     [-2.0], [2.0])
    assert diag.flag == "infeasible"
    assert q[0] == 0.1 and state.t == 1
    assert net.q_lo[0] <= q[0] <= net.q_hi[0]


def test_subgradient_inequality_probes():
    net = load_fixture("feeder15")
    maps = build_maps(net)
    rng = np.random.default_rng(2)
    p, qc = net.nominal_p(), net.nominal_qc()
    state = ControllerState.initial(net)
    prices = PriceSchedule.uniform(net)
    for _ in range(3):
        q_prev = state.q_hat
        f0 = solve_primal(maps, net, p, q_prev - qc).value
        state, _, diag = stochastic_step(state, net, maps, prices, p, qc)
        g = -diag.lam
        for _ in range(20):
            probe = rng.uniform(net.q_lo, net.q_hi)
            try:
                f = solve_primal(maps, net, p, probe - qc).value
            except InfeasibleError:
                continue  # f is +inf outside the voltage-feasible set
            assert f >= f0 + g @ (probe - q_prev) - 1e-6
        assert np.all(state.q_hat >= net.q_lo) and np.all(state.q_hat <= net.q_hi)


def test_price_zero_is_projected_subgradient():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    prices = PriceSchedule.uniform(net, ratio=None)
    state = ControllerState.initial(net)
    p, qc = net.nominal_p(), net.nominal_qc()
    for _ in range(5):
        q_prev = state.q_hat
        state, q, diag = stochastic_step(state, net, maps, prices, p, qc)
        assert np.array_equal(q, np.clip(q_prev + diag.eta * diag.lam, net.q_lo, net.q_hi))


def test_running_average():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    state = ControllerState.initial(net)
    qs = []
    for _ in range(3):
        state, q, _ = stochastic_step(state, net, maps, PriceSchedule.uniform(net),
                                      net.nominal_p(), net.nominal_qc())
        qs.append(q)
    assert np.allclose(state.q_bar, np.mean(qs, axis=0))


# -- deterministic / ideal -----------------------------------------------------

def test_no_controllable_buses():
    net = build_network([Bus(0, None, "substation"), Bus(1, 0, "load", p_c=0.1, q_c=0.05)],
                        [Line(1, 0.01, 0.02)])
    maps = build_maps(net)
    prices = PriceSchedule.uniform(net, ratio=None)
    sol = deterministic_step(net, maps, prices, [-0.1], [0.05])
    assert np.array_equal(sol.q_g, [0.0])
    assert sol.value == pytest.approx(solve_primal(maps, net, [-0.1], [-0.05]).value, abs=1e-9)


def _scan(net, maps, c, grid):
    vals = [solve_primal(maps, net, [-0.1], [g - 0.05]).value + c * abs(g) for g in grid]
    return grid[int(np.argmin(vals))]


def test_full_local_compensation():
    net = dg_two_bus()
    maps = build_maps(net)
    sol = deterministic_step(net, maps, PriceSchedule.uniform(net, ratio=None), [-0.1], [0.05])
    grid = np.linspace(0.0, 0.1, 201)
    assert sol.q_g[0] == pytest.approx(_scan(net, maps, 0.0, grid), abs=1e-3)
    assert sol.q_g[0] == pytest.approx(0.05, abs=2e-3)


def test_expensive_support_stays_off():
    net = dg_two_bus()
    maps = build_maps(net)
    prices = PriceSchedule.for_network(net, 6.6, [66.0])
    sol = deterministic_step(net, maps, prices, [-0.1], [0.05])
    grid = np.linspace(0.0, 0.1, 201)
    assert _scan(net, maps, prices.c[0], grid) == 0.0
    assert abs(sol.q_g[0]) <= 1e-6


def test_ideal_matches_deterministic_on_same_inputs():
    net = load_fixture("feeder15")
    maps = build_maps(net)
    prices = PriceSchedule.uniform(net)
    a = deterministic_step(net, maps, prices, net.nominal_p(), net.nominal_qc())
    b = ideal_step(net, maps, prices, net.nominal_p(), net.nominal_qc())
    assert np.array_equal(a.q_g, b.q_g)
    assert a.exact


def test_deterministic_beats_stochastic_one_shot_objective():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    prices = PriceSchedule.uniform(net)
    p, qc = net.nominal_p(), net.nominal_qc()
    sol = deterministic_step(net, maps, prices, p, qc)
    obj = solve_primal(maps, net, p, sol.q_g - qc).value + prices.c @ np.abs(sol.q_g)
    assert obj == pytest.approx(sol.value, abs=1e-7)
    rng = np.random.default_rng(0)
    for _ in range(10):
        q = rng.uniform(0, net.q_hi)
        assert solve_primal(maps, net, p, q - qc).value + prices.c @ np.abs(q) >= sol.value - 1e-8
