import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_tree, two_bus
from voltvar.branchflow import OperatingPoint, equation_residuals, power_loss, sweep_solve
from voltvar.conic import DualSolution
from voltvar.network import Bus, Line, build_network, load_fixture
from voltvar.relaxation import (InfeasibleError, build_maps, cone_gaps, exactness_certificate,
                                solve_dual, solve_primal, strict_feasibility_probe)

P1, Q1 = -0.1, -0.05


def test_two_bus_maps():
    net = two_bus()
    m = build_maps(net)
    assert np.allclose(m.A_q, [[-1.0, 0.02]])
    assert np.allclose(m.A_p, [[0.0, 0.01]])
    assert np.allclose(m.b_p([P1]), [0.1])


def _map_residuals(net, maps, z, p):
    P, v, q = maps.reconstruct(z, p)
    pt = OperatingPoint(0.0, 0.0, P, z[: net.n], z[net.n:], v)
    return np.abs(equation_residuals(net, p, q, pt)[:3]).max()


def test_map_identity_random_ten_bus():
    rng = np.random.default_rng(8)
    for _ in range(20):
        net = random_tree(rng, 10)
        maps = build_maps(net)
        z = rng.normal(scale=0.1, size=2 * net.n)
        p = rng.normal(scale=0.1, size=net.n)
        assert _map_residuals(net, maps, z, p) <= 1e-12


def test_flat_point_from_maps():
    net = load_fixture("feeder15")
    maps = build_maps(net)
    P, v, q = maps.reconstruct(np.zeros(2 * net.n), np.zeros(net.n))
    assert np.all(P == 0) and np.all(q == 0) and np.all(v == net.v0)


@given(P=st.floats(-2, 2), Q=st.floats(-2, 2), v=st.floats(0, 3), ell=st.floats(0, 3))
def test_hyperbolic_soc_equivalence(P, Q, v, ell):
    hyper = ell * v - (P * P + Q * Q)
    soc = v + ell - np.linalg.norm([2 * P, 2 * Q, v - ell])
    # the two slacks share sign; compare away from the rounding band
    if abs(hyper) > 1e-9:
        assert (hyper >= 0) == (soc >= 0)


@pytest.mark.parametrize("P, Q, v, ell", [(0.0, 0.0, 0.0, 0.0), (1.0, 0.0, 1.0, 1.0),
                                          (0.0, 0.0, 2.0, 0.0), (0.6, 0.8, 1.0, 1.0)])
def test_soc_boundary_cases(P, Q, v, ell):
    assert v + ell - np.linalg.norm([2 * P, 2 * Q, v - ell]) == pytest.approx(0.0, abs=1e-15)


def test_zero_injections():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    sol = solve_primal(maps, net, np.zeros(net.n), np.zeros(net.n))
    assert sol.value == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(sol.z, 0.0, atol=1e-6)


@pytest.mark.parametrize("q1", [Q1, 0.0])
def test_two_bus_matches_sweep(q1):
    net = two_bus()
    maps = build_maps(net)
    sol = solve_primal(maps, net, [P1], [q1])
    ref = power_loss(net, sweep_solve(net, [P1], [q1], tol=1e-13))
    assert sol.value == pytest.approx(ref, abs=1e-9)
    assert sol.result.dual_value == pytest.approx(sol.value, abs=1e-9)
    cert = exactness_certificate(maps, [P1], sol.z, sol.dual)
    assert cert.exact and cert.max_gap <= 1e-8 and cert.mu_certified


def test_inflated_current_flagged():
    net = two_bus()
    maps = build_maps(net)
    sol = solve_primal(maps, net, [P1], [Q1])
    z = sol.z.copy()
    z[1] += 0.1
    cert = exactness_certificate(maps, [P1], z)
    assert cert.max_gap == pytest.approx(0.1, rel=1e-2)
    assert not cert.exact


def test_flags_independent():
    net = two_bus()
    maps = build_maps(net)
    sol = solve_primal(maps, net, [P1], [Q1])
    d = sol.dual
    zero_mu = DualSolution(d.lam, d.u, np.zeros_like(d.mu), d.nu_lo, d.nu_hi, d.dual_value)
    cert = exactness_certificate(maps, [P1], sol.z, zero_mu)
    assert cert.exact and not cert.mu_certified


def test_separate_dual_agrees():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    p, q = net.nominal_p(), -net.nominal_qc()
    sol = solve_primal(maps, net, p, q)
    dual = solve_dual(maps, net, p, q)
    assert dual.dual_value == pytest.approx(sol.value, abs=1e-8)
    assert np.allclose(dual.lam, sol.dual.lam, atol=1e-6)


def test_sensitivity_subgradient_inequality():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    p, q = net.nominal_p(), -net.nominal_qc()
    base = solve_primal(maps, net, p, q)
    for n in range(net.n):
        for delta in (1e-4, -1e-4):
            dq = q.copy()
            dq[n] += delta
            f = solve_primal(maps, net, p, dq).value
            assert f >= base.value - base.dual.lam[n] * delta - 1e-8


def test_tightness_and_monotone_on_fixtures():
    rng = np.random.default_rng(21)
    for name in ("feeder6", "feeder15"):
        net = load_fixture(name)
        maps = build_maps(net)
        for _ in range(5):
            p = net.nominal_p() * (1 + 0.3 * rng.standard_normal(net.n))
            q = -net.nominal_qc() * (1 + 0.3 * rng.standard_normal(net.n))
            sol = solve_primal(maps, net, p, q)
            pt = sweep_solve(net, p, q)
            assert exactness_certificate(maps, p, sol.z).exact
            assert sol.value <= power_loss(net, pt) + 1e-8
            assert abs(sol.value - power_loss(net, pt)) <= 1e-6
            assert np.allclose(sol.point.v, pt.v, atol=1e-6)
            assert np.allclose(sol.point.P, pt.P, atol=1e-6)


@pytest.mark.parametrize("mode", ["max_loss", "max_slack"])
def test_probe_two_bus(mode):
    net = two_bus()
    rep = strict_feasibility_probe(build_maps(net), net, [P1], [Q1], mode=mode)
    assert rep.margin > 0 and rep.strictly_feasible


def test_probe_zero_injection():
    net = load_fixture("feeder6")
    maps = build_maps(net)
    z = np.zeros(net.n)
    rep = strict_feasibility_probe(maps, net, z, z, mode="max_slack")
    assert rep.margin == pytest.approx(rep.slacks.min())
    assert rep.margin > 0


def test_probe_pinned_voltage():
    v1 = sweep_solve(two_bus(), [P1], [Q1], tol=1e-13).v[0]
    net = build_network([Bus(0, None, "substation"),
                         Bus(1, 0, "load", v_min=v1 - 1e-9, v_max=v1 + 1e-9)],
                        [Line(1, 0.01, 0.02)])
    rep = strict_feasibility_probe(build_maps(net), net, [P1], [Q1])
    # a 2e-9 band in v leaves ~4e-6 of freedom in ell
    assert -1e-8 <= rep.margin <= 1e-5


def test_voltage_box_infeasible():
    net = build_network([Bus(0, None, "substation"), Bus(1, 0, "load", v_min=0.99, v_max=1.0)],
                        [Line(1, 0.1, 0.1)])
    with pytest.raises(InfeasibleError):
        solve_primal(build_maps(net), net, [-0.5], [-0.5])


def test_nonfinite_rejected():
    net = two_bus()
    with pytest.raises(ValueError):
        solve_primal(build_maps(net), net, [np.inf], [0.0])


def test_cone_gaps_zero_at_oracle():
    net = load_fixture("feeder15")
    maps = build_maps(net)
    p, q = net.nominal_p(), -net.nominal_qc()
    pt = sweep_solve(net, p, q)
    z = np.concatenate((pt.Q, pt.ell))
    assert np.abs(cone_gaps(maps, p, z)).max() <= 1e-9
