import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_tree
from voltvar.network import (Bus, Line, NetworkError, PriceSchedule, build_network,
                             capability_bound, clamp_to_region, dump_feeder, load_feeder,
                             load_fixture, network_from_dict, network_to_dict)


def _net3():
    return build_network(
        [Bus(0, None, "substation"), Bus(1, 0, "load", p_c=0.1, q_c=0.05),
         Bus(2, 1, "dg", p_g=0.2, q_g_min=-0.45, q_g_max=0.45)],
        [Line(1, 0.01, 0.02), Line(2, 0.02, 0.03)])


def test_smallest_tree():
    net = build_network([Bus(0, None, "substation"), Bus(1, 0)], [Line(1, 0.01, 0.0)])
    assert net.children[0] == (1,)
    assert net.n == 1
    assert net.order[-1] == 0


@pytest.mark.parametrize("buses, lines, match", [
    ([Bus(0, None, "substation"), Bus(1, 2), Bus(2, 1)],
     [Line(1, 0.01, 0.01), Line(2, 0.01, 0.01)], "cycle"),
    ([Bus(0, None, "substation"), Bus(1, 0)], [Line(1, 0.0, 0.01)], "nonpositive resistance"),
    ([Bus(0, None, "substation"), Bus(1, 0)],
     [Line(1, 0.01, 0.01), Line(1, 0.02, 0.01)], "duplicate line"),
    ([Bus(0, None, "substation"), Bus(1, 0), Bus(2, 0)], [Line(1, 0.01, 0.01)], "disconnected"),
    ([Bus(0, None, "substation"), Bus(1, 0, "load", p_g=0.1)], [Line(1, 0.01, 0.01)],
     "cannot generate"),
    ([Bus(0, None, "substation"), Bus(1, 0, "dg", q_g_min=-0.1, q_g_max=0.2)],
     [Line(1, 0.01, 0.01)], "symmetric"),
])
def test_invalid_networks(buses, lines, match):
    with pytest.raises(NetworkError, match=match):
        build_network(buses, lines)


def test_topological_order_children_first():
    rng = np.random.default_rng(3)
    for _ in range(20):
        net = random_tree(rng, int(rng.integers(1, 16)))
        seen = set()
        for b in net.order:
            assert all(c in seen for c in net.children[b])
            seen.add(b)
        assert net.order[-1] == 0
        assert len(net.order) == net.n + 1


def test_default_limits_are_squared():
    net = _net3()
    assert np.allclose(net.v_min, 0.9025)
    assert np.allclose(net.v_max, 1.1025)


@pytest.mark.parametrize("s, p_bar, expect", [
    (1.0, 1.0, 0.0),
    (1.1, 1.0, 0.45826),
    (1.3, 1.0, 0.83066),
])
def test_capability_bound(s, p_bar, expect):
    assert capability_bound(s, p_bar) == pytest.approx(expect, abs=5e-6)


def test_capability_bound_undersized():
    with pytest.raises(ValueError):
        capability_bound(0.9, 1.0)


def test_clamp_examples():
    net = _net3()
    assert np.array_equal(clamp_to_region([0.0, 0.3], net), [0.0, 0.3])
    assert np.array_equal(clamp_to_region([0.0, 0.9], net), [0.0, 0.45])
    assert np.array_equal(clamp_to_region([0.1, 0.0], net), [0.0, 0.0])
    with pytest.raises(ValueError):
        clamp_to_region([0.1], net)


vecs = st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=2)


@given(a=vecs, b=vecs)
def test_clamp_idempotent_nonexpansive(a, b):
    net = _net3()
    ca, cb = clamp_to_region(a, net), clamp_to_region(b, net)
    assert np.array_equal(clamp_to_region(ca, net), ca)
    assert np.linalg.norm(ca - cb) <= np.linalg.norm(np.subtract(a, b)) + 1e-15


@settings(max_examples=40)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 15))
def test_serialization_round_trip(seed, n, tmp_path_factory):
    net = random_tree(np.random.default_rng(seed), n)
    assert network_from_dict(json.loads(json.dumps(network_to_dict(net)))) == net
    path = tmp_path_factory.mktemp("feeder") / "f.json"
    dump_feeder(net, path)
    back = load_feeder(path)
    assert back == net
    assert np.array_equal(back.r, net.r) and np.array_equal(back.q_hi, net.q_hi)


def test_prices():
    net = _net3()
    pr = PriceSchedule.uniform(net)
    assert pr.c_tilde[1] == pytest.approx(0.0825)
    assert pr.c[1] == pytest.approx(1 / 80)
    assert pr.c[0] == 0.0
    with pytest.raises(NetworkError):
        PriceSchedule.for_network(net, 6.6, [0.1, 0.0])
    with pytest.raises(NetworkError):
        PriceSchedule(0.0, np.zeros(2))


@pytest.mark.parametrize("name, n, k", [("feeder6", 6, 2), ("feeder15", 15, 3)])
def test_fixtures(name, n, k):
    net = load_fixture(name)
    assert net.n == n
    assert net.controllable_index.size == k
