import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clmsim.network import (
    Branch,
    Bus,
    ClassicalGen,
    GhostBusError,
    Network,
    NetworkDivergedError,
    NetworkSolver,
    TopologyError,
    assemble_ybus,
    bus_injections,
    grow_network,
    kirchhoff_residual,
    partition_views,
    solve_network,
    solve_power_flow,
)


def incidence_ybus(net):
    """Ybus built from branch primitives as A^T Yprim A (two-port stamps, no shared code)."""
    n = net.n
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        f, t = net.index[br.from_id], net.index[br.to_id]
        y = 1 / complex(br.r, br.x)
        prim = np.array([[y / br.tap ** 2 + 0.5j * br.b, -y / br.tap],
                         [-y / br.tap, y + 0.5j * br.b]])
        A = np.zeros((2, n))
        A[0, f] = A[1, t] = 1
        Y += A.T @ prim @ A
    for b, y in net.shunts.items():
        Y[net.index[b], net.index[b]] += y
    return Y


def mesh():
    return Network(
        [Bus(1), Bus(2), Bus(3), Bus(4)],
        [Branch(1, 2, 0.01, 0.1, 0.02), Branch(2, 3, 0.02, 0.2, 0.0, 1.05),
         Branch(3, 4, 0.0, 0.05), Branch(4, 1, 0.03, 0.3, 0.04)],
        shunts={3: 0.2j},
    )


def test_ybus_matches_incidence_oracle():
    net = mesh()
    assert np.allclose(assemble_ybus(net), incidence_ybus(net), atol=1e-14)


def test_ybus_extra_and_faults():
    net = mesh()
    net.active_faults = {2: 1e7 - 1e7j}
    Y = assemble_ybus(net, {4: 0.5 - 0.2j})
    base = incidence_ybus(net)
    assert Y[3, 3] - base[3, 3] == pytest.approx(0.5 - 0.2j)
    assert Y[1, 1] - base[1, 1] == pytest.approx(1e7 - 1e7j)


def test_zero_impedance_and_bad_topology():
    with pytest.raises(TopologyError):
        assemble_ybus(Network([Bus(1), Bus(2)], [Branch(1, 2)]))
    with pytest.raises(TopologyError):
        Network([Bus(1), Bus(1)])
    net = Network([Bus(1)])
    with pytest.raises(TopologyError):
        net.add_branch(Branch(1, 5, 0, 0.1))


def test_linear_solve_matches_dense_solve():
    net = mesh()
    Y = assemble_ybus(net, {k: 0.3 for k in (1, 2, 3, 4)})
    cur = np.array([1.0, -0.2j, 0.3 + 0.1j, 0.0])
    v = NetworkSolver(Y).solve(cur)
    assert np.allclose(v, np.linalg.solve(Y, cur), atol=1e-13)


def test_pinned_bus_schur_elimination():
    net = mesh()
    Y = assemble_ybus(net, {2: 0.5, 3: 0.4, 4: 0.6})
    cur = np.zeros(4, dtype=complex)
    v = NetworkSolver(Y, pinned=[0]).solve(cur, np.array([1.0 + 0j]))
    assert v[0] == 1.0
    assert kirchhoff_residual(Y, v, cur, free=[1, 2, 3]) < 1e-13


def test_solve_network_fixed_point_with_constant_power_load():
    net = Network([Bus(1), Bus(2)], [Branch(1, 2, 0.01, 0.1)])
    Y = assemble_ybus(net)
    solver = NetworkSolver(Y, pinned=[0])
    s = 0.5 + 0.2j

    def inj(v):
        out = np.zeros(2, dtype=complex)
        out[1] = -(s / v[1]).conjugate()
        return out

    v, iters = solve_network(solver, inj, np.ones(2, complex), 1e-12, 50, np.array([1.0 + 0j]))
    drawn = v[1] * ((Y @ v)[1]).conjugate()
    assert drawn == pytest.approx(-s, abs=1e-10)
    assert iters < 50


def test_solve_network_divergence_is_reported():
    net = Network([Bus(1), Bus(2)], [Branch(1, 2, 0.0, 1.0)])
    solver = NetworkSolver(assemble_ybus(net), pinned=[0])

    def inj(v):
        out = np.zeros(2, dtype=complex)
        out[1] = -(5.0 / v[1]).conjugate()
        return out

    with pytest.raises(NetworkDivergedError) as err:
        solve_network(solver, inj, np.ones(2, complex), 1e-10, 20, np.array([1.0 + 0j]), 0.5, [1, 2])
    assert err.value.t == 0.5 and err.value.worst_bus in (1, 2)


def test_two_bus_power_flow_closed_form():
    # lossless line: P = V1 V2 sin(d) / x, Q2 balance
    net = Network([Bus(1, v=1.0), Bus(2, p_load=0.5, q_load=0.1)], [Branch(1, 2, 0, 0.2)])
    solve_power_flow(net, 1)
    v2 = net.bus(2).v
    assert abs(v2) * math.sin(-np.angle(v2)) / 0.2 == pytest.approx(0.5, abs=1e-10)
    s = bus_injections(net)
    assert s[1] == pytest.approx(-0.5 - 0.1j, abs=1e-10)


def test_classical_gen_equilibrium_and_norton():
    g = ClassicalGen(1, H=5, xd_p=0.2)
    v = 1.0 * np.exp(0.1j)
    g.init(v, 0.8 + 0.3j)
    d = g.derivatives(g.x, v)
    assert np.allclose(d, 0, atol=1e-12)
    drawn = g.current(g.x, v) - g.admittance() * v
    assert v * drawn.conjugate() == pytest.approx(0.8 + 0.3j, abs=1e-12)


def layout(n_parts):
    buses = [Bus(i, partition_owner=(i - 1) * n_parts // 10) for i in range(1, 11)]
    branches = [Branch(i, i + 1, 0, 0.1) for i in range(1, 10)]
    return Network(buses, branches)


def requests_for(net, parents):
    req = {}
    for b in parents:
        req.setdefault(net.bus(b).partition_owner, []).append(b)
    return req


@pytest.mark.parametrize("n_parts", [1, 2, 3])
def test_growth_ids_independent_of_partitioning(n_parts):
    parents = [1, 3, 5, 6, 8, 10]
    net = layout(n_parts)
    out = grow_network(net, requests_for(net, parents))
    new = sorted(i for pair in out.values() for i in pair)
    assert new == list(range(11, 23))
    assert set(out) == set(parents)
    for p, (ls, lb) in out.items():
        assert net.bus(ls).partition_owner == net.bus(p).partition_owner == net.bus(lb).partition_owner


@given(st.sets(st.integers(1, 10), min_size=1, max_size=10), st.integers(1, 4))
def test_growth_ids_contiguous_property(parents, n_parts):
    net = layout(n_parts)
    out = grow_network(net, requests_for(net, sorted(parents)))
    new = sorted(i for pair in out.values() for i in pair)
    assert new == list(range(11, 11 + 2 * len(parents)))


def test_ghost_bus_growth_rejected():
    net = layout(2)
    views = partition_views(net)
    ghost = next(iter(views[0].ghosts))
    with pytest.raises(GhostBusError):
        grow_network(net, {0: [ghost]})
    with pytest.raises(GhostBusError):
        grow_network(net, {1: [1]})
