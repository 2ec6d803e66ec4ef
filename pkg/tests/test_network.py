import numpy as np
import pytest

from podlab.model import load_case
from podlab.network import (
    Branch,
    Bus,
    IslandingError,
    Network,
    SingularNetworkError,
    branch_stamp,
    build_admittance,
    solve_network,
)
from podlab.simulation import Simulator


def brute_force_admittance(net, load_y=None, extra=None):
    """Independent oracle: scalar per-branch summation, no vectorization."""
    n = net.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        i = net.bus_index(br.from_bus)
        j = net.bus_index(br.to_bus)
        ys = 1.0 / (br.r + 1j * br.x)
        ysh = 1j * br.b / 2.0
        y[i, i] += (ys + ysh) / br.tap**2
        y[j, j] += ys + ysh
        y[i, j] -= ys / br.tap
        y[j, i] -= ys / br.tap
    for sh in net.shunts:
        k = net.bus_index(sh.bus)
        y[k, k] += sh.g + 1j * sh.b
    if load_y is not None:
        for k in range(n):
            y[k, k] += load_y[k]
    if extra is not None:
        for k in range(n):
            y[k, k] += extra[k]
    return y


def test_single_branch_offdiagonal():
    """Two buses joined by z = j0.5: off-diagonals are -1/(j0.5) = +2j."""
    net = Network([Bus("A"), Bus("B")], [Branch("L", "A", "B", 0.0, 0.5)])
    y = build_admittance(net)
    assert y[0, 1] == pytest.approx(2j)
    assert y[1, 0] == pytest.approx(2j)
    assert y[0, 0] == pytest.approx(-2j)


def test_branch_trip_equals_removal():
    net = Network(
        [Bus("A"), Bus("B"), Bus("C")],
        [Branch("L1", "A", "B", 0.01, 0.1, 0.02), Branch("L2", "B", "C", 0.02, 0.2, 0.04),
         Branch("L3", "A", "C", 0.0, 0.3)],
    )
    y_tripped = build_admittance(net, tripped=frozenset({"L2"}))
    net_without = Network(net.buses, [net.branches[0], net.branches[2]])
    y_removed = build_admittance(net_without)
    np.testing.assert_allclose(y_tripped, y_removed, atol=0.0)


def test_admittance_39bus_matches_brute_force(ieee39_model):
    m = ieee39_model
    y = build_admittance(m.net, load_y=m.load_y, extra_shunt_y=m.machine_shunt_y)
    oracle = brute_force_admittance(m.net, m.load_y, m.machine_shunt_y)
    assert np.max(np.abs(y - oracle)) < 1e-12


def test_islanding_detected():
    net = Network(
        [Bus("A"), Bus("B"), Bus("C")],
        [Branch("L1", "A", "B", 0.0, 0.1), Branch("L2", "B", "C", 0.0, 0.1)],
    )
    with pytest.raises(IslandingError, match="island"):
        build_admittance(net, tripped=frozenset({"L2"}))


def test_fault_admittance_enters_diagonal():
    net = Network([Bus("A"), Bus("B")], [Branch("L", "A", "B", 0.0, 0.5)])
    y0 = build_admittance(net)
    yf = build_admittance(net, fault_y={"B": -1e5j})
    assert yf[1, 1] - y0[1, 1] == pytest.approx(-1e5j)
    assert yf[0, 0] == y0[0, 0]


def test_no_load_voltage_profile_from_infinite_bus():
    """With one fixed source and no injections, every bus sits at the source voltage."""
    net = Network(
        [Bus("A"), Bus("B"), Bus("C")],
        [Branch("L1", "A", "B", 0.0, 0.2), Branch("L2", "B", "C", 0.01, 0.3)],
    )
    y = build_admittance(net)
    v = solve_network(y, np.zeros(3, dtype=complex),
                      fixed_idx=np.array([0]), fixed_v=np.array([1.0 + 0j]),
                      bus_ids=["A", "B", "C"])
    np.testing.assert_allclose(v, np.ones(3), atol=1e-14)


def test_singular_solve_names_bus():
    net = Network(
        [Bus("A"), Bus("B"), Bus("C")],
        [Branch("L1", "A", "B", 0.0, 0.2), Branch("L2", "B", "C", 0.0, 0.3)],
    )
    y = build_admittance(net)
    y[2, :] = 0.0
    y[:, 2] = 0.0
    with pytest.raises(SingularNetworkError, match="bus C"):
        solve_network(y, np.zeros(3, dtype=complex), bus_ids=["A", "B", "C"])


def test_39bus_solution_satisfies_kvl(ieee39_model):
    """Recompute every branch current from the solved voltages; nodal balance
    must equal the machine Norton injections to 1e-9."""
    m = ieee39_model
    sim = Simulator(m)
    v = sim.solve_voltages(m.x0)
    n = m.net.n_bus
    i_nodal = np.zeros(n, dtype=complex)
    for br in m.net.branches:
        xf = 1.0
        if m.tcsc is not None and br.id in m.tcsc.branch_ids:
            k = m.tcsc.branch_ids.index(br.id)
            xf = 1.0 - m.tcsc.x_ref[k]
        yff, yft, ytf, ytt = branch_stamp(br, xf)
        i, j = m.net.bus_index(br.from_bus), m.net.bus_index(br.to_bus)
        i_nodal[i] += yff * v[i] + yft * v[j]
        i_nodal[j] += ytf * v[i] + ytt * v[j]
    i_nodal += (m.load_y + m.machine_shunt_y) * v
    i_inj = np.zeros(n, dtype=complex)
    xm = m.view(m.x0, m.machines)
    np.add.at(i_inj, m.machines.bus_idx,
              m.machines.internal_emf(xm) * m.machines.norton_y())
    assert np.max(np.abs(i_nodal - i_inj)) < 1e-9


def test_smib_mid_fault_terminal_voltage(smib_model):
    """A bolted fault at the machine bus collapses its voltage below 0.1 p.u."""
    sim = Simulator(smib_model)
    sim._topo = (frozenset(), frozenset({("B1", -1e5j)}))
    v = sim.solve_voltages(smib_model.x0)
    assert abs(v[smib_model.net.bus_index("B1")]) < 0.1


def test_load_flow_hits_setpoints(ieee39_model):
    m = ieee39_model
    for blk in (m.machines,):
        vm = np.abs(m.v0[blk.bus_idx])
        np.testing.assert_allclose(vm, blk.v_set, atol=1e-10)


def test_zero_impedance_branch_rejected():
    with pytest.raises(Exception, match="zero series impedance"):
        Network([Bus("A"), Bus("B")], [Branch("L", "A", "B", 0.0, 0.0)])
