"""Phasor-domain network model: admittance assembly, algebraic solve, load flow.

All quantities are per-unit on the system base. Branches follow the standard
pi-model with an off-nominal tap on the *from* side. Loads are converted to
constant shunt admittances by the model layer and enter the admittance matrix
directly, which keeps the network purely linear in the bus voltages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class NetworkError(Exception):
    """Base class for network assembly/solution failures."""


class IslandingError(NetworkError):
    """The in-service branch set no longer connects all buses."""


class SingularNetworkError(NetworkError):
    """The augmented admittance matrix has a (near-)zero pivot."""


@dataclass
class Bus:
    id: str
    kv: float = 1.0


@dataclass
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    in_service: bool = True


@dataclass
class Load:
    bus: str
    p: float
    q: float


@dataclass
class Shunt:
    bus: str
    g: float
    b: float


@dataclass
class Network:
    buses: list[Bus]
    branches: list[Branch]
    loads: list[Load] = field(default_factory=list)
    shunts: list[Shunt] = field(default_factory=list)

    def __post_init__(self):
        self._bus_idx = {b.id: i for i, b in enumerate(self.buses)}
        if len(self._bus_idx) != len(self.buses):
            raise NetworkError("duplicate bus ids")
        self._branch_idx = {br.id: i for i, br in enumerate(self.branches)}
        if len(self._branch_idx) != len(self.branches):
            raise NetworkError("duplicate branch ids")
        for br in self.branches:
            if br.from_bus not in self._bus_idx or br.to_bus not in self._bus_idx:
                raise NetworkError(f"branch {br.id} references unknown bus")
            if br.r == 0.0 and br.x == 0.0:
                raise NetworkError(f"branch {br.id} has zero series impedance")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: str) -> int:
        try:
            return self._bus_idx[bus_id]
        except KeyError:
            raise NetworkError(f"unknown bus {bus_id!r}") from None

    def branch_index(self, branch_id: str) -> int:
        try:
            return self._branch_idx[branch_id]
        except KeyError:
            raise NetworkError(f"unknown branch {branch_id!r}") from None


def branch_stamp(br: Branch, x_factor: float = 1.0):
    """Return (y_ff, y_ft, y_tf, y_tt) for one pi-model branch.

    ``x_factor`` scales the series reactance (TCSC compensation uses
    ``1 - x_comp``).
    """
    y = 1.0 / complex(br.r, br.x * x_factor)
    ysh = 0.5j * br.b
    t = br.tap
    return (y + ysh) / t**2, -y / t, -y / t, y + ysh


def check_connected(net: Network, tripped: frozenset[str] = frozenset()) -> None:
    """Raise IslandingError if the in-service branches leave any bus isolated."""
    n = net.n_bus
    rows, cols = [], []
    for br in net.branches:
        if not br.in_service or br.id in tripped:
            continue
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        rows += [i, j]
        cols += [j, i]
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        groups = [[net.buses[i].id for i in np.flatnonzero(labels == c)] for c in range(n_comp)]
        smallest = min(groups, key=len)
        raise IslandingError(
            f"network splits into {n_comp} islands; smallest island: {smallest}"
        )


def build_admittance(
    net: Network,
    *,
    tripped: frozenset[str] = frozenset(),
    fault_y: dict[str, complex] | None = None,
    x_factor: dict[str, float] | None = None,
    load_y: np.ndarray | None = None,
    extra_shunt_y: np.ndarray | None = None,
) -> np.ndarray:
    """Assemble the dense bus admittance matrix.

    Includes branch pi-models (minus tripped ones), fixed bus shunts,
    constant-impedance load admittances (``load_y``, per-bus complex), any
    extra per-bus shunts (machine Norton admittances), active fault
    admittances by bus id, and per-branch reactance scale factors.
    """
    check_connected(net, tripped)
    n = net.n_bus
    ybus = np.zeros((n, n), dtype=complex)
    x_factor = x_factor or {}
    for br in net.branches:
        if not br.in_service or br.id in tripped:
            continue
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        yff, yft, ytf, ytt = branch_stamp(br, x_factor.get(br.id, 1.0))
        ybus[i, i] += yff
        ybus[i, j] += yft
        ybus[j, i] += ytf
        ybus[j, j] += ytt
    for sh in net.shunts:
        ybus[net.bus_index(sh.bus), net.bus_index(sh.bus)] += complex(sh.g, sh.b)
    if load_y is not None:
        ybus[np.diag_indices(n)] += load_y
    if extra_shunt_y is not None:
        ybus[np.diag_indices(n)] += extra_shunt_y
    if fault_y:
        for bus, y in fault_y.items():
            ybus[net.bus_index(bus), net.bus_index(bus)] += y
    return ybus


def solve_network(
    ybus: np.ndarray,
    injections: np.ndarray,
    *,
    fixed_idx: np.ndarray | None = None,
    fixed_v: np.ndarray | None = None,
    bus_ids: list[str] | None = None,
) -> np.ndarray:
    """Solve I = Y V for the bus voltages.

    Buses listed in ``fixed_idx`` are held at ``fixed_v`` (infinite buses) and
    eliminated from the linear system. Raises SingularNetworkError naming the
    zero-pivot bus if the reduced matrix is singular.
    """
    n = ybus.shape[0]
    v = np.empty(n, dtype=complex)
    if fixed_idx is not None and len(fixed_idx):
        free = np.setdiff1d(np.arange(n), fixed_idx)
        v[fixed_idx] = fixed_v
        rhs = injections[free] - ybus[np.ix_(free, fixed_idx)] @ np.asarray(fixed_v)
        v[free] = _lu_solve_checked(ybus[np.ix_(free, free)], rhs, free, bus_ids)
    else:
        v = _lu_solve_checked(ybus, injections, np.arange(n), bus_ids)
    return v


def _lu_solve_checked(a, b, orig_idx, bus_ids):
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    diag = np.abs(np.diag(lu))
    bad = diag < 1e-12 * max(diag.max(), 1.0)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        # column k of U corresponds to the k-th free bus
        bus = bus_ids[orig_idx[k]] if bus_ids else f"#{orig_idx[k]}"
        raise SingularNetworkError(f"zero pivot at bus {bus}")
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def newton_load_flow(
    net: Network,
    ybus: np.ndarray,
    slack_idx: int,
    slack_v: complex,
    pv_idx: np.ndarray,
    pv_p: np.ndarray,
    pv_vm: np.ndarray,
    s_pq: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    """Polar Newton-Raphson load flow.

    ``ybus`` must contain branches and fixed shunts but *not* load
    admittances: loads enter through ``s_pq`` (complex injections per bus,
    negative for consumption). ``pv_p`` are active-power injections at the PV
    buses. Returns the complex bus-voltage vector.
    """
    n = net.n_bus
    pq_idx = np.setdiff1d(np.arange(n), np.concatenate(([slack_idx], pv_idx)))
    va = np.full(n, float(np.angle(slack_v)))
    vm = np.ones(n)
    vm[slack_idx] = abs(slack_v)
    vm[pv_idx] = pv_vm
    s_spec = s_pq.astype(complex).copy()
    s_spec[pv_idx] += pv_p

    pvpq = np.concatenate((pv_idx, pq_idx)).astype(int)
    for _ in range(max_iter):
        v = vm * np.exp(1j * va)
        i_bus = ybus @ v
        mis = v * np.conj(i_bus) - s_spec
        f = np.concatenate((mis[pvpq].real, mis[pq_idx].imag))
        if np.max(np.abs(f), initial=0.0) < tol:
            return v
        # MATPOWER-style complex power-flow Jacobian blocks
        dv = np.diag(v)
        di = np.diag(i_bus)
        dvn = np.diag(v / vm)
        ds_dva = 1j * dv @ np.conj(di - ybus @ dv)
        ds_dvm = dvn @ np.conj(di) + dv @ np.conj(ybus @ dvn)
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq_idx)].real
        j21 = ds_dva[np.ix_(pq_idx, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq_idx, pq_idx)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        dx = np.linalg.solve(jac, f)
        va[pvpq] -= dx[: len(pvpq)]
        vm[pq_idx] -= dx[len(pvpq):]
    raise NetworkError(f"load flow did not converge (mismatch {np.max(np.abs(f)):.3e})")
