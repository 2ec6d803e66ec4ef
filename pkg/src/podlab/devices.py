"""Dynamic device blocks: synchronous machines, exciters, governors, PSS, TCSC.

Each block holds the parameters of *all* devices of its kind as arrays and
evaluates its state derivatives vectorized. State layout inside a block is one
contiguous slice per device; the model layer concatenates the blocks into the
flat simulation state vector.

Machine dq convention: a rotor-frame quantity F_dq = F_d + jF_q maps to the
network frame as (F_q - jF_d) * exp(j*delta). Equal d/q subtransient
reactances make every machine an exact Norton source E'' / (jX'') behind the
shunt 1/(jX'') that is folded into the admittance matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _arr(values, dtype=float):
    return np.asarray(values, dtype=dtype)


@dataclass
class MachineBlock:
    """6th-order synchronous machines: states (delta, d_omega, eq_t, ed_t, eq_st, ed_st).

    delta in rad, speed deviation in p.u.; EMFs and reactances in p.u. on the
    system base (convert from the machine base before constructing the block).
    """

    ids: list[str]
    bus_idx: np.ndarray
    h: np.ndarray
    d: np.ndarray
    xd: np.ndarray
    xq: np.ndarray
    xd_t: np.ndarray
    xq_t: np.ndarray
    x_st: np.ndarray
    td0_t: np.ndarray
    tq0_t: np.ndarray
    td0_st: np.ndarray
    tq0_st: np.ndarray
    omega_base: float
    # filled by initialize(); machines without AVR/governor keep the constants
    efd0: np.ndarray = field(default=None, repr=False)
    pm0: np.ndarray = field(default=None, repr=False)

    STATES = ("delta", "speed_dev", "eq_t", "ed_t", "eq_st", "ed_st")
    n_per_device = 6

    def __len__(self):
        return len(self.ids)

    def labels(self):
        return [f"{m}.{s}" for m in self.ids for s in self.STATES]

    def norton_y(self) -> np.ndarray:
        return 1.0 / (1j * self.x_st)

    def initialize(self, v_term: np.ndarray, s_inj: np.ndarray) -> np.ndarray:
        """Steady-state init from the load-flow terminal voltage and injection.

        Returns the (n, 6) initial state block and stores efd0/pm0.
        """
        i_term = np.conj(s_inj / v_term)
        e_q_axis = v_term + 1j * self.xq * i_term
        delta = np.angle(e_q_axis)
        rot = np.exp(-1j * delta)
        iq = (i_term * rot).real
        i_d = -(i_term * rot).imag
        vq = (v_term * rot).real
        vd = -(v_term * rot).imag
        efd = np.abs(e_q_axis) + (self.xd - self.xq) * i_d
        eq_t = efd - (self.xd - self.xd_t) * i_d
        ed_t = (self.xq - self.xq_t) * iq
        eq_st = eq_t - (self.xd_t - self.x_st) * i_d
        ed_st = ed_t + (self.xq_t - self.x_st) * iq
        self.efd0 = efd
        self.pm0 = ed_st * i_d + eq_st * iq
        x = np.column_stack([delta, np.zeros(len(self)), eq_t, ed_t, eq_st, ed_st])
        return x

    def internal_emf(self, xm: np.ndarray) -> np.ndarray:
        """Subtransient EMF phasors in the network frame."""
        delta, eq_st, ed_st = xm[:, 0], xm[:, 4], xm[:, 5]
        return (eq_st - 1j * ed_st) * np.exp(1j * delta)

    def dq_currents(self, xm: np.ndarray, v_term: np.ndarray):
        delta, eq_st, ed_st = xm[:, 0], xm[:, 4], xm[:, 5]
        rot = np.exp(-1j * delta)
        vq = (v_term * rot).real
        vd = -(v_term * rot).imag
        i_d = (eq_st - vq) / self.x_st
        iq = (vd - ed_st) / self.x_st
        return i_d, iq

    def electrical_torque(self, xm: np.ndarray, v_term: np.ndarray) -> np.ndarray:
        i_d, iq = self.dq_currents(xm, v_term)
        return xm[:, 5] * i_d + xm[:, 4] * iq

    def derivatives(self, xm, v_term, efd, pm) -> np.ndarray:
        delta, dw, eq_t, ed_t, eq_st, ed_st = xm.T
        i_d, iq = self.dq_currents(xm, v_term)
        te = ed_st * i_d + eq_st * iq
        dx = np.empty_like(xm)
        dx[:, 0] = self.omega_base * dw
        dx[:, 1] = (pm - te - self.d * dw) / (2.0 * self.h)
        dx[:, 2] = (efd - eq_t - (self.xd - self.xd_t) * i_d) / self.td0_t
        dx[:, 3] = (-ed_t + (self.xq - self.xq_t) * iq) / self.tq0_t
        dx[:, 4] = (eq_t - eq_st - (self.xd_t - self.x_st) * i_d) / self.td0_st
        dx[:, 5] = (ed_t - ed_st + (self.xq_t - self.x_st) * iq) / self.tq0_st
        return dx


@dataclass
class ClassicalMachineBlock:
    """Constant-EMF classical machines: states (delta, speed_dev)."""

    ids: list[str]
    bus_idx: np.ndarray
    h: np.ndarray
    d: np.ndarray
    x_source: np.ndarray
    omega_base: float
    e_mag: np.ndarray = field(default=None, repr=False)
    pm0: np.ndarray = field(default=None, repr=False)

    STATES = ("delta", "speed_dev")
    n_per_device = 2

    def __len__(self):
        return len(self.ids)

    def labels(self):
        return [f"{m}.{s}" for m in self.ids for s in self.STATES]

    def norton_y(self) -> np.ndarray:
        return 1.0 / (1j * self.x_source)

    def initialize(self, v_term, s_inj) -> np.ndarray:
        i_term = np.conj(s_inj / v_term)
        e = v_term + 1j * self.x_source * i_term
        self.e_mag = np.abs(e)
        self.pm0 = s_inj.real
        return np.column_stack([np.angle(e), np.zeros(len(self))])

    def internal_emf(self, xm) -> np.ndarray:
        return self.e_mag * np.exp(1j * xm[:, 0])

    def electrical_torque(self, xm, v_term) -> np.ndarray:
        e_net = self.internal_emf(xm)
        i_net = (e_net - v_term) / (1j * self.x_source)
        return (e_net * np.conj(i_net)).real

    def derivatives(self, xm, v_term, pm) -> np.ndarray:
        dx = np.empty_like(xm)
        dx[:, 0] = self.omega_base * xm[:, 1]
        dx[:, 1] = (pm - self.electrical_torque(xm, v_term) - self.d * xm[:, 1]) / (2.0 * self.h)
        return dx


@dataclass
class SexsBlock:
    """SEXS excitation systems: lead-lag plus first-order exciter with limits.

    States per device: (x_ll, efd). Input is v_ref - |V_term| + v_pss.
    """

    ids: list[str]
    mach_idx: np.ndarray
    k: np.ndarray
    ta: np.ndarray
    tb: np.ndarray
    te: np.ndarray
    e_min: np.ndarray
    e_max: np.ndarray
    v_ref: np.ndarray = field(default=None, repr=False)
    enabled: np.ndarray = field(default=None, repr=False)

    STATES = ("x_ll", "efd")
    n_per_device = 2

    def __post_init__(self):
        if self.enabled is None:
            self.enabled = np.ones(len(self.ids), dtype=bool)

    def __len__(self):
        return len(self.ids)

    def labels(self):
        return [f"AVR:{m}.{s}" for m in self.ids for s in self.STATES]

    def initialize(self, v_mag0, efd0) -> np.ndarray:
        self.v_ref = v_mag0 + efd0 / self.k
        return np.column_stack([efd0 / self.k, efd0])

    def efd_output(self, xa) -> np.ndarray:
        return np.clip(xa[:, 1], self.e_min, self.e_max)

    def derivatives(self, xa, v_mag, v_pss) -> np.ndarray:
        x_ll, efd = xa[:, 0], xa[:, 1]
        v_in = np.where(self.enabled, self.v_ref - v_mag + v_pss, x_ll)
        dx_ll = (v_in - x_ll) / self.tb
        y_ll = x_ll + self.ta * dx_ll
        defd = (self.k * y_ll - efd) / self.te
        # non-windup: block derivatives that push past the ceiling/floor
        defd = np.where((efd >= self.e_max) & (defd > 0), 0.0, defd)
        defd = np.where((efd <= self.e_min) & (defd < 0), 0.0, defd)
        return np.column_stack([dx_ll, defd])

    def clamp(self, xa) -> None:
        np.clip(xa[:, 1], self.e_min, self.e_max, out=xa[:, 1])


@dataclass
class GovernorBlock:
    """First-order droop governors: state (pm)."""

    ids: list[str]
    mach_idx: np.ndarray
    r: np.ndarray
    t_g: np.ndarray
    p_ref: np.ndarray = field(default=None, repr=False)
    enabled: np.ndarray = field(default=None, repr=False)

    STATES = ("pm",)
    n_per_device = 1

    def __post_init__(self):
        if self.enabled is None:
            self.enabled = np.ones(len(self.ids), dtype=bool)

    def __len__(self):
        return len(self.ids)

    def labels(self):
        return [f"GOV:{m}.pm" for m in self.ids]

    def initialize(self, pm0) -> np.ndarray:
        self.p_ref = pm0.copy()
        return pm0.reshape(-1, 1).copy()

    def derivatives(self, xg, speed_dev) -> np.ndarray:
        target = np.where(self.enabled, self.p_ref - speed_dev / self.r, xg[:, 0])
        return ((target - xg[:, 0]) / self.t_g).reshape(-1, 1)


@dataclass
class PssBlock:
    """Speed-input stabilizers: gain -> washout -> lead-lag, clipped output.

    States per device: (x_w, x_ll). Output feeds the AVR summing junction.
    """

    ids: list[str]
    mach_idx: np.ndarray
    k: np.ndarray
    tw: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    v_lim: np.ndarray
    enabled: np.ndarray = field(default=None, repr=False)

    STATES = ("x_w", "x_ll")
    n_per_device = 2

    def __post_init__(self):
        if self.enabled is None:
            self.enabled = np.ones(len(self.ids), dtype=bool)

    def __len__(self):
        return len(self.ids)

    def labels(self):
        return [f"PSS:{m}.{s}" for m in self.ids for s in self.STATES]

    def initialize(self) -> np.ndarray:
        return np.zeros((len(self), 2))

    def output(self, xp, speed_dev) -> np.ndarray:
        y_w = self.k * speed_dev - xp[:, 0]
        y = (self.t1 / self.t2) * y_w + (1.0 - self.t1 / self.t2) * xp[:, 1]
        return np.where(self.enabled, np.clip(y, -self.v_lim, self.v_lim), 0.0)

    def derivatives(self, xp, speed_dev) -> np.ndarray:
        y_w = self.k * speed_dev - xp[:, 0]
        dx_w = y_w / self.tw
        dx_ll = (y_w - xp[:, 1]) / self.t2
        return np.column_stack([dx_w, dx_ll])


@dataclass
class TcscBlock:
    """TCSC compensation dynamics: state (x_comp), first-order setpoint tracking.

    x_comp is the compensated fraction of the host branch's reactance; the
    effective series reactance is X * (1 - x_comp). The modulation input u
    shifts the reference and is held constant between controller ticks.
    """

    ids: list[str]
    branch_ids: list[str]
    x_ref: np.ndarray
    t_c: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray

    STATES = ("x_comp",)
    n_per_device = 1

    def __len__(self):
        return len(self.ids)

    def labels(self):
        return [f"TCSC:{t}.x_comp" for t in self.ids]

    def initialize(self) -> np.ndarray:
        return self.x_ref.reshape(-1, 1).copy()

    def derivatives(self, xt, u) -> np.ndarray:
        xc = xt[:, 0]
        dxc = (self.x_ref + u - xc) / self.t_c
        dxc = np.where((xc >= self.x_max) & (dxc > 0), 0.0, dxc)
        dxc = np.where((xc <= self.x_min) & (dxc < 0), 0.0, dxc)
        return dxc.reshape(-1, 1)

    def clamp(self, xt) -> None:
        np.clip(xt[:, 0], self.x_min, self.x_max, out=xt[:, 0])

    def x_factors(self, xt) -> dict[str, float]:
        xc = np.clip(xt[:, 0], self.x_min, self.x_max)
        return {bid: 1.0 - c for bid, c in zip(self.branch_ids, xc)}
