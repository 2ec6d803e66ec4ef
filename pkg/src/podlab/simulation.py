"""Fixed-step transient simulation: events, Heun integration, control cadence.

The integrator is the explicit predictor-corrector (modified Euler / Heun)
scheme with one correction: x_p = x + dt f(x); x+ = x + dt/2 (f(x) + f(x_p)),
with the algebraic network re-solved inside every derivative evaluation.
Events are snapped to the integration grid (with a warning when they do not
already lie on it). The controller hook runs every ``control_period`` and its
output is held zero-order between ticks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PowerSystemModel
from .network import branch_stamp, build_admittance, solve_network

DEFAULT_FAULT_Y = -1e5j  # z = j*1e-5: bolted three-phase short


class SimulationDiverged(Exception):
    def __init__(self, step: int, t: float, culprits: list[str]):
        self.step, self.t, self.culprits = step, t, culprits
        super().__init__(f"non-finite state at step {step} (t={t:.4f}s): {culprits}")


@dataclass
class Event:
    """Timed disturbance: bus fault, branch trip, or controller enable/disable."""

    kind: str  # "bus_fault" | "branch_trip" | "set_controller"
    time: float
    bus: str | None = None
    duration: float | None = None
    admittance: complex = DEFAULT_FAULT_Y
    branch: str | None = None
    target: str | None = None  # "PSS:G8", "AVR:G2", "GOV:G3"
    enabled: bool = True

    def validate(self):
        if self.kind == "bus_fault":
            if self.bus is None or self.duration is None:
                raise ValueError("bus_fault event needs 'bus' and 'duration'")
        elif self.kind == "branch_trip":
            if self.branch is None:
                raise ValueError("branch_trip event needs 'branch'")
        elif self.kind == "set_controller":
            if self.target is None:
                raise ValueError("set_controller event needs 'target'")
        else:
            raise ValueError(f"unknown event kind {self.kind!r}")
        return self


@dataclass
class SimResult:
    """Raw integrator-rate series plus the controller's per-tick log."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    u: np.ndarray
    state_labels: list[str]
    bus_ids: list[str]
    tick_log: dict[str, np.ndarray] | None = None
    warnings: list[str] = field(default_factory=list)

    def column(self, label: str) -> np.ndarray:
        return self.x[:, self.state_labels.index(label)]


def step_modified_euler(f, x: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One Heun step of dx/dt = f(t, x)."""
    f1 = f(t, x)
    xp = x + dt * f1
    f2 = f(t + dt, xp)
    return x + 0.5 * dt * (f1 + f2)


class Simulator:
    """Owns the model, event bookkeeping, and the fixed-step run loop.

    One instance runs strictly sequentially; build separate instances (or
    separate processes) for concurrent runs over the same immutable case.
    """

    def __init__(self, model: PowerSystemModel, dt: float = 0.005):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.dt = dt
        self._ycache: dict = {}
        self._topo = (frozenset(), frozenset())  # (tripped ids, fault (bus, y) pairs)
        self._actuator_idx = 0
        self._precompute()

    def _precompute(self) -> None:
        m = self.model
        n = m.net.n_bus
        if len(m.inf_bus_idx):
            fixed = np.asarray(m.inf_bus_idx, dtype=int)
            self._free = np.setdiff1d(np.arange(n), fixed)
            self._ix_ff = np.ix_(self._free, self._free)
            self._ix_fx = np.ix_(self._free, fixed)
            self._vfix = np.asarray(m.inf_bus_v, dtype=complex)
        else:
            self._free = None
        # per-TCSC branch stamp constants: (i, j, r, x, b_half, tap, base stamp)
        self._tcsc_stamps = []
        if m.tcsc is not None:
            for bid in m.tcsc.branch_ids:
                br = m.net.branches[m.net.branch_index(bid)]
                i, j = m.net.bus_index(br.from_bus), m.net.bus_index(br.to_bus)
                self._tcsc_stamps.append(
                    (i, j, br.r, br.x, 0.5j * br.b, br.tap, branch_stamp(br, 1.0)))
        # machine Norton sources
        self._sources = []
        for b in (m.machines, m.classical):
            if b is not None and len(b):
                dup = len(np.unique(b.bus_idx)) != len(b.bus_idx)
                self._sources.append((b, b.bus_idx, b.norton_y(), dup))

    # ------------------------------------------------------------- admittance

    def admittance(self, topo=None) -> np.ndarray:
        """Bus admittance for a topology key, machine shunts and loads folded in."""
        key = topo or self._topo
        if key not in self._ycache:
            tripped, faults = key
            m = self.model
            y = build_admittance(
                m.net, tripped=tripped,
                fault_y={b: fy for b, fy in faults},
                load_y=m.load_y, extra_shunt_y=m.machine_shunt_y,
            )
            self._ycache[key] = y
        return self._ycache[key]

    # ------------------------------------------------------------ derivatives

    def solve_voltages(self, x: np.ndarray, topo=None) -> np.ndarray:
        m = self.model
        y = self.admittance(topo)
        if self._tcsc_stamps:
            y = y.copy()
            xt = m.view(x, m.tcsc)
            xc = np.clip(xt[:, 0], m.tcsc.x_min, m.tcsc.x_max)
            for k, (i, j, r, xx, bsh, tap, y0) in enumerate(self._tcsc_stamps):
                ys = 1.0 / complex(r, xx * (1.0 - xc[k]))
                y[i, i] += (ys + bsh) / tap**2 - y0[0]
                y[i, j] += -ys / tap - y0[1]
                y[j, i] += -ys / tap - y0[2]
                y[j, j] += ys + bsh - y0[3]
        inj = np.zeros(m.net.n_bus, dtype=complex)
        for b, bus_idx, y_n, dup in self._sources:
            emf = b.internal_emf(m.view(x, b)) * y_n
            if dup:
                np.add.at(inj, bus_idx, emf)
            else:
                inj[bus_idx] = emf
        if self._free is None:
            try:
                return np.linalg.solve(y, inj)
            except np.linalg.LinAlgError:
                return solve_network(y, inj, bus_ids=[bb.id for bb in m.net.buses])
        v = np.empty(m.net.n_bus, dtype=complex)
        v[m.inf_bus_idx] = self._vfix
        rhs = inj[self._free] - y[self._ix_fx] @ self._vfix
        try:
            v[self._free] = np.linalg.solve(y[self._ix_ff], rhs)
        except np.linalg.LinAlgError:
            from .network import _lu_solve_checked

            v[self._free] = _lu_solve_checked(
                y[self._ix_ff], rhs, self._free, [bb.id for bb in m.net.buses])
        return v

    def derivatives(self, t: float, x: np.ndarray, u: float = 0.0,
                    topo=None, v: np.ndarray | None = None) -> np.ndarray:
        """Full state derivative; ``u`` is the modulation on the active actuator."""
        m = self.model
        if v is None:
            v = self.solve_voltages(x, topo)
        dx = np.empty_like(x)

        speed = {}
        for b in (m.machines, m.classical):
            if b is not None and len(b):
                speed[id(b)] = m.view(x, b)[:, 1]

        v_pss = None
        if m.pss is not None and len(m.pss):
            xp = m.view(x, m.pss)
            v_pss = m.pss.output(xp, speed[id(m.machines)][m.pss.mach_idx])
            dxv = m.view(dx, m.pss)
            dxv[:] = m.pss.derivatives(xp, speed[id(m.machines)][m.pss.mach_idx])

        if m.machines is not None and len(m.machines):
            xm = m.view(x, m.machines)
            efd = m.machines.efd0.copy()
            pm = m.machines.pm0.copy()
            if m.avr is not None and len(m.avr):
                xa = m.view(x, m.avr)
                efd[m.avr.mach_idx] = m.avr.efd_output(xa)
                vp = np.zeros(len(m.avr))
                if v_pss is not None:
                    # PSS rows map onto the AVR of the same machine
                    avr_of_mach = {mi: k for k, mi in enumerate(m.avr.mach_idx)}
                    for k_pss, mi in enumerate(m.pss.mach_idx):
                        if mi in avr_of_mach:
                            vp[avr_of_mach[mi]] += v_pss[k_pss]
                v_mag = np.abs(v[m.machines.bus_idx[m.avr.mach_idx]])
                m.view(dx, m.avr)[:] = m.avr.derivatives(xa, v_mag, vp)
            if m.gov is not None and len(m.gov):
                xg = m.view(x, m.gov)
                pm[m.gov.mach_idx] = xg[:, 0]
                m.view(dx, m.gov)[:] = m.gov.derivatives(xg, xm[m.gov.mach_idx, 1])
            m.view(dx, m.machines)[:] = m.machines.derivatives(
                xm, v[m.machines.bus_idx], efd, pm)

        if m.classical is not None and len(m.classical):
            xc = m.view(x, m.classical)
            m.view(dx, m.classical)[:] = m.classical.derivatives(
                xc, v[m.classical.bus_idx], m.classical.pm0)

        if m.tcsc is not None and len(m.tcsc):
            xt = m.view(x, m.tcsc)
            u_vec = np.zeros(len(m.tcsc))
            if len(m.tcsc) and u != 0.0:
                u_vec[self._actuator_idx] = u
            m.view(dx, m.tcsc)[:] = m.tcsc.derivatives(xt, u_vec)

        return dx

    # ------------------------------------------------------------------- run

    def equilibrium_norm(self, x: np.ndarray | None = None) -> float:
        x = self.model.x0 if x is None else x
        return float(np.max(np.abs(self.derivatives(0.0, x, 0.0))))

    def _clamp(self, x: np.ndarray) -> None:
        m = self.model
        if m.avr is not None and len(m.avr):
            m.avr.clamp(m.view(x, m.avr))
        if m.tcsc is not None and len(m.tcsc):
            m.tcsc.clamp(m.view(x, m.tcsc))

    def _set_controller(self, target: str, enabled: bool):
        kind, _, mid = target.partition(":")
        block = {"PSS": self.model.pss, "AVR": self.model.avr, "GOV": self.model.gov}.get(kind)
        if block is None or mid not in block.ids:
            raise ValueError(f"unknown controller target {target!r}")
        block.enabled[block.ids.index(mid)] = enabled

    def run(
        self,
        t_end: float,
        events: list[Event] = (),
        controller=None,
        measurement: str | None = None,
        actuator: str | None = None,
        control_period: float = 0.02,
        measurement_scale: float = 1.0,
        x0: np.ndarray | None = None,
    ) -> SimResult:
        """Integrate from the model's operating point (or ``x0``) to ``t_end``."""
        m, dt = self.model, self.dt
        n_steps = int(round(t_end / dt))
        warnings: list[str] = []

        # actuator: which TCSC the modulation input drives
        self._actuator_idx = 0
        if actuator is not None:
            if m.tcsc is None or actuator not in m.tcsc.ids:
                raise ValueError(f"unknown actuator {actuator!r}")
            self._actuator_idx = m.tcsc.ids.index(actuator)

        measure = m.measurement_fn(measurement) if measurement else None
        if controller is not None and measure is None:
            raise ValueError("a controller requires a measurement channel")
        n_ctrl = max(1, int(round(control_period / dt)))
        if abs(n_ctrl * dt - control_period) > 1e-9:
            warnings.append(
                f"control period {control_period} snapped to {n_ctrl * dt}")

        # schedule: step index -> list of (kind, payload)
        schedule: dict[int, list] = {}

        def snap(ts, what):
            k = int(round(ts / dt))
            if abs(k * dt - ts) > 1e-9:
                warnings.append(f"{what} at t={ts} snapped to grid t={k * dt}")
            return k

        for ev in events:
            ev.validate()
            k = snap(ev.time, f"event {ev.kind}")
            schedule.setdefault(k, []).append(("apply", ev))
            if ev.kind == "bus_fault":
                kc = snap(ev.time + ev.duration, "fault clearing")
                schedule.setdefault(kc, []).append(("clear", ev))

        x = (m.x0 if x0 is None else x0).astype(float).copy()
        nx, nb = x.size, m.net.n_bus
        out_x = np.empty((n_steps + 1, nx))
        out_v = np.empty((n_steps + 1, nb), dtype=complex)
        out_y = np.zeros(n_steps + 1)
        out_u = np.zeros(n_steps + 1)

        tripped: set[str] = set()
        faults: set = set()
        u_applied = 0.0

        for k in range(n_steps + 1):
            t = k * dt
            for action, ev in schedule.get(k, ()):
                if ev.kind == "branch_trip":
                    tripped.add(ev.branch)
                elif ev.kind == "bus_fault":
                    pair = (ev.bus, complex(ev.admittance))
                    faults.discard(pair) if action == "clear" else faults.add(pair)
                elif ev.kind == "set_controller":
                    self._set_controller(ev.target, ev.enabled)
            self._topo = (frozenset(tripped), frozenset(faults))

            v = self.solve_voltages(x)
            y = measurement_scale * measure(t, x, v) if measure else 0.0
            if controller is not None and k % n_ctrl == 0 and k < n_steps:
                u_applied = float(controller(t, y))

            out_x[k], out_v[k], out_y[k], out_u[k] = x, v, y, u_applied
            if k == n_steps:
                break

            f1 = self.derivatives(t, x, u_applied, v=v)
            xp = x + dt * f1
            f2 = self.derivatives(t + dt, xp, u_applied)
            x = x + 0.5 * dt * (f1 + f2)
            self._clamp(x)
            if not np.all(np.isfinite(x)):
                labels = m.state_labels()
                bad = [labels[i] for i in np.flatnonzero(~np.isfinite(x))]
                raise SimulationDiverged(k + 1, t + dt, bad)

        tick_log = getattr(controller, "log_arrays", None)
        return SimResult(
            t=np.arange(n_steps + 1) * dt,
            x=out_x, v=out_v, y=out_y, u=out_u,
            state_labels=m.state_labels(),
            bus_ids=[b.id for b in m.net.buses],
            tick_log=tick_log() if callable(tick_log) else None,
            warnings=warnings,
        )
