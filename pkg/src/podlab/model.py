"""Power-system model assembly: case schema, load-flow initialization, channels.

Case files are JSON (see ``podlab/cases/smib.json`` for the schema by
example). All electrical quantities are per-unit on the system base
``base_mva``; machine parameters are given on the machine base ``s_n`` and
converted here. Load-flow targets are the machine entries' ``p`` (p.u.
injection) and ``v`` (magnitude setpoint); the slack is either the infinite
bus or a machine named by ``"slack"``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import network as net_mod
from .devices import (
    ClassicalMachineBlock,
    GovernorBlock,
    MachineBlock,
    PssBlock,
    SexsBlock,
    TcscBlock,
)
from .network import Branch, Bus, Load, Network, Shunt, build_admittance, newton_load_flow


class CaseError(Exception):
    """Malformed or inconsistent case description."""


@dataclass
class PowerSystemModel:
    name: str
    f_hz: float
    base_mva: float
    net: Network
    machines: MachineBlock | None
    classical: ClassicalMachineBlock | None
    avr: SexsBlock | None
    gov: GovernorBlock | None
    pss: PssBlock | None
    tcsc: TcscBlock | None
    inf_bus_idx: np.ndarray
    inf_bus_v: np.ndarray
    # filled by initialize()
    v0: np.ndarray = field(default=None, repr=False)
    load_y: np.ndarray = field(default=None, repr=False)
    machine_shunt_y: np.ndarray = field(default=None, repr=False)
    x0: np.ndarray = field(default=None, repr=False)
    slack_machine: str | None = None

    # ------------------------------------------------------------------ layout

    def blocks(self):
        out = []
        for b in (self.machines, self.classical, self.avr, self.gov, self.pss, self.tcsc):
            if b is not None and len(b):
                out.append(b)
        return out

    @property
    def n_states(self) -> int:
        return sum(len(b) * b.n_per_device for b in self.blocks())

    def state_labels(self) -> list[str]:
        labels = []
        for b in self.blocks():
            labels.extend(b.labels())
        return labels

    def block_slices(self):
        """Mapping block -> slice into the flat state vector."""
        out = {}
        off = 0
        for b in self.blocks():
            size = len(b) * b.n_per_device
            out[id(b)] = slice(off, off + size)
            off += size
        return out

    def view(self, x: np.ndarray, block) -> np.ndarray:
        """(n_devices, n_per_device) view of one block's states."""
        sl = self._slices[id(block)]
        return x[sl].reshape(len(block), block.n_per_device)

    def machine_speed_indices(self) -> np.ndarray:
        """Flat-state indices of every machine speed-deviation state."""
        idx = []
        off = 0
        for b in self.blocks():
            if b is self.machines or b is self.classical:
                idx.extend(off + i * b.n_per_device + 1 for i in range(len(b)))
            off += len(b) * b.n_per_device
        return np.asarray(idx, dtype=int)

    # -------------------------------------------------------------- initialize

    def initialize(self) -> None:
        """Newton load flow, then exact steady-state device initialization."""
        n = self.net.n_bus
        ybase = build_admittance(self.net)
        s_pq = np.zeros(n, dtype=complex)
        for ld in self.net.loads:
            s_pq[self.net.bus_index(ld.bus)] -= complex(ld.p, ld.q)

        # apply steady-state TCSC compensation to the load-flow matrix too
        if self.tcsc is not None and len(self.tcsc):
            xf = {b: 1.0 - r for b, r in zip(self.tcsc.branch_ids, self.tcsc.x_ref)}
            ybase = build_admittance(self.net, x_factor=xf)

        mach_blocks = [b for b in (self.machines, self.classical) if b is not None and len(b)]
        mach_bus = np.concatenate([b.bus_idx for b in mach_blocks]) if mach_blocks else np.array([], int)
        mach_ids = [m for b in mach_blocks for m in b.ids]
        p_set = np.concatenate([b.p_set for b in mach_blocks]) if mach_blocks else np.array([])
        v_set = np.concatenate([b.v_set for b in mach_blocks]) if mach_blocks else np.array([])

        if len(self.inf_bus_idx):
            slack_idx = int(self.inf_bus_idx[0])
            slack_v = complex(self.inf_bus_v[0])
            pv_mask = np.ones(len(mach_bus), dtype=bool)
        else:
            if self.slack_machine is None:
                raise CaseError("case needs an infinite bus or a slack machine")
            k = mach_ids.index(self.slack_machine)
            slack_idx = int(mach_bus[k])
            slack_v = v_set[k] * np.exp(0j)
            pv_mask = np.arange(len(mach_bus)) != k

        v = newton_load_flow(
            self.net, ybase, slack_idx, slack_v,
            pv_idx=mach_bus[pv_mask], pv_p=p_set[pv_mask], pv_vm=v_set[pv_mask],
            s_pq=s_pq,
        )
        self.v0 = v

        # constant-impedance loads, frozen at the solved voltages
        self.load_y = np.zeros(n, dtype=complex)
        for ld in self.net.loads:
            i = self.net.bus_index(ld.bus)
            self.load_y[i] += complex(ld.p, -ld.q) / abs(v[i]) ** 2

        self.machine_shunt_y = np.zeros(n, dtype=complex)
        for b in mach_blocks:
            np.add.at(self.machine_shunt_y, b.bus_idx, b.norton_y())

        # machine injections: slack takes the solved power, PV buses their setpoints
        i_inj = ybase @ v
        s_bus = v * np.conj(i_inj)
        parts = []
        for b in mach_blocks:
            s_mach = s_bus[b.bus_idx] - s_pq[b.bus_idx]
            parts.append(b.initialize(v[b.bus_idx], s_mach))
        x_parts = {id(b): xb for b, xb in zip(mach_blocks, parts)}

        if self.avr is not None and len(self.avr):
            v_mag0 = np.abs(v[self.machines.bus_idx[self.avr.mach_idx]])
            x_parts[id(self.avr)] = self.avr.initialize(v_mag0, self.machines.efd0[self.avr.mach_idx])
        if self.gov is not None and len(self.gov):
            x_parts[id(self.gov)] = self.gov.initialize(self.machines.pm0[self.gov.mach_idx])
        if self.pss is not None and len(self.pss):
            x_parts[id(self.pss)] = self.pss.initialize()
        if self.tcsc is not None and len(self.tcsc):
            x_parts[id(self.tcsc)] = self.tcsc.initialize()

        self.x0 = np.concatenate([x_parts[id(b)].ravel() for b in self.blocks()]) \
            if self.blocks() else np.zeros(0)
        self._slices = self.block_slices()

    # ------------------------------------------------------------ measurements

    def measurement_fn(self, channel: str):
        """Build a measurement callable (t, x, v) -> float from a channel name.

        Channels: ``speed:<machine>`` (p.u.), ``angle:<machine>`` (rad),
        ``v_mag:<bus>``, ``line_p:<branch>[:to]`` (p.u. active power at the
        from/to end), ``tcsc_x:<tcsc>``.
        """
        kind, _, rest = channel.partition(":")
        if kind == "speed" or kind == "angle":
            col = 0 if kind == "angle" else 1
            for b in (self.machines, self.classical):
                if b is not None and rest in b.ids:
                    i = b.ids.index(rest)
                    sl = self._slices[id(b)]

                    def f(t, x, v, sl=sl, i=i, b=b, col=col):
                        return x[sl][i * b.n_per_device + col]

                    return f
            raise CaseError(f"unknown machine {rest!r} in channel {channel!r}")
        if kind == "v_mag":
            i = self.net.bus_index(rest)
            return lambda t, x, v: abs(v[i])
        if kind == "tcsc_x":
            if self.tcsc is None or rest not in self.tcsc.ids:
                raise CaseError(f"unknown TCSC {rest!r} in channel {channel!r}")
            i = self.tcsc.ids.index(rest)
            sl = self._slices[id(self.tcsc)]
            return lambda t, x, v: x[sl][i]
        if kind == "line_p":
            branch_id, _, end = rest.partition(":")
            br = self.net.branches[self.net.branch_index(branch_id)]
            at_to = end == "to"
            i, j = self.net.bus_index(br.from_bus), self.net.bus_index(br.to_bus)
            tcsc_state_idx = lo = hi = None
            if self.tcsc is not None and branch_id in self.tcsc.branch_ids:
                k = self.tcsc.branch_ids.index(branch_id)
                tcsc_state_idx = self._slices[id(self.tcsc)].start + k
                lo, hi = self.tcsc.x_min[k], self.tcsc.x_max[k]

            def f(t, x, v, br=br, i=i, j=j, at_to=at_to, k=tcsc_state_idx, lo=lo, hi=hi):
                xf = 1.0
                if k is not None:
                    xf = 1.0 - float(np.clip(x[k], lo, hi))
                yff, yft, ytf, ytt = net_mod.branch_stamp(br, xf)
                if at_to:
                    s = v[j] * np.conj(ytf * v[i] + ytt * v[j])
                else:
                    s = v[i] * np.conj(yff * v[i] + yft * v[j])
                return s.real

            return f
        raise CaseError(f"unknown measurement channel {channel!r}")


# ------------------------------------------------------------------- case I/O

def _req(entry: dict, key: str, where: str):
    if key not in entry:
        raise CaseError(f"{where}: missing field {key!r}")
    return entry[key]


def model_from_case(case: dict) -> PowerSystemModel:
    """Build and initialize a PowerSystemModel from a case dictionary."""
    case = copy.deepcopy(case)
    f_hz = float(case.get("f_hz", 50.0))
    base_mva = float(_req(case, "base_mva", "case"))
    omega_base = 2.0 * np.pi * f_hz

    buses = [Bus(str(b[0]), float(b[1])) for b in _req(case, "buses", "case")]
    branches = [
        Branch(str(e[0]), str(e[1]), str(e[2]), float(e[3]), float(e[4]),
               float(e[5]) if len(e) > 5 else 0.0,
               float(e[6]) if len(e) > 6 else 1.0,
               bool(e[7]) if len(e) > 7 else True)
        for e in _req(case, "branches", "case")
    ]
    loads = [Load(str(l[0]), float(l[1]), float(l[2])) for l in case.get("loads", [])]
    shunts = [Shunt(str(s[0]), float(s[1]), float(s[2])) for s in case.get("shunts", [])]
    net = Network(buses, branches, loads, shunts)

    sixth, classical = [], []
    for m in case.get("machines", []):
        (classical if m.get("model") == "classical" else sixth).append(m)

    def base_ratio(m):
        return base_mva / float(m.get("s_n", base_mva))

    machines = None
    if sixth:
        z = np.array([base_ratio(m) for m in sixth])
        machines = MachineBlock(
            ids=[str(_req(m, "id", "machine")) for m in sixth],
            bus_idx=np.array([net.bus_index(_req(m, "bus", "machine")) for m in sixth]),
            h=np.array([float(_req(m, "h", "machine")) for m in sixth]) / z,
            d=np.array([float(m.get("d", 0.0)) for m in sixth]) / z,
            xd=np.array([float(_req(m, "xd", "machine")) for m in sixth]) * z,
            xq=np.array([float(_req(m, "xq", "machine")) for m in sixth]) * z,
            xd_t=np.array([float(_req(m, "xd_t", "machine")) for m in sixth]) * z,
            xq_t=np.array([float(_req(m, "xq_t", "machine")) for m in sixth]) * z,
            x_st=np.array([float(_req(m, "x_st", "machine")) for m in sixth]) * z,
            td0_t=np.array([float(_req(m, "td0_t", "machine")) for m in sixth]),
            tq0_t=np.array([float(_req(m, "tq0_t", "machine")) for m in sixth]),
            td0_st=np.array([float(_req(m, "td0_st", "machine")) for m in sixth]),
            tq0_st=np.array([float(_req(m, "tq0_st", "machine")) for m in sixth]),
            omega_base=omega_base,
        )
        machines.p_set = np.array([float(m.get("p", 0.0)) for m in sixth])
        machines.v_set = np.array([float(m.get("v", 1.0)) for m in sixth])

    classical_blk = None
    if classical:
        z = np.array([base_ratio(m) for m in classical])
        classical_blk = ClassicalMachineBlock(
            ids=[str(_req(m, "id", "machine")) for m in classical],
            bus_idx=np.array([net.bus_index(_req(m, "bus", "machine")) for m in classical]),
            h=np.array([float(_req(m, "h", "machine")) for m in classical]) / z,
            d=np.array([float(m.get("d", 0.0)) for m in classical]) / z,
            x_source=np.array([float(_req(m, "xd_t", "machine")) for m in classical]) * z,
            omega_base=omega_base,
        )
        classical_blk.p_set = np.array([float(m.get("p", 0.0)) for m in classical])
        classical_blk.v_set = np.array([float(m.get("v", 1.0)) for m in classical])

    def mach_index(mid, where):
        if machines is None or mid not in machines.ids:
            raise CaseError(f"{where}: unknown 6th-order machine {mid!r}")
        return machines.ids.index(mid)

    avr = None
    if case.get("avr"):
        rows = case["avr"]
        avr = SexsBlock(
            ids=[str(_req(r, "machine", "avr")) for r in rows],
            mach_idx=np.array([mach_index(r["machine"], "avr") for r in rows]),
            k=np.array([float(_req(r, "k", "avr")) for r in rows]),
            ta=np.array([float(_req(r, "ta", "avr")) for r in rows]),
            tb=np.array([float(_req(r, "tb", "avr")) for r in rows]),
            te=np.array([float(_req(r, "te", "avr")) for r in rows]),
            e_min=np.array([float(r.get("e_min", -3.0)) for r in rows]),
            e_max=np.array([float(r.get("e_max", 3.0)) for r in rows]),
        )

    gov = None
    if case.get("gov"):
        rows = case["gov"]
        gov = GovernorBlock(
            ids=[str(_req(r, "machine", "gov")) for r in rows],
            mach_idx=np.array([mach_index(r["machine"], "gov") for r in rows]),
            r=np.array([float(_req(r, "r", "gov")) for r in rows]),
            t_g=np.array([float(_req(r, "t_g", "gov")) for r in rows]),
        )

    pss = None
    if case.get("pss"):
        rows = case["pss"]
        pss = PssBlock(
            ids=[str(_req(r, "machine", "pss")) for r in rows],
            mach_idx=np.array([mach_index(r["machine"], "pss") for r in rows]),
            k=np.array([float(_req(r, "k", "pss")) for r in rows]),
            tw=np.array([float(r.get("tw", 10.0)) for r in rows]),
            t1=np.array([float(_req(r, "t1", "pss")) for r in rows]),
            t2=np.array([float(_req(r, "t2", "pss")) for r in rows]),
            v_lim=np.array([float(r.get("v_lim", 0.1)) for r in rows]),
        )

    tcsc = None
    if case.get("tcsc"):
        rows = case["tcsc"]
        for r in rows:
            net.branch_index(_req(r, "branch", "tcsc"))
        tcsc = TcscBlock(
            ids=[str(_req(r, "id", "tcsc")) for r in rows],
            branch_ids=[str(r["branch"]) for r in rows],
            x_ref=np.array([float(r.get("x_ref", 0.1)) for r in rows]),
            t_c=np.array([float(r.get("t", 0.1)) for r in rows]),
            x_min=np.array([float(r.get("x_min", 0.01)) for r in rows]),
            x_max=np.array([float(r.get("x_max", 0.5)) for r in rows]),
        )

    inf_idx, inf_v = [], []
    ib = case.get("infinite_bus")
    if ib:
        inf_idx.append(net.bus_index(_req(ib, "bus", "infinite_bus")))
        inf_v.append(float(_req(ib, "v", "infinite_bus"))
                     * np.exp(1j * np.deg2rad(float(ib.get("angle_deg", 0.0)))))

    model = PowerSystemModel(
        name=str(case.get("name", "case")),
        f_hz=f_hz,
        base_mva=base_mva,
        net=net,
        machines=machines,
        classical=classical_blk,
        avr=avr,
        gov=gov,
        pss=pss,
        tcsc=tcsc,
        inf_bus_idx=np.asarray(inf_idx, dtype=int),
        inf_bus_v=np.asarray(inf_v, dtype=complex),
        slack_machine=case.get("slack"),
    )
    model.initialize()
    return model


def builtin_case(name: str) -> dict:
    """Load one of the shipped case dictionaries ('smib', 'ieee39')."""
    ref = resources.files("podlab.cases").joinpath(f"{name}.json")
    try:
        return json.loads(ref.read_text())
    except FileNotFoundError:
        raise CaseError(f"no built-in case named {name!r}") from None


def load_case(case: str | dict | Path) -> PowerSystemModel:
    """Accept a case dict, a built-in case name, or a JSON file path."""
    if isinstance(case, dict):
        return model_from_case(case)
    p = Path(case)
    if p.suffix == ".json" and p.exists():
        return model_from_case(json.loads(p.read_text()))
    return model_from_case(builtin_case(str(case)))
