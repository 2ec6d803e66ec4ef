"""Small-signal analysis: linearization, eigenstructure, residues, compensation.

The linear model is obtained by central finite differences on the simulator's
nonlinear derivative and measurement functions about an equilibrium. Left
eigenvectors are the rows of the inverse right-eigenvector matrix, which
makes the sets biorthonormal (psi_i phi_j = delta_ij) by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

# eigenvector-matrix condition number beyond which modes are flagged
DEFECTIVE_COND = 1e10


class NotAnEquilibriumError(Exception):
    def __init__(self, norm: float, tol: float):
        super().__init__(
            f"operating point is not an equilibrium: |dx/dt|_inf = {norm:.3e} > {tol:.1e}")
        self.norm = norm


@dataclass
class LinearModel:
    """Single-input single-output linearized system dx = A x + b u, y = c x."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    state_labels: list[str]
    input_name: str = "u"
    output_name: str = "y"

    def __post_init__(self):
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.b.shape != (n,) or self.c.shape != (n,):
            raise ValueError("inconsistent linear-model dimensions")
        if len(self.state_labels) != n:
            raise ValueError("label list does not match state dimension")

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass
class ModeInfo:
    """One eigenvalue with its eigenvector pair and derived modal quantities."""

    eigenvalue: complex
    freq_hz: float
    damping: float
    phi: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    residue: complex | None = None
    ill_conditioned: bool = False

    @property
    def is_oscillatory(self) -> bool:
        return abs(self.eigenvalue.imag) > 1e-12


def linearize(
    sim,
    x0: np.ndarray | None = None,
    input_actuator: str | None = None,
    output_channel: str | None = None,
    rel_step: float = 1e-6,
    abs_floor: float = 1e-8,
    equilibrium_tol: float = 1e-6,
) -> LinearModel:
    """Linearize a Simulator about an equilibrium by central differences.

    The perturbation of state i is ``rel_step * max(|x0_i|, 1)`` with an
    absolute floor; the input column uses the actuator modulation channel.
    """
    m = sim.model
    x0 = m.x0 if x0 is None else np.asarray(x0, dtype=float)
    norm = sim.equilibrium_norm(x0)
    if norm > equilibrium_tol:
        raise NotAnEquilibriumError(norm, equilibrium_tol)

    if input_actuator is not None:
        if m.tcsc is None or input_actuator not in m.tcsc.ids:
            raise ValueError(f"unknown actuator {input_actuator!r}")
        sim._actuator_idx = m.tcsc.ids.index(input_actuator)

    n = x0.size
    steps = np.maximum(rel_step * np.maximum(np.abs(x0), 1.0), abs_floor)
    a = np.empty((n, n))
    c = np.zeros(n)
    measure = m.measurement_fn(output_channel) if output_channel else None

    for i in range(n):
        xp, xm_ = x0.copy(), x0.copy()
        xp[i] += steps[i]
        xm_[i] -= steps[i]
        fp = sim.derivatives(0.0, xp, 0.0)
        fm = sim.derivatives(0.0, xm_, 0.0)
        a[:, i] = (fp - fm) / (2.0 * steps[i])
        if measure is not None:
            vp = sim.solve_voltages(xp)
            vm = sim.solve_voltages(xm_)
            c[i] = (measure(0.0, xp, vp) - measure(0.0, xm_, vm)) / (2.0 * steps[i])

    hu = rel_step
    b = (sim.derivatives(0.0, x0, hu) - sim.derivatives(0.0, x0, -hu)) / (2.0 * hu)

    return LinearModel(
        a=a, b=b, c=c,
        state_labels=m.state_labels(),
        input_name=input_actuator or "u",
        output_name=output_channel or "y",
    )


def eigendecompose(a: np.ndarray) -> list[ModeInfo]:
    """All eigenvalues with biorthonormal right/left eigenvectors."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("A must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("A contains non-finite entries")
    w, vr = scipy.linalg.eig(a)
    ill = np.linalg.cond(vr) > DEFECTIVE_COND
    vl = np.linalg.inv(vr)
    modes = []
    for i, lam in enumerate(w):
        mag = abs(lam)
        modes.append(ModeInfo(
            eigenvalue=complex(lam),
            freq_hz=float(lam.imag / (2.0 * np.pi)),
            damping=float(-lam.real / mag) if mag > 0 else 0.0,
            phi=vr[:, i].copy(),
            psi=vl[i, :].copy(),
            ill_conditioned=bool(ill),
        ))
    return modes


def residue(lm: LinearModel, mode: ModeInfo) -> complex:
    """Transfer-function residue of the mode for the model's input/output pair."""
    return complex((lm.c @ mode.phi) * (mode.psi @ lm.b))


def phase_compensation(r: complex) -> float:
    """Ideal damping-feedback phase shift in degrees, in (-180, 180]."""
    if r == 0:
        raise ValueError("phase compensation undefined for zero residue")
    beta = 180.0 - np.degrees(np.angle(r))
    beta = (beta + 180.0) % 360.0 - 180.0
    if beta == -180.0:
        beta = 180.0
    return float(beta)


def screen_modes(
    modes: list[ModeInfo],
    f_band: tuple[float, float] = (0.1, 3.0),
    top_k: int | None = None,
) -> list[ModeInfo]:
    """Modes with frequency in the band, worst-damped first (ties: lower f)."""
    lo, hi = f_band
    band = [mo for mo in modes if lo <= mo.freq_hz <= hi]
    band.sort(key=lambda mo: (mo.damping, mo.freq_hz))
    return band[:top_k] if top_k is not None else band


def attach_residues(lm: LinearModel, modes: list[ModeInfo]) -> list[ModeInfo]:
    for mo in modes:
        mo.residue = residue(lm, mo)
    return modes


def mode_table_rows(lm: LinearModel, modes: list[ModeInfo]) -> list[dict]:
    rows = []
    for mo in modes:
        r = residue(lm, mo)
        rows.append({
            "re": mo.eigenvalue.real,
            "im": mo.eigenvalue.imag,
            "freq_hz": mo.freq_hz,
            "damping_pct": 100.0 * mo.damping,
            "residue_mag": abs(r),
            "residue_deg": float(np.degrees(np.angle(r))) if r != 0 else 0.0,
            "beta_deg": phase_compensation(r) if r != 0 else float("nan"),
        })
    return rows


def write_mode_table(path, lm: LinearModel, modes: list[ModeInfo]) -> None:
    rows = mode_table_rows(lm, modes)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else
                                ["re", "im", "freq_hz", "damping_pct",
                                 "residue_mag", "residue_deg", "beta_deg"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: f"{v:.17g}" for k, v in row.items()})
