"""Phasor power-oscillation damping control.

A measured signal y(t) is split into an average S_bar and an oscillatory
component represented by the slowly varying phasor D + jQ at the targeted
mode frequency:

    y(t) = S_bar + D cos(omega t) - Q sin(omega t)

Two estimators produce (S_bar, D, Q): a demodulating low-pass filter bank and
a Kalman filter. The Kalman filter optionally carries a control-input model:
knowing the mode residue r = U + jV of the actuator-to-measurement transfer
function, the phasor increment caused by the control held over one period is

    D+ = D + (U g + V h) u,   Q+ = Q + (-U h + V g) u,

with g(t) = (2/omega)(-sin(omega t) + sin(omega (t+dt))) and
h(t) = (2/omega)(cos(omega t) - cos(omega (t+dt))). Without a residue the
control-input column is zero and the filter degrades to the plain estimator
(the baseline controller).

The damping signal rotates the phasor by the compensation angle beta and
returns it to time domain: u = K (D cos(omega t + beta) - Q sin(omega t + beta)),
clamped to the actuator limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def g_func(t: float, omega: float, dt: float) -> float:
    """In-phase control-coupling kernel over one controller period."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return (2.0 / omega) * (-math.sin(omega * t) + math.sin(omega * (t + dt)))


def h_func(t: float, omega: float, dt: float) -> float:
    """Quadrature control-coupling kernel over one controller period."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return (2.0 / omega) * (math.cos(omega * t) - math.cos(omega * (t + dt)))


@dataclass
class PodConfig:
    """Damping-controller configuration for one targeted mode.

    ``residue`` carries U + jV of the actuator-to-measurement transfer
    function; ``None`` disables the control-input model (baseline behavior).
    ``k_c`` is the estimator-cutoff to mode-frequency ratio (0.2 to 0.5
    advised), which also sets the Kalman process noise.
    """

    omega: float
    period: float = 0.02
    k_c: float = 0.5
    gain: float = 0.0
    beta_deg: float = 0.0
    residue: complex | None = None
    u_min: float = -math.inf
    u_max: float = math.inf
    estimator: str = "kf"  # "kf" | "lpf"
    cov_scale: float = 1.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if not 0.0 < self.k_c <= 1.0:
            raise ValueError("k_c must be in (0, 1]")
        if self.estimator not in ("kf", "lpf"):
            raise ValueError(f"unknown estimator {self.estimator!r}")

    @property
    def f_hz(self) -> float:
        return self.omega / (2.0 * math.pi)

    @property
    def q_cov(self) -> np.ndarray:
        sig = self.omega * self.period * self.k_c
        return self.cov_scale * sig**2 * np.eye(3)

    @property
    def r_cov(self) -> float:
        return self.cov_scale * 1.0

    @property
    def p0(self) -> np.ndarray:
        return 1e4 * self.omega * self.period * self.k_c * np.eye(3)


@dataclass
class PhasorEstimate:
    """Average, in-phase and quadrature components with covariance (if any)."""

    s_avg: float
    d: float
    q: float
    t: float
    p: np.ndarray | None = None

    def reconstruct(self, t: float, omega: float) -> float:
        return self.s_avg + self.d * math.cos(omega * t) - self.q * math.sin(omega * t)

    def oscillatory(self, t: float, omega: float) -> float:
        return self.d * math.cos(omega * t) - self.q * math.sin(omega * t)


def observation_row(t: float, omega: float) -> np.ndarray:
    return np.array([1.0, math.cos(omega * t), -math.sin(omega * t)])


class KalmanPhasorEstimator:
    """Prediction-correction phasor estimator (state [S_bar, D, Q]).

    The state transition is the identity; the control-input column couples
    the applied modulation into (D, Q) when a residue is configured.
    """

    def __init__(self, cfg: PodConfig, x0=None, t0: float = 0.0):
        self.cfg = cfg
        self.t = t0
        self.x = np.zeros(3) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.p = cfg.p0.copy()
        self._seeded = x0 is not None

    @property
    def estimate(self) -> PhasorEstimate:
        return PhasorEstimate(self.x[0], self.x[1], self.x[2], self.t, self.p.copy())

    def control_input_column(self, t: float | None = None) -> np.ndarray:
        """G(t): phasor increment per unit of control held over one period."""
        cfg = self.cfg
        if cfg.residue is None:
            return np.zeros(3)
        tt = self.t if t is None else t
        g = g_func(tt, cfg.omega, cfg.period)
        h = h_func(tt, cfg.omega, cfg.period)
        u_re, v_im = cfg.residue.real, cfg.residue.imag
        return np.array([0.0, u_re * g + v_im * h, -u_re * h + v_im * g])

    def predict(self, u: float) -> None:
        """Advance to t + period given the modulation applied over the interval."""
        self.x = self.x + self.control_input_column() * u
        self.p = self.p + self.cfg.q_cov
        self.t += self.cfg.period

    def correct(self, y: float) -> float:
        """Standard measurement update at the current time; returns the innovation."""
        if not self._seeded:
            self.x[0] = y
            self._seeded = True
        hrow = observation_row(self.t, self.cfg.omega)
        innov = y - hrow @ self.x
        s_inn = hrow @ self.p @ hrow + self.cfg.r_cov
        gain = (self.p @ hrow) / s_inn
        self.x = self.x + gain * innov
        self.p = (np.eye(3) - np.outer(gain, hrow)) @ self.p
        self.p = 0.5 * (self.p + self.p.T)
        return float(innov)


class LpfPhasorEstimator:
    """Demodulating low-pass phasor estimator (no covariance).

    Each state is a first-order filter (exact-pole discretization at the
    controller period, cutoff = k_c times the mode frequency) driven by its
    demodulated share of the unexplained residue: the average branch sees y
    minus the reconstructed oscillation, the D/Q branches see
    2 (y - S_hat) cos(omega t) and -2 (y - S_hat) sin(omega t) on top of
    their own state. Subtracting the full reconstruction before demodulating
    keeps the average channel's pass-band leakage from rectifying into D and
    Q, which a plain (y - S_bar) product suffers at usable bandwidths.
    """

    def __init__(self, cfg: PodConfig, x0=None, t0: float = 0.0):
        self.cfg = cfg
        self.t = t0
        self.x = np.zeros(3) if x0 is None else np.asarray(x0, dtype=float).copy()
        self._alpha = math.exp(-cfg.k_c * cfg.omega * cfg.period)
        self._seeded = x0 is not None

    @property
    def estimate(self) -> PhasorEstimate:
        return PhasorEstimate(self.x[0], self.x[1], self.x[2], self.t, None)

    def predict(self, u: float) -> None:
        self.t += self.cfg.period

    def correct(self, y: float) -> float:
        if not self._seeded:
            self.x[0] = y
            self._seeded = True
        a, w, t = self._alpha, self.cfg.omega, self.t
        resid = y - observation_row(t, w) @ self.x
        self.x[0] += (1.0 - a) * resid
        self.x[1] += (1.0 - a) * 2.0 * resid * math.cos(w * t)
        self.x[2] += (1.0 - a) * (-2.0) * resid * math.sin(w * t)
        return float(resid)


def make_estimator(cfg: PodConfig, x0=None, t0: float = 0.0):
    cls = KalmanPhasorEstimator if cfg.estimator == "kf" else LpfPhasorEstimator
    return cls(cfg, x0=x0, t0=t0)


def damping_control(est: PhasorEstimate, cfg: PodConfig, t: float) -> float:
    """Rotate the phasor by beta, return to time domain, apply gain (unclamped)."""
    beta = math.radians(cfg.beta_deg)
    return cfg.gain * (est.d * math.cos(cfg.omega * t + beta)
                       - est.q * math.sin(cfg.omega * t + beta))


class PPodController:
    """One damping controller instance: estimator plus damping-control block.

    Call ``step(t, y)`` once per controller period. The tick order is:
    correct the estimate with y(t), emit the (clamped) control from the
    corrected estimate, then predict to t + period using the applied control.
    """

    def __init__(self, cfg: PodConfig, x0=None, t0: float = 0.0):
        self.cfg = cfg
        self.estimator = make_estimator(cfg, x0=x0, t0=t0)
        self.log: list[tuple] = []

    def __call__(self, t: float, y: float) -> float:
        return self.step(t, y)

    def step(self, t: float, y: float) -> float:
        est = self.estimator
        if abs(t - est.t) > 1e-9:
            raise ValueError(f"controller stepped at t={t}, estimator clock at {est.t}")
        innov = est.correct(y)
        snap = est.estimate
        u = damping_control(snap, self.cfg, t)
        u = min(max(u, self.cfg.u_min), self.cfg.u_max)
        est.predict(u)
        self.log.append((t, y, snap.s_avg, snap.d, snap.q, innov, u))
        return u

    def log_arrays(self) -> dict[str, np.ndarray]:
        cols = ("t", "y", "s_avg", "d", "q", "innovation", "u")
        if not self.log:
            return {c: np.zeros(0) for c in cols}
        data = np.asarray(self.log, dtype=float)
        return {c: data[:, i].copy() for i, c in enumerate(cols)}
