"""Fifth-order double-cage three-phase induction motor (motors A, B, C).

States, in order: E'q, E'd, E''q, E''d, slip. Voltages and currents are
expressed on the synchronously rotating network frame with d as the real
axis and q as the imaginary axis, on the motor MVA base.

Sign convention: the stator current drawn by the motor is
``(V + E'') / (rs + j Lpp)``, i.e. the internal-voltage states carry the
opposite sign of the physical back-EMF. Air-gap torque is therefore
``-(E''d id + E''q iq)``. The init residual test pins this convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .engine import LoadComponent

OMEGA_S = 2 * math.pi * 60.0
TIMER_EPS = 1e-9


class InitializationError(ValueError):
    pass


@dataclass
class ProtectionStage:
    vtr: float = 0.0
    ttr: float = 999.0
    ftr: float = 0.0
    vrc: float = 999.0
    trc: float = 999.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ftr <= 1.0:
            raise ValueError("ftr must lie in [0, 1]")


@dataclass
class Motor3Params:
    rs: float = 0.01
    Ls: float = 3.1
    Lp: float = 0.1779
    Lpp: float = 0.1539
    Tpo: float = 1.634
    Tppo: float = 0.0045
    H: float = 0.3
    etrq: float = 0.0
    LF: float = 0.8
    protection: list[ProtectionStage] = field(default_factory=lambda: [ProtectionStage(), ProtectionStage()])

    def __post_init__(self) -> None:
        # Lp == Lpp is allowed: it reduces the model to a single cage, as in
        # the motor B/C rows of the reference data record.
        if not (self.Ls > self.Lp >= self.Lpp > 0):
            raise ValueError("reactances must satisfy Ls > Lp >= Lpp > 0")
        if not (self.Tpo > self.Tppo > 0):
            raise ValueError("time constants must satisfy Tpo > Tppo > 0")
        if self.rs < 0:
            raise ValueError("rs must be non-negative")
        if self.H <= 0:
            raise ValueError("H must be positive")
        if not 0 < self.LF <= 1:
            raise ValueError("LF must lie in (0, 1]")


def stator_currents(vd: float, vq: float, edpp: float, eqpp: float,
                    p: Motor3Params) -> tuple[float, float]:
    den = p.rs * p.rs + p.Lpp * p.Lpp
    a = vd + edpp
    b = vq + eqpp
    i_d = (p.rs * a + p.Lpp * b) / den
    i_q = (p.rs * b - p.Lpp * a) / den
    return i_d, i_q


def _electrical(e, slip, vd, vq, p, ws):
    eqp, edp, eqpp, edpp = e
    i_d, i_q = stator_currents(vd, vq, edpp, eqpp, p)
    a = p.Ls - p.Lp
    b = p.Lp - p.Lpp
    dedp = ws * slip * eqp - (edp - a * i_q) / p.Tpo
    deqp = -ws * slip * edp - (eqp + a * i_d) / p.Tpo
    deqpp = ws * slip * (edp - edpp) + deqp + (eqp - eqpp - b * i_d) / p.Tppo
    dedpp = -ws * slip * (eqp - eqpp) + dedp + (edp - edpp + b * i_q) / p.Tppo
    return (deqp, dedp, deqpp, dedpp), (i_d, i_q)


def motor3_derivatives(x, v: complex, p: Motor3Params, tl0: float, ws: float = OMEGA_S) -> np.ndarray:
    slip = x[4]
    (deqp, dedp, deqpp, dedpp), (i_d, i_q) = _electrical(x[:4], slip, v.real, v.imag, p, ws)
    te = -(x[3] * i_d + x[2] * i_q)
    speed = 1.0 - slip
    tl = tl0 * (speed ** p.etrq if p.etrq else 1.0)
    dslip = (tl - te) / (2.0 * p.H)
    if slip >= 1.0 and dslip > 0:
        dslip = 0.0
    return np.array([deqp, dedp, deqpp, dedpp, dslip])


def electrical_torque(x, v: complex, p: Motor3Params) -> float:
    i_d, i_q = stator_currents(v.real, v.imag, x[3], x[2], p)
    return -(x[3] * i_d + x[2] * i_q)


def steady_internal_voltages(slip: float, v: complex, p: Motor3Params, ws: float = OMEGA_S) -> np.ndarray:
    """Solve the four electrical equations with zero derivatives at fixed slip.

    The right-hand side is affine in the internal voltages, so the matrix is
    recovered exactly by evaluating at zero and at the unit vectors.
    """
    zero = np.zeros(4)
    b = np.array(_electrical(zero, slip, v.real, v.imag, p, ws)[0])
    A = np.empty((4, 4))
    for k in range(4):
        e = np.zeros(4)
        e[k] = 1.0
        A[:, k] = np.array(_electrical(e, slip, v.real, v.imag, p, ws)[0]) - b
    return np.linalg.solve(A, -b)


def terminal_power(slip: float, v: complex, p: Motor3Params, ws: float = OMEGA_S) -> complex:
    """Steady-state complex power drawn at ``slip`` on the motor base."""
    e = steady_internal_voltages(slip, v, p, ws)
    i_d, i_q = stator_currents(v.real, v.imag, e[3], e[2], p)
    return v * complex(i_d, i_q).conjugate()


def max_power_slip(v: complex, p: Motor3Params, ws: float = OMEGA_S) -> tuple[float, float]:
    """Slip and value of the peak of the steady-state slip-power curve on (0, 1]."""
    grid = np.geomspace(1e-5, 1.0, 400)
    vals = np.array([terminal_power(s, v, p, ws).real for s in grid])
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda s: -terminal_power(s, v, p, ws).real, bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        if -res.fun > vals[k]:
            return float(res.x), float(-res.fun)
    return float(grid[k]), float(vals[k])


@dataclass
class Motor3State:
    x: np.ndarray
    tl0: float
    p: float
    q: float
    online_fraction: float = 1.0


def init_motor3(v: complex, p_assigned: float, p: Motor3Params, ws: float = OMEGA_S,
                slip_tol: float = 1e-10) -> Motor3State:
    """Initial slip from the slip-power curve, then internal voltages from zero derivatives.

    ``p_assigned`` is on the motor base. The slip is found by bisection on
    the stable branch (0, slip at maximum power).
    """
    if not p_assigned > 0:
        raise InitializationError("motor power must be positive")
    if abs(v) <= 0.5:
        raise InitializationError(f"terminal voltage {abs(v):.4f} pu too low to initialize motor")
    s_max, p_max = max_power_slip(v, p, ws)
    if p_assigned > p_max:
        raise InitializationError(
            f"assigned power {p_assigned:.4f} exceeds motor maximum {p_max:.4f} pu at |V|={abs(v):.4f}"
        )
    lo, hi = 0.0, s_max
    if terminal_power(lo, v, p, ws).real >= p_assigned:
        slip0 = 0.0
    else:
        # bisect well past slip_tol so the power match is at round-off level
        while hi - lo > slip_tol * 1e-4 and hi - lo > 4 * math.ulp(hi):
            mid = 0.5 * (lo + hi)
            if terminal_power(mid, v, p, ws).real < p_assigned:
                lo = mid
            else:
                hi = mid
        slip0 = 0.5 * (lo + hi)
    e = steady_internal_voltages(slip0, v, p, ws)
    x = np.array([e[0], e[1], e[2], e[3], slip0])
    te = electrical_torque(x, v, p)
    speed = 1.0 - slip0
    tl0 = te / (speed ** p.etrq if p.etrq else 1.0)
    i_d, i_q = stator_currents(v.real, v.imag, e[3], e[2], p)
    s = v * complex(i_d, i_q).conjugate()
    return Motor3State(x=x, tl0=tl0, p=s.real, q=s.imag)


def motor3_norton(x, p: Motor3Params, base_conv: float, online_fraction: float = 1.0) -> tuple[complex, complex]:
    """Norton current source and admittance on the system base.

    The network draws ``Y V - I`` which equals the stator current scaled by
    ``base_conv``.
    """
    y = online_fraction * base_conv / complex(p.rs, p.Lpp)
    return -y * complex(x[3], x[2]), y


class ProtectionLogic:
    """Under-voltage trip stages with optional timed reconnection."""

    def __init__(self, stages):
        self.stages = list(stages)
        self.below = [0.0] * len(self.stages)
        self.above = [0.0] * len(self.stages)
        self.tripped = [False] * len(self.stages)

    @property
    def online_fraction(self) -> float:
        off = sum(st.ftr for st, tr in zip(self.stages, self.tripped) if tr)
        return min(1.0, max(0.0, 1.0 - off))

    def update(self, vm: float, dt: float) -> None:
        for i, st in enumerate(self.stages):
            if vm < st.vtr:
                self.below[i] += dt
                if not self.tripped[i] and self.below[i] >= st.ttr - TIMER_EPS:
                    self.tripped[i] = True
                    self.above[i] = 0.0
            else:
                self.below[i] = 0.0
            if self.tripped[i] and vm > st.vrc:
                self.above[i] += dt
                if self.above[i] >= st.trc - TIMER_EPS:
                    self.tripped[i] = False
                    self.above[i] = 0.0
                    self.below[i] = 0.0
            else:
                self.above[i] = 0.0


def motor3_post_process(protection: ProtectionLogic, vm: float, dt: float) -> float:
    protection.update(vm, dt)
    return protection.online_fraction


class Motor3(LoadComponent):
    """Three-phase motor attached to a bus, sized from its assigned power and LF."""

    def __init__(self, bus: int, v0: complex, p_sys: float, params: Motor3Params,
                 name: str = "motorA", ws: float = OMEGA_S):
        self.name = name
        self.bus = bus
        self.params = params
        self.ws = ws
        self.mbase = p_sys / params.LF
        try:
            st = init_motor3(v0, params.LF, params, ws)
        except InitializationError as exc:
            raise InitializationError(f"{name}: {exc}") from exc
        self.x = st.x
        self.tl0 = st.tl0
        self.p0 = st.p * self.mbase
        self.q0 = st.q * self.mbase
        self.protection = ProtectionLogic(params.protection)
        self.online = 1.0
        self.scale = 1.0

    def derivatives(self, x, v):
        if self.online * self.scale <= 0:
            return np.zeros(5)
        return motor3_derivatives(x, v, self.params, self.tl0, self.ws)

    def admittance(self) -> complex:
        return self.online * self.scale * self.mbase / complex(self.params.rs, self.params.Lpp)

    def current(self, x, v) -> complex:
        return -self.admittance() * complex(x[3], x[2])

    def drawn_current(self, x, v) -> complex:
        return self.admittance() * v - self.current(x, v)

    def post_process(self, v, dt) -> None:
        self.online = motor3_post_process(self.protection, abs(v), dt)

    def channels(self, x, v):
        s = v * self.drawn_current(x, v).conjugate()
        return {"slip": float(x[4]), "P": s.real, "Q": s.imag, "online_fraction": self.online}
