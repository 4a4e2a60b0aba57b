"""Static ZIP/exponential load and the power-electronic load fraction.

Constant-power and constant-current portions switch to smooth low-voltage
forms below their thresholds so the network iteration stays well posed as
voltage collapses: a raised-cosine ramp for constant power and a sine taper
for constant current. Both forms have continuous first derivatives at the
threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import LoadComponent

V_FLOOR = 1e-6


def cp_power(v: float, s0: complex, vmin: float = 0.7) -> complex:
    if v >= vmin:
        return s0
    return 0.5 * s0 * (1.0 - math.cos(math.pi * v / vmin))


def ci_power(v: float, s0: complex, vmin: float = 0.7) -> complex:
    if v >= vmin:
        return s0 * v
    return s0 * v * math.sin(math.pi * v / (2.0 * vmin))


@dataclass
class StaticLoadParams:
    pfs: float = 1.0
    p1c: float = 0.0
    p1e: float = 2.0
    p2c: float = 0.0
    p2e: float = 1.0
    pfrq: float = 0.0
    q1c: float = 0.0
    q1e: float = 2.0
    q2c: float = 0.0
    q2e: float = 1.0
    qfrq: float = 0.0
    v_cp_min: float = 0.7
    v_ci_min: float = 0.7

    def __post_init__(self) -> None:
        for name in ("v_cp_min", "v_ci_min"):
            val = getattr(self, name)
            if not 0 < val < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {val}")
        if not -1.0 <= self.pfs <= 1.0 or self.pfs == 0:
            raise ValueError("pfs must be a nonzero power factor in [-1, 1]")

    @property
    def p3c(self) -> float:
        return 1.0 - self.p1c - self.p2c

    @property
    def q3c(self) -> float:
        return 1.0 - self.q1c - self.q2c


def _term(v: float, exponent: float, p: StaticLoadParams) -> float:
    """Per-unit voltage shape of one exponential term with robust switching.

    Exponent 2 is constant impedance (no switching), 1 is constant current,
    0 is constant power. Other exponents follow V**e above the constant-power
    threshold and the constant-power taper (scaled to meet V**e) below it.
    """
    if exponent == 2.0:
        return v * v
    if exponent == 1.0:
        return ci_power(v, 1.0, p.v_ci_min).real
    if exponent == 0.0:
        return cp_power(v, 1.0, p.v_cp_min).real
    if v >= p.v_cp_min:
        return v ** exponent
    return p.v_cp_min ** exponent * cp_power(v, 1.0, p.v_cp_min).real


def p_shape(v: float, p: StaticLoadParams) -> float:
    return p.p1c * _term(v, p.p1e, p) + p.p2c * _term(v, p.p2e, p) + p.p3c * _term(v, 0.0, p)


def q_shape(v: float, p: StaticLoadParams) -> float:
    return p.q1c * _term(v, p.q1e, p) + p.q2c * _term(v, p.q2e, p) + p.q3c * _term(v, 0.0, p)


class FrequencyEstimator:
    """Bus frequency deviation (pu) from the voltage angle rate, low-pass filtered."""

    def __init__(self, v0: complex, omega_s: float = 2 * math.pi * 60.0, tf: float = 0.05):
        self.omega_s = omega_s
        self.tf = tf
        self.prev = v0
        self.df = 0.0

    def update(self, v: complex, dt: float) -> float:
        if dt <= 0 or abs(v) < V_FLOOR or abs(self.prev) < V_FLOOR:
            if abs(v) >= V_FLOOR:
                self.prev = v
            return self.df
        raw = math.atan2((v / self.prev).imag, (v / self.prev).real) / (dt * self.omega_s)
        self.df += (1.0 - math.exp(-dt / self.tf)) * (raw - self.df)
        self.prev = v
        return self.df


class StaticLoad(LoadComponent):
    """Exponential static load anchored to its assigned power at the initial voltage."""

    def __init__(self, bus: int, v0: complex, p0: float, params: StaticLoadParams,
                 q0: float | None = None, name: str = "static", omega_s: float = 2 * math.pi * 60.0):
        self.name = name
        self.bus = bus
        self.params = params
        self.x = np.zeros(0)
        vm = abs(v0)
        if q0 is None:
            q0 = p0 * math.tan(math.acos(abs(params.pfs))) * (1.0 if params.pfs > 0 else -1.0)
        ps, qs = p_shape(vm, params), q_shape(vm, params)
        self.p_base = p0 / ps if ps else 0.0
        self.q_base = q0 / qs if qs else 0.0
        if (p0 and not ps) or (q0 and not qs):
            raise ValueError("static load shape is zero at the initial voltage")
        self.p0, self.q0 = p0, q0
        self.scale = 1.0
        self.freq = FrequencyEstimator(v0, omega_s)

    def power(self, v: float, df: float | None = None) -> complex:
        if df is None:
            df = self.freq.df
        p = self.p_base * p_shape(v, self.params) * (1.0 + self.params.pfrq * df)
        q = self.q_base * q_shape(v, self.params) * (1.0 + self.params.qfrq * df)
        return self.scale * complex(p, q)

    def current(self, x: np.ndarray, v: complex) -> complex:
        return static_injection(v, self)

    def post_process(self, v: complex, dt: float) -> None:
        self.freq.update(v, dt)

    def channels(self, x: np.ndarray, v: complex) -> dict[str, float]:
        s = self.power(abs(v))
        return {"P_static": s.real, "Q_static": s.imag}


def static_injection(v: complex, load: StaticLoad, df: float | None = None) -> complex:
    """Norton current injected into the network by a static load at iterate ``v``."""
    vm = abs(v)
    if vm < V_FLOOR:
        return 0j
    return -(load.power(vm, df) / v).conjugate()


@dataclass
class ElecLoadParams:
    pfe: float = 1.0
    vd1: float = 0.8
    vd2: float = 0.7
    frcel: float = 0.0

    def __post_init__(self) -> None:
        if not self.vd2 < self.vd1:
            raise ValueError("vd2 must be below vd1")
        if not 0.0 <= self.frcel <= 1.0:
            raise ValueError("frcel must lie in [0, 1]")


def _ramp(v: float, lo: float, hi: float) -> float:
    return min(1.0, max(0.0, (v - lo) / (hi - lo)))


def elec_online_fraction(v: float, vmin_seen: float, p: ElecLoadParams) -> float:
    """Connected fraction given the deepest voltage seen so far.

    Below vd1 the load ramps linearly off, reaching zero at vd2. On recovery
    only ``frcel`` of the dropped share comes back along the same ramp.
    """
    if v <= vmin_seen:
        return _ramp(v, p.vd2, p.vd1)
    base = _ramp(vmin_seen, p.vd2, p.vd1)
    return base + p.frcel * (_ramp(v, p.vd2, p.vd1) - base)


def elec_load_injection(v: float, vmin_seen: float, s0: complex,
                        p: ElecLoadParams) -> tuple[complex, float]:
    """Power drawn by the electronic load and the updated latch voltage."""
    frac = elec_online_fraction(v, vmin_seen, p)
    return s0 * frac, min(vmin_seen, v)


class ElectronicLoad(LoadComponent):
    def __init__(self, bus: int, v0: complex, p0: float, params: ElecLoadParams, name: str = "elec"):
        self.name = name
        self.bus = bus
        self.params = params
        self.x = np.zeros(0)
        vm = abs(v0)
        frac = _ramp(vm, params.vd2, params.vd1)
        if p0 and frac <= 0:
            raise ValueError("electronic load is fully tripped at the initial voltage")
        q0 = p0 * math.tan(math.acos(abs(params.pfe))) * (1.0 if params.pfe > 0 else -1.0)
        self.s0 = complex(p0, q0) / frac if frac else 0j
        self.vmin_seen = vm
        self.scale = 1.0

    def power(self, v: float) -> complex:
        s, _ = elec_load_injection(v, self.vmin_seen, self.s0, self.params)
        return self.scale * s

    def current(self, x: np.ndarray, v: complex) -> complex:
        vm = abs(v)
        if vm < V_FLOOR:
            return 0j
        return -(self.power(vm) / v).conjugate()

    def post_process(self, v: complex, dt: float) -> None:
        self.vmin_seen = min(self.vmin_seen, abs(v))

    def channels(self, x: np.ndarray, v: complex) -> dict[str, float]:
        s = self.power(abs(v))
        frac = elec_online_fraction(abs(v), self.vmin_seen, self.params)
        return {"P_el": s.real, "Q_el": s.imag, "elec_tripped_fraction": 1.0 - frac}
