"""Single-phase A/C compressor motor (motor D) as a static performance model.

The power-voltage characteristic has three sections: running above the
breakdown voltage, running below it (unstable: power rises as voltage
falls), and stalled (constant impedance). The aggregate is split into a
non-restarting part A and a restarting part B, each with its own stall
status and thermal protection. Contactor and under-voltage relay act on the
whole motor.

Running-curve defaults (breakdown voltage, Kp/Kq coefficients and
exponents, frequency sensitivities) are the WECC composite load model
defaults; the record format does not carry them, so they are
plain fields that callers may override.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import LoadComponent
from .motor3ph import TIMER_EPS, InitializationError
from .staticload import FrequencyEstimator

RUN_ABOVE = "run_above"
RUN_BELOW = "run_below"
STALLED = "stalled"


class ParameterError(ValueError):
    pass


@dataclass
class AcMotorParams:
    LF: float = 0.8
    CompPF: float = 0.97
    Vstall: float = 0.6
    Rstall: float = 0.124
    Xstall: float = 0.114
    Tstall: float = 0.033
    Frst: float = 0.0
    Vrst: float = 0.9
    Trst: float = 999.0
    fuvr: float = 0.0
    vtr1: float = 0.0
    ttr1: float = 0.2
    vtr2: float = 0.0
    ttr2: float = 5.0
    Vc1off: float = 0.45
    Vc2off: float = 0.35
    Vc1on: float = 0.5
    Vc2on: float = 0.4
    Tth: float = 10.0
    Th1t: float = 1.3
    Th2t: float = 4.3
    Tv: float = 0.05
    Vbrk: float = 0.86
    Kp1: float = 0.0
    Np1: float = 1.0
    Kq1: float = 6.0
    Nq1: float = 2.0
    Kp2: float = 12.0
    Np2: float = 3.2
    Kq2: float = 11.0
    Nq2: float = 2.5
    CmpKpf: float = 1.0
    CmpKqf: float = -3.3

    def __post_init__(self) -> None:
        checks = [
            (self.Vstall < self.Vbrk, "Vstall must be below Vbrk"),
            (self.Vc2off < self.Vc1off, "Vc2off must be below Vc1off"),
            (self.Vc2on < self.Vc1on, "Vc2on must be below Vc1on"),
            (0.0 <= self.Frst <= 1.0, "Frst must lie in [0, 1]"),
            (self.Tth > 0, "Tth must be positive"),
            (self.Th1t < self.Th2t, "Th1t must be below Th2t"),
            (self.Rstall ** 2 + self.Xstall ** 2 > 0, "stall impedance must be nonzero"),
            (0 < self.LF <= 1, "LF must lie in (0, 1]"),
            (0 < abs(self.CompPF) <= 1, "CompPF must be a power factor"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParameterError(msg)

    @property
    def P0(self) -> float:
        return 1.0 - self.Kp1 * (1.0 - self.Vbrk) ** self.Np1

    @property
    def Q0(self) -> float:
        return math.tan(math.acos(self.CompPF)) - self.Kq1 * (1.0 - self.Vbrk) ** self.Nq1

    @property
    def y_stall(self) -> complex:
        return 1.0 / complex(self.Rstall, self.Xstall)


def performance_pq(v: float, section: str, p: AcMotorParams, df: float = 0.0) -> tuple[float, float]:
    """Power drawn per unit of motor MVA base in the given curve section."""
    if section == STALLED:
        g = p.y_stall
        return v * v * g.real, -v * v * g.imag
    if section == RUN_ABOVE:
        dv = max(v - p.Vbrk, 0.0)
        pw = p.P0 + p.Kp1 * dv ** p.Np1
        qw = p.Q0 + p.Kq1 * dv ** p.Nq1
    elif section == RUN_BELOW:
        dv = max(p.Vbrk - v, 0.0)
        pw = p.P0 + p.Kp2 * dv ** p.Np2
        qw = p.Q0 + p.Kq2 * dv ** p.Nq2
    else:
        raise ValueError(f"unknown section {section!r}")
    return (p.LF * pw * (1.0 + p.CmpKpf * df), p.LF * qw * (1.0 + p.CmpKqf * df))


def running_section(v: float, p: AcMotorParams, vstallbrk: float) -> str:
    if v >= p.Vbrk:
        return RUN_ABOVE
    if v >= vstallbrk:
        return RUN_BELOW
    return STALLED


def vstallbrk_bracket(p: AcMotorParams, tol: float = 1e-4, lo: float = 0.0) -> tuple[float, float]:
    """Bisection bracket for where the below-breakdown running curve meets the stall curve."""
    def gap(v):
        return performance_pq(v, RUN_BELOW, p)[0] - performance_pq(v, STALLED, p)[0]

    hi = p.Vbrk
    g_lo, g_hi = gap(lo), gap(hi)
    if not (g_lo > 0 > g_hi):
        raise ParameterError(
            f"running and stall curves do not cross on [{lo:.4f}, {hi:.4f}] "
            f"(gaps {g_lo:.4g}, {g_hi:.4g})"
        )
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo, hi


def compute_vstallbrk(p: AcMotorParams, tol: float = 1e-4) -> float:
    lo, hi = vstallbrk_bracket(p, tol)
    return 0.5 * (lo + hi)


def _ramp(v: float, lo: float, hi: float) -> float:
    return min(1.0, max(0.0, (v - lo) / (hi - lo)))


def contactor_update(kcon: float, v: float, p: AcMotorParams) -> float:
    """Connected contactor fraction after one measurement.

    Contactors are ranked so that the same units drop first and reclose
    last: opening removes the top of the connected range, reclosing restores
    it from the bottom. Applying the off-ramp then the on-ramp yields the
    latched behaviour.
    """
    kcon = min(kcon, _ramp(v, p.Vc2off, p.Vc1off))
    return max(kcon, _ramp(v, p.Vc2on, p.Vc1on))


def thermal_fraction(temp: float, p: AcMotorParams) -> float:
    return 1.0 - _ramp(temp, p.Th1t, p.Th2t)


@dataclass
class AcPart:
    fraction: float
    restarting: bool
    stalled: bool = False
    temp: float = 0.0
    fth: float = 1.0
    stall_timer: float = 0.0
    restart_timer: float = 0.0


class AcMotor(LoadComponent):
    """Motor D at a bus; powers on the system base scale with the motor MVA base."""

    def __init__(self, bus: int, v0: complex, p_sys: float, params: AcMotorParams,
                 name: str = "motorD", omega_s: float = 2 * math.pi * 60.0):
        self.name = name
        self.bus = bus
        self.params = params
        self.x = np.zeros(0)
        self.vstallbrk = compute_vstallbrk(params)
        vm = abs(v0)
        if vm < max(params.Vstall, self.vstallbrk):
            raise InitializationError(f"{name}: voltage {vm:.4f} pu is in the stall region")
        section = running_section(vm, params, self.vstallbrk)
        p_mb = performance_pq(vm, section, params)[0]
        self.mbase = p_sys / p_mb
        self.parts = [AcPart(1.0 - params.Frst, False), AcPart(params.Frst, True)]
        self.vf = vm
        self.kcon = 1.0
        self.uv_timers = [0.0, 0.0]
        self.uv_online = 1.0
        self.scale = 1.0
        self.freq = FrequencyEstimator(v0, omega_s)
        self._set_mode(vm)
        s = self.power(v0)
        self.p0, self.q0 = s.real, s.imag

    # -- network interface ----------------------------------------------------

    def _live(self, part: AcPart) -> float:
        return part.fraction * part.fth * self.kcon * self.uv_online * self.scale

    def _running_live(self) -> float:
        return sum(self._live(pt) for pt in self.parts if not pt.stalled)

    def _stalled_live(self) -> float:
        return sum(self._live(pt) for pt in self.parts if pt.stalled)

    def _set_mode(self, vm: float) -> None:
        """Choose the running representation for the next step from the latest voltage."""
        p, df = self.params, self.freq.df
        section = running_section(vm, p, self.vstallbrk)
        if section == STALLED:
            self.mode = "impedance"
            self.y_run = self.mbase * p.y_stall
            return
        pw, qw = performance_pq(vm, section, p, df)
        self.y_run = self.mbase * complex(pw, -qw) / (vm * vm)
        self.mode = "power" if section == RUN_ABOVE else "impedance"

    def admittance(self) -> complex:
        y = self._stalled_live() * self.mbase * self.params.y_stall
        if self.mode == "impedance":
            y += self._running_live() * self.y_run
        return y

    def current(self, x, v: complex) -> complex:
        if self.mode != "power":
            return 0j
        live = self._running_live()
        if live == 0:
            return 0j
        vm = abs(v)
        if vm < self.params.Vbrk:
            # iterate dropped below breakdown inside the step: hold the last admittance
            return -live * self.y_run * v
        pw, qw = performance_pq(vm, RUN_ABOVE, self.params, self.freq.df)
        return -(live * self.mbase * complex(pw, qw) / v).conjugate()

    def norton(self, v: complex) -> tuple[complex, complex]:
        return self.current(self.x, v), self.admittance()

    def power(self, v: complex) -> complex:
        i, y = self.norton(v)
        return v * (y * v - i).conjugate()

    # -- protections ------------------------------------------------------------

    def post_process(self, v: complex, dt: float) -> None:
        p = self.params
        vm = abs(v)
        if dt > 0:
            self.vf += (1.0 - math.exp(-dt / p.Tv)) * (vm - self.vf)
        self.freq.update(v, dt)
        vf = self.vf
        for part in self.parts:
            if not part.stalled:
                if vf < p.Vstall:
                    part.stall_timer += dt
                    if dt > 0 and part.stall_timer >= p.Tstall - TIMER_EPS:
                        part.stalled = True
                        part.stall_timer = 0.0
                else:
                    part.stall_timer = 0.0
            elif part.restarting:
                if vf > p.Vrst:
                    part.restart_timer += dt
                    if dt > 0 and part.restart_timer >= p.Trst - TIMER_EPS:
                        part.stalled = False
                        part.restart_timer = 0.0
                else:
                    part.restart_timer = 0.0
        self.kcon = contactor_update(self.kcon, vf, p)
        if dt > 0:
            a = 1.0 - math.exp(-dt / p.Tth)
            g = p.y_stall.real
            for part in self.parts:
                heat = vm * vm * g if part.stalled else 0.0
                part.temp += a * (heat - part.temp)
                part.fth = min(part.fth, thermal_fraction(part.temp, p))
        if p.fuvr > 0 and self.uv_online == 1.0:
            for k, (vtr, ttr) in enumerate(((p.vtr1, p.ttr1), (p.vtr2, p.ttr2))):
                if vf < vtr:
                    self.uv_timers[k] += dt
                    if dt > 0 and self.uv_timers[k] >= ttr - TIMER_EPS:
                        self.uv_online = 1.0 - p.fuvr
                else:
                    self.uv_timers[k] = 0.0
        self._set_mode(vm)

    def channels(self, x, v: complex) -> dict[str, float]:
        s = self.power(v)
        a, b = self.parts
        return {
            "P": s.real,
            "Q": s.imag,
            "TempA": a.temp,
            "TempB": b.temp,
            "FthA": a.fth,
            "FthB": b.fth,
            "Kcon": self.kcon,
            "stallA": float(a.stalled),
            "stallB": float(b.stalled),
            "Vf": self.vf,
        }


def ac_network_interface(motor: AcMotor, v: complex) -> tuple[complex, complex]:
    return motor.norton(v)


def ac_post_process(motor: AcMotor, v: complex, dt: float) -> AcMotor:
    motor.post_process(v, dt)
    return motor
