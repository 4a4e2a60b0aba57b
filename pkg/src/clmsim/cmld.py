"""Composite load container: substation transformer, feeder and member loads.

Initialization grows the network by a low-side bus and a load bus per
composite load, picks the distribution transformer tap, solves the feeder
from the transmission-side power-flow load, distributes the load-bus power
to the members and closes the reactive balance with a load-bus shunt so the
transmission bus sees exactly its original load.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import LoadComponent
from .motor3ph import InitializationError, Motor3, Motor3Params, ProtectionStage
from .motorac import AcMotor, AcMotorParams
from .network import Branch, Network, assemble_ybus, grow_network
from .staticload import ElecLoadParams, ElectronicLoad, FrequencyEstimator, StaticLoad, StaticLoadParams

VLB_MIN = 0.95
FEEDER_SCALE_FLOOR = 0.1


class CmldInitError(InitializationError):
    pass


def _motor_b_default() -> Motor3Params:
    return Motor3Params(rs=0.02, Ls=3.6, Lp=0.18, Lpp=0.18, Tpo=1.6, Tppo=0.02, H=0.5, etrq=2.0)


@dataclass
class CmldParams:
    bus: int = 0
    bus_name: str = ""
    base_kv: float = 0.0
    circuit: str = "1"
    mva: float = -0.8
    bss: float = 0.0
    rfdr: float = 0.0
    xfdr: float = 0.0
    fb: float = 0.0
    xxf: float = 0.0
    tfixhs: float = 1.0
    tfixls: float = 1.0
    lrc: float = 0.0
    tmin: float = 0.9
    tmax: float = 1.1
    step: float = 0.00625
    vmin: float = 1.0
    vmax: float = 1.04
    tdel: float = 30.0
    ttap: float = 5.0
    rcmp: float = 0.0
    xcmp: float = 0.0
    fma: float = 0.0
    fmb: float = 0.0
    fmc: float = 0.0
    fmd: float = 0.0
    fel: float = 0.0
    mtya: float = 3.0
    mtyb: float = 3.0
    mtyc: float = 3.0
    mtyd: float = 1.0
    motor_a: Motor3Params = field(default_factory=Motor3Params)
    motor_b: Motor3Params = field(default_factory=_motor_b_default)
    motor_c: Motor3Params = field(default_factory=_motor_b_default)
    motor_d: AcMotorParams = field(default_factory=AcMotorParams)
    static: StaticLoadParams = field(default_factory=StaticLoadParams)
    elec: ElecLoadParams = field(default_factory=ElecLoadParams)
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        fr = self.fractions
        if any(f < 0 for f in fr.values()):
            raise ValueError("load fractions must be non-negative")
        if sum(fr.values()) > 1.0 + 1e-12:
            raise ValueError(f"load fractions sum to {sum(fr.values()):.6f} > 1")
        if not self.tmin <= self.tmax:
            raise ValueError("tmin must not exceed tmax")
        if not self.step > 0:
            raise ValueError("tap step must be positive")
        if not self.vmin < self.vmax:
            raise ValueError("vmin must be below vmax")

    @property
    def fractions(self) -> dict[str, float]:
        return {"fma": self.fma, "fmb": self.fmb, "fmc": self.fmc, "fmd": self.fmd, "fel": self.fel}

    @property
    def fstatic(self) -> float:
        return max(0.0, 1.0 - sum(self.fractions.values()))

    def mva_base(self, p_load: float, sbase: float = 100.0) -> float:
        """Composite-load MVA base in system per unit.

        A negative ``mva`` field scales the bus load: base = |mva| * P_load.
        """
        if self.mva < 0:
            return abs(self.mva) * p_load
        if self.mva == 0:
            return p_load
        return self.mva / sbase


@dataclass
class FeederSolution:
    tap: float
    v_ls: complex
    i2: complex
    i4: complex
    v_lb: complex
    s_lb: complex


def continuous_tap(v_lf: complex, i_lf: complex, xxf: float, vmid: float,
                   tfixhs: float = 1.0, tfixls: float = 1.0) -> float:
    """Tap that places the low-side voltage magnitude at ``vmid``."""
    inner = abs(v_lf - 1j * xxf * tfixhs ** 2 * i_lf)
    return vmid * tfixhs / (tfixls * inner)


def feeder_solution(v_lf: complex, i_lf: complex, tap: float, xxf: float, bss: float,
                    rfdr: float, xfdr: float, tfixhs: float = 1.0, tfixls: float = 1.0) -> FeederSolution:
    """Walk from the transmission bus through transformer, shunt and feeder (impedances on system base)."""
    v_ls = (v_lf - 1j * xxf * tfixhs ** 2 * i_lf) * tfixls * tap / tfixhs
    i2 = i_lf * tfixhs / (tap * tfixls)
    i3 = 1j * bss * v_ls
    i4 = i2 - i3
    v_lb = v_ls - complex(rfdr, xfdr) * i4
    return FeederSolution(tap, v_ls, i2, i4, v_lb, v_lb * i4.conjugate())


@dataclass
class CmldInitReport:
    bus: int
    low_side_bus: int
    load_bus: int
    Tap: float
    tap_continuous: float
    Vls: complex
    Vlb: complex
    Bf1: float
    Bf2: float
    Plb: float
    Qlb: float
    feeder_impedance_scale: float
    mva_base: float
    assigned: dict[str, tuple[float, float]]
    residual: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("Vls", "Vlb"):
            z = d[k]
            d[k] = {"re": z.real, "im": z.imag, "mag": abs(z), "ang_deg": math.degrees(math.atan2(z.imag, z.real))}
        d["assigned"] = {k: {"P": p, "Q": q} for k, (p, q) in self.assigned.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("bus", f"{self.bus}"),
            ("low-side / load bus", f"{self.low_side_bus} / {self.load_bus}"),
            ("Tap (continuous)", f"{self.Tap:.5f} ({self.tap_continuous:.6f})"),
            ("|Vls|", f"{abs(self.Vls):.6f}"),
            ("|Vlb|", f"{abs(self.Vlb):.6f}"),
            ("Bf1 / Bf2", f"{self.Bf1:.6f} / {self.Bf2:.6f}"),
            ("Plb / Qlb", f"{self.Plb:.6f} / {self.Qlb:.6f}"),
            ("feeder scale", f"{self.feeder_impedance_scale:.6f}"),
            ("MVA base (pu)", f"{self.mva_base:.6f}"),
            ("init residual", f"{self.residual:.3e}"),
        ]
        rows += [(f"  {k} P/Q", f"{p:.6f} / {q:.6f}") for k, (p, q) in self.assigned.items()]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


@dataclass
class SheddingStage:
    threshold: float
    delay: float
    fraction: float


@dataclass
class SubstationShedding:
    """Two-stage UV and UF substation shedding; disabled when no stages are given."""

    uv: list[SheddingStage] = field(default_factory=list)
    uf: list[SheddingStage] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._timers = [0.0] * (len(self.uv) + len(self.uf))
        self._tripped = [False] * len(self._timers)

    @property
    def multiplier(self) -> float:
        m = 1.0
        for st, tr in zip(self.uv + self.uf, self._tripped):
            if tr:
                m *= 1.0 - st.fraction
        return m

    def update(self, v: float, f_hz: float, dt: float) -> float:
        signals = [v] * len(self.uv) + [f_hz] * len(self.uf)
        for k, (st, sig) in enumerate(zip(self.uv + self.uf, signals)):
            if self._tripped[k]:
                continue
            if sig < st.threshold:
                self._timers[k] += dt
                if dt > 0 and self._timers[k] >= st.delay - 1e-9:
                    self._tripped[k] = True
            else:
                self._timers[k] = 0.0
        return self.multiplier


def substation_shedding(settings: SubstationShedding | None, v: float, f_hz: float, dt: float) -> float:
    if settings is None:
        return 1.0
    return settings.update(v, f_hz, dt)


class CompositeLoad:
    """Container for the member loads of one composite load.

    Members are ordinary components on the load bus; the container applies
    the substation shedding multiplier uniformly and exposes bus channels.
    """

    def __init__(self, name: str, bus: int, low_side: int, load_bus: int,
                 members: list[LoadComponent], report: CmldInitReport,
                 shedding: SubstationShedding | None = None, system_frequency: float = 60.0,
                 v0: complex = 1.0):
        self.name = name
        self.bus = bus
        self.low_side = low_side
        self.load_bus = load_bus
        self.members = members
        self.report = report
        self.shedding = shedding
        self.system_frequency = system_frequency
        self.freq = FrequencyEstimator(v0, 2 * math.pi * system_frequency)
        self.shed = 1.0

    def supervise(self, vmap: dict[int, complex], dt: float) -> None:
        v = vmap[self.bus]
        df = self.freq.update(v, dt)
        self.shed = substation_shedding(self.shedding, abs(v), self.system_frequency * (1.0 + df), dt)
        for m in self.members:
            m.scale = self.shed

    def channels(self, vmap: dict[int, complex]) -> dict[str, float]:
        return {
            "V_ls": abs(vmap[self.low_side]),
            "V_lb": abs(vmap[self.load_bus]),
            "Tap": self.report.Tap,
            "shed": self.shed,
        }


def select_tap(v_lf: complex, i_lf: complex, p: CmldParams, xxf: float, bss: float,
               rfdr: float, xfdr: float) -> tuple[FeederSolution, float, float]:
    """Tap choice and feeder scaling; returns (solution, continuous tap, feeder scale).

    The continuous tap is rounded to the tap grid and clamped. If the load
    bus is still below 0.95 pu the tap is raised step by step while the
    low-side voltage stays within vmax; feeder impedance is reduced only
    after the tap is exhausted.
    """
    vmid = 0.5 * (p.vmin + p.vmax)
    tap_c = continuous_tap(v_lf, i_lf, xxf, vmid, p.tfixhs, p.tfixls)
    kmax = int(math.floor((p.tmax - p.tmin) / p.step + 1e-9))
    k = min(kmax, max(0, int(round((tap_c - p.tmin) / p.step))))

    def solve(kk, scale=1.0):
        return feeder_solution(v_lf, i_lf, p.tmin + kk * p.step, xxf, bss, scale * rfdr, scale * xfdr,
                               p.tfixhs, p.tfixls)

    sol = solve(k)
    while abs(sol.v_lb) < VLB_MIN and k < kmax:
        trial = solve(k + 1)
        if abs(trial.v_ls) > p.vmax:
            break
        k, sol = k + 1, trial
    scale = 1.0
    if abs(sol.v_lb) < VLB_MIN:
        if abs(solve(k, FEEDER_SCALE_FLOOR).v_lb) < VLB_MIN:
            raise CmldInitError(
                f"load-bus voltage cannot reach {VLB_MIN} pu even with feeder impedance "
                f"scaled to {FEEDER_SCALE_FLOOR}"
            )
        lo, hi = FEEDER_SCALE_FLOOR, 1.0
        while hi - lo > 1e-13:
            mid = 0.5 * (lo + hi)
            if abs(solve(k, mid).v_lb) >= VLB_MIN:
                lo = mid
            else:
                hi = mid
        scale = lo
        sol = solve(k, scale)
    if sol.s_lb.real <= 0:
        raise CmldInitError(f"feeder losses exceed the load (P at load bus {sol.s_lb.real:.4g} pu)")
    return sol, tap_c, scale


def grow_and_init(net: Network, bus_id: int, p: CmldParams, ids: tuple[int, int] | None = None,
                  sbase: float = 100.0, system_frequency: float = 60.0,
                  shedding: SubstationShedding | None = None) -> CompositeLoad:
    """Replace the power-flow load at ``bus_id`` by a grown composite load."""
    bus = net.bus(bus_id)
    p_lf, q_lf, v_lf = bus.p_load, bus.q_load, bus.v
    if not p_lf > 0:
        raise CmldInitError(f"bus {bus_id}: composite load needs positive P (got {p_lf})")
    base = p.mva_base(p_lf, sbase)
    xxf, rfdr, xfdr, bss = p.xxf / base, p.rfdr / base, p.xfdr / base, p.bss * base
    i_lf = complex(p_lf, -q_lf) / v_lf.conjugate()
    sol, tap_c, scale = select_tap(v_lf, i_lf, p, xxf, bss, rfdr, xfdr)

    if ids is None:
        ids = grow_network(net, {bus.partition_owner: [bus_id]})[bus_id]
    ls, lb = ids
    net.bus(ls).v = sol.v_ls
    net.bus(lb).v = sol.v_lb
    n_ratio = p.tfixls * sol.tap / p.tfixhs
    net.add_branch(Branch(ls, bus_id, r=0.0, x=xxf * p.tfixhs ** 2, tap=n_ratio))
    net.add_branch(Branch(ls, lb, r=scale * rfdr, x=scale * xfdr))
    if bss:
        net.add_shunt(ls, 1j * bss)
    bus.p_load = 0.0
    bus.q_load = 0.0

    ws = 2 * math.pi * system_frequency
    p_lb, q_lb = sol.s_lb.real, sol.s_lb.imag
    tag = f"clm{bus_id}"
    members: list[LoadComponent] = []
    motors = (("motorA", p.fma, p.mtya, p.motor_a), ("motorB", p.fmb, p.mtyb, p.motor_b),
              ("motorC", p.fmc, p.mtyc, p.motor_c))
    try:
        for label, frac, mty, prm in motors:
            if frac > 0:
                if mty != 3:
                    raise CmldInitError(f"{tag}.{label}: motor type {mty} not supported")
                members.append(Motor3(lb, sol.v_lb, frac * p_lb, prm, name=f"{tag}.{label}", ws=ws))
        if p.fmd > 0:
            if p.mtyd != 1:
                raise CmldInitError(f"{tag}.motorD: motor type {p.mtyd} not supported")
            members.append(AcMotor(lb, sol.v_lb, p.fmd * p_lb, p.motor_d, name=f"{tag}.motorD",
                                   omega_s=ws))
        if p.fel > 0:
            members.append(ElectronicLoad(lb, sol.v_lb, p.fel * p_lb, p.elec, name=f"{tag}.elec"))
        p_rest = p_lb - sum(_assigned_p(m) for m in members)
        if p.fstatic > 0 or abs(p_rest) > 1e-12 * abs(p_lb):
            members.append(StaticLoad(lb, sol.v_lb, p_rest, p.static, name=f"{tag}.static", omega_s=ws))
    except InitializationError as exc:
        if isinstance(exc, CmldInitError):
            raise
        raise CmldInitError(str(exc)) from exc

    assigned = {m.name.split(".", 1)[1]: (_assigned_p(m), _assigned_q(m)) for m in members}
    q_members = sum(q for _, q in assigned.values())
    bf2 = (q_members - q_lb) / abs(sol.v_lb) ** 2
    net.add_shunt(lb, 1j * bf2)

    report = CmldInitReport(
        bus=bus_id, low_side_bus=ls, load_bus=lb, Tap=sol.tap, tap_continuous=tap_c,
        Vls=sol.v_ls, Vlb=sol.v_lb, Bf1=0.0, Bf2=bf2, Plb=p_lb, Qlb=q_lb,
        feeder_impedance_scale=scale, mva_base=base, assigned=assigned,
    )
    clm = CompositeLoad(tag, bus_id, ls, lb, members, report, shedding, system_frequency, v_lf)
    report.residual = init_residual(net, clm, i_lf)
    return clm


def _assigned_p(m) -> float:
    return float(m.p0)


def _assigned_q(m) -> float:
    return float(m.q0)


def init_residual(net: Network, clm: CompositeLoad, i_lf: complex) -> float:
    """Largest current mismatch of the grown circuit at its initial point.

    Checks KCL at the low-side and load buses with member Nortons installed,
    and that the transformer draws the original load current from the
    transmission bus.
    """
    extra: dict[int, complex] = {}
    for m in clm.members:
        extra[m.bus] = extra.get(m.bus, 0j) + m.admittance()
    Y = assemble_ybus(net, extra)
    v = net.voltages()
    inj = np.zeros(net.n, dtype=complex)
    for m in clm.members:
        k = net.index[m.bus]
        inj[k] += m.current(m.x, v[k])
    r = Y @ v - inj
    worst = max(abs(r[net.index[clm.low_side]]), abs(r[net.index[clm.load_bus]]))
    br = next(b for b in net.branches if b.from_id == clm.low_side and b.to_id == clm.bus)
    y = br.y_series
    i_hs = y * v[net.index[clm.bus]] - y / br.tap * v[net.index[clm.low_side]]
    return float(max(worst, abs(i_hs - i_lf)))
