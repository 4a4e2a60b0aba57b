"""Acceptance criteria, one test per criterion, each recording a PASS/FAIL line."""

import dataclasses
import math
import time

import numpy as np
import pytest

from clmsim.cli import build_system, data_path, default_cmpldw, make_playin_component, playin_setup
from clmsim.cmld import grow_and_init
from clmsim.engine import SAG_PROFILE, PlayIn, SimConfig, modified_euler_step, run_simulation
from clmsim.io import format_cmpldw, parse_case, parse_cmpldw, parse_dyd
from clmsim.motor3ph import init_motor3, motor3_derivatives
from clmsim.motorac import AcMotorParams, ParameterError, vstallbrk_bracket
from clmsim.network import Branch, Bus, Fault, GhostBusError, Network, grow_network, partition_views, solve_power_flow
from clmsim.staticload import ci_power, cp_power

OMEGA = 2 * math.pi * 60.0


def playin_run(kind, overrides, t_end, dt=0.005, profile=SAG_PROFILE):
    case = parse_case(data_path("two_bus.case").read_text())
    prm = default_cmpldw()
    prof = PlayIn(profile)

    def make(v):
        return make_playin_component(kind, prm, overrides, 2, v, 1.0, OMEGA)

    net, comp, src = playin_setup(case, make, prof(0.0))
    ts = run_simulation(net, [comp], cfg=SimConfig(t_end=t_end, time_step=dt), playin={src: prof})
    return ts, comp


def test_static_load_analytic_exactness(verdict):
    t0 = time.perf_counter()
    flat = [("pfrq", 0.0), ("qfrq", 0.0)]
    cp_ts, _ = playin_run("static", flat + [("p1c", 0.0), ("q1c", 0.0)], 2.0)
    ci_ts, _ = playin_run("static", flat + [("p1c", 0.0), ("q1c", 0.0), ("p2c", 1.0), ("q2c", 1.0)], 2.0)
    errs = []
    for ts, law in ((cp_ts, cp_power), (ci_ts, ci_power)):
        v, p, q = ts["V2"], ts["static.P_static"], ts["static.Q_static"]
        s0 = complex(p[0], q[0]) / law(v[0], 1.0)
        expect = np.array([law(x, s0) for x in v])
        errs.append(max(np.max(np.abs(p - expect.real)), np.max(np.abs(q - expect.imag))))
        assert v.min() < 0.7
    h, jumps = 1e-8, []
    for law in (cp_power, ci_power):
        f = lambda x: law(x, 1.0).real  # noqa: E731
        jumps.append(abs((f(0.7 + h) - f(0.7)) / h - (f(0.7) - f(0.7 - h)) / h))
    dt = time.perf_counter() - t0
    ok = max(errs) < 1e-12 and max(jumps) < 1e-6 and dt < 1.0
    assert verdict(1, "static load closed forms", ok,
                   f"max trace error {max(errs):.1e}, slope jump {max(jumps):.1e}, {dt:.2f} s")


def test_vstallbrk_bracket_width(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    widths = [np.subtract(*vstallbrk_bracket(default_cmpldw().motor_d)[::-1])]
    tried = 0
    while len(widths) < 101:
        tried += 1
        vbrk = rng.uniform(0.75, 0.95)
        try:
            p = AcMotorParams(Rstall=rng.uniform(0.05, 0.5), Xstall=rng.uniform(0.05, 0.3),
                              Kp2=rng.uniform(2.0, 20.0), Np2=rng.uniform(1.5, 4.0), Vbrk=vbrk,
                              Vstall=min(0.6, vbrk - 0.05))
            lo, hi = vstallbrk_bracket(p)
        except ParameterError:
            continue
        widths.append(hi - lo)
    dt = time.perf_counter() - t0
    ok = max(widths) < 1e-4 and dt < 1.0
    assert verdict(2, "Vstallbrk bracket width", ok,
                   f"worst {max(widths):.3e} pu over {len(widths)} sets ({tried} drawn), {dt:.2f} s")


def test_flat_start(verdict):
    t0 = time.perf_counter()
    drifts = {}
    for case_file, dyd_file in (("two_bus.case", "two_bus_clm.dyd"), ("four_bus.case", "four_bus_clm.dyd")):
        case = parse_case(data_path(case_file).read_text())
        net, clms, gens = build_system(case, parse_dyd(data_path(dyd_file).read_text()))
        ts = run_simulation(net, [*gens, *clms], cfg=SimConfig(t_end=20.0))
        drifts[case_file] = max(float(np.max(np.abs(ts[n] - ts[n][0]))) for n in ts.names)
    dt = time.perf_counter() - t0
    worst = max(drifts.values())
    ok = worst < 1e-6 and dt < 10.0
    assert verdict(3, "flat start", ok, f"max drift {worst:.1e} over {len(drifts)} cases, {dt:.2f} s")


def test_init_power_flow_equivalence(verdict):
    t0 = time.perf_counter()
    p = default_cmpldw()
    net = Network([Bus(1, v=1.0 + 0j), Bus(2, p_load=1.0, q_load=0.3)], [Branch(1, 2, 0.001, 0.01)])
    solve_power_flow(net, 1)
    r = grow_and_init(net, 2, p).report
    k = (r.Tap - p.tmin) / p.step
    sens = p.step * abs(r.Vls) / r.Tap
    checks = {
        "residual": r.residual < 1e-6,
        "Bf1": r.Bf1 == 0.0,
        "tap grid": abs(k - round(k)) < 1e-9 and p.tmin - 1e-12 <= r.Tap <= p.tmax + 1e-12,
        "Vls": abs(abs(r.Vls) - 0.5 * (p.vmin + p.vmax)) <= sens + 1e-12,
        "Vlb": abs(r.Vlb) >= 0.95,
    }
    low = Network([Bus(1, v=1.0 + 0j), Bus(2, p_load=1.2, q_load=0.55)], [Branch(1, 2, 0.0, 0.13)])
    solve_power_flow(low, 1)
    rl = grow_and_init(low, 2, p).report
    checks["low-voltage ordering"] = (
        rl.feeder_impedance_scale < 1.0 and abs(rl.Vlb) >= 0.95 - 1e-12 and rl.residual < 1e-6
        and (rl.Tap == pytest.approx(p.tmax) or abs(rl.Vls) * (rl.Tap + p.step) / rl.Tap > p.vmax)
    )
    dt = time.perf_counter() - t0
    ok = all(checks.values()) and dt < 1.0
    failed = [k for k, v in checks.items() if not v]
    assert verdict(4, "init power-flow equivalence", ok,
                   f"residual {max(r.residual, rl.residual):.1e}, Tap {r.Tap:.5f}, |Vls| {abs(r.Vls):.4f}, "
                   f"|Vlb| {abs(r.Vlb):.4f}, low case Tap {rl.Tap:.5f} scale {rl.feeder_impedance_scale:.3f}, "
                   f"{dt:.2f} s" + (f", failed: {failed}" if failed else ""))


def test_ac_stall_scenario(verdict):
    t0 = time.perf_counter()
    ts, motor = playin_run("motorac", [("Frst", 0.0)], 40.0)
    dt = time.perf_counter() - t0
    t, vf, v = ts.t, ts["motorac.Vf"], ts["V2"]
    k = int(np.argmax(vf < motor.params.Vstall))
    t_cross = t[k - 1] + (motor.params.Vstall - vf[k - 1]) / (vf[k] - vf[k - 1]) * (t[k] - t[k - 1])
    t_raw = t[int(np.argmax(v < motor.params.Vstall))]
    delays = []
    for ch in ("motorac.stallA", "motorac.stallB"):
        delays.append(t[int(np.argmax(ts[ch] > 0))] - t_cross)
    p = ts["motorac.P"]
    k_rec = int(np.argmax((t > 1.2) & (ts["V1"] >= 1.0)))
    ratio = p[k_rec] / p[0]
    stalled = ts["motorac.stallA"] > 0
    temp, fth = ts["motorac.TempA"], ts["motorac.FthA"]
    both = stalled[1:] & stalled[:-1]
    temp_up = bool(np.all(np.diff(temp)[both] > 0))
    fth_ok = bool(np.all(np.diff(fth) <= 0) and np.all(fth[temp > motor.params.Th1t] < 1.0))
    ok = (all(0 <= d <= motor.params.Tstall for d in delays) and ratio > 2.0 and temp_up and fth_ok
          and dt < 5.0)
    assert verdict(5, "A/C stall scenario", ok,
                   f"stall {max(delays):.4f} s after filtered-V crossing ({t_cross:.4f} s; "
                   f"raw V crossed at {t_raw:.3f} s), P ratio {ratio:.2f}, TempA rising {temp_up}, "
                   f"FthA ok {fth_ok}, {dt:.2f} s")


def test_motor_init_residual(verdict):
    p = default_cmpldw()
    worst = 0.0
    for row in (p.motor_a, p.motor_b, p.motor_c):
        st = init_motor3(1.0 + 0j, row.LF, row)
        worst = max(worst, float(np.max(np.abs(motor3_derivatives(st.x, 1.0 + 0j, row, st.tl0)))))
    assert verdict(6, "motor init residual", worst < 1e-8, f"max derivative {worst:.1e}")


def test_integrator_order(verdict):
    def err(h):
        x = np.array([1.0])
        for _ in range(int(round(1.0 / h))):
            x = modified_euler_step(x, lambda y: -y, h)
        return abs(x[0] - math.exp(-1.0))

    ratio = err(0.01) / err(0.005)
    assert verdict(7, "integrator order", 3.5 <= ratio <= 4.5, f"halving ratio {ratio:.4f}")


def test_growth_determinism(verdict):
    parents = [1, 3, 5, 6, 8, 10]
    results = []
    for n_parts in (1, 2, 3):
        net = Network([Bus(i, partition_owner=(i - 1) * n_parts // 10) for i in range(1, 11)],
                      [Branch(i, i + 1, 0, 0.1) for i in range(1, 10)])
        req = {}
        for b in parents:
            req.setdefault(net.bus(b).partition_owner, []).append(b)
        out = grow_network(net, req)
        results.append(sorted(i for pair in out.values() for i in pair))
    net = Network([Bus(i, partition_owner=(i - 1) * 2 // 10) for i in range(1, 11)],
                  [Branch(i, i + 1, 0, 0.1) for i in range(1, 10)])
    ghost = next(iter(partition_views(net)[0].ghosts))
    try:
        grow_network(net, {0: [ghost]})
        ghost_rejected = False
    except GhostBusError:
        ghost_rejected = True
    ok = all(r == list(range(11, 23)) for r in results) and ghost_rejected
    assert verdict(8, "growth determinism", ok,
                   f"ids {results[0][0]}..{results[0][-1]} under 1/2/3 partitions, ghost rejected {ghost_rejected}")


def test_parser_golden(verdict):
    text = data_path("reference_cmpldw.dyd").read_text()
    p = parse_cmpldw(text)
    golden = {"fma": 0.5, "fmd": 0.30, "fel": 0.0, "bss": 0.04, "vmin": 1.00, "vmax": 1.04}
    got = {k: getattr(p, k) for k in golden}
    got["Vstall"], got["Tstall"] = p.motor_d.Vstall, p.motor_d.Tstall
    golden.update(Vstall=0.6, Tstall=0.033)
    again = parse_cmpldw(format_cmpldw(p))
    ok = got == golden and again == p and format_cmpldw(again) == format_cmpldw(p)
    assert verdict(9, "parser golden values", ok, f"{len(golden)} fields exact, round trip stable {again == p}")


def recovery_time(fmd):
    case = parse_case(data_path("four_bus.case").read_text())
    prm = parse_dyd(data_path("four_bus_clm.dyd").read_text())
    prm = {b: dataclasses.replace(x, fmd=fmd) for b, x in prm.items()}
    net, clms, gens = build_system(case, prm)
    fault = Fault(4, 1.0, 1.08, y=1.0 / 0.08j)
    ts = run_simulation(net, [*gens, *clms], events=[fault], cfg=SimConfig(t_end=10.0, time_step=0.001),
                        channels=["clm4.V_lb"])
    t, v = ts.t, ts["clm4.V_lb"]
    after = (t >= fault.t_off) & (v >= 0.9)
    return float(t[np.argmax(after)] - fault.t_off) if after.any() else math.inf


def test_fidvr_signature(verdict):
    t0 = time.perf_counter()
    with_ac = recovery_time(0.30)
    without = recovery_time(0.0)
    dt = time.perf_counter() - t0
    margin = with_ac - without
    ok = margin > 0 and dt < 10.0
    assert verdict(10, "delayed voltage recovery", ok,
                   f"time to 0.9 pu: {with_ac:.3f} s with motor D, {without:.3f} s without, {dt:.2f} s")
