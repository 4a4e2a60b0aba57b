"""Command-line scenario runner.

    clmsim playin --component motorac --tend 40 --out motor_d.csv
    clmsim run --case four_bus.case --dyd four_bus_clm.dyd --fault 4:1.0:0.08:0.08 --dt 0.001
    clmsim init-report --case four_bus.case --dyd four_bus_clm.dyd --format json

Exit codes: 0 success, 2 usage, 3 input parse failure, 4 initialization
failure, 5 network non-convergence, 6 integration failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cmld import CmldInitError, CmldParams, CompositeLoad, grow_and_init
from .engine import SAG_PROFILE, IntegrationError, PlayIn, SimConfig, TimeSeries, run_simulation
from .io import Case, CaseError, DydParseError, parse_case, parse_cmpldw, parse_dyd, write_report
from .motor3ph import InitializationError, Motor3
from .motorac import AcMotor, ParameterError
from .network import ClassicalGen, Fault, Network, NetworkDivergedError, assemble_ybus, grow_network
from .staticload import StaticLoad

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INIT = 4
EXIT_CONVERGENCE = 5
EXIT_INTEGRATION = 6

INIT_RESIDUAL_TOL = 1e-6
COMPONENTS = ("motor3", "motorac", "static")


class InitResidualError(InitializationError):
    pass


def data_path(name: str) -> Path:
    return Path(str(resources.files("clmsim") / "data" / name))


def default_cmpldw() -> CmldParams:
    return parse_cmpldw(data_path("reference_cmpldw.dyd").read_text())


# -- argument helpers --------------------------------------------------------


def parse_knots(items: Sequence[str]) -> PlayIn:
    knots = []
    for item in items:
        for part in item.replace(",", " ").split():
            try:
                t, v = part.split(":")
                knots.append((float(t), float(v)))
            except ValueError:
                raise argparse.ArgumentTypeError(f"play-in knot {part!r} is not T:V") from None
    try:
        return PlayIn(knots)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def parse_fault(text: str) -> Fault:
    """BUS:T_ON:DUR with an optional fourth field XF, the fault reactance in pu."""
    parts = text.split(":")
    try:
        if len(parts) not in (3, 4):
            raise ValueError
        bus, t_on, dur = int(parts[0]), float(parts[1]), float(parts[2])
        xf = float(parts[3]) if len(parts) == 4 else None
    except ValueError:
        raise argparse.ArgumentTypeError(f"fault {text!r} is not BUS:T_ON:DUR[:XF]") from None
    if not dur > 0:
        raise argparse.ArgumentTypeError("fault duration must be positive")
    if xf is None:
        return Fault(bus, t_on, t_on + dur)
    if not xf > 0:
        raise argparse.ArgumentTypeError("fault reactance must be positive")
    return Fault(bus, t_on, t_on + dur, y=1.0 / complex(0.0, xf))


def parse_override(text: str) -> tuple[str, float]:
    try:
        k, v = text.split("=")
        return k.strip(), float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter override {text!r} is not KEY=VALUE") from None


def _apply_overrides(obj, overrides: Sequence[tuple[str, float]]):
    if not overrides:
        return obj
    names = {f.name for f in dataclasses.fields(obj)}
    bad = [k for k, _ in overrides if k not in names]
    if bad:
        raise ParameterError(f"unknown parameter(s) for {type(obj).__name__}: {', '.join(bad)}")
    return dataclasses.replace(obj, **dict(overrides))


# -- play-in -----------------------------------------------------------------


def make_playin_component(kind: str, params: CmldParams, overrides, bus: int, v: complex,
                          p: float, omega_s: float):
    if kind == "motor3":
        return Motor3(bus, v, p, _apply_overrides(params.motor_a, overrides), name="motor3", ws=omega_s)
    if kind == "motorac":
        return AcMotor(bus, v, p, _apply_overrides(params.motor_d, overrides), name="motorac",
                       omega_s=omega_s)
    if kind == "static":
        return StaticLoad(bus, v, p, _apply_overrides(params.static, overrides), name="static",
                          omega_s=omega_s)
    raise ValueError(f"unknown component {kind!r}")


def playin_setup(case: Case, make: Callable[[complex], object], v_source: float,
                 tol: float = 1e-13, max_iter: int = 100):
    """Two-bus play-in arrangement: pinned source at the slack bus, component at the load bus.

    The component is sized to the load-bus active power. Its reactive power
    follows from its own model, so the load-bus voltage is found as a fixed
    point: initialize at V2, solve the line for the drawn power, repeat.
    """
    net = case.net
    if case.slack is None or net.n != 2:
        raise CaseError("play-in needs a two-bus case with a slack source bus")
    src = case.slack
    load = next(b.id for b in net.buses if b.id != src)
    p_load = net.bus(load).p_load
    net.bus(src).v = complex(v_source, 0.0)
    Y = assemble_ybus(net)
    ks, kl = net.index[src], net.index[load]
    v2 = net.bus(load).v
    comp = None
    for _ in range(max_iter):
        comp = make(v2)
        s = complex(comp.p0, comp.q0)
        w = v2
        for _ in range(200):
            w_new = (-(s / w).conjugate() - Y[kl, ks] * net.bus(src).v) / Y[kl, kl]
            if abs(w_new - w) < tol * 1e-2:
                w = w_new
                break
            w = w_new
        if abs(w - v2) < tol:
            v2 = w
            comp = make(v2)
            break
        v2 = w
    else:
        raise InitializationError("play-in load-bus voltage fixed point did not converge")
    net.bus(load).v = v2
    net.bus(load).p_load = net.bus(load).q_load = 0.0
    return net, comp, src


def network_residual(net: Network, components: Sequence, pinned: Sequence[int] = ()) -> float:
    """Largest KCL mismatch over unpinned buses with every Norton pair installed."""
    flat = []
    for c in components:
        flat.extend(getattr(c, "members", None) or [c])
    extra: dict[int, complex] = {}
    for c in flat:
        extra[c.bus] = extra.get(c.bus, 0j) + c.admittance()
    Y = assemble_ybus(net, extra)
    v = net.voltages()
    inj = np.zeros(net.n, dtype=complex)
    for c in flat:
        k = net.index[c.bus]
        inj[k] += c.current(c.x, v[k])
    r = np.abs(Y @ v - inj)
    for b in pinned:
        r[net.index[b]] = 0.0
    return float(r.max(initial=0.0))


# -- system runs ---------------------------------------------------------------


def build_system(case: Case, clm_params: dict[int, CmldParams], system_frequency: float = 60.0):
    """Grow composite loads, convert remaining loads to admittances and attach generators."""
    net = case.net
    for bus in clm_params:
        if bus not in net.index:
            raise CmldInitError(f"composite load record for unknown bus {bus}")
    requests: dict[int, list[int]] = {}
    for bus in sorted(clm_params):
        requests.setdefault(net.bus(bus).partition_owner, []).append(bus)
    ids = grow_network(net, requests) if requests else {}
    clms: list[CompositeLoad] = []
    for bus in sorted(clm_params):
        clms.append(grow_and_init(net, bus, clm_params[bus], ids=ids[bus], system_frequency=system_frequency))
    for b in net.buses:
        if b.p_load or b.q_load:
            net.add_shunt(b.id, complex(b.p_load, -b.q_load) / abs(b.v) ** 2)
            b.p_load = b.q_load = 0.0
    gens = []
    ws = 2 * np.pi * system_frequency
    for g in case.gens:
        cg = ClassicalGen(g.bus, g.H, g.xd_p, g.D, omega_s=ws)
        cg.init(net.bus(g.bus).v, case.gen_power(g.bus))
        gens.append(cg)
    return net, clms, gens


def _config(args) -> SimConfig:
    return SimConfig(t_end=args.tend, time_step=args.dt, system_frequency=args.freq,
                     network_tol=args.tol, network_max_iter=args.max_iter)


def _emit_csv(ts: TimeSeries, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            ts.to_csv(fh)
    else:
        ts.to_csv(sys.stdout)


def _load_case(path: str) -> Case:
    return parse_case(Path(path).read_text())


def _load_dyd(path: str | None) -> dict[int, CmldParams]:
    if path is None:
        return {}
    return parse_dyd(Path(path).read_text())


def cmd_playin(args) -> int:
    cfg = _config(args)
    profile = args.playin or PlayIn(SAG_PROFILE)
    if args.dyd:
        recs = _load_dyd(args.dyd)
        if len(recs) != 1:
            raise DydParseError(f"play-in needs exactly one cmpldw record, found {len(recs)}", 1, 1)
        params = next(iter(recs.values()))
    else:
        params = default_cmpldw()
    case = _load_case(args.case or data_path("two_bus.case"))
    overrides = args.param or []

    def make(v):
        return make_playin_component(args.component, params, overrides, load_bus, v, p_load, cfg.omega_s)

    load_bus = next(b.id for b in case.net.buses if b.id != case.slack)
    p_load = case.net.bus(load_bus).p_load
    net, comp, src = playin_setup(case, make, profile(0.0))
    res = network_residual(net, [comp], pinned=[src])
    if res > INIT_RESIDUAL_TOL:
        raise InitResidualError(f"play-in init residual {res:.3e} exceeds {INIT_RESIDUAL_TOL}")
    ts = run_simulation(net, [comp], cfg=cfg, playin={src: profile}, channels=args.channels)
    _emit_csv(ts, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    case = _load_case(args.case)
    net, clms, gens = build_system(case, _load_dyd(args.dyd), cfg.system_frequency)
    res = network_residual(net, [*clms, *gens])
    worst = max([res] + [c.report.residual for c in clms])
    if args.report:
        Path(args.report).write_text(write_report([c.report for c in clms], "json"))
    if worst > INIT_RESIDUAL_TOL:
        sys.stderr.write(write_report([c.report for c in clms]))
        raise InitResidualError(f"initial network residual {worst:.3e} exceeds {INIT_RESIDUAL_TOL}")
    ts = run_simulation(net, [*gens, *clms], events=args.fault or [], cfg=cfg, channels=args.channels)
    _emit_csv(ts, args.out)
    return EXIT_OK


def cmd_init_report(args) -> int:
    case = _load_case(args.case)
    _, clms, _ = build_system(case, _load_dyd(args.dyd), args.freq)
    text = write_report([c.report for c in clms], args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    bad = [c for c in clms if c.report.residual > INIT_RESIDUAL_TOL]
    if bad:
        raise InitResidualError(f"init residual above {INIT_RESIDUAL_TOL} at bus(es) "
                                f"{', '.join(str(c.bus) for c in bad)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clmsim", description="Composite load model simulations.")
    sub = ap.add_subparsers(dest="command", required=True)

    def sim_flags(p):
        p.add_argument("--tend", type=float, default=20.0, help="simulation horizon in seconds")
        p.add_argument("--dt", type=float, default=0.005, help="time step in seconds")
        p.add_argument("--freq", type=float, default=60.0, help="system frequency in Hz")
        p.add_argument("--tol", type=float, default=1e-6, help="network iteration tolerance")
        p.add_argument("--max-iter", type=int, default=50, help="network iteration limit")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--channels", nargs="+", metavar="PATTERN",
                       help="channel name patterns to keep (shell-style wildcards)")

    p = sub.add_parser("playin", help="drive one load component from a play-in voltage")
    p.add_argument("--component", choices=COMPONENTS, required=True)
    p.add_argument("--case", help="two-bus case (default: the shipped two-bus case)")
    p.add_argument("--dyd", help="cmpldw record supplying component parameters")
    p.add_argument("--playin", nargs="+", metavar="T:V", type=lambda s: s,
                   help="play-in knots (default: 1.0 pu with a 0.5 pu sag at 1.1-1.2 s)")
    p.add_argument("--param", action="append", type=parse_override, metavar="KEY=VALUE",
                   help="override a component parameter")
    sim_flags(p)
    p.set_defaults(func=cmd_playin)

    p = sub.add_parser("run", help="system simulation with composite loads")
    p.add_argument("--case", required=True)
    p.add_argument("--dyd")
    p.add_argument("--fault", action="append", type=parse_fault, metavar="BUS:T_ON:DUR[:XF]")
    p.add_argument("--report", help="write the initialization report (JSON) here")
    sim_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("init-report", help="grow and initialize composite loads, print reports")
    p.add_argument("--case", required=True)
    p.add_argument("--dyd", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--out")
    p.add_argument("--freq", type=float, default=60.0)
    p.set_defaults(func=cmd_init_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "playin", None):
        try:
            args.playin = parse_knots(args.playin)
        except argparse.ArgumentTypeError as exc:
            ap.error(str(exc))
    try:
        if hasattr(args, "tend"):
            _config(args)
    except ValueError as exc:
        ap.error(str(exc))
    try:
        return args.func(args)
    except (DydParseError, CaseError) as exc:
        sys.stderr.write(f"clmsim: parse error: {exc}\n")
        return EXIT_PARSE
    except ValueError as exc:
        sys.stderr.write(f"clmsim: initialization failed: {exc}\n")
        return EXIT_INIT
    except NetworkDivergedError as exc:
        sys.stderr.write(f"clmsim: network solution diverged: {exc}\n")
        return EXIT_CONVERGENCE
    except IntegrationError as exc:
        sys.stderr.write(f"clmsim: integration failed: {exc}\n")
        return EXIT_INTEGRATION
    except OSError as exc:
        sys.stderr.write(f"clmsim: {exc}\n")
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
