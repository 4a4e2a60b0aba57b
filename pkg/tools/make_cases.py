"""Regenerate the shipped case files from their specifications via Newton power flow."""

from pathlib import Path

from clmsim.io import GenRecord, format_case, parse_cmpldw
from clmsim.network import Branch, Bus, Network, solve_power_flow

DATA = Path(__file__).resolve().parents[1] / "src" / "clmsim" / "data"


def two_bus():
    net = Network(
        [Bus(1, 115.0, 1.0 + 0j), Bus(2, 115.0, p_load=1.0, q_load=0.3)],
        [Branch(1, 2, r=0.001, x=0.01)],
    )
    solve_power_flow(net, slack=1)
    return format_case(net, [GenRecord(1, H=5.0, xd_p=0.2)], slack=1)


def four_bus():
    net = Network(
        [
            Bus(1, 230.0, 1.03 + 0j),
            Bus(2, 230.0, 1.02 + 0j, p_gen=1.5),
            Bus(3, 115.0, p_load=1.0, q_load=0.2),
            Bus(4, 115.0, p_load=1.0, q_load=0.3),
        ],
        [
            Branch(1, 3, r=0.005, x=0.05, b=0.02),
            Branch(2, 3, r=0.005, x=0.05, b=0.02),
            Branch(3, 4, r=0.002, x=0.02),
        ],
    )
    solve_power_flow(net, slack=1, pv=[2])
    gens = [GenRecord(1, H=5.0, xd_p=0.1, D=2.0), GenRecord(2, H=5.0, xd_p=0.1, D=2.0)]
    return format_case(net, gens, slack=1, pv=[2])


def clm_record(bus: int) -> str:
    text = (DATA / "reference_cmpldw.dyd").read_text()
    head, rest = text.split("\n", 1)
    head = head.replace('cmpldw 90 "90 115.00"', f'cmpldw {bus} "{bus} 115.00"', 1)
    out = head + "\n" + rest
    parse_cmpldw(out)
    return out


if __name__ == "__main__":
    (DATA / "two_bus.case").write_text("# two-bus play-in system: source bus 1, load bus 2\n" + two_bus())
    (DATA / "two_bus_clm.dyd").write_text(clm_record(2))
    (DATA / "four_bus.case").write_text("# four-bus two-machine system, composite load at bus 4\n" + four_bus())
    (DATA / "four_bus_clm.dyd").write_text(clm_record(4))
