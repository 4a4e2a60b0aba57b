import io
import warnings

import pytest
from hypothesis import given, strategies as st

from clmsim.cli import data_path
from clmsim.engine import TimeSeries
from clmsim.io import (
    CaseError,
    DydParseError,
    DydWarning,
    format_case,
    format_cmpldw,
    parse_case,
    parse_cmpldw,
    parse_dyd,
    write_csv,
    write_report,
)

REFERENCE = data_path("reference_cmpldw.dyd").read_text()


def test_reference_record_golden_values():
    with warnings.catch_warnings():
        warnings.simplefilter("error", DydWarning)
        p = parse_cmpldw(REFERENCE)
    assert p.bus == 90 and p.base_kv == 115.0 and p.mva == -0.8
    assert (p.fma, p.fmb, p.fmc, p.fmd, p.fel) == (0.5, 0.0, 0.0, 0.30, 0.0)
    assert (p.bss, p.vmin, p.vmax) == (0.04, 1.00, 1.04)
    assert p.motor_d.Vstall == 0.6 and p.motor_d.Tstall == 0.033
    assert p.motor_a.Lpp == 0.1539 and p.motor_a.Tpo == 1.634
    assert p.motor_b.protection[1].vtr == 0.60 and p.motor_b.protection[1].ttr == 0.16
    assert p.extras == {}


def test_missing_key_warns_and_defaults():
    text = REFERENCE.replace('"fma" 0.5 ', "")
    with pytest.warns(DydWarning, match="fma"):
        p = parse_cmpldw(text)
    assert p.fma == 0.0


def test_unknown_key_kept_in_extras():
    text = REFERENCE.replace('"bss" 0.04', '"bss" 0.04 "zzz" 7')
    with pytest.warns(DydWarning, match="zzz"):
        assert parse_cmpldw(text).extras == {"zzz": 7.0}


def test_round_trip_is_exact():
    p = parse_cmpldw(REFERENCE)
    q = parse_cmpldw(format_cmpldw(p))
    assert q == p
    assert format_cmpldw(q) == format_cmpldw(p)


def test_bytes_input():
    assert parse_cmpldw(REFERENCE.encode()) == parse_cmpldw(REFERENCE)


@pytest.mark.parametrize(
    "mutate, message, line",
    [
        (lambda s: s.replace('"bss" 0.04', '"bss 0.04'), "unterminated", 1),
        (lambda s: s.replace('"fb" 0.00000', '"fb"'), "missing value", 2),
        (lambda s: s.rstrip() + " /\n", "dangling", 30),
        (lambda s: s.replace('"xxf" 0.0600', '"xxf" 0.0600 "xxf" 0.07'), "duplicate", 3),
        (lambda s: s.replace('"rfdr" 0.0400', '"rfdr" 0.04x00'), "unexpected", 2),
    ],
)
def test_malformed_records_report_position(mutate, message, line):
    with pytest.raises(DydParseError, match=message) as err:
        parse_cmpldw(mutate(REFERENCE))
    assert err.value.line == line
    assert err.value.col >= 1


def test_record_keys_are_group_scoped():
    # "Rs" appears under both LFma and LFmb; that is not a duplicate
    p = parse_cmpldw(REFERENCE)
    assert p.motor_a.rs == 0.01 and p.motor_b.rs == 0.02


@pytest.mark.filterwarnings("ignore::clmsim.io.DydWarning")
@given(st.text(max_size=200))
def test_parser_is_total_on_text(s):
    try:
        parse_cmpldw(s)
    except DydParseError:
        pass


@pytest.mark.filterwarnings("ignore::clmsim.io.DydWarning")
@given(st.binary(max_size=200))
def test_parser_is_total_on_bytes(b):
    try:
        parse_cmpldw(b)
    except DydParseError:
        pass


@pytest.mark.filterwarnings("ignore::clmsim.io.DydWarning")
@given(st.integers(0, len(REFERENCE) - 1), st.integers(0, len(REFERENCE) - 1))
def test_parser_is_total_on_truncations(i, j):
    try:
        parse_cmpldw(REFERENCE[min(i, j):max(i, j)])
    except DydParseError:
        pass


def test_parse_dyd_collects_records_and_skips_other_models():
    other = 'genrou 1 "G1" 13.8 "1 " : #9 mva=100 "tpdo" 7.0\n'
    text = "# comment line\n" + other + REFERENCE + REFERENCE.replace("cmpldw 90", "cmpldw 91")
    with pytest.warns(DydWarning, match="genrou"):
        recs = parse_dyd(text)
    assert sorted(recs) == [90, 91]
    with pytest.raises(DydParseError, match="second"):
        parse_dyd(REFERENCE + REFERENCE)


def test_shipped_case_parses(two_bus_text, four_bus_text):
    case = parse_case(two_bus_text)
    assert case.slack == 1 and len(case.gens) == 1
    case4 = parse_case(four_bus_text)
    assert len(case4.net.buses) == 4 and len(case4.net.branches) == 3
    again = parse_case(format_case(case4.net, case4.gens, case4.slack, pv=[2]))
    for a, b in zip(again.net.buses, case4.net.buses):
        assert a.v == pytest.approx(b.v, abs=1e-12)


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "no buses"),
        ("[BUS]\n# nothing\n", "no buses"),
        ("[LINES]\n1 2 0 0.1 0\n", "unknown section"),
        ("[BUS]\n1 115 1.0 0.0 0 0\n", "fields"),
        ("1 115 1.0 0.0 0 0 0\n", "before the first section"),
        ("[BUS]\n1 115 1.0 0.0 0 0 0 swing\n", "bus type"),
        ("[BUS]\n1 115 1.0 abc 0 0 0\n", "bad number"),
    ],
)
def test_bad_cases_rejected(text, message):
    with pytest.raises(CaseError, match=message):
        parse_case(text)


def test_unsolved_case_rejected(two_bus_text):
    text = two_bus_text.replace("0.9959362478388065", "1.0")
    with pytest.raises(CaseError, match="mismatch"):
        parse_case(text)


def test_csv_rows():
    ts = TimeSeries(["V"])
    for k in range(4):
        ts.append(0.005 * k, [1.0])
    buf = io.StringIO()
    write_csv(ts, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0].split(",") == ["t", "V"]
    assert len(lines) == 5


def test_report_format_rejected():
    with pytest.raises(ValueError):
        write_report([], fmt="xml")
