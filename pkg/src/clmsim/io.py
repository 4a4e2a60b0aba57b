"""Readers and writers: PSLF DYD ``cmpldw`` records, plain-text cases, CSV and reports.

``cmpldw`` record layout::

    cmpldw <bus> "<name>" <kV> "<ckt>" : #9 mva= <mva> "key" value ... /
    "key" value ...

Newlines are plain whitespace and a trailing ``/`` marks continuation. The
three-phase motor blocks repeat the same keys, so each block is opened by
its load-factor key (``LFma``, ``LFmb``, ``LFmc``, ``LFmd``) and keys that
follow belong to that block until the next leader.

Keys that are read and stored but have no dynamic effect: lrc, tdel, ttap,
rcmp, xcmp and fb.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .cmld import CmldInitReport, CmldParams
from .engine import TimeSeries
from .motor3ph import Motor3Params, ProtectionStage
from .motorac import AcMotorParams
from .network import Branch, Bus, Network, assemble_ybus
from .staticload import ElecLoadParams, StaticLoadParams


class DydParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {msg}")


class DydWarning(UserWarning):
    pass


class CaseError(ValueError):
    def __init__(self, msg: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


# -- tokenizer ---------------------------------------------------------------

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_]*=?")


@dataclass(frozen=True)
class _Tok:
    kind: str  # str | num | word | slash | colon | hash
    text: str
    line: int
    col: int
    line_start: bool


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, col, i = 1, 1, 0
    fresh = True
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col, i, fresh = line + 1, 1, i + 1, True
            continue
        if ch in " \t\r\f\v":
            i += 1
            col += 1
            continue
        start_line, start_col, first = line, col, fresh
        fresh = False
        if ch == '"':
            j = text.find('"', i + 1)
            nl = text.find("\n", i + 1)
            if j < 0 or (0 <= nl < j):
                raise DydParseError("unterminated quoted string", start_line, start_col)
            toks.append(_Tok("str", text[i + 1:j], start_line, start_col, first))
            col += j + 1 - i
            i = j + 1
            continue
        if ch == "/":
            toks.append(_Tok("slash", "/", start_line, start_col, first))
            i += 1
            col += 1
            continue
        if ch == ":":
            toks.append(_Tok("colon", ":", start_line, start_col, first))
            i += 1
            col += 1
            continue
        if ch == "#":
            j = i + 1
            while j < n and not text[j].isspace():
                j += 1
            toks.append(_Tok("hash", text[i:j], start_line, start_col, first))
            col += j - i
            i = j
            continue
        m = _NUMBER.match(text, i)
        if m and (m.end() == n or text[m.end()].isspace() or text[m.end()] in '/"'):
            toks.append(_Tok("num", m.group(), start_line, start_col, first))
            col += m.end() - i
            i = m.end()
            continue
        m = _WORD.match(text, i)
        if m:
            toks.append(_Tok("word", m.group(), start_line, start_col, first))
            col += m.end() - i
            i = m.end()
            continue
        raise DydParseError(f"unexpected character {ch!r}", start_line, start_col)
    return toks


# -- field maps ----------------------------------------------------------------

TOP_KEYS = {
    k: k for k in (
        "bss", "rfdr", "xfdr", "fb", "xxf", "tfixhs", "tfixls", "lrc", "tmin", "tmax", "step",
        "vmin", "vmax", "tdel", "ttap", "rcmp", "xcmp", "fma", "fmb", "fmc", "fmd", "fel",
        "mtya", "mtyb", "mtyc", "mtyd",
    )
}
STATIC_KEYS = ("pfs", "p1e", "p1c", "p2e", "p2c", "pfrq", "q1e", "q1c", "q2e", "q2c", "qfrq")
ELEC_KEYS = ("pfe", "vd1", "vd2", "frcel")
MOTOR3_KEYS = {"Rs": "rs", "Ls": "Ls", "Lp": "Lp", "Lpp": "Lpp", "Tp": "Tpo", "Tpo": "Tpo",
               "Tppo": "Tppo", "H": "H", "etrq": "etrq"}
STAGE_FIELDS = ("vtr", "ttr", "ftr", "vrc", "trc")
AC_ALIASES = {"Th1": "Tth"}
AC_RECORD_KEYS = ("CompPF", "Vstall", "Rstall", "Xstall", "Tstall", "Frst", "Vrst", "Trst", "fuvr",
                  "vtr1", "ttr1", "vtr2", "ttr2", "Vc1off", "Vc2off", "Vc1on", "Vc2on", "Th1",
                  "Th1t", "Th2t", "Tv")
AC_CURVE_KEYS = ("Vbrk", "Kp1", "Np1", "Kq1", "Nq1", "Kp2", "Np2", "Kq2", "Nq2", "CmpKpf", "CmpKqf")
LEADERS = {"LFma": "a", "LFmb": "b", "LFmc": "c", "LFmd": "d"}

_MOTOR3_RECORD_KEYS = ("Rs", "Ls", "Lp", "Lpp", "Tp", "Tppo", "H", "etrq") + tuple(
    f"{f}{k}" for k in (1, 2) for f in STAGE_FIELDS
)


def _motor3_canon(key: str) -> str | None:
    if key in MOTOR3_KEYS:
        return MOTOR3_KEYS[key]
    m = re.fullmatch(r"(vtr|ttr|ftr|vrc|trc)([12])", key)
    return key if m else None


def _ac_canon(key: str) -> str | None:
    key = AC_ALIASES.get(key, key)
    names = {f.name for f in dataclasses.fields(AcMotorParams)}
    return key if key in names and key != "LF" else None


# -- cmpldw ------------------------------------------------------------------


@dataclass
class DydRecord:
    model: str
    bus: int
    bus_name: str
    base_kv: float
    circuit: str
    mva: float | None
    pairs: list[tuple[str, float, int, int]] = field(default_factory=list)
    line: int = 1


def _read_record(toks: list[_Tok]) -> DydRecord:
    if not toks:
        raise DydParseError("empty record", 1, 1)
    pos = 0

    def take(kind: str, what: str) -> _Tok:
        nonlocal pos
        if pos >= len(toks):
            last = toks[-1]
            raise DydParseError(f"expected {what}, found end of record", last.line, last.col + len(last.text))
        t = toks[pos]
        if t.kind != kind:
            raise DydParseError(f"expected {what}, found {t.text!r}", t.line, t.col)
        pos += 1
        return t

    model = take("word", "model name")
    bus_tok = take("num", "bus number")
    try:
        bus = int(bus_tok.text)
    except ValueError:
        raise DydParseError("bus number must be an integer", bus_tok.line, bus_tok.col) from None
    name = take("str", "quoted bus name")
    kv = take("num", "base kV")
    ckt = take("str", "quoted circuit id")
    rec = DydRecord(model.text, bus, name.text, float(kv.text), ckt.text, None, line=model.line)
    if pos < len(toks) and toks[pos].kind == "colon":
        pos += 1
    while pos < len(toks) and toks[pos].kind == "hash":
        pos += 1
    if pos < len(toks) and toks[pos].kind == "word" and toks[pos].text in ("mva=", "mva"):
        t = toks[pos]
        pos += 1
        if t.text == "mva" and pos < len(toks) and toks[pos].kind == "word" and toks[pos].text == "=":
            pos += 1
        rec.mva = float(take("num", "value after mva=").text)

    while pos < len(toks):
        t = toks[pos]
        if t.kind == "slash":
            if pos == len(toks) - 1:
                raise DydParseError("dangling continuation '/' at end of record", t.line, t.col)
            pos += 1
            continue
        if t.kind != "str":
            raise DydParseError(f"expected quoted key, found {t.text!r}", t.line, t.col)
        pos += 1
        if pos >= len(toks) or toks[pos].kind != "num":
            where = toks[pos] if pos < len(toks) else t
            raise DydParseError(f"missing value after key {t.text!r}", where.line,
                                where.col if where is not t else t.col + len(t.text) + 2)
        rec.pairs.append((t.text, float(toks[pos].text), t.line, t.col))
        pos += 1
    return rec


def _build_params(rec: DydRecord) -> CmldParams:
    if rec.model.lower() != "cmpldw":
        raise DydParseError(f"unsupported model {rec.model!r}", rec.line, 1)
    top: dict[str, float] = {}
    groups: dict[str, dict[str, float]] = {"a": {}, "b": {}, "c": {}, "d": {}}
    lf: dict[str, float] = {}
    extras: dict[str, float] = {}
    current: str | None = None
    seen: set[tuple[str | None, str]] = set()

    for key, val, line, col in rec.pairs:
        if key in LEADERS:
            g = LEADERS[key]
            if g in lf:
                raise DydParseError(f"duplicate key {key!r}", line, col)
            lf[g] = val
            current = g
            continue
        if current is None or (key in TOP_KEYS or key in STATIC_KEYS or key in ELEC_KEYS):
            scope, canon = None, key
        elif current in "abc":
            scope, canon = current, _motor3_canon(key)
        else:
            scope, canon = current, _ac_canon(key)
        ident = (scope, canon if canon is not None else key)
        if ident in seen:
            raise DydParseError(f"duplicate key {key!r}", line, col)
        seen.add(ident)
        if scope is None:
            if key in TOP_KEYS or key in STATIC_KEYS or key in ELEC_KEYS:
                top[key] = val
            else:
                extras[key] = val
        elif canon is None:
            extras[f"LFm{scope}.{key}"] = val
        else:
            groups[scope][canon] = val

    missing: list[str] = []
    base = CmldParams()
    kw: dict = {k: top[k] for k in TOP_KEYS if k in top}
    missing += [k for k in TOP_KEYS if k not in top]
    kw["static"] = StaticLoadParams(**{k: top[k] for k in STATIC_KEYS if k in top})
    missing += [k for k in STATIC_KEYS if k not in top]
    kw["elec"] = ElecLoadParams(**{k: top[k] for k in ELEC_KEYS if k in top})
    missing += [k for k in ELEC_KEYS if k not in top]

    for g, attr in (("a", "motor_a"), ("b", "motor_b"), ("c", "motor_c")):
        vals = groups[g]
        default: Motor3Params = getattr(base, attr)
        if g not in lf:
            missing.append(f"LFm{g}")
        fields = {f: vals.get(f, getattr(default, f)) for f in ("rs", "Ls", "Lp", "Lpp", "Tpo", "Tppo", "H", "etrq")}
        missing += [f"LFm{g}.{k}" for k in ("Rs", "Ls", "Lp", "Lpp", "Tp", "Tppo", "H", "etrq")
                    if MOTOR3_KEYS[k] not in vals]
        stages = []
        for k in (1, 2):
            dst = default.protection[k - 1]
            stages.append(ProtectionStage(**{f: vals.get(f"{f}{k}", getattr(dst, f)) for f in STAGE_FIELDS}))
            missing += [f"LFm{g}.{f}{k}" for f in STAGE_FIELDS if f"{f}{k}" not in vals]
        kw[attr] = Motor3Params(LF=lf.get(g, default.LF), protection=stages, **fields)

    dvals = groups["d"]
    if "d" not in lf:
        missing.append("LFmd")
    missing += [f"LFmd.{k}" for k in AC_RECORD_KEYS if AC_ALIASES.get(k, k) not in dvals]
    kw["motor_d"] = AcMotorParams(LF=lf.get("d", base.motor_d.LF), **dvals)

    if rec.mva is None:
        missing.append("mva")
    else:
        kw["mva"] = rec.mva
    kw.update(bus=rec.bus, bus_name=rec.bus_name, base_kv=rec.base_kv, circuit=rec.circuit, extras=extras)
    if missing:
        warnings.warn(f"cmpldw bus {rec.bus}: missing keys set to defaults: {', '.join(missing)}",
                      DydWarning, stacklevel=3)
    if extras:
        warnings.warn(f"cmpldw bus {rec.bus}: unknown keys kept in extras: {', '.join(extras)}",
                      DydWarning, stacklevel=3)
    return CmldParams(**kw)


def parse_cmpldw(text: str | bytes) -> CmldParams:
    """Parse one complete ``cmpldw`` record.

    Raises DydParseError (with line and column) for anything malformed,
    including parameter values that violate model invariants.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DydParseError(f"not valid UTF-8 ({exc.reason})", 1, exc.start + 1) from None
    toks = _tokenize(text)
    rec = _read_record(toks)
    try:
        return _build_params(rec)
    except DydParseError:
        raise
    except (ValueError, TypeError) as exc:
        raise DydParseError(f"invalid parameters: {exc}", rec.line, 1) from None


def parse_dyd(text: str) -> dict[int, CmldParams]:
    """All ``cmpldw`` records of a DYD file keyed by bus; other models are skipped with a warning.

    A record starts with an unquoted model name at the beginning of a line.
    Lines starting with ``#`` are comments.
    """
    lines = [ln if not ln.lstrip().startswith("#") else "" for ln in text.split("\n")]
    toks = _tokenize("\n".join(lines))
    starts = [k for k, t in enumerate(toks) if t.kind == "word" and t.line_start and not t.text.endswith("=")]
    if toks and (not starts or starts[0] != 0):
        t = toks[0]
        raise DydParseError("expected model name", t.line, t.col)
    out: dict[int, CmldParams] = {}
    for a, b in zip(starts, starts[1:] + [len(toks)]):
        chunk = toks[a:b]
        if chunk[0].text.lower() != "cmpldw":
            warnings.warn(f"line {chunk[0].line}: model {chunk[0].text!r} not supported, skipped",
                          DydWarning, stacklevel=2)
            continue
        rec = _read_record(chunk)
        if rec.bus in out:
            raise DydParseError(f"second cmpldw record for bus {rec.bus}", rec.line, 1)
        try:
            out[rec.bus] = _build_params(rec)
        except DydParseError:
            raise
        except (ValueError, TypeError) as exc:
            raise DydParseError(f"invalid parameters: {exc}", rec.line, 1) from None
    return out


def _num(x: float) -> str:
    return repr(float(x))


def format_cmpldw(p: CmldParams) -> str:
    """Serialize to a ``cmpldw`` record that parses back to an equal CmldParams."""
    lines = [f'cmpldw {p.bus} "{p.bus_name}" {_num(p.base_kv)} "{p.circuit}" : #9 mva= {_num(p.mva)}']

    def block(pairs):
        return " ".join(f'"{k}" {_num(v)}' for k, v in pairs)

    lines.append(block((k, getattr(p, k)) for k in TOP_KEYS))
    lines.append(block((k, getattr(p.elec, k)) for k in ELEC_KEYS))
    lines.append(block((k, getattr(p.static, k)) for k in STATIC_KEYS))
    top_extras = {k: v for k, v in p.extras.items() if "." not in k}
    if top_extras:
        lines.append(block(top_extras.items()))
    for g, m in (("a", p.motor_a), ("b", p.motor_b), ("c", p.motor_c)):
        pairs = [(f"LFm{g}", m.LF)] + [(k, getattr(m, MOTOR3_KEYS[k])) for k in
                                       ("Rs", "Ls", "Lp", "Lpp", "Tp", "Tppo", "H", "etrq")]
        for k, st in enumerate(m.protection[:2], start=1):
            pairs += [(f"{f}{k}", getattr(st, f)) for f in STAGE_FIELDS]
        pairs += [(k.split(".", 1)[1], v) for k, v in p.extras.items() if k.startswith(f"LFm{g}.")]
        lines.append(block(pairs))
    d = p.motor_d
    pairs = [("LFmd", d.LF)] + [(k, getattr(d, AC_ALIASES.get(k, k))) for k in AC_RECORD_KEYS + AC_CURVE_KEYS]
    pairs += [(k.split(".", 1)[1], v) for k, v in p.extras.items() if k.startswith("LFmd.")]
    lines.append(block(pairs))
    return " /\n".join(lines) + "\n"


# -- case files --------------------------------------------------------------


@dataclass
class GenRecord:
    bus: int
    H: float
    xd_p: float
    D: float = 0.0


@dataclass
class Case:
    net: Network
    gens: list[GenRecord]
    slack: int | None
    q_gen: dict[int, float] = field(default_factory=dict)

    def gen_power(self, bus: int) -> complex:
        return complex(self.net.bus(bus).p_gen, self.q_gen.get(bus, 0.0))


_SECTIONS = {"BUS": (7, 8), "BRANCH": (5, 6), "GEN": (4, 4)}
BUS_TYPES = ("pq", "pv", "slack")


def parse_case(text: str, mismatch_tol: float = 1e-6) -> Case:
    """Parse a solved case.

    Sections ``[BUS]`` (id base_kv vm va_deg p_load q_load p_gen [pq|pv|slack]),
    ``[BRANCH]`` (from to r x b [tap]) and ``[GEN]`` (bus H xd_p D). Powers are
    per unit on the system base. Generator reactive output is recovered from
    the solved voltages; the active-power balance at every non-slack bus and
    the reactive balance at every bus without a generator must close within
    ``mismatch_tol``.
    """
    section = None
    buses: list[tuple[int, Bus, str]] = []
    branches: list[tuple[int, Branch]] = []
    gens: list[tuple[int, GenRecord]] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            m = re.fullmatch(r"\[(\w+)\]", line)
            if not m or m.group(1).upper() not in _SECTIONS:
                raise CaseError(f"unknown section {line}", ln)
            section = m.group(1).upper()
            continue
        if section is None:
            raise CaseError("data before the first section header", ln)
        parts = line.split()
        lo, hi = _SECTIONS[section]
        if not lo <= len(parts) <= hi:
            want = f"{lo}" if lo == hi else f"{lo} or {hi}"
            raise CaseError(f"{section} line has {len(parts)} fields, expected {want}", ln)
        kind = "pq"
        if section == "BUS" and len(parts) == 8:
            kind = parts.pop().lower()
            if kind not in BUS_TYPES:
                raise CaseError(f"bus type must be one of {BUS_TYPES}, got {kind!r}", ln)
        try:
            nums = [float(s) for s in parts]
        except ValueError as exc:
            raise CaseError(f"bad number ({exc})", ln) from None
        if not all(math.isfinite(x) for x in nums):
            raise CaseError("non-finite number", ln)
        try:
            if section == "BUS":
                bid, kv, vm, va, pl, ql, pg = nums
                v = vm * complex(math.cos(math.radians(va)), math.sin(math.radians(va)))
                buses.append((ln, Bus(_as_int(bid, ln), kv, v, pl, ql, pg), kind))
            elif section == "BRANCH":
                f, t, r, x, b, *tap = nums
                branches.append((ln, Branch(_as_int(f, ln), _as_int(t, ln), r, x, b, tap[0] if tap else 1.0)))
            else:
                b, H, xd, D = nums
                gens.append((ln, GenRecord(_as_int(b, ln), H, xd, D)))
        except TypeError as exc:
            raise CaseError(str(exc), ln) from None
    if not buses:
        raise CaseError("no buses")
    net = Network()
    slack = None
    for ln, bus, kind in buses:
        try:
            net.add_bus(bus)
        except ValueError as exc:
            raise CaseError(str(exc), ln) from None
        if kind == "slack":
            if slack is not None:
                raise CaseError("more than one slack bus", ln)
            slack = bus.id
    for ln, br in branches:
        try:
            net.add_branch(br)
            br.y_series
        except ValueError as exc:
            raise CaseError(str(exc), ln) from None
    gen_buses = set()
    for ln, g in gens:
        if g.bus not in net.index:
            raise CaseError(f"generator at unknown bus {g.bus}", ln)
        if g.bus in gen_buses:
            raise CaseError(f"second generator at bus {g.bus}", ln)
        if not (g.H > 0 and g.xd_p > 0):
            raise CaseError("generator H and xd_p must be positive", ln)
        gen_buses.add(g.bus)
    if slack is None and gens:
        raise CaseError("case with generators needs a slack bus")

    v = net.voltages()
    s_inj = v * (assemble_ybus(net) @ v).conj()
    q_gen = {}
    for k, bus in enumerate(net.buses):
        if bus.id != slack:
            dp = s_inj[k].real - (bus.p_gen - bus.p_load)
            if abs(dp) > mismatch_tol:
                raise CaseError(f"bus {bus.id}: active power mismatch {dp:.3e} (case not solved)")
        if bus.id in gen_buses:
            q_gen[bus.id] = s_inj[k].imag + bus.q_load
            if bus.id == slack:
                bus.p_gen = s_inj[k].real + bus.p_load
        elif bus.id != slack:
            dq = s_inj[k].imag + bus.q_load
            if abs(dq) > mismatch_tol:
                raise CaseError(f"bus {bus.id}: reactive power mismatch {dq:.3e} (case not solved)")
    return Case(net, [g for _, g in gens], slack, q_gen)


def _as_int(x: float, ln: int) -> int:
    if x != int(x):
        raise CaseError(f"bus id {x} is not an integer", ln)
    return int(x)


def format_case(net: Network, gens: Sequence[GenRecord] = (), slack: int | None = None,
                pv: Iterable[int] = ()) -> str:
    """Write a solved network in the case format with full double precision."""
    pv = set(pv)
    out = ["[BUS]", "# id base_kv vm va_deg p_load q_load p_gen type"]
    for b in net.buses:
        kind = "slack" if b.id == slack else ("pv" if b.id in pv else "pq")
        va = math.degrees(math.atan2(b.v.imag, b.v.real))
        out.append(" ".join([str(b.id)] + [_num(x) for x in (b.base_kv, abs(b.v), va, b.p_load, b.q_load, b.p_gen)] + [kind]))
    out += ["", "[BRANCH]", "# from to r x b tap"]
    for br in net.branches:
        out.append(f"{br.from_id} {br.to_id} " + " ".join(_num(x) for x in (br.r, br.x, br.b, br.tap)))
    if gens:
        out += ["", "[GEN]", "# bus H xd_p D"]
        out += [f"{g.bus} " + " ".join(_num(x) for x in (g.H, g.xd_p, g.D)) for g in gens]
    return "\n".join(out) + "\n"


# -- outputs -----------------------------------------------------------------


def write_csv(ts: TimeSeries, fh: IO[str] | None = None) -> str:
    return ts.to_csv(fh)


def write_report(reports: Sequence[CmldInitReport], fmt: str = "table") -> str:
    if fmt == "json":
        return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    return "\n\n".join(r.to_table() for r in reports) + "\n"
