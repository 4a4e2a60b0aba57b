"""Fixed-step simulation loop shared by all dynamic load components.

Every component follows the same lifecycle: it is initialized from the
power-flow solution, integrated with a predictor-corrector modified Euler
scheme, presents a Norton pair (admittance + current source) to the network
solution, and gets a post-processing call once per step for protections and
status changes.
"""

from __future__ import annotations

import csv
import fnmatch
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .network import Fault, Network, NetworkSolver, assemble_ybus, solve_network


class IntegrationError(ArithmeticError):
    def __init__(self, component: str, index: int, t: float | None = None):
        self.component = component
        self.index = index
        self.t = t
        where = f" at t={t:.6g} s" if t is not None else ""
        super().__init__(f"non-finite derivative in {component}[{index}]{where}")


@dataclass
class SimConfig:
    t_end: float
    time_step: float = 0.005
    system_frequency: float = 60.0
    network_tol: float = 1e-6
    network_max_iter: int = 50

    def __post_init__(self) -> None:
        if not self.time_step > 0:
            raise ValueError("time_step must be positive")
        if not self.t_end >= self.time_step:
            raise ValueError("t_end must be at least one time step")
        if not self.network_tol > 0:
            raise ValueError("network_tol must be positive")
        if self.network_max_iter < 1:
            raise ValueError("network_max_iter must be >= 1")

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.system_frequency


class LoadComponent:
    """Base for anything that hangs off a bus through a Norton pair.

    Subclasses set ``name``, ``bus`` and the initial state vector ``x`` in
    their init routine. ``admittance`` must stay constant between
    ``post_process`` calls; ``current`` may depend on the voltage iterate.
    """

    name: str = "component"
    bus: int = 0
    x: np.ndarray = np.zeros(0)

    def derivatives(self, x: np.ndarray, v: complex) -> np.ndarray:
        return np.zeros(0)

    def admittance(self) -> complex:
        return 0j

    def current(self, x: np.ndarray, v: complex) -> complex:
        return 0j

    def post_process(self, v: complex, dt: float) -> None:
        pass

    def channels(self, x: np.ndarray, v: complex) -> dict[str, float]:
        return {}


def modified_euler_step(x: np.ndarray, f: Callable[[np.ndarray], np.ndarray], h: float,
                        name: str = "state") -> np.ndarray:
    """One Heun step: predictor x + h f(x), corrector x + h/2 (f(x) + f(x~))."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    f0 = _finite(np.asarray(f(x), dtype=float), name)
    xp = x + h * f0
    f1 = _finite(np.asarray(f(xp), dtype=float), name)
    return x + 0.5 * h * (f0 + f1)


def _finite(d: np.ndarray, name: str, t: float | None = None) -> np.ndarray:
    if not np.all(np.isfinite(d)):
        bad = int(np.nonzero(~np.isfinite(d))[0][0])
        raise IntegrationError(name, bad, t)
    return d


class PlayIn:
    """Piecewise-linear voltage magnitude signal with constant extrapolation."""

    def __init__(self, knots: Sequence[tuple[float, float]]):
        if not knots:
            raise ValueError("play-in profile is empty")
        ts = [float(t) for t, _ in knots]
        vs = [float(v) for _, v in knots]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("play-in knot times must be nondecreasing")
        if any(not v > 0 for v in vs):
            raise ValueError("play-in magnitudes must be positive")
        self.times = ts
        self.values = vs

    def __call__(self, t: float) -> float:
        ts, vs = self.times, self.values
        if t <= ts[0]:
            return vs[0]
        if t >= ts[-1]:
            return vs[-1]
        k = bisect_right(ts, t)
        t0, t1 = ts[k - 1], ts[k]
        if t1 == t0:
            return vs[k]
        return vs[k - 1] + (vs[k] - vs[k - 1]) * (t - t0) / (t1 - t0)


def play_in_voltage(profile: Sequence[tuple[float, float]]) -> PlayIn:
    return PlayIn(profile)


SAG_PROFILE = ((0.0, 1.0), (1.0, 1.0), (1.1, 0.5), (1.2, 0.5), (1.3, 1.0))


@dataclass
class TimeSeries:
    names: list[str]
    rows: list[tuple[float, ...]] = field(default_factory=list)

    def append(self, t: float, values: Sequence[float]) -> None:
        if len(values) != len(self.names):
            raise ValueError(f"row has {len(values)} values, expected {len(self.names)}")
        if self.rows and not t > self.rows[-1][0]:
            raise ValueError("time must be strictly increasing")
        self.rows.append((t, *values))

    @property
    def t(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            k = self.names.index(name) + 1
        except ValueError:
            raise KeyError(name) from None
        return np.array([r[k] for r in self.rows])

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.rows)

    def select(self, patterns: Iterable[str]) -> "TimeSeries":
        pats = list(patterns)
        keep = [k for k, n in enumerate(self.names) if any(fnmatch.fnmatchcase(n, p) for p in pats)]
        out = TimeSeries([self.names[k] for k in keep])
        out.rows = [(r[0], *(r[k + 1] for k in keep)) for r in self.rows]
        return out

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.names])
        for r in self.rows:
            w.writerow([format(v, ".17g") for v in r])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "TimeSeries":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:1] != ["t"]:
            raise ValueError("CSV header must start with 't'")
        ts = cls(rows[0][1:])
        for r in rows[1:]:
            vals = [float(v) for v in r]
            ts.append(vals[0], vals[1:])
        return ts


def _flatten(components):
    flat, supervisors = [], []
    for c in components:
        members = getattr(c, "members", None)
        if members is not None:
            supervisors.append(c)
            flat.extend(members)
        else:
            flat.append(c)
    return flat, supervisors


def run_simulation(
    net: Network,
    components: Sequence,
    events: Sequence[Fault] = (),
    cfg: SimConfig | None = None,
    playin: dict[int, Callable[[float], float]] | None = None,
    channels: Sequence[str] | None = None,
) -> TimeSeries:
    """Run the fixed-step loop and return the recorded channels.

    Per step: apply due faults; solve the network with the current states;
    post-process components (protections, status); record; predictor;
    re-solve the network at the predicted states; corrector.

    ``playin`` pins bus voltage magnitudes (angle 0) to time signals.
    """
    if cfg is None:
        raise ValueError("a SimConfig is required")
    comps, supervisors = _flatten(components)
    playin = dict(playin or {})
    dt = cfg.time_step
    nsteps = int(round(cfg.t_end / dt))
    idx = net.index
    bus_ids = net.ids
    comp_k = [idx[c.bus] for c in comps]
    pinned_ids = sorted(playin)
    pinned_k = [idx[b] for b in pinned_ids]
    fault_steps = [(int(round(f.t_on / dt)), int(round(f.t_off / dt)), f) for f in events]
    for f in events:
        idx_check = idx.get(f.bus)
        if idx_check is None:
            raise ValueError(f"fault at unknown bus {f.bus}")

    x = [np.array(c.x, dtype=float) for c in comps]
    v = net.voltages()

    names = [f"V{b}" for b in bus_ids]
    for c in comps:
        names += [f"{c.name}.{k}" for k in c.channels(c.x, v[idx[c.bus]])]
    vmap0 = {b: v[k] for b, k in idx.items()}
    for s in supervisors:
        names += [f"{s.name}.{k}" for k in s.channels(vmap0)]
    ts = TimeSeries(names)

    state = {"adm": None, "faults": None, "solver": None}

    def solver_for() -> NetworkSolver:
        adm = tuple(c.admittance() for c in comps)
        faults = tuple(sorted(net.active_faults.items()))
        if state["solver"] is None or adm != state["adm"] or faults != state["faults"]:
            extra: dict[int, complex] = {}
            for c, y in zip(comps, adm):
                extra[c.bus] = extra.get(c.bus, 0j) + y
            state["solver"] = NetworkSolver(assemble_ybus(net, extra), pinned_k)
            state["adm"], state["faults"] = adm, faults
        return state["solver"]

    def solve(xs, v_start, t):
        def inj(vv):
            cur = np.zeros(len(vv), dtype=complex)
            for c, k, xi in zip(comps, comp_k, xs):
                cur[k] += c.current(xi, vv[k])
            return cur
        vp = np.array([playin[b](t) for b in pinned_ids], dtype=complex) if pinned_ids else None
        out, _ = solve_network(solver_for(), inj, v_start, cfg.network_tol, cfg.network_max_iter,
                               vp, t, bus_ids)
        return out

    def derivs(xs, vv, t):
        return [
            _finite(np.asarray(c.derivatives(xi, vv[k]), dtype=float), c.name, t)
            for c, k, xi in zip(comps, comp_k, xs)
        ]

    for n in range(nsteps + 1):
        t = n * dt
        active = {f.bus: f.y for on, off, f in fault_steps if on <= n < off}
        if active != net.active_faults:
            net.active_faults = active
        v = solve(x, v, t)
        step_dt = dt if n > 0 else 0.0
        for c, k in zip(comps, comp_k):
            c.post_process(v[k], step_dt)
        vmap = {b: v[k] for b, k in idx.items()}
        for s in supervisors:
            s.supervise(vmap, step_dt)
        adm = tuple(c.admittance() for c in comps)
        if adm != state["adm"]:
            v = solve(x, v, t)
            vmap = {b: v[k] for b, k in idx.items()}
        row = list(np.abs(v))
        for c, k, xi in zip(comps, comp_k, x):
            row += list(c.channels(xi, v[k]).values())
        for s in supervisors:
            row += list(s.channels(vmap).values())
        ts.append(t, row)
        if n == nsteps:
            break
        f0 = derivs(x, v, t)
        xp = [xi + dt * fi for xi, fi in zip(x, f0)]
        vpred = solve(xp, v, t + dt)
        f1 = derivs(xp, vpred, t + dt)
        x = [xi + 0.5 * dt * (a + b) for xi, a, b in zip(x, f0, f1)]

    for c, xi in zip(comps, x):
        c.x = xi
    for b, k in idx.items():
        net.bus(b).v = complex(v[k])
    net.active_faults = {}
    if channels:
        return ts.select(channels)
    return ts
