"""Bus/branch network, nodal admittance assembly and Norton-injection solution.

Also holds the classical generator used as the machine model in system
tests and the partition-aware bus growth used by composite loads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg

DEFAULT_FAULT_ADMITTANCE = complex(1e7, -1e7)


class TopologyError(ValueError):
    """Raised for inconsistent network data or a singular admittance matrix."""


class GhostBusError(ValueError):
    """Raised when growth is requested on a bus the partition does not own."""


class NetworkDivergedError(RuntimeError):
    def __init__(self, t: float, worst_bus: int, mismatch: float, iterations: int):
        self.t = t
        self.worst_bus = worst_bus
        self.mismatch = mismatch
        self.iterations = iterations
        super().__init__(
            f"network solution diverged at t={t:.6g} s after {iterations} iterations; "
            f"worst bus {worst_bus} (|dV|={mismatch:.3e})"
        )


@dataclass
class Bus:
    id: int
    base_kv: float = 1.0
    v: complex = 1.0 + 0.0j
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    partition_owner: int = 0


@dataclass
class Branch:
    """Series branch with optional off-nominal ratio on the from side.

    ``tap`` follows the textbook stamp: Yff = y/t**2, Yft = Ytf = -y/t, Ytt = y,
    where y = 1/(r + jx). ``b`` is the total line charging, split in halves.
    """

    from_id: int
    to_id: int
    r: float = 0.0
    x: float = 0.0
    b: float = 0.0
    tap: float = 1.0

    @property
    def y_series(self) -> complex:
        z = complex(self.r, self.x)
        if z == 0:
            raise TopologyError(f"branch {self.from_id}-{self.to_id} has zero impedance")
        return 1.0 / z


@dataclass
class Fault:
    bus: int
    t_on: float
    t_off: float
    y: complex = DEFAULT_FAULT_ADMITTANCE


@dataclass
class Network:
    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    shunts: dict[int, complex] = field(default_factory=dict)
    active_faults: dict[int, complex] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._reindex()

    def _reindex(self) -> None:
        self.index = {}
        for k, bus in enumerate(self.buses):
            if bus.id in self.index:
                raise TopologyError(f"duplicate bus id {bus.id}")
            self.index[bus.id] = k

    def bus(self, bus_id: int) -> Bus:
        try:
            return self.buses[self.index[bus_id]]
        except KeyError:
            raise TopologyError(f"unknown bus {bus_id}") from None

    def add_bus(self, bus: Bus) -> None:
        if bus.id in self.index:
            raise TopologyError(f"duplicate bus id {bus.id}")
        self.index[bus.id] = len(self.buses)
        self.buses.append(bus)

    def add_branch(self, br: Branch) -> None:
        for end in (br.from_id, br.to_id):
            if end not in self.index:
                raise TopologyError(f"branch endpoint {end} does not exist")
        self.branches.append(br)

    def add_shunt(self, bus_id: int, y: complex) -> None:
        self.bus(bus_id)
        self.shunts[bus_id] = self.shunts.get(bus_id, 0j) + y

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def voltages(self) -> np.ndarray:
        return np.array([b.v for b in self.buses], dtype=complex)

    def neighbors(self, bus_id: int) -> set[int]:
        out = set()
        for br in self.branches:
            if br.from_id == bus_id:
                out.add(br.to_id)
            elif br.to_id == bus_id:
                out.add(br.from_id)
        return out


def assemble_ybus(net: Network, extra: Mapping[int, complex] | None = None) -> np.ndarray:
    """Dense nodal admittance matrix.

    Includes branch series/charging terms, transformer ratios, bus shunts,
    active faults and any ``extra`` per-bus admittances (component Nortons).
    """
    n = net.n
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        i, j = net.index[br.from_id], net.index[br.to_id]
        y = br.y_series
        t = br.tap
        half = 0.5j * br.b
        Y[i, i] += y / (t * t) + half
        Y[j, j] += y + half
        Y[i, j] -= y / t
        Y[j, i] -= y / t
    for bus_id, y in net.shunts.items():
        k = net.index[bus_id]
        Y[k, k] += y
    for bus_id, y in net.active_faults.items():
        k = net.index[bus_id]
        Y[k, k] += y
    if extra:
        for bus_id, y in extra.items():
            k = net.index[bus_id]
            Y[k, k] += y
    return Y


class NetworkSolver:
    """Factorized reduced solve with optional pinned (voltage-source) buses.

    Pinned rows/columns are eliminated: Yuu Vu = Iu - Yuk Vk.
    """

    def __init__(self, Y: np.ndarray, pinned: Sequence[int] = ()):
        n = Y.shape[0]
        self.pinned = np.array(sorted(pinned), dtype=int)
        mask = np.ones(n, dtype=bool)
        mask[self.pinned] = False
        self.free = np.nonzero(mask)[0]
        self.Y = Y
        self.Yuk = Y[np.ix_(self.free, self.pinned)]
        Yuu = Y[np.ix_(self.free, self.free)]
        if self.free.size:
            if not np.all(np.isfinite(Yuu)):
                raise TopologyError("non-finite admittance matrix")
            try:
                self.lu = scipy.linalg.lu_factor(Yuu, check_finite=False)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise TopologyError(f"admittance matrix is singular: {exc}") from exc
            if np.any(np.abs(np.diag(self.lu[0])) < 1e-14 * max(1.0, np.abs(Yuu).max())):
                raise TopologyError("admittance matrix is singular after removing source buses")
        else:
            self.lu = None

    def solve(self, current: np.ndarray, v_pinned: np.ndarray | None = None) -> np.ndarray:
        n = self.Y.shape[0]
        v = np.empty(n, dtype=complex)
        if self.pinned.size:
            v[self.pinned] = v_pinned
        if self.free.size:
            rhs = current[self.free]
            if self.pinned.size:
                rhs = rhs - self.Yuk @ v_pinned
            v[self.free] = scipy.linalg.lu_solve(self.lu, rhs, check_finite=False)
        return v


def solve_network(
    solver: NetworkSolver,
    injections: Callable[[np.ndarray], np.ndarray],
    v0: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 50,
    v_pinned: np.ndarray | None = None,
    t: float = 0.0,
    bus_ids: Sequence[int] | None = None,
) -> tuple[np.ndarray, int]:
    """Fixed-point Norton iteration V <- Y^-1 I(V).

    Returns the converged voltages and the number of solves performed. A
    voltage-independent injection converges after one solve plus one
    verification pass.
    """
    v = np.array(v0, dtype=complex)
    if v_pinned is not None and solver.pinned.size:
        v[solver.pinned] = v_pinned
    for it in range(1, max_iter + 1):
        v_new = solver.solve(injections(v), v_pinned)
        dv = np.abs(v_new - v)
        v = v_new
        if not np.all(np.isfinite(dv)):
            break
        if dv.max(initial=0.0) < tol:
            return v, it
    worst = int(np.nanargmax(np.where(np.isfinite(dv), dv, np.inf))) if dv.size else 0
    ids = bus_ids if bus_ids is not None else range(len(v))
    raise NetworkDivergedError(t, list(ids)[worst], float(dv[worst]), max_iter)


def kirchhoff_residual(Y: np.ndarray, v: np.ndarray, current: np.ndarray, free=None) -> float:
    r = Y @ v - current
    if free is not None:
        r = r[free]
    return float(np.abs(r).max(initial=0.0))


# -- classical generator -----------------------------------------------------


class ClassicalGen:
    """Constant EMF behind transient reactance with swing dynamics.

    States are (delta [rad], dw [pu speed deviation]).
    """

    def __init__(self, bus: int, H: float, xd_p: float, D: float = 0.0,
                 omega_s: float = 2 * math.pi * 60.0, name: str | None = None):
        if H <= 0:
            raise ValueError("H must be positive")
        if xd_p <= 0:
            raise ValueError("xd_p must be positive")
        self.bus = bus
        self.H = H
        self.xd_p = xd_p
        self.D = D
        self.omega_s = omega_s
        self.name = name or f"gen{bus}"
        self.E = 0.0
        self.pm = 0.0
        self.x = np.zeros(2)

    def init(self, v: complex, s_gen: complex) -> None:
        i = (s_gen / v).conjugate()
        e = v + 1j * self.xd_p * i
        if abs(e) == 0:
            raise ValueError("generator internal EMF is zero")
        self.E = abs(e)
        self.x = np.array([math.atan2(e.imag, e.real), 0.0])
        self.pm = s_gen.real

    def emf(self, x: np.ndarray) -> complex:
        return self.E * complex(math.cos(x[0]), math.sin(x[0]))

    def electrical_power(self, x: np.ndarray, v: complex) -> float:
        e = self.emf(x)
        i = (e - v) / (1j * self.xd_p)
        return (e * i.conjugate()).real

    def derivatives(self, x: np.ndarray, v: complex) -> np.ndarray:
        pe = self.electrical_power(x, v)
        return np.array([
            self.omega_s * x[1],
            (self.pm - pe - self.D * x[1]) / (2.0 * self.H),
        ])

    def admittance(self) -> complex:
        return 1.0 / (1j * self.xd_p)

    def current(self, x: np.ndarray, v: complex) -> complex:
        return self.emf(x) / (1j * self.xd_p)

    def post_process(self, v: complex, dt: float) -> None:
        pass

    def channels(self, x: np.ndarray, v: complex) -> dict[str, float]:
        return {
            "speed": 1.0 + float(x[1]),
            "delta": float(x[0]),
            "Pe": self.electrical_power(x, v),
        }


# -- power flow (used to author solved cases) --------------------------------


def solve_power_flow(net: Network, slack: int, pv: Sequence[int] = (),
                     tol: float = 1e-12, max_iter: int = 30) -> None:
    """Newton-Raphson power flow in polar form; updates bus voltages in place.

    Loads are constant power; ``p_gen`` is scheduled at PV buses and the PV
    magnitude is taken from the bus's current voltage.
    """
    Y = assemble_ybus(net)
    ids = net.ids
    k_slack = net.index[slack]
    k_pv = [net.index[b] for b in pv]
    pq = [k for k in range(net.n) if k != k_slack and k not in k_pv]
    non_slack = [k for k in range(net.n) if k != k_slack]
    vm = np.abs(net.voltages())
    va = np.angle(net.voltages())
    p_spec = np.array([b.p_gen - b.p_load for b in net.buses])
    q_spec = np.array([-b.q_load for b in net.buses])
    for _ in range(max_iter):
        v = vm * np.exp(1j * va)
        s = v * (Y @ v).conj()
        mis = np.concatenate([(s.real - p_spec)[non_slack], (s.imag - q_spec)[pq]])
        if np.abs(mis).max(initial=0.0) < tol:
            break
        # dS/dVa and dS/dVm in complex form
        Ibus = Y @ v
        dS_dva = 1j * np.diag(v) @ (np.diag(Ibus) - Y @ np.diag(v)).conj()
        dS_dvm = np.diag(v) @ (Y @ np.diag(v / vm)).conj() + np.diag(v / vm) @ np.diag(Ibus).conj()
        J = np.block([
            [dS_dva.real[np.ix_(non_slack, non_slack)], dS_dvm.real[np.ix_(non_slack, pq)]],
            [dS_dva.imag[np.ix_(pq, non_slack)], dS_dvm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, -mis)
        va[non_slack] += dx[: len(non_slack)]
        vm[pq] += dx[len(non_slack):]
    else:
        raise RuntimeError(f"power flow did not converge (buses {ids})")
    for k, b in enumerate(net.buses):
        b.v = complex(vm[k] * np.cos(va[k]), vm[k] * np.sin(va[k]))


def bus_injections(net: Network) -> np.ndarray:
    """Complex power injected into the network at each bus (V * conj(Y V))."""
    v = net.voltages()
    return v * (assemble_ybus(net) @ v).conj()


# -- partition-aware growth --------------------------------------------------


@dataclass(frozen=True)
class PartitionView:
    index: int
    owned: frozenset[int]
    ghosts: frozenset[int]


def partition_views(net: Network) -> dict[int, PartitionView]:
    """Owned and ghost bus sets per partition.

    A ghost is a local copy of a neighboring bus owned by another partition.
    """
    owned: dict[int, set[int]] = {}
    for b in net.buses:
        owned.setdefault(b.partition_owner, set()).add(b.id)
    ghosts: dict[int, set[int]] = {p: set() for p in owned}
    for br in net.branches:
        pf = net.bus(br.from_id).partition_owner
        pt = net.bus(br.to_id).partition_owner
        if pf != pt:
            ghosts[pf].add(br.to_id)
            ghosts[pt].add(br.from_id)
    return {
        p: PartitionView(p, frozenset(owned[p]), frozenset(ghosts[p]))
        for p in sorted(owned)
    }


def grow_network(net: Network, requests: Mapping[int, Sequence[int]]) -> dict[int, tuple[int, int]]:
    """Allocate two new bus ids (low-side, load bus) per composite-load request.

    ``requests`` maps partition index to the parent buses it expands, in
    order. The global maximum original id is reduced across partitions, each
    partition's count of new buses is prefix-summed over partition index, and
    each partition numbers its buses from its offset. New buses inherit the
    parent's owner and are not connected yet; the caller adds branches.

    Returns parent bus id -> (low_side_id, load_bus_id).
    """
    views = partition_views(net)
    for p, parents in requests.items():
        view = views.get(p)
        for bus_id in parents:
            if view is not None and bus_id in view.ghosts:
                raise GhostBusError(f"bus {bus_id} is a ghost copy in partition {p}; only its owner may grow it")
            if view is None or bus_id not in view.owned:
                raise GhostBusError(f"bus {bus_id} is not owned by partition {p}")
    local_max = [max(v.owned) for v in views.values()]
    global_max = max(local_max)
    counts = {p: 2 * len(requests.get(p, ())) for p in views}
    offset = 0
    assigned: dict[int, tuple[int, int]] = {}
    for p in sorted(counts):
        next_id = global_max + 1 + offset
        for parent in requests.get(p, ()):
            if parent in assigned:
                raise TopologyError(f"bus {parent} requested twice")
            ls, lb = next_id, next_id + 1
            next_id += 2
            assigned[parent] = (ls, lb)
            owner = net.bus(parent).partition_owner
            base = net.bus(parent).base_kv
            net.add_bus(Bus(ls, base_kv=base, v=net.bus(parent).v, partition_owner=owner))
            net.add_bus(Bus(lb, base_kv=base, v=net.bus(parent).v, partition_owner=owner))
        offset += counts[p]
    return assigned
