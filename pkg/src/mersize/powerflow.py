"""Three-phase unbalanced power flow for radial configurations.

Backward/forward sweep in per unit, vectorized over any number of hourly
snapshots. The root-path incidence matrix ``T`` (branch x bus) turns the
backward sweep into ``I_branch = T @ I_load`` and the forward sweep into
``V = V_src - T.T @ (Z I_branch)``; ``T`` is sparse and built once per
configuration.

Per-unit bases: 1000 kVA per phase, line-to-neutral voltage of each bus.
Transformers are series impedances referred to the from side; the off-nominal
base change makes their ratio disappear in per unit.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy import sparse

from .feeder import HOURS_PER_YEAR, PHASES, Feeder, _DisjointSet, _node

log = logging.getLogger(__name__)

S_BASE_KVA = 1000.0  # per phase
TOLERANCE = 1e-8
MAX_ITER = 100
V_MIN, V_MAX = 0.9, 1.1

_A = np.exp(-2j * np.pi / 3)
V_SOURCE = np.array([1.0, _A, _A**2])
_MODELS = ("constant_power", "constant_current", "constant_impedance")


class NonRadialError(ValueError):
    pass


@dataclass(frozen=True)
class PowerFlowCase:
    feeder: Feeder
    closed_set: frozenset[str]
    hour: int = 0


@dataclass
class PowerFlowSolution:
    voltages: dict[str, np.ndarray]  # per-unit phasors, NaN on absent phases
    branch_currents: dict[str, np.ndarray]  # amps, from-side
    substation_kw: float
    substation_kvar: float
    converged: bool
    iterations: int
    max_mismatch: float
    balance_error: float
    load_kw: float
    loss_kw: float
    voltage_violations: list[tuple[str, str, float]] = field(default_factory=list)


@dataclass
class BatchResult:
    substation_kw: np.ndarray
    substation_kvar: np.ndarray
    load_kw: np.ndarray
    loss_kw: np.ndarray
    converged: np.ndarray
    max_mismatch: np.ndarray
    balance_error: np.ndarray
    iterations: int
    voltages: np.ndarray  # (H, n_bus, 3) per unit
    currents: np.ndarray  # (H, n_branch, 3) per unit


class RadialNetwork:
    """A compiled radial configuration of a feeder.

    Only buses reachable from a substation through ``closed_set`` take part.
    """

    def __init__(self, feeder: Feeder, closed_set: Iterable[str]):
        closed = sorted(set(closed_set))
        unknown = [b for b in closed if b not in feeder.branch]
        if unknown:
            raise KeyError(f"unknown branch id(s): {unknown}")
        dsu = _DisjointSet()
        for bid in closed:
            br = feeder.branch[bid]
            if not dsu.union(_node(feeder, br.from_bus), _node(feeder, br.to_bus)):
                raise NonRadialError(f"closing {bid} creates a loop")
        self.feeder = feeder
        self.closed_set = frozenset(closed)

        adj: dict[str, list[tuple[str, str]]] = defaultdict(list)
        for bid in closed:
            br = feeder.branch[bid]
            adj[br.from_bus].append((br.to_bus, bid))
            adj[br.to_bus].append((br.from_bus, bid))
        order = list(feeder.substation_buses)
        parent: dict[str, tuple[str, str] | None] = {s: None for s in order}
        queue = deque(order)
        while queue:
            u = queue.popleft()
            for v, bid in sorted(adj[u]):
                if v not in parent:
                    parent[v] = (u, bid)
                    order.append(v)
                    queue.append(v)
        self.buses = tuple(order)
        self.index = {b: i for i, b in enumerate(order)}
        self.branches = tuple(parent[b][1] for b in order if parent[b] is not None)
        self.branch_index = {b: i for i, b in enumerate(self.branches)}
        n, m = len(order), len(self.branches)

        # path incidence: path[k, i] = 1 if branch k lies on the root path of bus i
        path = np.zeros((m, n))
        for i, b in enumerate(order):
            cur = b
            while parent[cur] is not None:
                up, bid = parent[cur]
                path[self.branch_index[bid], i] = 1.0
                cur = up
        self.path = sparse.csr_matrix(path)
        self.path_t = sparse.csr_matrix(path.T)

        zpu = np.zeros((m, 3, 3), dtype=complex)
        self.i_base = np.zeros(m)
        for k, bid in enumerate(self.branches):
            br = feeder.branch[bid]
            kv = feeder.bus[br.from_bus].nominal_kv
            zpu[k] = br.z_matrix / (kv**2 / 3.0 / (S_BASE_KVA / 1000.0))
            self.i_base[k] = S_BASE_KVA / (kv / math.sqrt(3))
        self.zpu = zpu

        self.mask = np.zeros((n, 3), dtype=bool)
        for i, b in enumerate(order):
            for ph in feeder.bus[b].phases:
                self.mask[i, PHASES.index(ph)] = True

        self.profile_ids = tuple(p.id for p in feeder.profiles) + (None,)
        col = {pid: j for j, pid in enumerate(self.profile_ids)}
        self.s_load = np.zeros((3, len(self.profile_ids), n, 3), dtype=complex)
        for ld in feeder.loads:
            if ld.bus not in self.index:
                continue
            s = ld.per_phase() / S_BASE_KVA
            j = col[ld.profile]
            self.s_load[_MODELS.index(ld.model), j, self.index[ld.bus]] += s

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def multipliers(self, hours: np.ndarray) -> np.ndarray:
        """(H, n_profiles + 1) multiplier rows for absolute hour indices."""
        hours = np.asarray(hours, dtype=int) % HOURS_PER_YEAR
        cols = [np.asarray(self.feeder.profile[pid].multipliers)[hours] for pid in self.profile_ids[:-1]]
        cols.append(np.ones(len(hours)))
        return np.column_stack(cols)

    def _branch_currents(self, cur: np.ndarray) -> np.ndarray:
        # cur: (n, H, 3) bus injections -> (m, H, 3) branch currents
        n, h, _ = cur.shape
        return (self.path @ cur.reshape(n, 3 * h)).reshape(-1, h, 3)

    def _drops(self, ibr: np.ndarray) -> np.ndarray:
        return (self.zpu[:, None] @ ibr[..., None])[..., 0]

    def solve_batch(self, mult: np.ndarray, tol: float = TOLERANCE, max_iter: int = MAX_ITER) -> BatchResult:
        mult = np.atleast_2d(np.asarray(mult, dtype=float))
        h = mult.shape[0]
        n, m = self.n_bus, len(self.branches)
        # per-model complex load, laid out (n, H, 3)
        per_model = np.einsum("hj,mjnp->mnhp", mult, self.s_load)
        s_pq, s_i, s_z = per_model[0], np.conj(per_model[1]), np.conj(per_model[2])
        has_pq = s_pq != 0
        s_pq_c = np.conj(s_pq[has_pq])
        mask = np.broadcast_to(self.mask[:, None, :], (n, h, 3))
        v_src = np.broadcast_to(V_SOURCE, (n, h, 3))

        def injections(v):
            cur = s_i * (v / np.abs(v)) + s_z * v
            cur[has_pq] += s_pq_c / np.conj(v[has_pq])
            return cur

        v = np.array(v_src, dtype=complex)
        diff = np.zeros(h)
        done = np.zeros(h, dtype=bool)
        iterations = 0
        for iterations in range(1, max_iter + 1):
            ibr = self._branch_currents(injections(v))
            if m:
                v_new = v_src - (self.path_t @ self._drops(ibr).reshape(m, 3 * h)).reshape(n, h, 3)
            else:
                v_new = v.copy()
            delta = np.where(mask, np.abs(v_new - v), 0.0)
            step = delta.max(axis=(0, 2))
            # freeze snapshots that have converged so each hour's answer does
            # not depend on which other hours share the batch
            diff = np.where(done, diff, step)
            v = np.where(done[None, :, None], v, v_new)
            done = diff < tol
            if done.all():
                break
        converged = done
        if not np.all(converged):
            log.warning("power flow did not converge for %d of %d snapshots", int((~converged).sum()), h)

        cur = injections(v)
        ibr = self._branch_currents(cur)
        s_sub = (V_SOURCE[None, :] * np.conj(cur.sum(axis=0))).sum(axis=1)
        s_loads = (v * np.conj(cur)).sum(axis=(0, 2))
        s_loss = (self._drops(ibr) * np.conj(ibr)).sum(axis=(0, 2))
        balance = np.abs(s_sub - s_loads - s_loss) / np.maximum(np.abs(s_sub), 1e-12)
        vabs = np.abs(v)
        # real power drawn by the loads at the solved voltages
        load_kw = (per_model[0].real + per_model[1].real * vabs + per_model[2].real * vabs**2).sum(axis=(0, 2))
        return BatchResult(
            substation_kw=s_sub.real * S_BASE_KVA,
            substation_kvar=s_sub.imag * S_BASE_KVA,
            load_kw=load_kw * S_BASE_KVA,
            loss_kw=s_loss.real * S_BASE_KVA,
            converged=converged,
            max_mismatch=diff,
            balance_error=balance,
            iterations=iterations,
            voltages=np.where(self.mask[None], v.transpose(1, 0, 2), np.nan),
            currents=ibr.transpose(1, 0, 2),
        )

    def solve_hours(self, hours: Iterable[int], **kw) -> BatchResult:
        return self.solve_batch(self.multipliers(np.fromiter(hours, dtype=int)), **kw)


@lru_cache(maxsize=16)
def compile_network(feeder: Feeder, closed_set: frozenset[str]) -> RadialNetwork:
    return RadialNetwork(feeder, closed_set)


def solve(case: PowerFlowCase, tol: float = TOLERANCE, max_iter: int = MAX_ITER) -> PowerFlowSolution:
    """Solve one hourly snapshot of a radial configuration."""
    net = compile_network(case.feeder, frozenset(case.closed_set))
    res = net.solve_hours([case.hour], tol=tol, max_iter=max_iter)
    voltages = {b: res.voltages[0, i] for i, b in enumerate(net.buses)}
    currents = {}
    for k, bid in enumerate(net.branches):
        phases = [PHASES.index(p) for p in case.feeder.branch[bid].phases]
        amps = np.zeros(3, dtype=complex)
        amps[phases] = res.currents[0, k, phases] * net.i_base[k]
        currents[bid] = amps
    violations = []
    for b, vb in voltages.items():
        for p, vp in zip(PHASES, vb):
            if not np.isnan(vp) and not (V_MIN <= abs(vp) <= V_MAX):
                violations.append((b, p, float(abs(vp))))
    return PowerFlowSolution(
        voltages=voltages,
        branch_currents=currents,
        substation_kw=float(res.substation_kw[0]),
        substation_kvar=float(res.substation_kvar[0]),
        converged=bool(res.converged[0]),
        iterations=res.iterations,
        max_mismatch=float(res.max_mismatch[0]),
        balance_error=float(res.balance_error[0]),
        load_kw=float(res.load_kw[0]),
        loss_kw=float(res.loss_kw[0]),
        voltage_violations=violations,
    )


@dataclass(frozen=True)
class BaseYear:
    """Hourly substation injection over one profile year."""

    substation_kw: np.ndarray
    converged: np.ndarray
    balance_error: np.ndarray
    lossless: bool

    def at(self, hours) -> np.ndarray:
        return self.substation_kw[np.asarray(hours, dtype=int) % HOURS_PER_YEAR]


def lossless_load_kw(feeder: Feeder, hours: np.ndarray) -> np.ndarray:
    """Scaled sum of non-shunt base load kW, ignoring voltage dependence."""
    hours = np.asarray(hours, dtype=int) % HOURS_PER_YEAR
    total = np.zeros(len(hours))
    for ld in feeder.loads:
        if ld.shunt:
            continue
        m = np.asarray(feeder.profile[ld.profile].multipliers)[hours] if ld.profile else 1.0
        total += m * ld.total_kw
    return total


@lru_cache(maxsize=8)
def base_year(feeder: Feeder, lossless: bool = False, chunk: int = 1460) -> BaseYear:
    """Intact-network substation injection for each hour of the profile year."""
    hours = np.arange(HOURS_PER_YEAR)
    if lossless:
        kw = lossless_load_kw(feeder, hours)
        ones = np.ones(HOURS_PER_YEAR, dtype=bool)
        return BaseYear(kw, ones, np.zeros(HOURS_PER_YEAR), True)
    net = compile_network(feeder, feeder.normally_closed)
    kw, conv, bal = [], [], []
    for start in range(0, HOURS_PER_YEAR, chunk):
        res = net.solve_hours(hours[start : start + chunk])
        kw.append(res.substation_kw)
        conv.append(res.converged)
        bal.append(res.balance_error)
    return BaseYear(np.concatenate(kw), np.concatenate(conv), np.concatenate(bal), False)


def base_year_run(feeder: Feeder, years: int = 1, lossless: bool = False) -> np.ndarray:
    """P_base for every hour of a ``years``-long horizon (one profile year, tiled)."""
    if years < 1:
        raise ValueError("years must be >= 1")
    return np.tile(base_year(feeder, lossless).substation_kw, years)


def substation_series(
    feeder: Feeder, closed_set: Iterable[str], hours: Iterable[int], network: RadialNetwork | None = None
) -> BatchResult:
    """Substation injection over the given absolute hours for one configuration."""
    net = network or compile_network(feeder, frozenset(closed_set))
    return net.solve_hours(list(hours))


def dump_voltages(res: BatchResult, net: RadialNetwork, hours: Iterable[int]) -> list[tuple]:
    """Rows (hour, bus, phase, |V| pu, angle deg) for energized phases."""
    rows = []
    for hi, hour in enumerate(hours):
        for i, b in enumerate(net.buses):
            for p in range(3):
                if net.mask[i, p]:
                    vp = res.voltages[hi, i, p]
                    rows.append((int(hour), b, PHASES[p], float(abs(vp)), float(np.degrees(np.angle(vp)))))
    return rows
