"""Post-contingency network reconfiguration by spanning-tree search.

Restoration only needs connectivity: every bus that some substation can
still reach through usable branches is restored by any spanning tree of the
reachable part, so the search builds one such tree directly instead of
enumerating all of them. Among the trees, the greedy (Kruskal) order prefers
normally-closed non-switch branches, then normally-closed switches, then
tie switches, each group by branch id. This keeps the number of tie closings
minimal and, when a loop has to be broken, opens a switch rather than a line
whenever the loop has one.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .feeder import Feeder, _DisjointSet, _node, base_depths


@dataclass(frozen=True)
class OperableGraph:
    feeder: Feeder
    failed: frozenset[str] = frozenset()
    allow_ties: bool = True

    def __post_init__(self):
        unknown = set(self.failed) - set(self.feeder.branch)
        if unknown:
            raise KeyError(f"unknown failed component(s): {sorted(unknown)}")

    @property
    def usable_branches(self) -> tuple[str, ...]:
        return tuple(
            br.id
            for br in self.feeder.branches
            if br.id not in self.failed and (self.allow_ties or not br.is_tie)
        )


def operable_graph(feeder: Feeder, failed: Iterable[str] = (), reconfigure: bool = True) -> OperableGraph:
    return OperableGraph(feeder, frozenset(failed), allow_ties=reconfigure)


@dataclass(frozen=True)
class RestorationPlan:
    fully_restorable: bool
    closed_set: frozenset[str]
    energized_buses: frozenset[str]
    isolated_buses: tuple[str, ...]
    isolated_load_buses: tuple[str, ...]
    isolated_load_kw: tuple[float, float, float]  # per phase A, B, C at base
    mer_connection_bus: str | None
    switch_ops: tuple[tuple[str, str], ...] = field(default=())

    @property
    def isolated_kw(self) -> float:
        return float(sum(self.isolated_load_kw))

    @property
    def needs_mer(self) -> bool:
        return not self.fully_restorable and self.isolated_kw > 0


def _reachable(feeder: Feeder, branches: Iterable[str]) -> set[str]:
    adj = defaultdict(list)
    for bid in branches:
        br = feeder.branch[bid]
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    seen = set(feeder.substation_buses)
    queue = deque(seen)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def is_fully_restorable(g: OperableGraph) -> bool:
    """Every load bus still connects to a substation through usable branches."""
    return g.feeder.load_buses <= _reachable(g.feeder, g.usable_branches)


def _preference(feeder: Feeder, bid: str) -> tuple[int, str]:
    br = feeder.branch[bid]
    if br.is_tie:
        return (2, bid)
    return (1 if br.kind == "switch" else 0, bid)


def build_restoration_plan(g: OperableGraph) -> RestorationPlan:
    feeder = g.feeder
    usable = g.usable_branches
    energized = _reachable(feeder, usable)

    dsu = _DisjointSet()
    closed = []
    for bid in sorted(usable, key=lambda b: _preference(feeder, b)):
        br = feeder.branch[bid]
        if br.from_bus not in energized:
            continue  # both ends share reachability
        if dsu.union(_node(feeder, br.from_bus), _node(feeder, br.to_bus)):
            closed.append(bid)
    closed_set = frozenset(closed)

    isolated = sorted(b.id for b in feeder.buses if b.id not in energized)
    isolated_load = sorted(b for b in isolated if b in feeder.load_buses)
    kw = np.zeros(3)
    for b in isolated_load:
        kw += feeder.bus_load_kw[b]

    # normally-closed branches minus failures always form a forest, so every
    # energized one is kept and restoration only ever closes ties
    ops = [("close", b) for b in sorted(closed_set - feeder.normally_closed)]

    return RestorationPlan(
        fully_restorable=not isolated_load,
        closed_set=closed_set,
        energized_buses=frozenset(energized),
        isolated_buses=tuple(isolated),
        isolated_load_buses=tuple(isolated_load),
        isolated_load_kw=tuple(float(x) for x in kw),
        mer_connection_bus=_connection_bus(g, energized, isolated_load),
        switch_ops=tuple(ops),
    )


def _connection_bus(g: OperableGraph, energized: set[str], isolated_load: list[str]) -> str | None:
    """Isolated bus closest (in hops, normal configuration) to a substation,
    among isolated islands that carry load."""
    if not isolated_load:
        return None
    feeder = g.feeder
    adj = defaultdict(list)
    for bid in g.usable_branches:
        br = feeder.branch[bid]
        if br.from_bus not in energized and br.to_bus not in energized:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    island = set(isolated_load)
    queue = deque(isolated_load)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in island:
                island.add(v)
                queue.append(v)
    depth = base_depths(feeder)
    return min(island, key=lambda b: (depth.get(b, 1 << 30), b))


def interrupts_load(feeder: Feeder, failed: Iterable[str]) -> bool:
    """Whether losing ``failed`` de-energizes load before any switching."""
    failed = set(failed)
    closed = [b for b in feeder.normally_closed if b not in failed]
    return not feeder.load_buses <= _reachable(feeder, closed)


def restored_kw(feeder: Feeder, closed_set: Iterable[str]) -> float:
    """Base kW of loads connected to a substation through ``closed_set``."""
    reach = _reachable(feeder, closed_set)
    return float(sum(feeder.bus_load_kw[b].sum() for b in feeder.load_buses if b in reach))


# ----------------------------------------------------------------------
# matrix-tree theorem


def _bareiss_det(mat: list[list[int]]) -> int:
    """Exact integer determinant (fraction-free elimination)."""
    a = [row[:] for row in mat]
    n = len(a)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def count_spanning_trees(nodes: Iterable, edges: Iterable[tuple]) -> int:
    """Kirchhoff count of spanning trees of a (multi)graph, taken per
    connected component and multiplied. Self-loops are ignored."""
    nodes = list(dict.fromkeys(nodes))
    adj = defaultdict(list)
    for u, v in edges:
        if u != v:
            adj[u].append(v)
            adj[v].append(u)
    seen: set = set()
    total = 1
    for start in nodes:
        if start in seen:
            continue
        comp, queue = [start], deque([start])
        seen.add(start)
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.append(v)
                    queue.append(v)
        idx = {u: i for i, u in enumerate(comp)}
        lap = [[0] * len(comp) for _ in comp]
        for u in comp:
            for v in adj[u]:
                lap[idx[u]][idx[v]] -= 1
                lap[idx[u]][idx[u]] += 1
        minor = [row[1:] for row in lap[1:]]
        total *= _bareiss_det(minor)
    return total


def spanning_tree_count(g: OperableGraph) -> int:
    feeder = g.feeder
    edges = [(feeder.branch[b].from_bus, feeder.branch[b].to_bus) for b in g.usable_branches]
    return count_spanning_trees([b.id for b in feeder.buses], edges)


__all__ = [
    "OperableGraph",
    "RestorationPlan",
    "build_restoration_plan",
    "count_spanning_trees",
    "interrupts_load",
    "is_fully_restorable",
    "operable_graph",
    "restored_kw",
    "spanning_tree_count",
]
