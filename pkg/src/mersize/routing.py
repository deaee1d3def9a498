"""Road network and minimum-travel-time MER routing (Dijkstra)."""

from __future__ import annotations

import csv
import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping


class RoadNetworkError(ValueError):
    pass


@dataclass(frozen=True)
class RoadNetwork:
    """Undirected road graph.

    ``adjacency`` maps each node to ``{neighbor: minutes}``; parallel edges
    keep their smallest travel time.
    """

    adjacency: Mapping[str, Mapping[str, float]]
    depots: tuple[str, ...]
    bus_nodes: Mapping[str, str]  # feeder bus id -> road node

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(sorted(self.adjacency))

    def node_for_bus(self, bus: str) -> str:
        try:
            return self.bus_nodes[bus]
        except KeyError:
            raise RoadNetworkError(f"bus {bus!r} has no road node") from None


def build_road_network(
    edges: Iterable[tuple[str, str, float]],
    depots: Iterable[str],
    bus_nodes: Mapping[str, str] | None = None,
) -> RoadNetwork:
    adj: dict[str, dict[str, float]] = defaultdict(dict)
    for a, b, minutes in edges:
        minutes = float(minutes)
        if not (minutes > 0 and math.isfinite(minutes)):
            raise RoadNetworkError(f"edge {a}-{b}: travel time must be positive and finite")
        if a == b:
            raise RoadNetworkError(f"edge {a}-{b}: self loop")
        adj[a][b] = min(adj[a].get(b, math.inf), minutes)
        adj[b][a] = adj[a][b]
    depots = tuple(dict.fromkeys(depots))
    if not depots:
        raise RoadNetworkError("road network needs at least one depot")
    bus_nodes = dict(bus_nodes or {})
    for node in (*depots, *bus_nodes.values()):
        adj.setdefault(node, {})
    return RoadNetwork({k: dict(v) for k, v in adj.items()}, depots, bus_nodes)


def parse_road_network(text: str, source: str = "<roads>") -> RoadNetwork:
    """Parse the two-section road CSV.

    ``[edges]`` rows are ``node_a,node_b,minutes``; ``[tags]`` rows are
    ``node,tag,value`` with tag ``depot`` or ``bus`` (value = feeder bus id).
    The first row of each section is a header.
    """
    sections: dict[str, list[tuple[int, list[str]]]] = {"edges": [], "tags": []}
    current = None
    header_pending = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            name = line.strip("[]").strip().lower()
            if name not in sections:
                raise RoadNetworkError(f"{source}:{lineno}: unknown section [{name}]")
            current, header_pending = name, True
            continue
        if current is None:
            raise RoadNetworkError(f"{source}:{lineno}: data outside a section")
        if header_pending:
            header_pending = False
            continue
        row = next(csv.reader([line]))
        sections[current].append((lineno, [c.strip() for c in row]))

    edges = []
    for lineno, row in sections["edges"]:
        try:
            a, b, minutes = row[0], row[1], float(row[2])
        except (IndexError, ValueError):
            raise RoadNetworkError(f"{source}:{lineno}: expected node_a,node_b,minutes") from None
        edges.append((a, b, minutes))
    depots, bus_nodes = [], {}
    for lineno, row in sections["tags"]:
        tag = row[1].lower() if len(row) > 1 else ""
        if tag == "depot":
            depots.append(row[0])
        elif tag == "bus" and len(row) > 2 and row[2]:
            if row[2] in bus_nodes:
                raise RoadNetworkError(f"{source}:{lineno}: bus {row[2]} mapped twice")
            bus_nodes[row[2]] = row[0]
        else:
            raise RoadNetworkError(f"{source}:{lineno}: bad tag row {row}")
    try:
        return build_road_network(edges, depots, bus_nodes)
    except RoadNetworkError as exc:
        raise RoadNetworkError(f"{source}: {exc}") from None


def load_road_network(path: str | Path) -> RoadNetwork:
    path = Path(path)
    return parse_road_network(path.read_text(encoding="utf-8"), source=str(path))


@dataclass(frozen=True)
class Route:
    depot: str
    target: str
    path: tuple[str, ...]
    travel_minutes: float
    reachable: bool = True


def shortest_route(net: RoadNetwork, depot: str, target: str) -> Route:
    """Dijkstra from ``depot``; equal-cost paths resolve to the
    lexicographically smallest node sequence.

    ``depot == target`` gives an empty path of zero minutes.
    """
    for node in (depot, target):
        if node not in net.adjacency:
            raise KeyError(f"unknown road node {node!r}")
    if depot == target:
        return Route(depot, target, (), 0.0)
    best: dict[str, tuple[float, tuple[str, ...]]] = {depot: (0.0, (depot,))}
    heap = [(0.0, (depot,))]
    done = set()
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == target:
            return Route(depot, target, path, dist)
        for nbr, w in net.adjacency[node].items():
            if nbr in done:
                continue
            cand = (dist + w, path + (nbr,))
            if nbr not in best or cand < best[nbr]:
                best[nbr] = cand
                heapq.heappush(heap, cand)
    return Route(depot, target, (), math.inf, reachable=False)


def nearest_depot_route(net: RoadNetwork, target: str) -> Route:
    """Fastest route to ``target`` over all depots (ties: depot id)."""
    routes = [shortest_route(net, d, target) for d in sorted(net.depots)]
    return min(routes, key=lambda r: (r.travel_minutes, r.depot))


def route_to_bus(net: RoadNetwork, bus: str) -> Route:
    return nearest_depot_route(net, net.node_for_bus(bus))


def response_delay(route: Route, installation_minutes: float) -> float | None:
    """Hours from contingency start until the MER is serving load, or
    ``None`` if the target cannot be reached."""
    if installation_minutes < 0:
        raise ValueError("installation time must be >= 0")
    if not route.reachable:
        return None
    return (route.travel_minutes + installation_minutes) / 60.0
