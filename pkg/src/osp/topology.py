"""Graph model of the emulated IP network.

Routing uses unique shortest paths: every edge carries weight ``(1, 2**rank)``
where ``rank`` orders edges by their sorted endpoint ids.  Hop count dominates,
and the perturbation makes the minimum-hop path between any pair unique, so
routes are symmetric and every sub-path of a route is itself the route
between its endpoints.
"""

from __future__ import annotations

import heapq
import ipaddress
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx
import yaml

NodeId = str

ROUTER = "router"
SERVER = "server"

DATA_DIR = Path(__file__).parent / "data"
BASE_ADDRESS = int(ipaddress.IPv4Address("10.0.0.0"))


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class IpPath:
    hops: tuple[NodeId, ...]

    @property
    def length(self) -> int:
        return len(self.hops) - 1

    def __len__(self) -> int:
        return len(self.hops)

    def __iter__(self):
        return iter(self.hops)


@dataclass(eq=False)
class Topology:
    """Immutable network graph with an OSP-membership subset."""

    adjacency: Mapping[NodeId, frozenset[NodeId]]
    osp_members: frozenset[NodeId]
    roles: Mapping[NodeId, str]
    tracker: NodeId | None = None
    name: str = ""
    _next_hop: dict[NodeId, dict[NodeId, NodeId]] = field(init=False, repr=False)
    _dist: dict[NodeId, dict[NodeId, int]] = field(init=False, repr=False)
    _addresses: dict[NodeId, int] = field(init=False, repr=False)
    _by_address: dict[int, NodeId] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        nodes = sorted(self.adjacency)
        for u in nodes:
            for v in self.adjacency[u]:
                if v == u:
                    raise TopologyError(f"self-loop at {u!r}")
                if v not in self.adjacency or u not in self.adjacency[v]:
                    raise TopologyError(f"edge {u!r}-{v!r} is not symmetric")
        if not set(self.osp_members) <= set(nodes):
            extra = sorted(set(self.osp_members) - set(nodes))
            raise TopologyError(f"OSP members not in topology: {extra}")
        if nodes and not _connected(self.adjacency):
            raise TopologyError("topology is disconnected")
        if self.tracker is not None and self.tracker not in self.osp_members:
            raise TopologyError(f"tracker {self.tracker!r} does not run OSP")
        self._addresses = {n: BASE_ADDRESS + i + 1 for i, n in enumerate(nodes)}
        self._by_address = {a: n for n, a in self._addresses.items()}
        self._build_routes(nodes)

    def _build_routes(self, nodes: list[NodeId]) -> None:
        edges = sorted({tuple(sorted((u, v))) for u in nodes for v in self.adjacency[u]})
        weight = {e: 1 << i for i, e in enumerate(edges)}
        self._next_hop = {}
        self._dist = {}
        for dst in nodes:
            # Dijkstra rooted at the destination; next_hop[dst][u] is u's
            # first step toward dst.  Unique weights make it symmetric.
            best: dict[NodeId, tuple[int, int]] = {dst: (0, 0)}
            parent: dict[NodeId, NodeId] = {}
            heap = [(0, 0, dst)]
            done: set[NodeId] = set()
            while heap:
                hops, pert, u = heapq.heappop(heap)
                if u in done:
                    continue
                done.add(u)
                for v in self.adjacency[u]:
                    cand = (hops + 1, pert + weight[tuple(sorted((u, v)))])
                    if v not in best or cand < best[v]:
                        best[v] = cand
                        parent[v] = u
                        heapq.heappush(heap, (cand[0], cand[1], v))
            self._next_hop[dst] = parent
            self._dist[dst] = {n: best[n][0] for n in best}

    # -- graph queries ---------------------------------------------------

    @property
    def nodes(self) -> list[NodeId]:
        return sorted(self.adjacency)

    @property
    def edges(self) -> list[tuple[NodeId, NodeId]]:
        return sorted({tuple(sorted((u, v))) for u in self.adjacency for v in self.adjacency[u]})

    def neighbors(self, node: NodeId) -> list[NodeId]:
        return sorted(self.adjacency[node])

    def is_member(self, node: NodeId) -> bool:
        return node in self.osp_members

    def address(self, node: NodeId) -> int:
        return self._addresses[node]

    def node_at(self, address: int) -> NodeId | None:
        return self._by_address.get(address)

    def shortest_path(self, src: NodeId, dst: NodeId) -> IpPath:
        if src not in self.adjacency or dst not in self.adjacency:
            raise KeyError(f"unknown node in ({src!r}, {dst!r})")
        hops = [src]
        table = self._next_hop[dst]
        while hops[-1] != dst:
            hops.append(table[hops[-1]])
        return IpPath(tuple(hops))

    def ip_distance(self, a: NodeId, b: NodeId) -> int:
        return self._dist[b][a]

    def overlay_neighbors(self, node: NodeId) -> set[NodeId]:
        """OSP members whose route from ``node`` crosses no other OSP member."""
        out = set()
        for other in self.osp_members:
            if other == node:
                continue
            inner = self.shortest_path(node, other).hops[1:-1]
            if not any(h in self.osp_members for h in inner):
                out.add(other)
        return out

    def with_members(self, members: Iterable[NodeId], tracker: NodeId | None = None) -> "Topology":
        members = frozenset(members)
        if tracker is None:
            tracker = self.tracker if self.tracker in members else min(members, default=None)
        return Topology(self.adjacency, members, self.roles, tracker=tracker, name=self.name)


def _connected(adjacency: Mapping[NodeId, Iterable[NodeId]]) -> bool:
    start = next(iter(adjacency))
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(adjacency)


def shortest_path(topo: Topology, src: NodeId, dst: NodeId) -> IpPath:
    return topo.shortest_path(src, dst)


def ip_distance(topo: Topology, a: NodeId, b: NodeId) -> int:
    return topo.ip_distance(a, b)


def off_path_domain_oracle(topo: Topology, path: IpPath | Iterable[NodeId], r: int) -> set[NodeId]:
    """OSP members within ``r`` hops of any path node, by plain multi-source BFS.

    Deliberately ignores the routing tables so it can audit the protocol.
    """
    if r < 0:
        raise ValueError("radius must be non-negative")
    hops = list(path.hops if isinstance(path, IpPath) else path)
    dist = {h: 0 for h in hops}
    queue = deque(hops)
    while queue:
        u = queue.popleft()
        if dist[u] == r:
            continue
        for v in topo.adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return {v for v in dist if v in topo.osp_members}


# -- loading ---------------------------------------------------------------


def _from_edges(edges: Iterable[tuple[NodeId, NodeId]], roles: Mapping[NodeId, str] | None = None,
                nodes: Iterable[NodeId] = ()) -> dict[NodeId, set[NodeId]]:
    adj: dict[NodeId, set[NodeId]] = {n: set() for n in nodes}
    for a, b in edges:
        if a == b:
            raise TopologyError(f"self-loop at {a!r}")
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def read_gml(path: str | Path) -> tuple[dict[NodeId, set[NodeId]], dict[NodeId, str]]:
    try:
        g = nx.read_gml(path, label="id")
    except (nx.NetworkXError, OSError, ValueError) as exc:
        raise TopologyError(f"cannot parse GML {path}: {exc}") from exc
    labels = [g.nodes[n].get("label") for n in g.nodes]
    use_labels = all(labels) and len(set(labels)) == len(labels)
    name = {n: str(g.nodes[n]["label"]) if use_labels else str(n) for n in g.nodes}
    adj = _from_edges(((name[u], name[v]) for u, v in g.edges if u != v), nodes=name.values())
    roles = {name[n]: str(g.nodes[n].get("role", ROUTER)) for n in g.nodes}
    return adj, roles


def read_edge_list(text: str) -> dict[NodeId, set[NodeId]]:
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        for chunk in line.split(";"):
            parts = chunk.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise TopologyError(f"line {lineno}: expected 'idA idB', got {chunk.strip()!r}")
            edges.append((parts[0], parts[1]))
    if not edges:
        raise TopologyError("edge list is empty")
    return _from_edges(edges)


def _is_file(name: str) -> bool:
    try:
        return Path(name).is_file()
    except (OSError, ValueError):
        return False


def resolve_path(name: str | Path) -> Path:
    """Accept a real path or the name of a bundled data file."""
    p = Path(name)
    if p.exists():
        return p
    bundled = DATA_DIR / p.name
    if bundled.exists():
        return bundled
    raise TopologyError(f"no such topology or scenario file: {name}")


def load_topology(source: str | Path, scenario: str | Path | Mapping | None = None) -> Topology:
    """Load a GML file, edge-list file, inline edge list, or YAML scenario.

    A scenario may name its base topology, attach degree-1 server nodes, pick
    the OSP members (``all`` or a list), and choose the tracker.
    """
    text_source = isinstance(source, str) and ("\n" in source or ";" in source) and not _is_file(source)
    if text_source:
        adj, roles = read_edge_list(source), {}
        name = "inline"
    else:
        path = resolve_path(source)
        if path.suffix in (".yaml", ".yml") and scenario is None:
            return load_topology_from_scenario(path)
        if path.suffix == ".gml":
            adj, roles = read_gml(path)
        else:
            adj, roles = read_edge_list(path.read_text()), {}
        name = path.stem
    if scenario is not None:
        spec = scenario if isinstance(scenario, Mapping) else yaml.safe_load(resolve_path(scenario).read_text())
        return _apply_scenario(adj, roles, spec or {}, name)
    roles = {n: roles.get(n, ROUTER) for n in adj}
    members = frozenset(adj)
    return Topology({n: frozenset(v) for n, v in adj.items()}, members, roles,
                    tracker=min(members) if members else None, name=name)


def load_topology_from_scenario(path: str | Path) -> Topology:
    path = resolve_path(path)
    spec = yaml.safe_load(path.read_text()) or {}
    if "topology" not in spec:
        raise TopologyError(f"scenario {path} names no topology")
    base = Path(spec["topology"])
    if not base.is_absolute():
        base = path.parent / base
    return load_topology(base, spec)


def _apply_scenario(adj: dict[NodeId, set[NodeId]], roles: dict[NodeId, str],
                    spec: Mapping, name: str) -> Topology:
    adj = {n: set(v) for n, v in adj.items()}
    roles = {n: roles.get(n, ROUTER) for n in adj}
    for server in spec.get("servers", []) or []:
        sname, attach = str(server["name"]), str(server["attach"])
        if attach not in adj:
            raise TopologyError(f"server {sname!r} attaches to unknown node {attach!r}")
        if sname in adj:
            raise TopologyError(f"duplicate node {sname!r}")
        adj[sname] = {attach}
        adj[attach].add(sname)
        roles[sname] = SERVER
    for node, role in (spec.get("roles") or {}).items():
        if node not in adj:
            raise TopologyError(f"role for unknown node {node!r}")
        roles[str(node)] = str(role)
    members_spec = spec.get("osp_members", "all")
    if members_spec in (None, "all"):
        members = frozenset(adj)
    else:
        members = frozenset(str(m) for m in members_spec)
    tracker = spec.get("tracker")
    tracker = str(tracker) if tracker is not None else min(members, default=None)
    return Topology({n: frozenset(v) for n, v in adj.items()}, members, roles,
                    tracker=tracker, name=str(spec.get("name", name)))
