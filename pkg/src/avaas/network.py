"""Directed link/lane road network.

Lanes are straight one-dimensional segments addressed by a longitudinal
coordinate in meters, measured from the upstream end of their edge. Lane
index 0 is the rightmost lane. The oncoming-traffic relation is stored
explicitly per edge (``opposite_edge``) instead of being inferred from
geometry.
"""

from __future__ import annotations

import sys
from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ScenarioError(ValueError):
    """Raised for malformed or invalid scenario content.

    ``locus`` names the offending place: ``line 12, column 3`` for parse
    errors or a dotted field path such as ``network.edges[0].length_m``.
    """

    def __init__(self, message: str, locus: str | None = None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


def lane_id(edge: str, index: int) -> str:
    return f"{edge}_{index}"


@dataclass(frozen=True)
class Edge:
    id: str
    source: str
    target: str
    lane_count: int
    length: float
    speed_limit: float
    opposite_edge: str | None = None

    @property
    def is_loop(self) -> bool:
        return self.source == self.target


@dataclass(frozen=True)
class Lane:
    id: str
    edge: str
    index: int
    length: float
    speed_limit: float
    opposite_edge: str | None = None


@dataclass(frozen=True)
class RoadNetwork:
    """Immutable road network.

    Build it through :meth:`from_edges` (or :func:`load_network` /
    :func:`builtin_network`), which validates every invariant.
    """

    nodes: frozenset[str]
    edges: tuple[Edge, ...]
    lanes: tuple[Lane, ...]
    adjacency: Mapping[str, tuple[str, ...]]
    _edge_index: Mapping[str, Edge] = field(repr=False, compare=False)
    _lane_index: Mapping[str, Lane] = field(repr=False, compare=False)

    def __reduce__(self):
        # mappingproxy does not pickle; rebuild from the edge list
        return (RoadNetwork.from_edges, (sorted(self.nodes), self.edges))

    @classmethod
    def from_edges(cls, nodes, edges) -> "RoadNetwork":
        nodes = frozenset(nodes)
        edges = tuple(edges)
        by_id: dict[str, Edge] = {}
        for i, e in enumerate(edges):
            where = f"network.edges[{i}]"
            if e.id in by_id:
                raise ScenarioError(f"duplicate edge id {e.id!r}", where)
            for end in ("source", "target"):
                if getattr(e, end) not in nodes:
                    raise ScenarioError(
                        f"{end} node {getattr(e, end)!r} does not exist", f"{where}.{end}"
                    )
            if not e.lane_count >= 1:
                raise ScenarioError("lane_count >= 1 violated", f"{where}.lane_count")
            if not e.length > 0:
                raise ScenarioError("length > 0 violated", f"{where}.length_m")
            if not e.speed_limit > 0:
                raise ScenarioError("speed_limit > 0 violated", f"{where}.speed_limit_mps")
            by_id[e.id] = e
        for i, e in enumerate(edges):
            if e.opposite_edge is None:
                continue
            where = f"network.edges[{i}].opposite_edge"
            opp = by_id.get(e.opposite_edge)
            if opp is None:
                raise ScenarioError(f"opposite edge {e.opposite_edge!r} does not exist", where)
            if (opp.source, opp.target) != (e.target, e.source):
                raise ScenarioError(
                    f"opposite edge {opp.id!r} is not reversed relative to {e.id!r}", where
                )

        lanes = tuple(
            Lane(lane_id(e.id, i), e.id, i, e.length, e.speed_limit, e.opposite_edge)
            for e in edges
            for i in range(e.lane_count)
        )
        outgoing: dict[str, list[str]] = {n: [] for n in nodes}
        for e in edges:
            outgoing[e.source].append(e.id)
        adjacency = {e.id: tuple(outgoing[e.target]) for e in edges}
        return cls(
            nodes=nodes,
            edges=edges,
            lanes=lanes,
            adjacency=MappingProxyType(adjacency),
            _edge_index=MappingProxyType(by_id),
            _lane_index=MappingProxyType({ln.id: ln for ln in lanes}),
        )

    def edge(self, edge_id: str) -> Edge:
        return self._edge_index[edge_id]

    def lane(self, lane: str) -> Lane:
        return self._lane_index[lane]

    def has_lane(self, lane: str) -> bool:
        return lane in self._lane_index

    def has_edge(self, edge_id: str) -> bool:
        return edge_id in self._edge_index

    def lanes_of(self, edge_id: str) -> tuple[str, ...]:
        e = self._edge_index[edge_id]
        return tuple(lane_id(e.id, i) for i in range(e.lane_count))

    def upstream(self, edge_id: str) -> tuple[str, ...]:
        src = self._edge_index[edge_id].source
        return tuple(e.id for e in self.edges if e.target == src)

    def shortest_route(self, origin: str, destination: str) -> tuple[str, ...]:
        """Fewest-hop edge sequence from ``origin`` to ``destination`` (both included).

        Ties resolve to the first edge in declaration order, so routes are
        deterministic.
        """
        if origin == destination:
            return (origin,)
        prev: dict[str, str | None] = {origin: None}
        queue = deque([origin])
        while queue:
            cur = queue.popleft()
            for nxt in self.adjacency[cur]:
                if nxt in prev:
                    continue
                prev[nxt] = cur
                if nxt == destination:
                    route = [nxt]
                    while prev[route[-1]] is not None:
                        route.append(prev[route[-1]])
                    return tuple(reversed(route))
                queue.append(nxt)
        raise ScenarioError(f"no route from edge {origin!r} to edge {destination!r}")


# -- scenario text ----------------------------------------------------------

def parse_toml(text: str) -> dict[str, Any]:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # tomli messages end with "(at line L, column C)"
        msg = str(exc)
        locus = None
        if "(at line" in msg:
            msg, _, tail = msg.rpartition(" (at ")
            locus = tail.rstrip(")")
        elif msg.endswith("(at end of document)"):
            msg = msg[: -len(" (at end of document)")]
            lines = text.splitlines() or [""]
            locus = f"line {len(lines)}, column {len(lines[-1]) + 1}"
        raise ScenarioError(f"parse error: {msg}", locus) from None


def _require(table: Mapping[str, Any], key: str, where: str, kind=None):
    if key not in table:
        raise ScenarioError("missing required field", f"{where}.{key}")
    value = table[key]
    if kind is not None and (isinstance(value, bool) or not isinstance(value, kind)):
        raise ScenarioError(f"expected {getattr(kind, '__name__', kind)}, got {value!r}", f"{where}.{key}")
    return value


def network_from_table(table: Mapping[str, Any]) -> RoadNetwork:
    """Build a network from the parsed ``[network]`` table."""
    if "builtin" in table:
        params = {k: v for k, v in table.items() if k != "builtin"}
        return builtin_network(table["builtin"], **params)
    nodes = _require(table, "nodes", "network", list)
    raw_edges = _require(table, "edges", "network", list)
    edges = []
    for i, e in enumerate(raw_edges):
        where = f"network.edges[{i}]"
        if not isinstance(e, dict):
            raise ScenarioError("expected a table", where)
        edges.append(
            Edge(
                id=str(_require(e, "id", where, str)),
                source=str(_require(e, "source", where, str)),
                target=str(_require(e, "target", where, str)),
                lane_count=_require(e, "lane_count", where, int),
                length=float(_require(e, "length_m", where, (int, float))),
                speed_limit=float(_require(e, "speed_limit_mps", where, (int, float))),
                opposite_edge=e.get("opposite_edge"),
            )
        )
    return RoadNetwork.from_edges([str(n) for n in nodes], edges)


def load_network(scenario_text: str) -> RoadNetwork:
    """Parse scenario text and return the validated network of its ``[network]`` section."""
    doc = parse_toml(scenario_text)
    if "network" not in doc:
        raise ScenarioError("missing [network] section", "network")
    return network_from_table(doc["network"])


def network_to_table(net: RoadNetwork) -> dict[str, Any]:
    edges = []
    for e in net.edges:
        row = {
            "id": e.id,
            "source": e.source,
            "target": e.target,
            "lane_count": e.lane_count,
            "length_m": e.length,
            "speed_limit_mps": e.speed_limit,
        }
        if e.opposite_edge is not None:
            row["opposite_edge"] = e.opposite_edge
        edges.append(row)
    return {"nodes": sorted(net.nodes), "edges": edges}


def serialize_network(net: RoadNetwork) -> str:
    """Scenario text holding only the explicit ``[network]`` section."""
    return tomli_w.dumps({"network": network_to_table(net)})


# -- canonical desk-scale networks --------------------------------------------

def builtin_network(kind: str, **params) -> RoadNetwork:
    """Canonical test networks.

    ``ring``: one self-loop edge (``length_m``, ``lanes``, ``speed_limit_mps``).
    ``corridor``: a chain of ``edges`` edges of ``edge_length_m`` with
    ``lanes`` lanes each; ``bidirectional=true`` adds the reverse chain.
    ``grid``: ``rows`` x ``cols`` nodes with bidirectional edges between
    4-neighbours.
    """
    builders = {"ring": _ring, "corridor": _corridor, "grid": _grid}
    if kind not in builders:
        raise ScenarioError(f"unknown builtin network {kind!r}", "network.builtin")
    try:
        return builders[kind](**params)
    except TypeError as exc:
        raise ScenarioError(f"invalid parameters for {kind}: {exc}", "network") from None


def _ring(length_m: float = 1000.0, lanes: int = 1, speed_limit_mps: float = 13.89) -> RoadNetwork:
    return RoadNetwork.from_edges(["n0"], [Edge("ring", "n0", "n0", lanes, float(length_m), float(speed_limit_mps))])


def _corridor(
    edges: int = 2,
    lanes: int = 1,
    edge_length_m: float = 500.0,
    speed_limit_mps: float = 13.89,
    bidirectional: bool = False,
) -> RoadNetwork:
    if edges < 1:
        raise ScenarioError("corridor needs edges >= 1", "network.edges")
    nodes = [f"n{i}" for i in range(edges + 1)]
    out = []
    for i in range(edges):
        fwd, back = f"f{i}", f"b{i}"
        out.append(Edge(fwd, nodes[i], nodes[i + 1], lanes, float(edge_length_m), float(speed_limit_mps),
                        back if bidirectional else None))
    if bidirectional:
        for i in reversed(range(edges)):
            out.append(Edge(f"b{i}", nodes[i + 1], nodes[i], lanes, float(edge_length_m), float(speed_limit_mps), f"f{i}"))
    return RoadNetwork.from_edges(nodes, out)


def _grid(
    rows: int = 2,
    cols: int = 2,
    edge_length_m: float = 200.0,
    lanes: int = 1,
    speed_limit_mps: float = 13.89,
) -> RoadNetwork:
    if rows < 1 or cols < 1:
        raise ScenarioError("grid needs rows >= 1 and cols >= 1", "network")
    if rows * cols < 2:
        raise ScenarioError("grid(1,1) has no edges", "network")
    node = lambda r, c: f"n{r}_{c}"  # noqa: E731
    nodes = [node(r, c) for r in range(rows) for c in range(cols)]
    out = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= rows or c2 >= cols:
                    continue
                a, b = node(r, c), node(r2, c2)
                fwd, back = f"{a}>{b}", f"{b}>{a}"
                out.append(Edge(fwd, a, b, lanes, float(edge_length_m), float(speed_limit_mps), back))
                out.append(Edge(back, b, a, lanes, float(edge_length_m), float(speed_limit_mps), fwd))
    return RoadNetwork.from_edges(nodes, out)
