"""Directed road network model, JSON network files and intersection expansion.

Two on-disk formats are understood:

* the *junction* format, a turn-restricted road network::

    {"junctions": [{"id", "x", "y"}],
     "segments": [{"id", "from", "to", "length_m", "lanes", "speed_mps", "capacity_vph"?}],
     "connections": [{"junction", "from_segment", "to_segment"}]}

* the *expanded* format written by :func:`save_network`, a plain directed graph
  tagged with ``"format": "rwdta-expanded"``.

:func:`expand_intersections` turns the first into the second by replacing each
junction with one entry/exit node per incident segment and one internal link per
allowed turn, so that routes in the plain graph map one-to-one onto
turn-respecting routes in the junction network.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EXPANDED_FORMAT = "rwdta-expanded"
DEFAULT_LANE_CAPACITY = 1800.0  # vehicles/hour/lane
DEFAULT_INTERNAL_COST = 1.0  # seconds

REAL = "real"
INTERNAL = "internal"


class NetworkError(ValueError):
    """Malformed or inconsistent network input."""


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    length: float
    lanes: int
    free_speed: float
    capacity: float
    kind: str = REAL
    segment: Any = None

    @property
    def is_internal(self) -> bool:
        return self.kind == INTERNAL


class Network:
    """Immutable directed graph with dense integer node and link ids.

    Besides the :class:`Link` records, column arrays (``tail``, ``head``,
    ``length``, ``capacity`` ...) are kept for vectorized consumers, together
    with a padded out-adjacency matrix used by the route sampler.
    """

    def __init__(self, n_nodes: int, links: Sequence[Link], node_names: Sequence[str] | None = None,
                 check_connected: bool = True):
        self.n_nodes = int(n_nodes)
        self.links = tuple(links)
        self.node_names = tuple(node_names) if node_names is not None else None
        self.expansion_warnings: tuple[str, ...] = ()
        self._validate()

        out_adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        in_adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for ln in self.links:
            out_adj[ln.tail].append(ln.id)
            in_adj[ln.head].append(ln.id)
        self.out_adjacency = tuple(tuple(a) for a in out_adj)
        self.in_adjacency = tuple(tuple(a) for a in in_adj)

        self.tail = np.array([ln.tail for ln in self.links], dtype=np.int64)
        self.head = np.array([ln.head for ln in self.links], dtype=np.int64)
        self.length = np.array([ln.length for ln in self.links], dtype=float)
        self.free_speed = np.array([ln.free_speed for ln in self.links], dtype=float)
        self.capacity = np.array([ln.capacity for ln in self.links], dtype=float)
        self.internal = np.array([ln.is_internal for ln in self.links], dtype=bool)

        self.max_out_degree = max((len(a) for a in out_adj), default=0)
        mat = np.full((self.n_nodes, max(self.max_out_degree, 1)), -1, dtype=np.int64)
        for v, adj in enumerate(out_adj):
            mat[v, :len(adj)] = adj
        self.out_matrix = mat
        self.out_degree = np.array([len(a) for a in out_adj], dtype=np.int64)

        if check_connected and not self.is_weakly_connected():
            raise NetworkError("network is not weakly connected")

    @property
    def n_links(self) -> int:
        return len(self.links)

    def _validate(self) -> None:
        for i, ln in enumerate(self.links):
            if ln.id != i:
                raise NetworkError(f"link ids must be dense and ordered; link at position {i} has id {ln.id}")
            if not (0 <= ln.tail < self.n_nodes and 0 <= ln.head < self.n_nodes):
                raise NetworkError(f"link {ln.id} references an unknown node")
            if ln.tail == ln.head:
                raise NetworkError(f"link {ln.id} is a self-loop on node {ln.tail}")
            if ln.kind not in (REAL, INTERNAL):
                raise NetworkError(f"link {ln.id} has unknown kind {ln.kind!r}")
            if ln.kind == REAL and not ln.length > 0:
                raise NetworkError(f"real link {ln.id} must have positive length")
            if ln.length < 0:
                raise NetworkError(f"link {ln.id} has negative length")
            if not ln.free_speed > 0:
                raise NetworkError(f"link {ln.id} must have positive free speed")
            if not ln.capacity > 0:
                raise NetworkError(f"link {ln.id} must have positive capacity")

    def is_weakly_connected(self) -> bool:
        if self.n_nodes == 0:
            return True
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for ln in self.links:
            nbrs[ln.tail].append(ln.head)
            nbrs[ln.head].append(ln.tail)
        seen = np.zeros(self.n_nodes, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            v = queue.popleft()
            for w in nbrs[v]:
                if not seen[w]:
                    seen[w] = True
                    queue.append(w)
        return bool(seen.all())

    def link_between(self, tail: int, head: int) -> int:
        for lid in self.out_adjacency[tail]:
            if self.links[lid].head == head:
                return lid
        raise KeyError((tail, head))

    def __repr__(self) -> str:
        return f"Network(n_nodes={self.n_nodes}, n_links={self.n_links})"


def free_flow_cost(link: Link, internal_cost: float = DEFAULT_INTERNAL_COST) -> float:
    """Travel time in seconds on an empty network."""
    if link.is_internal:
        return float(internal_cost)
    return link.length / link.free_speed


def free_flow_costs(net: Network, internal_cost: float = DEFAULT_INTERNAL_COST) -> np.ndarray:
    costs = net.length / net.free_speed
    costs[net.internal] = internal_cost
    return costs


def build_network(n_nodes: int, edges: Iterable[tuple], *, speed: float = 1.0, capacity: float = DEFAULT_LANE_CAPACITY,
                  check_connected: bool = True) -> Network:
    """Convenience constructor from ``(tail, head, length)`` triples.

    With the default unit speed a link's free-flow time equals its length.
    """
    links = [Link(i, int(t), int(h), float(length), 1, speed, capacity)
             for i, (t, h, length) in enumerate(edges)]
    return Network(n_nodes, links, check_connected=check_connected)


# ---------------------------------------------------------------------------
# junction-level network

@dataclass(frozen=True)
class Junction:
    id: Any
    x: float = 0.0
    y: float = 0.0


@dataclass(frozen=True)
class Segment:
    id: Any
    tail: Any
    head: Any
    length: float
    lanes: int = 1
    speed: float = 13.89
    capacity: float | None = None

    @property
    def effective_capacity(self) -> float:
        if self.capacity is not None:
            return float(self.capacity)
        return DEFAULT_LANE_CAPACITY * self.lanes


@dataclass(frozen=True)
class Connection:
    junction: Any
    from_segment: Any
    to_segment: Any


@dataclass
class RawJunctionNetwork:
    junctions: list[Junction]
    segments: list[Segment]
    connections: list[Connection]
    _by_seg: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        jids = set()
        for j in self.junctions:
            if j.id in jids:
                raise NetworkError(f"duplicate junction id {j.id!r}")
            jids.add(j.id)
        segs = {}
        for s in self.segments:
            if s.id in segs:
                raise NetworkError(f"duplicate segment id {s.id!r}")
            for end in (s.tail, s.head):
                if end not in jids:
                    raise NetworkError(f"segment {s.id!r} references unknown junction {end!r}")
            if s.tail == s.head:
                raise NetworkError(f"segment {s.id!r} starts and ends at junction {s.tail!r}")
            if not s.length > 0:
                raise NetworkError(f"segment {s.id!r} must have positive length")
            if not s.speed > 0:
                raise NetworkError(f"segment {s.id!r} must have positive speed")
            if s.lanes < 1:
                raise NetworkError(f"segment {s.id!r} must have at least one lane")
            if s.capacity is not None and not s.capacity > 0:
                raise NetworkError(f"segment {s.id!r} must have positive capacity")
            segs[s.id] = s
        seen = set()
        for c in self.connections:
            if c.junction not in jids:
                raise NetworkError(f"connection references unknown junction {c.junction!r}")
            for sid in (c.from_segment, c.to_segment):
                if sid not in segs:
                    raise NetworkError(f"connection at junction {c.junction!r} references unknown segment {sid!r}")
            if segs[c.from_segment].head != c.junction:
                raise NetworkError(f"segment {c.from_segment!r} does not enter junction {c.junction!r}")
            if segs[c.to_segment].tail != c.junction:
                raise NetworkError(f"segment {c.to_segment!r} does not leave junction {c.junction!r}")
            key = (c.from_segment, c.to_segment)
            if key in seen:
                raise NetworkError(f"duplicate connection {key!r}")
            seen.add(key)
        self._by_seg = segs

    def segment(self, sid) -> Segment:
        return self._by_seg[sid]

    def canonical(self) -> "RawJunctionNetwork":
        return RawJunctionNetwork(
            sorted(self.junctions, key=lambda j: _id_key(j.id)),
            sorted(self.segments, key=lambda s: _id_key(s.id)),
            sorted(self.connections, key=lambda c: (_id_key(c.junction), _id_key(c.from_segment),
                                                    _id_key(c.to_segment))),
        )

    def to_dict(self) -> dict:
        net = self.canonical()
        segments = []
        for s in net.segments:
            d = {"id": s.id, "from": s.tail, "to": s.head, "length_m": s.length, "lanes": s.lanes,
                 "speed_mps": s.speed}
            if s.capacity is not None:
                d["capacity_vph"] = s.capacity
            segments.append(d)
        return {
            "junctions": [{"id": j.id, "x": j.x, "y": j.y} for j in net.junctions],
            "segments": segments,
            "connections": [{"junction": c.junction, "from_segment": c.from_segment,
                             "to_segment": c.to_segment} for c in net.connections],
        }


def _id_key(v):
    # ints before strings so mixed id types still sort
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise NetworkError(f"ids must be integers or strings, got {v!r}")
    return (0, v, "") if isinstance(v, int) else (1, 0, v)


def read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise NetworkError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if 0 < exc.lineno <= len(text.splitlines()) else ""
        raise NetworkError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line.strip()}") from exc
    if not isinstance(data, dict):
        raise NetworkError(f"{path}: top level must be a JSON object")
    return data


def _field(obj: dict, name: str, where: str, conv=None, default=None, required=True):
    if name not in obj:
        if required:
            raise NetworkError(f"{where}: missing field {name!r}")
        return default
    v = obj[name]
    if conv is None:
        return v
    try:
        return conv(v)
    except (TypeError, ValueError) as exc:
        raise NetworkError(f"{where}: bad value for {name!r}: {v!r}") from exc


def raw_network_from_dict(data: dict) -> RawJunctionNetwork:
    if data.get("format") == EXPANDED_FORMAT:
        raise NetworkError("input is already an expanded network; nothing to convert")
    for key in ("junctions", "segments", "connections"):
        if not isinstance(data.get(key), list):
            raise NetworkError(f"missing or non-list top-level field {key!r}")
    junctions = []
    for k, j in enumerate(data["junctions"]):
        where = f"junctions[{k}]"
        junctions.append(Junction(_field(j, "id", where), _field(j, "x", where, float, 0.0, False),
                                  _field(j, "y", where, float, 0.0, False)))
    segments = []
    for k, s in enumerate(data["segments"]):
        where = f"segments[{k}]"
        cap = _field(s, "capacity_vph", where, float, None, False)
        segments.append(Segment(_field(s, "id", where), _field(s, "from", where), _field(s, "to", where),
                                _field(s, "length_m", where, float), _field(s, "lanes", where, int, 1, False),
                                _field(s, "speed_mps", where, float), cap))
    connections = []
    for k, c in enumerate(data["connections"]):
        where = f"connections[{k}]"
        connections.append(Connection(_field(c, "junction", where), _field(c, "from_segment", where),
                                      _field(c, "to_segment", where)))
    for obj in (*junctions, *segments):
        _id_key(obj.id)
    return RawJunctionNetwork(junctions, segments, connections)


def parse_network(path: str | Path) -> RawJunctionNetwork:
    """Read and validate a junction-format network file."""
    return raw_network_from_dict(read_json(path))


def save_raw_network(raw: RawJunctionNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(raw.to_dict(), indent=1) + "\n", encoding="utf-8")


def expand_intersections(raw: RawJunctionNetwork) -> Network:
    """Replace every junction by a subgraph of entry/exit nodes and turn links.

    Segment ``k`` (in canonical id order) becomes real link ``k`` from node
    ``2k`` (its exit node at the upstream junction) to node ``2k + 1`` (its
    entry node at the downstream junction). Every allowed connection becomes an
    internal link from the entry node of its incoming segment to the exit node
    of its outgoing segment, so a walk can only turn where a connection exists.
    """
    net = raw.canonical()
    seg_index = {s.id: k for k, s in enumerate(net.segments)}
    names = []
    links = []
    for k, s in enumerate(net.segments):
        names += [f"{s.id}@tail", f"{s.id}@head"]
        links.append(Link(k, 2 * k, 2 * k + 1, s.length, s.lanes, s.speed, s.effective_capacity, REAL, s.id))

    incident: dict = {j.id: 0 for j in net.junctions}
    for s in net.segments:
        incident[s.tail] += 1
        incident[s.head] += 1
    n_conn: dict = {j.id: 0 for j in net.junctions}
    for c in net.connections:
        a, b = net.segment(c.from_segment), net.segment(c.to_segment)
        n_conn[c.junction] += 1
        links.append(Link(len(links), 2 * seg_index[a.id] + 1, 2 * seg_index[b.id], 0.0,
                          min(a.lanes, b.lanes), b.speed, min(a.effective_capacity, b.effective_capacity),
                          INTERNAL, (a.id, b.id)))

    notes = []
    for j in net.junctions:
        if n_conn[j.id] == 0 and incident[j.id] > 0:
            msg = f"junction {j.id!r} has {incident[j.id]} incident segments but no connections"
            logger.warning(msg)
            notes.append(msg)

    expanded = Network(2 * len(net.segments), links, names, check_connected=False)
    expanded.expansion_warnings = tuple(notes)
    return expanded


# ---------------------------------------------------------------------------
# expanded format

def network_to_dict(net: Network) -> dict:
    names = net.node_names or [str(v) for v in range(net.n_nodes)]
    links = []
    for ln in net.links:
        d = {"id": ln.id, "from": ln.tail, "to": ln.head, "length_m": ln.length, "lanes": ln.lanes,
             "speed_mps": ln.free_speed, "capacity_vph": ln.capacity, "kind": ln.kind}
        if ln.segment is not None:
            d["segment"] = list(ln.segment) if isinstance(ln.segment, tuple) else ln.segment
        links.append(d)
    return {"format": EXPANDED_FORMAT, "version": 1,
            "nodes": [{"id": v, "name": names[v]} for v in range(net.n_nodes)],
            "links": links,
            "warnings": list(net.expansion_warnings)}


def network_from_dict(data: dict) -> Network:
    if data.get("format") != EXPANDED_FORMAT:
        raise NetworkError("not an expanded network file")
    nodes = data.get("nodes")
    if not isinstance(nodes, list) or not isinstance(data.get("links"), list):
        raise NetworkError("expanded network needs 'nodes' and 'links' lists")
    names = []
    for k, nd in enumerate(nodes):
        if _field(nd, "id", f"nodes[{k}]", int) != k:
            raise NetworkError(f"nodes[{k}]: node ids must be dense and ordered")
        names.append(str(nd.get("name", k)))
    links = []
    for k, ld in enumerate(data["links"]):
        where = f"links[{k}]"
        seg = ld.get("segment")
        links.append(Link(_field(ld, "id", where, int), _field(ld, "from", where, int), _field(ld, "to", where, int),
                          _field(ld, "length_m", where, float), _field(ld, "lanes", where, int, 1, False),
                          _field(ld, "speed_mps", where, float), _field(ld, "capacity_vph", where, float),
                          _field(ld, "kind", where, str, REAL, False),
                          tuple(seg) if isinstance(seg, list) else seg))
    net = Network(len(nodes), links, names)
    net.expansion_warnings = tuple(data.get("warnings", ()))
    return net


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n", encoding="utf-8")


def load_network(path: str | Path) -> Network:
    """Load either file format, expanding junction networks on the fly."""
    data = read_json(path)
    if data.get("format") == EXPANDED_FORMAT:
        return network_from_dict(data)
    net = expand_intersections(raw_network_from_dict(data))
    if not net.is_weakly_connected():
        raise NetworkError(f"{path}: network is not weakly connected after expansion")
    return net
