"""Downstream node choice probabilities for one destination and one interval.

The tables are built by contracting the network towards the destination:

1. a reverse Dijkstra search orders nodes by shortest cost to the destination;
2. only links that step strictly down that order are kept, giving an acyclic
   subnetwork (the *DAG*);
3. nodes are visited in order while an in-tree of virtual links rooted at the
   destination is grown. For node ``i`` the lowest common ancestor ``l`` of its
   DAG successors is found, the subtree spanning the successors and ``l`` is
   contracted (probabilities and virtual cost from ``i`` to ``l``), and the
   virtual link ``i -> l`` is added to the tree;
4. links outside the DAG get a small share ``beta`` of each node's probability
   mass so every route keeps a non-zero chance.
"""
from __future__ import annotations

import csv
import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .impedance import ChoiceParams, logit_and_virtual_cost
from .network import Network

logger = logging.getLogger(__name__)


class ChoiceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# shortest paths and the acyclic subnetwork

def _reverse_search(net: Network, costs, d: int):
    if not 0 <= d < net.n_nodes:
        raise ChoiceError(f"destination {d} is not a node of the network")
    cost = costs.tolist() if isinstance(costs, np.ndarray) else list(costs)
    tail = net.tail.tolist()
    in_adj = net.in_adjacency
    dist = [math.inf] * net.n_nodes
    nxt = [-1] * net.n_nodes
    dist[d] = 0.0
    heap = [(0.0, d)]
    done = [False] * net.n_nodes
    while heap:
        dv, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for lid in in_adj[v]:
            u = tail[lid]
            nd = dv + cost[lid]
            if nd < dist[u]:
                dist[u] = nd
                nxt[u] = lid
                heapq.heappush(heap, (nd, u))
    return dist, nxt


def reverse_dijkstra(net: Network, costs, d: int) -> tuple[np.ndarray, list[int]]:
    """Shortest cost from every node to ``d`` and the nodes that reach ``d``
    sorted by ``(distance, node id)``; ``d`` comes first."""
    dist, _ = _reverse_search(net, costs, d)
    order = sorted((v for v in range(net.n_nodes) if dist[v] < math.inf), key=lambda v: (dist[v], v))
    return np.array(dist), order


def shortest_path_tree(net: Network, costs, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances to ``d`` and, per node, the first link of a shortest path (-1 if none)."""
    dist, nxt = _reverse_search(net, costs, d)
    return np.array(dist), np.array(nxt, dtype=np.int64)


@dataclass
class DagView:
    """Links consistent with the order key; ``downstream[i]`` lists DAG links leaving ``i``."""

    in_dag: np.ndarray
    downstream: list[list[int]]

    @property
    def excluded(self) -> np.ndarray:
        return ~self.in_dag


def extract_dag(net: Network, dist, tie_break=None) -> DagView:
    """Keep link ``i -> j`` iff ``(dist[j], tie[j]) < (dist[i], tie[i])`` and both are finite."""
    dist = np.asarray(dist, dtype=float)
    tie = np.arange(net.n_nodes) if tie_break is None else np.asarray(tie_break)
    dt, dh = dist[net.tail], dist[net.head]
    keep = np.isfinite(dt) & np.isfinite(dh) & ((dh < dt) | ((dh == dt) & (tie[net.head] < tie[net.tail])))
    downstream: list[list[int]] = [[] for _ in range(net.n_nodes)]
    for lid in np.flatnonzero(keep).tolist():
        downstream[net.links[lid].tail].append(lid)
    return DagView(keep, downstream)


# ---------------------------------------------------------------------------
# virtual in-tree

class VirtualInTree:
    """In-tree of virtual links rooted at the destination.

    ``parent[v]`` is the head of ``v``'s virtual link, ``virtual_cost[v]`` its
    cost. Nodes not yet inserted have parent -2; the root has parent -1.
    """

    def __init__(self, n_nodes: int, root: int):
        self.root = root
        self.parent = [-2] * n_nodes
        self.virtual_cost = [0.0] * n_nodes
        self.depth = [0] * n_nodes
        self.parent[root] = -1

    def __contains__(self, v: int) -> bool:
        return self.parent[v] != -2

    def add(self, v: int, parent: int, cost: float) -> None:
        if parent not in self:
            raise ChoiceError(f"parent {parent} is not in the tree")
        if v in self:
            raise ChoiceError(f"node {v} is already in the tree")
        self.parent[v] = parent
        self.virtual_cost[v] = cost
        self.depth[v] = self.depth[parent] + 1

    def cost_to_root(self, v: int) -> float:
        total = 0.0
        while v != self.root:
            total += self.virtual_cost[v]
            v = self.parent[v]
        return total

    def lca(self, nodes: Iterable[int]) -> int:
        parent, depth = self.parent, self.depth
        it = iter(nodes)
        try:
            a = next(it)
        except StopIteration:
            raise ChoiceError("lca of an empty set") from None
        if a not in self:
            raise ChoiceError(f"node {a} is not in the tree")
        for b in it:
            if b not in self:
                raise ChoiceError(f"node {b} is not in the tree")
            while depth[b] > depth[a]:
                b = parent[b]
            while depth[a] > depth[b]:
                a = parent[a]
            while a != b:
                a, b = parent[a], parent[b]
        return a


def lca(tree: VirtualInTree, nodes: Iterable[int]) -> int:
    """Deepest common ancestor of ``nodes`` in ``tree``."""
    return tree.lca(nodes)


# ---------------------------------------------------------------------------
# tree contraction

@dataclass
class OutTreeResult:
    edge_probabilities: list[float]
    """Choice probability of each input edge at its tail node."""
    path_probabilities: dict[int, float]
    """For each edge entering the extra node (by index), the probability of the
    unique root-to-extra path that ends with it."""
    virtual_cost: float


def contract_out_tree(root: int, extra: int, edges: Sequence[tuple[int, int, float]], gamma: float) -> OutTreeResult:
    """Contract a modified out-tree from ``root`` towards the extra node.

    ``edges`` are ``(tail, head, cost)``. Every node except ``root`` and
    ``extra`` must have exactly one incoming edge; ``extra`` may have several.
    Nodes are handled in reverse topological order: at each node the logit over
    its out-edges (edge cost plus the child's virtual cost to ``extra``) gives
    the choice probabilities, and the soft minimum becomes the node's own
    virtual cost.
    """
    out: dict[int, list[int]] = defaultdict(list)
    indeg: dict[int, int] = defaultdict(int)
    for k, (u, v, c) in enumerate(edges):
        if u == extra:
            raise ChoiceError("the extra node cannot have outgoing edges")
        if not c > 0:
            raise ChoiceError(f"edge {u}->{v} has non-positive cost {c}")
        out[u].append(k)
        indeg[v] += 1
    if indeg.get(root, 0):
        raise ChoiceError("root has incoming edges; not an out-tree")
    for v, n in indeg.items():
        if v != extra and n != 1:
            raise ChoiceError(f"node {v} has in-degree {n}; not an out-tree")
    if not indeg.get(extra, 0):
        raise ChoiceError("extra node has no incoming edges")

    order = [root]
    k = 0
    while k < len(order):
        u = order[k]
        k += 1
        for e in out.get(u, ()):
            v = edges[e][1]
            if v != extra:
                order.append(v)
    if len(order) != len(indeg):
        raise ChoiceError("edges not reachable from the root")

    vcost = {extra: 0.0}
    probs = [0.0] * len(edges)
    for u in reversed(order):
        es = out.get(u)
        if not es:
            raise ChoiceError(f"node {u} has no route to the extra node")
        p, vc = logit_and_virtual_cost([edges[e][2] + vcost[edges[e][1]] for e in es], gamma)
        for e, pe in zip(es, p):
            probs[e] = pe
        vcost[u] = vc

    reach = {root: 1.0}
    path_probs = {}
    for u in order:
        for e in out.get(u, ()):
            v = edges[e][1]
            if v == extra:
                path_probs[e] = reach[u] * probs[e]
            else:
                reach[v] = reach[u] * probs[e]
    return OutTreeResult(probs, path_probs, vcost[root])


def _contract_in_tree(root: int, members: dict, parent, vcost, depth, gamma: float):
    """Contract the subtree spanning ``members`` up to ``root``.

    ``members`` maps each successor node of the extra node to its list of
    ``(link, cost)`` direct links. Returns ``{link: probability}`` and the
    virtual cost from the extra node to ``root``.
    """
    children: dict[int, list[int]] = defaultdict(list)
    seen = {root}
    for x in members:
        y = x
        while y not in seen:
            seen.add(y)
            p = parent[y]
            children[p].append(y)
            y = p
    nodes = sorted(seen, key=lambda v: -depth[v])

    below: dict[int, float] = {}
    branch: dict[int, list[float]] = {}
    for y in nodes:
        direct = members.get(y, ())
        kids = children.get(y, ())
        alts = [c for _, c in direct]
        alts += [vcost[z] + below[z] for z in kids]
        p, below[y] = logit_and_virtual_cost(alts, gamma)
        branch[y] = p

    reach = {root: 1.0}
    link_probs = {}
    for y in reversed(nodes):
        p = branch[y]
        r = reach[y]
        direct = members.get(y, ())
        for k, (lid, _) in enumerate(direct):
            link_probs[lid] = r * p[k]
        off = len(direct)
        for k, z in enumerate(children.get(y, ())):
            reach[z] = r * p[off + k]
    return link_probs, below[root]


def contract_modified_in_tree(root: int, extra: int, edges: Sequence[tuple[int, int, float]],
                              gamma: float) -> tuple[list[float], float]:
    """Probabilities of the extra node's out-edges and its virtual cost to ``root``.

    ``edges`` are ``(tail, head, cost)``; edges leaving ``extra`` are its
    choices, every other edge points from a node to its parent in the in-tree.
    The returned probabilities follow the order of the extra node's edges.
    """
    parent: dict[int, int] = {root: -1}
    vcost: dict[int, float] = {}
    extra_edges = []
    for u, v, c in edges:
        if not c > 0:
            raise ChoiceError(f"edge {u}->{v} has non-positive cost {c}")
        if u == extra:
            extra_edges.append((v, c))
        elif u in parent:
            raise ChoiceError(f"node {u} has two parents; not an in-tree")
        else:
            parent[u] = v
            vcost[u] = c
    if not extra_edges:
        raise ChoiceError("extra node has no outgoing edges")
    depth: dict[int, int] = {}

    def _depth(v):
        path = []
        while v not in depth:
            if v == root:
                depth[v] = 0
                break
            if v not in parent or v in path:
                raise ChoiceError(f"node {v} does not lead to the root")
            path.append(v)
            v = parent[v]
        d = depth[v]
        for w in reversed(path):
            d += 1
            depth[w] = d
        return depth[path[0]] if path else depth[v]

    members: dict[int, list] = defaultdict(list)
    for k, (v, c) in enumerate(extra_edges):
        _depth(v)
        members[v].append((k, c))
    link_probs, vc = _contract_in_tree(root, members, parent, vcost, depth, gamma)
    return [link_probs[k] for k in range(len(extra_edges))], vc


# ---------------------------------------------------------------------------
# choice tables

@dataclass
class ChoiceTable:
    """Per-link choice probabilities for one (interval, destination).

    ``probs[l]`` is the probability of taking link ``l`` at its tail node, for
    tail nodes with ``entry`` set. ``virtual_cost[v]`` is the contracted cost
    from ``v`` to the destination (``inf`` where ``v`` cannot reach it).
    """

    interval: int
    destination: int
    probs: np.ndarray
    entry: np.ndarray
    virtual_cost: np.ndarray
    in_dag: np.ndarray
    beta_violations: int = 0

    def node_distribution(self, net: Network, v: int) -> dict[int, float]:
        if not self.entry[v]:
            return {}
        return {lid: float(self.probs[lid]) for lid in net.out_adjacency[v]}


def compute_choice_table(net: Network, costs, d: int, params: ChoiceParams, interval: int = 0) -> ChoiceTable:
    """Downstream choice probabilities towards ``d`` under link ``costs``."""
    cost = np.asarray(costs, dtype=float)
    if cost.shape != (net.n_links,):
        raise ChoiceError(f"expected {net.n_links} link costs, got shape {cost.shape}")
    if not (np.all(np.isfinite(cost)) and np.all(cost > 0)):
        raise ChoiceError("link costs must be positive and finite")
    dist, order = reverse_dijkstra(net, cost, d)
    dag = extract_dag(net, dist)
    gamma = params.gamma
    clist = cost.tolist()
    head = net.head.tolist()

    tree = VirtualInTree(net.n_nodes, d)
    parent, vcost, depth = tree.parent, tree.virtual_cost, tree.depth
    probs = np.zeros(net.n_links)
    to_dest = np.full(net.n_nodes, math.inf)
    to_dest[d] = 0.0
    for i in order[1:]:
        members: dict[int, list] = {}
        for lid in dag.downstream[i]:
            members.setdefault(head[lid], []).append((lid, clist[lid]))
        if len(members) == 1:
            (x, direct), = members.items()
            p, vc = logit_and_virtual_cost([c for _, c in direct], gamma)
            for (lid, _), pl in zip(direct, p):
                probs[lid] = pl
            l = x
        else:
            l = tree.lca(members)
            link_probs, vc = _contract_in_tree(l, members, parent, vcost, depth, gamma)
            for lid, pl in link_probs.items():
                probs[lid] = pl
        if not vc > 0:
            raise ChoiceError(f"virtual cost from node {i} collapsed to {vc}; gamma {gamma} is too weak "
                              "for the number of merging alternatives")
        tree.add(i, l, vc)
        to_dest[i] = vc + to_dest[l]

    entry = np.isfinite(dist)
    entry[d] = False
    violations = 0
    if params.beta > 0:
        reach = np.isfinite(dist)
        cand = dag.excluded & entry[net.tail] & reach[net.head]
        n_excl = np.bincount(net.tail[cand], minlength=net.n_nodes)
        if cand.any():
            in_dag = dag.in_dag
            positive = in_dag & (probs > 0)
            min_p = np.full(net.n_nodes, np.inf)
            np.minimum.at(min_p, net.tail[positive], probs[positive])
            has = n_excl > 0
            violations = int(np.count_nonzero(has & (params.beta >= min_p)))
            probs[cand] = params.beta / n_excl[net.tail[cand]]
            scale = np.where(has, 1.0 + params.beta, 1.0)
            probs = np.where(entry[net.tail], probs / scale[net.tail], 0.0)
        if violations:
            logger.debug("destination %d interval %d: beta %.3g exceeds the smallest acyclic choice "
                         "probability at %d nodes", d, interval, params.beta, violations)
    return ChoiceTable(interval, d, probs, entry, to_dest, dag.in_dag, violations)


def write_choice_tables_csv(net: Network, tables: Iterable[ChoiceTable], path: str | Path) -> None:
    """Debug dump: ``interval,destination,node,out_link,probability``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "destination", "node", "out_link", "probability"])
        for t in tables:
            for v in np.flatnonzero(t.entry).tolist():
                for lid in net.out_adjacency[v]:
                    w.writerow([t.interval, t.destination, v, lid, repr(float(t.probs[lid]))])
