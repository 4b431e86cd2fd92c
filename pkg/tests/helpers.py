"""Test fixtures and independent oracles.

The oracles here deliberately avoid the package's contraction code: the
series-parallel oracle reduces a composition tree recursively with the closed
logit formulas written out again in plain ``math``.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from rwdta.choice import reverse_dijkstra
from rwdta.demand import Trip
from rwdta.network import build_network


def chain(n_links=3, length=10.0, capacity=1800.0):
    """0 -> 1 -> ... -> n_links."""
    return build_network(n_links + 1, [(k, k + 1, length) for k in range(n_links)], capacity=capacity)


def diamond(c_oa=50.0, c_ad=50.0, c_ob=50.0, c_bd=50.0, capacity=1800.0, speed=1.0):
    """o=0, a=1, b=2, d=3; links 0:o->a 1:a->d 2:o->b 3:b->d."""
    return build_network(4, [(0, 1, c_oa), (1, 3, c_ad), (0, 2, c_ob), (2, 3, c_bd)],
                         capacity=capacity, speed=speed)


def trips_between(o, d, n, horizon=3600.0, seed=0, prefix="t"):
    rng = random.Random(seed)
    return sorted((Trip(f"{prefix}{k}", o, d, round(rng.uniform(0, horizon - 1e-6), 3)) for k in range(n)),
                  key=lambda t: t.departure)


# ---------------------------------------------------------------------------
# scalar logit formulas, written out independently

def oracle_logit(costs, gamma):
    pi = min(costs)
    w = [math.exp(gamma * (c - pi) / pi) for c in costs]
    s = sum(w)
    return [x / s for x in w]


def oracle_vcost(costs, gamma):
    if len(costs) == 1:
        return costs[0]
    pi = min(costs)
    return pi + (pi / gamma) * math.log(sum(math.exp(gamma * (c - pi) / pi) for c in costs))


# ---------------------------------------------------------------------------
# series-parallel networks

@dataclass
class SPNode:
    kind: str  # "edge", "series", "parallel"
    cost: float = 0.0
    children: tuple = ()
    link: int = -1


def random_sp_tree(rng: random.Random, n_edges: int) -> SPNode:
    if n_edges == 1:
        return SPNode("edge", cost=round(rng.uniform(1.0, 20.0), 3))
    k = rng.randint(1, n_edges - 1)
    kind = rng.choice(("series", "parallel"))
    return _flatten(SPNode(kind, children=(random_sp_tree(rng, k), random_sp_tree(rng, n_edges - k))))


def _flatten(node: SPNode) -> SPNode:
    # series of series and parallel of parallel are the same graph; keep them flat
    kids = []
    for ch in node.children:
        if ch.kind == node.kind:
            kids.extend(ch.children)
        else:
            kids.append(ch)
    return SPNode(node.kind, children=tuple(kids))


def build_sp(tree: SPNode):
    """Lay the composition out as a graph from node 0 to node 1; returns (edges, n_nodes)."""
    edges = []
    counter = [2]

    def lay(node, u, v):
        if node.kind == "edge":
            node.link = len(edges)
            edges.append((u, v, node.cost))
        elif node.kind == "series":
            cur = u
            for k, ch in enumerate(node.children):
                if k == len(node.children) - 1:
                    nxt = v
                else:
                    nxt = counter[0]
                    counter[0] += 1
                lay(ch, cur, nxt)
                cur = nxt
        else:
            for ch in node.children:
                lay(ch, u, v)

    lay(tree, 0, 1)
    return edges, counter[0]


def sp_virtual_cost(node: SPNode, gamma: float) -> float:
    if node.kind == "edge":
        return node.cost
    vs = [sp_virtual_cost(ch, gamma) for ch in node.children]
    if node.kind == "series":
        return sum(vs)
    return oracle_vcost(vs, gamma)


def sp_routes(node: SPNode, gamma: float):
    """[(tuple of links, probability)] for the nested equivalent-impedance model."""
    if node.kind == "edge":
        return [((node.link,), 1.0)]
    if node.kind == "series":
        out = [((), 1.0)]
        for ch in node.children:
            out = [(r + r2, p * p2) for r, p in out for r2, p2 in sp_routes(ch, gamma)]
        return out
    ps = oracle_logit([sp_virtual_cost(ch, gamma) for ch in node.children], gamma)
    return [(r, pk * p) for ch, pk in zip(node.children, ps) for r, p in sp_routes(ch, gamma)]


def random_sp_network(rng: random.Random, max_nodes: int = 12, max_tries: int = 500):
    """A series-parallel network whose links all agree with the shortest-distance order.

    Networks where some link would point away from the destination are
    rejected and redrawn, so that the acyclic subnetwork is the whole network
    and the nested reduction applies unchanged.
    """
    for _ in range(max_tries):
        tree = random_sp_tree(rng, rng.randint(2, 14))
        edges, n = build_sp(tree)
        if n > max_nodes:
            continue
        net = build_network(n, edges)
        dist, _ = reverse_dijkstra(net, net.length, 1)
        t, h = net.tail, net.head
        if np.all((dist[h] < dist[t]) | ((dist[h] == dist[t]) & (h < t))):
            return tree, net
    raise RuntimeError("could not draw a consistent series-parallel network")


# ---------------------------------------------------------------------------
# random general networks

def random_strongly_connected(rng: random.Random, n_min=4, n_max=60, extra=1.5):
    n = rng.randint(n_min, n_max)
    perm = list(range(n))
    rng.shuffle(perm)
    edges = set()
    for k in range(n):
        edges.add((perm[k], perm[(k + 1) % n]))
    for _ in range(int(extra * n)):
        a, b = rng.sample(range(n), 2)
        edges.add((a, b))
    edges = sorted(edges)
    return build_network(n, [(a, b, round(rng.uniform(1.0, 30.0), 2)) for a, b in edges])


def random_digraph(rng: random.Random, n_min=3, n_max=60, p_edge=None):
    """Weakly connected, not necessarily strongly connected."""
    n = rng.randint(n_min, n_max)
    edges = set()
    for v in range(1, n):
        u = rng.randrange(v)
        edges.add((u, v) if rng.random() < 0.5 else (v, u))
    for _ in range(rng.randint(0, 2 * n)):
        a, b = rng.sample(range(n), 2)
        edges.add((a, b))
    return build_network(n, [(a, b, round(rng.uniform(1.0, 30.0), 2)) for a, b in sorted(edges)])
