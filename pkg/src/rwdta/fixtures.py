"""Synthetic networks and demand used by the tests and the bundled data files.

``grid_network`` reproduces the layout of a small square grid of single-lane
two-way streets; ``random_network`` builds a jittered-lattice network with a
chosen number of junctions and one-lane segments of random length.
"""
from __future__ import annotations

import random
from importlib import resources
from pathlib import Path

from .demand import Trip
from .network import Connection, Junction, Network, RawJunctionNetwork, Segment

# vph per lane on the bundled grid; with the bundled demand this puts the
# busiest links near 0.9 v/c so the assignment has something to balance
GRID_CAPACITY = 1200.0
RANDOM_OD_JUNCTIONS = 20


def _connections_all_turns(junctions, segments, allow_u_turns=False):
    into: dict = {j.id: [] for j in junctions}
    out: dict = {j.id: [] for j in junctions}
    for s in segments:
        into[s.head].append(s)
        out[s.tail].append(s)
    conns = []
    for j in junctions:
        for a in into[j.id]:
            # a dead end keeps its U-turn so the street stays usable
            dead_end = all(b.head == a.tail for b in out[j.id])
            for b in out[j.id]:
                if allow_u_turns or dead_end or b.head != a.tail:
                    conns.append(Connection(j.id, a.id, b.id))
    return conns


def grid_network(n: int = 4, length: float = 400.0, speed: float = 13.89, lanes: int = 1,
                 capacity: float | None = None, allow_u_turns: bool = False) -> RawJunctionNetwork:
    """``n`` x ``n`` junctions joined by two-way segments (``4 * n * (n - 1)`` segments)."""
    junctions = [Junction(f"J{r}_{c}", c * length, r * length) for r in range(n) for c in range(n)]
    segments = []
    for r in range(n):
        for c in range(n):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 < n and c2 < n:
                    a, b = f"J{r}_{c}", f"J{r2}_{c2}"
                    segments.append(Segment(f"{a}>{b}", a, b, length, lanes, speed, capacity))
                    segments.append(Segment(f"{b}>{a}", b, a, length, lanes, speed, capacity))
    return RawJunctionNetwork(junctions, segments, _connections_all_turns(junctions, segments, allow_u_turns))


def random_network(n_junctions: int = 100, n_segments: int = 348, min_length: float = 90.0,
                   max_length: float = 230.0, speed: float = 13.89, capacity: float | None = None,
                   seed: int = 7) -> RawJunctionNetwork:
    """Jittered lattice with randomly dropped streets.

    Junctions sit on a near-square lattice; neighbouring junctions are joined by
    two-way streets, and streets are removed at random (never disconnecting the
    graph) until ``n_segments`` one-way segments remain.
    """
    if n_segments % 2:
        raise ValueError("segments come in two-way pairs; n_segments must be even")
    rng = random.Random(seed)
    cols = int(round(n_junctions ** 0.5))
    pos = {}
    for k in range(n_junctions):
        r, c = divmod(k, cols)
        pos[k] = (c + rng.uniform(-0.25, 0.25), r + rng.uniform(-0.25, 0.25))
    streets = []
    for k in range(n_junctions):
        c = k % cols
        if c + 1 < cols and k + 1 < n_junctions:
            streets.append((k, k + 1))
        if k + cols < n_junctions:
            streets.append((k, k + cols))
    # a few diagonals so the lattice is not too regular
    for k in range(n_junctions):
        c = k % cols
        if c + 1 < cols and k + cols + 1 < n_junctions and rng.random() < 0.15:
            streets.append((k, k + cols + 1))
    target = n_segments // 2
    if len(streets) < target:
        raise ValueError(f"lattice has only {len(streets)} streets, need {target}")
    rng.shuffle(streets)
    kept = list(streets)
    for st in streets:
        if len(kept) == target:
            break
        trial = [s for s in kept if s != st]
        if _connected(n_junctions, trial):
            kept = trial
    if len(kept) != target:
        raise ValueError("could not thin the lattice without disconnecting it")
    kept.sort()
    junctions = [Junction(f"N{k}", round(pos[k][0] * 150, 1), round(pos[k][1] * 150, 1)) for k in range(n_junctions)]
    segments = []
    for a, b in kept:
        length = round(rng.uniform(min_length, max_length), 1)
        segments.append(Segment(f"N{a}>N{b}", f"N{a}", f"N{b}", length, 1, speed, capacity))
        segments.append(Segment(f"N{b}>N{a}", f"N{b}", f"N{a}", length, 1, speed, capacity))
    return RawJunctionNetwork(junctions, segments, _connections_all_turns(junctions, segments))


def _connected(n, edges):
    nbrs = [[] for _ in range(n)]
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in nbrs[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n


def junction_endpoints(net: Network) -> tuple[dict, dict]:
    """Map each junction to the expanded nodes where trips may start or end there.

    Trips start at the upstream node of a segment leaving the junction and end
    at the downstream node of a segment entering it.
    """
    starts: dict = {}
    ends: dict = {}
    for ln in net.links:
        if ln.is_internal:
            continue
        # fixture segment ids are "A>B"
        a, b = str(ln.segment).split(">")
        starts.setdefault(a, []).append(ln.tail)
        ends.setdefault(b, []).append(ln.head)
    return starts, ends


def random_trips(net: Network, n_trips: int, horizon: float = 3600.0, seed: int = 11,
                 junctions: list | None = None) -> list[Trip]:
    """Uniform random junction-to-junction demand with uniform departure times."""
    rng = random.Random(seed)
    starts, ends = junction_endpoints(net)
    names = sorted(set(starts) & set(ends)) if junctions is None else list(junctions)
    trips = []
    for k in range(n_trips):
        a, b = rng.sample(names, 2)
        o = rng.choice(starts[a])
        d = rng.choice(ends[b])
        dep = round(rng.uniform(0.0, horizon), 1)
        if dep >= horizon:
            dep = 0.0
        trips.append(Trip(f"t{k}", o, d, dep))
    trips.sort(key=lambda t: t.departure)
    return trips


def data_path(name: str) -> Path:
    """Path of a bundled data file (``grid4x4.json``, ``grid4x4_trips.csv`` ...)."""
    return Path(str(resources.files("rwdta") / "data" / name))
