"""Random-walk route sampling over choice tables.

All trips of one replicate walk simultaneously as numpy vectors. Each trip
draws its uniforms from a counter-based stream keyed by (master seed, trip id,
iteration, replicate, attempt, step), so a trip's route does not depend on which other
trips are sampled with it or in what order.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .choice import ChoiceTable
from .demand import IntervalPartition, Trip
from .network import Network

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
DEFAULT_RETRY_LIMIT = 8


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def trip_key(trip_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(str(trip_id).encode(), digest_size=8).digest(), "little")


def stream_keys(seed: int, keys: np.ndarray, replicate: int, attempt: int, iteration: int = 0) -> np.ndarray:
    salt = (_GOLDEN * (int(seed) + 1) + 0x632BE59BD9B4E019 * int(iteration)) & _M64
    k = _mix(keys ^ np.uint64(salt))
    k = _mix(k + np.uint64((replicate * 0xD1B54A32D192ED03 + attempt * 0xABC98388FB8FAC03 + 1) & _M64))
    return k


def stream_uniforms(keys: np.ndarray, step: int) -> np.ndarray:
    """Uniforms in [0, 1) with 53 random bits, one per key."""
    z = _mix(keys + np.uint64(((step + 1) * _GOLDEN) & _M64))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass
class TripBatch:
    trip_ids: list[str]
    origin: np.ndarray
    destination: np.ndarray
    departure: np.ndarray
    keys: np.ndarray

    @classmethod
    def from_trips(cls, trips: Sequence[Trip]) -> "TripBatch":
        return cls([t.trip_id for t in trips],
                   np.array([t.origin for t in trips], dtype=np.int64),
                   np.array([t.destination for t in trips], dtype=np.int64),
                   np.array([t.departure for t in trips], dtype=float),
                   np.array([trip_key(t.trip_id) for t in trips], dtype=np.uint64))

    def __len__(self) -> int:
        return len(self.trip_ids)

    def subset(self, idx: np.ndarray) -> "TripBatch":
        return TripBatch([self.trip_ids[i] for i in idx.tolist()], self.origin[idx], self.destination[idx],
                         self.departure[idx], self.keys[idx])


class TableSet:
    """Choice tables for every (interval, destination), stacked for vectorized lookup.

    ``cum[t, v]`` holds the cumulative choice distribution over
    ``net.out_matrix[v]`` for table ``t = interval * n_dest + dest_index``,
    normalized so the last link with positive probability sits at exactly 1.
    """

    def __init__(self, net: Network, tables: Mapping[tuple[int, int], ChoiceTable], n_intervals: int):
        self.tables = dict(tables)
        self.n_intervals = n_intervals
        self.destinations = np.array(sorted({d for _, d in self.tables}), dtype=np.int64)
        self.dest_index = {int(d): k for k, d in enumerate(self.destinations)}
        n_dest = len(self.destinations)
        n_tab = n_intervals * n_dest
        pad = net.out_matrix < 0
        safe = np.where(pad, 0, net.out_matrix)
        self.cum = np.ones((n_tab, net.n_nodes, net.out_matrix.shape[1]))
        self.entry = np.zeros((n_tab, net.n_nodes), dtype=bool)
        for (iv, d), tab in self.tables.items():
            t = iv * n_dest + self.dest_index[d]
            p = np.where(pad, 0.0, tab.probs[safe])
            cum = np.cumsum(p, axis=1)
            total = cum[:, -1:]
            with np.errstate(invalid="ignore", divide="ignore"):
                self.cum[t] = np.where(total > 0, cum / total, 1.0)
            self.entry[t] = tab.entry & (total[:, 0] > 0)
        for iv in range(n_intervals):
            for d in self.destinations.tolist():
                if (iv, d) not in self.tables:
                    raise ValueError(f"missing choice table for interval {iv}, destination {d}")

    def dest_indices(self, dest: np.ndarray) -> np.ndarray:
        lookup = np.full(int(dest.max()) + 1 if dest.size else 1, -1, dtype=np.int64)
        for d, k in self.dest_index.items():
            if d < lookup.size:
                lookup[d] = k
        idx = lookup[dest]
        if (idx < 0).any():
            raise ValueError("trip destination without choice tables")
        return idx


@dataclass
class RouteAssignment:
    """Sampled routes, one row per trip (same order as the trip batch).

    ``links`` is padded with -1 past ``lengths``; internal links are included.
    ``intervals`` holds the interval whose table made each decision.
    """

    links: np.ndarray
    lengths: np.ndarray
    routed: np.ndarray
    intervals: np.ndarray
    attempts: np.ndarray
    departure: np.ndarray
    seed: int
    replicate: int

    def route(self, k: int) -> list[int]:
        return self.links[k, :self.lengths[k]].tolist()

    @property
    def n_routed(self) -> int:
        return int(self.routed.sum())


def remove_loops(nodes: Sequence[int]) -> list[int]:
    """Erase cycles from a walk: on revisiting a node, cut back to its first visit."""
    out: list[int] = []
    pos: dict[int, int] = {}
    for v in nodes:
        p = pos.get(v)
        if p is not None:
            for w in out[p + 1:]:
                del pos[w]
            del out[p + 1:]
        else:
            pos[v] = len(out)
            out.append(v)
    return out


def _erase_row(tails: list[int], links: list[int], ivs: list[int]):
    # same policy as remove_loops, carrying the link and interval that leave each node
    nodes: list[int] = []
    kept_links: list[int] = []
    kept_ivs: list[int] = []
    pos: dict[int, int] = {}
    for v, lk, iv in zip(tails, links, ivs):
        p = pos.get(v)
        if p is None:
            pos[v] = len(nodes)
            nodes.append(v)
        else:
            for w in nodes[p + 1:]:
                del pos[w]
            del nodes[p + 1:]
            del kept_links[p:]
            del kept_ivs[p:]
        kept_links.append(lk)
        kept_ivs.append(iv)
    return kept_links, kept_ivs


def _walk(net: Network, tables: TableSet, costs: np.ndarray, partition: IntervalPartition,
          batch: TripBatch, keys: np.ndarray, max_steps: int):
    n = len(batch)
    dest = batch.destination
    dest_idx = tables.dest_indices(dest) if n else np.zeros(0, dtype=np.int64)
    n_dest = len(tables.destinations)
    L, last = partition.interval_length, partition.count - 1
    node = batch.origin.copy()
    clock = batch.departure.astype(float).copy()
    active = np.arange(n)
    length = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    record = []
    for step in range(max_steps):
        if active.size == 0:
            break
        v = node[active]
        iv = np.minimum((clock[active] // L).astype(np.int64), last)
        t = iv * n_dest + dest_idx[active]
        ok = tables.entry[t, v]
        if not ok.all():
            active, v, iv, t = active[ok], v[ok], iv[ok], t[ok]
        u = stream_uniforms(keys[active], step)
        choice = (tables.cum[t, v] <= u[:, None]).sum(axis=1)
        lk = net.out_matrix[v, choice]
        clock[active] += costs[iv, lk]
        node[active] = net.head[lk]
        record.append((active, lk, iv))
        arrived = node[active] == dest[active]
        fin = active[arrived]
        done[fin] = True
        length[fin] = step + 1
        active = active[~arrived]

    width = int(length.max()) if n else 0
    links = np.full((n, width), -1, dtype=np.int64)
    ivs = np.full((n, width), -1, dtype=np.int64)
    for s, (pos, lk, iv) in enumerate(record[:width]):
        keep = done[pos]
        links[pos[keep], s] = lk[keep]
        ivs[pos[keep], s] = iv[keep]

    if width > 1:
        # rows whose node sequence repeats need loop erasure
        tails = np.where(links >= 0, net.tail[np.maximum(links, 0)], net.n_nodes + np.arange(width))
        srt = np.sort(tails, axis=1)
        loopy = np.flatnonzero((np.diff(srt, axis=1) == 0).any(axis=1))
        for r in loopy.tolist():
            m = length[r]
            kl, ki = _erase_row(tails[r, :m].tolist(), links[r, :m].tolist(), ivs[r, :m].tolist())
            links[r, :] = -1
            ivs[r, :] = -1
            links[r, :len(kl)] = kl
            ivs[r, :len(ki)] = ki
            length[r] = len(kl)
    return links, ivs, length, done


def sample_assignment(net: Network, trips: TripBatch, tables: TableSet, costs: np.ndarray,
                      partition: IntervalPartition, seed: int, replicate: int = 0,
                      max_steps: int | None = None, retry_limit: int = DEFAULT_RETRY_LIMIT,
                      iteration: int = 0) -> RouteAssignment:
    """Walk every trip from origin to destination.

    At each node the next link is drawn from the table of the interval the
    trip's clock is in; the clock then advances by that link's cost in the same
    interval. Walks longer than ``max_steps`` (default four times the node
    count) restart on a fresh stream, at most ``retry_limit`` times, after which
    the trip is left unrouted. Loops are erased from finished walks.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (partition.count, net.n_links):
        raise ValueError(f"costs must have shape {(partition.count, net.n_links)}, got {costs.shape}")
    max_steps = 4 * net.n_nodes if max_steps is None else max_steps
    n = len(trips)
    width = 1
    links = np.full((n, width), -1, dtype=np.int64)
    ivs = np.full((n, width), -1, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    routed = np.zeros(n, dtype=bool)
    attempts = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    for attempt in range(retry_limit + 1):
        if todo.size == 0:
            break
        sub = trips.subset(todo)
        keys = stream_keys(seed, sub.keys, replicate, attempt, iteration)
        lk, iv, ln, ok = _walk(net, tables, costs, partition, sub, keys, max_steps)
        attempts[todo] = attempt + 1
        if lk.shape[1] > width:
            grow = lk.shape[1] - width
            links = np.pad(links, ((0, 0), (0, grow)), constant_values=-1)
            ivs = np.pad(ivs, ((0, 0), (0, grow)), constant_values=-1)
            width = lk.shape[1]
        rows = todo[ok]
        links[rows, :lk.shape[1]] = lk[ok]
        ivs[rows, :lk.shape[1]] = iv[ok]
        lengths[rows] = ln[ok]
        routed[rows] = True
        todo = todo[~ok]
    used = int(lengths.max()) if n else 0
    return RouteAssignment(links[:, :max(used, 1)], lengths, routed, ivs[:, :max(used, 1)], attempts,
                           trips.departure.copy(), seed, replicate)


def sample_route(net: Network, trip: Trip, tables: TableSet, costs: np.ndarray, partition: IntervalPartition,
                 seed: int, replicate: int = 0, max_steps: int | None = None,
                 retry_limit: int = DEFAULT_RETRY_LIMIT) -> list[int] | None:
    """Route of a single trip as a link list, or ``None`` if it could not be routed.

    Identical to that trip's row in :func:`sample_assignment` for the same seed
    and replicate.
    """
    ra = sample_assignment(net, TripBatch.from_trips([trip]), tables, costs, partition, seed, replicate,
                           max_steps, retry_limit)
    return ra.route(0) if ra.routed[0] else None


def route_nodes(net: Network, links: Sequence[int]) -> list[int]:
    if not links:
        return []
    return [net.links[links[0]].tail] + [net.links[lk].head for lk in links]


def write_routes_csv(net: Network, trips: TripBatch, assignment: RouteAssignment, path: str | Path) -> None:
    """``trip_id,departure_s,link_ids`` with real links only, semicolon-joined."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "departure_s", "link_ids"])
        for k in np.flatnonzero(assignment.routed).tolist():
            real = [str(lk) for lk in assignment.route(k) if not net.internal[lk]]
            w.writerow([trips.trip_ids[k], repr(float(trips.departure[k])), ";".join(real)])
