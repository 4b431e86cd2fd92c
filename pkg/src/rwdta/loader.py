"""Deterministic mesoscopic network loading with a BPR volume-delay function.

Vehicles are counted when they enter a link; the count in each interval,
scaled to an hourly rate, sets that link's travel time for the interval::

    t = t0 * (1 + alpha * (v / c) ** power)

Since entry times depend on travel times, propagation and the volume-delay
update are repeated until link times settle.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .demand import IntervalPartition
from .network import DEFAULT_INTERNAL_COST, Network, free_flow_costs
from .sampler import RouteAssignment

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VdfParams:
    alpha: float = 0.15
    power: float = 4.0
    tolerance: float = 0.1  # seconds
    max_rounds: int = 20
    internal_cost: float = DEFAULT_INTERNAL_COST

    def __post_init__(self):
        if self.alpha < 0 or self.power < 0:
            raise ValueError("volume-delay parameters must be non-negative")
        if self.max_rounds < 1:
            raise ValueError("need at least one loading round")


@dataclass
class LinkTravelTimes:
    """Average travel time and entering vehicle count per (interval, link)."""

    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.counts.shape:
            raise ValueError("times and counts must have the same shape")


@dataclass
class LoadMetrics:
    total_travel_time: float
    total_distance: float
    link_volumes: np.ndarray
    trip_times: np.ndarray
    n_trips: int
    rounds: int
    converged: bool

    @property
    def mean_travel_time(self) -> float:
        return self.total_travel_time / self.n_trips if self.n_trips else 0.0


def free_flow_times(net: Network, partition: IntervalPartition, internal_cost: float = DEFAULT_INTERNAL_COST) -> LinkTravelTimes:
    t0 = free_flow_costs(net, internal_cost)
    return LinkTravelTimes(np.tile(t0, (partition.count, 1)),
                           np.zeros((partition.count, net.n_links), dtype=np.int64))


def bpr_times(t0: np.ndarray, counts: np.ndarray, capacity: np.ndarray, interval_length: float,
              vdf: VdfParams) -> np.ndarray:
    flow = counts * (3600.0 / interval_length)
    return t0 * (1.0 + vdf.alpha * (flow / capacity) ** vdf.power)


class _Routes:
    """Routed trips sorted by route length so step ``s`` touches a prefix."""

    def __init__(self, assignment: RouteAssignment):
        rows = np.flatnonzero(assignment.routed)
        lengths = assignment.lengths[rows]
        order = np.argsort(-lengths, kind="stable")
        self.rows = rows[order]
        self.lengths = lengths[order]
        self.links = assignment.links[self.rows]
        self.departure = assignment.departure[self.rows].astype(float)
        width = int(self.lengths.max()) if self.rows.size else 0
        # number of trips still travelling at step s
        self.active = np.searchsorted(-self.lengths, -np.arange(width), side="left")

    def propagate(self, times: np.ndarray, partition: IntervalPartition):
        n_int, n_links = times.shape
        L, last = partition.interval_length, partition.count - 1
        clock = self.departure.copy()
        flat = times.ravel()
        idx_parts = []
        for s, m in enumerate(self.active.tolist()):
            lk = self.links[:m, s]
            iv = np.minimum((clock[:m] // L).astype(np.int64), last)
            idx = iv * n_links + lk
            idx_parts.append(idx)
            clock[:m] += flat[idx]
        counts = np.bincount(np.concatenate(idx_parts), minlength=n_int * n_links) if idx_parts \
            else np.zeros(n_int * n_links, dtype=np.int64)
        return counts.reshape(n_int, n_links), clock - self.departure


def load(assignment: RouteAssignment, net: Network, partition: IntervalPartition,
         vdf: VdfParams = VdfParams()) -> tuple[LinkTravelTimes, LoadMetrics]:
    """Load routed trips and return per-interval link times and run totals.

    Starting from free-flow times, trips are propagated, entering counts are
    tallied per (interval, link), and times are refreshed from the
    volume-delay function until no link time moves by more than
    ``vdf.tolerance`` seconds (at most ``vdf.max_rounds`` rounds). Unrouted
    trips are ignored.
    """
    routes = _Routes(assignment)
    t0 = free_flow_costs(net, vdf.internal_cost)
    times = np.tile(t0, (partition.count, 1))
    converged = False
    rounds = 0
    for rounds in range(1, vdf.max_rounds + 1):
        counts, _ = routes.propagate(times, partition)
        new = bpr_times(t0, counts, net.capacity, partition.interval_length, vdf)
        delta = float(np.max(np.abs(new - times))) if new.size else 0.0
        times = new
        if delta < vdf.tolerance:
            converged = True
            break
    if not converged:
        logger.info("loading did not settle within %d rounds", vdf.max_rounds)
    counts, trip_times = routes.propagate(times, partition)

    dist = 0.0
    if routes.rows.size:
        lk = routes.links
        dist = float(np.where(lk >= 0, net.length[np.maximum(lk, 0)], 0.0).sum())
    full_trip_times = np.zeros(len(assignment.routed))
    full_trip_times[routes.rows] = trip_times
    metrics = LoadMetrics(float(trip_times.sum()), dist, counts.sum(axis=0), full_trip_times,
                          int(routes.rows.size), rounds, converged)
    return LinkTravelTimes(times, counts), metrics


def average_deviation(a: LinkTravelTimes, b: LinkTravelTimes) -> float:
    """Volume-weighted mean of ``|a - b| / b`` over (interval, link) pairs.

    Weights are the entering counts of both sides; pairs with no vehicles in
    either are skipped.
    """
    if a.times.shape != b.times.shape:
        raise ValueError(f"shape mismatch: {a.times.shape} vs {b.times.shape}")
    w = (a.counts + b.counts).astype(float)
    total = w.sum()
    if total == 0:
        return 0.0
    rel = np.abs(a.times - b.times) / b.times
    return float((w * rel).sum() / total)


def write_link_times_csv(ltt: LinkTravelTimes, path: str | Path) -> None:
    """``interval,link,avg_time_s,volume``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "link", "avg_time_s", "volume"])
        n_int, n_links = ltt.times.shape
        for iv in range(n_int):
            for lk in range(n_links):
                w.writerow([iv, lk, repr(float(ltt.times[iv, lk])), int(ltt.counts[iv, lk])])
