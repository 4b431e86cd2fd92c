"""The iterative sample-load-select loop and a fixed-choice-set logit baseline.

Each iteration of :func:`run_dta`

1. computes a choice table for every (interval, demanded destination) from
   the current link costs,
2. smooths it against the previous iteration's table,
3. samples ``k`` route assignments on independent random streams,
4. loads each one,
5. keeps the replicate with the lowest mean trip time,
6. takes that replicate's link times as the next costs, and
7. stops once the relative change in link times drops below ``epsilon``.

:func:`baseline_mnl_assign` runs the same loop with per-OD route sets grown
from successive shortest paths and a plain multinomial logit choice.
"""
from __future__ import annotations

import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .choice import ChoiceTable, compute_choice_table, reverse_dijkstra, shortest_path_tree
from .demand import IntervalPartition, Trip
from .impedance import ChoiceParams, mnl_probabilities
from .loader import LinkTravelTimes, LoadMetrics, VdfParams, average_deviation, free_flow_times, load
from .network import Network
from .sampler import RouteAssignment, TableSet, TripBatch, sample_assignment, stream_keys, stream_uniforms

logger = logging.getLogger(__name__)

SMOOTHING_MODES = ("product", "msa", "none")


class AssignmentError(RuntimeError):
    pass


@dataclass
class RunConfig:
    k: int = 16
    max_iterations: int = 30
    epsilon: float = 0.01
    seed: int = 0
    gamma: float = -5.0
    beta: float = 0.1
    vdf_alpha: float = 0.15
    vdf_power: float = 4.0
    internal_cost: float = 1.0
    smoothing: str = "product"  # "msa" and "none" are experimental alternatives
    stop_on_convergence: bool = True
    baseline_gamma: float = -0.05  # per second of route cost
    n_routes: int = 5
    retry_limit: int = 8
    max_steps_factor: int = 4
    workers: int | None = None
    record_wall_time: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.smoothing not in SMOOTHING_MODES:
            raise ValueError(f"smoothing must be one of {SMOOTHING_MODES}")
        if self.n_routes < 1:
            raise ValueError("n_routes must be at least 1")
        if not self.baseline_gamma < 0:
            raise ValueError("baseline_gamma must be negative")
        ChoiceParams(self.gamma, self.beta)

    @property
    def choice_params(self) -> ChoiceParams:
        return ChoiceParams(self.gamma, self.beta)

    @property
    def vdf(self) -> VdfParams:
        return VdfParams(self.vdf_alpha, self.vdf_power, internal_cost=self.internal_cost)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class IterationRecord:
    iteration: int
    total_time: float
    total_distance: float
    gap: float
    wall_ms: float
    winner: int
    replicate_mean_times: list[float]
    n_routed: int
    beta_violations: int = 0


@dataclass
class RunResult:
    config: RunConfig
    trips: TripBatch
    assignment: RouteAssignment
    link_times: LinkTravelTimes
    metrics: LoadMetrics
    history: list[IterationRecord]
    converged: bool
    converged_iteration: int | None
    unroutable: dict[str, str] = field(default_factory=dict)
    tables: dict | None = None

    @property
    def total_times(self) -> list[float]:
        return [r.total_time for r in self.history]

    @property
    def gaps(self) -> list[float]:
        return [r.gap for r in self.history]


def default_workers() -> int:
    env = os.environ.get("RWDTA_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            logger.warning("ignoring non-integer RWDTA_THREADS=%r", env)
    return n


# ---------------------------------------------------------------------------
# smoothing

def smooth_tables(net: Network, previous: ChoiceTable | None, computed: ChoiceTable, mode: str = "product",
                  iteration: int = 2) -> ChoiceTable:
    """Blend a freshly computed table into the previous one, node by node.

    ``product`` weights the previous probabilities by the new ones and
    renormalizes; ``msa`` averages with step ``1 / iteration``; ``none``
    returns the computed table. Nodes present in only one table keep that
    table's distribution.
    """
    if previous is None or mode == "none":
        return computed
    if mode not in SMOOTHING_MODES:
        raise ValueError(f"unknown smoothing mode {mode!r}")
    tail = net.tail
    both = previous.entry & computed.entry
    if mode == "product":
        blend = previous.probs * computed.probs
    else:
        step = 1.0 / max(iteration, 1)
        blend = (1.0 - step) * previous.probs + step * computed.probs
    sums = np.bincount(tail, weights=blend, minlength=net.n_nodes)
    zero = both & ~(sums > 0)
    if zero.any():
        logger.info("smoothing: %d nodes with an all-zero product fall back to the new distribution",
                    int(zero.sum()))
    ok = both & (sums > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(ok[tail], blend / np.where(sums > 0, sums, 1.0)[tail], 0.0)
    use_new = (computed.entry & ~ok)[tail]
    use_old = (previous.entry & ~computed.entry)[tail]
    probs = np.where(use_new, computed.probs, probs)
    probs = np.where(use_old, previous.probs, probs)
    return ChoiceTable(computed.interval, computed.destination, probs, previous.entry | computed.entry,
                       computed.virtual_cost, computed.in_dag, computed.beta_violations)


# ---------------------------------------------------------------------------
# shared machinery

_WORKER_STATE: dict = {}


def _init_table_worker(net, params):
    _WORKER_STATE["net"] = net
    _WORKER_STATE["params"] = params


def _table_job(job):
    iv, d, costs = job
    return compute_choice_table(_WORKER_STATE["net"], costs, d, _WORKER_STATE["params"], iv)


class _Pool:
    """Process pool for table building, thread pool for sampling and loading."""

    def __init__(self, net: Network, params: ChoiceParams, workers: int):
        self.workers = workers
        self.net = net
        self.params = params
        self.procs = None
        self.threads = None
        if workers > 1:
            self.procs = ProcessPoolExecutor(workers, initializer=_init_table_worker, initargs=(net, params))
            self.threads = ThreadPoolExecutor(workers)

    def tables(self, costs: np.ndarray, destinations: Sequence[int]) -> dict:
        jobs = [(iv, d, costs[iv]) for iv in range(costs.shape[0]) for d in destinations]
        if self.procs is None:
            out = [compute_choice_table(self.net, c, d, self.params, iv) for iv, d, c in jobs]
        else:
            out = list(self.procs.map(_table_job, jobs, chunksize=max(1, len(jobs) // (4 * self.workers))))
        return {(iv, d): t for (iv, d, _), t in zip(jobs, out)}

    def map(self, fn: Callable, items):
        if self.threads is None:
            return [fn(x) for x in items]
        return list(self.threads.map(fn, items))

    def close(self):
        if self.procs is not None:
            self.procs.shutdown()
            self.threads.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _prepare(net: Network, trips: Sequence[Trip], config: RunConfig):
    """Drop trips whose origin cannot reach the destination at all."""
    costs0 = free_flow_times(net, _dummy_partition(), config.internal_cost).times[0]
    unroutable = {}
    keep = []
    by_dest: dict = {}
    for k, t in enumerate(trips):
        if not (0 <= t.origin < net.n_nodes and 0 <= t.destination < net.n_nodes):
            unroutable[t.trip_id] = "unknown node"
            continue
        by_dest.setdefault(t.destination, []).append(k)
    for d, ks in by_dest.items():
        dist, _ = reverse_dijkstra(net, costs0, d)
        for k in ks:
            if np.isfinite(dist[trips[k].origin]):
                keep.append(k)
            else:
                unroutable[trips[k].trip_id] = f"destination {d} not reachable from origin {trips[k].origin}"
    keep.sort()
    if unroutable:
        logger.warning("%d trips cannot reach their destination and are excluded", len(unroutable))
    if not keep:
        raise AssignmentError("no trip is routable")
    return TripBatch.from_trips([trips[k] for k in keep]), unroutable


def _dummy_partition() -> IntervalPartition:
    return IntervalPartition(1.0, 1.0)


def _select(loads: list[tuple[LinkTravelTimes, LoadMetrics]]) -> int:
    means = [m.mean_travel_time for _, m in loads]
    return int(np.argmin(means))


def _iterate(net: Network, batch: TripBatch, partition: IntervalPartition, config: RunConfig,
             sample: Callable[[np.ndarray, int, _Pool], list[RouteAssignment]],
             unroutable: dict, pool: _Pool, tables_of: Callable | None = None) -> RunResult:
    ff = free_flow_times(net, partition, config.internal_cost)
    costs = ff.times.copy()
    prev = ff
    history: list[IterationRecord] = []
    converged_at = None
    best = None
    for it in range(1, config.max_iterations + 1):
        t_start = time.perf_counter()
        replicates, violations = sample(costs, it, pool)
        loads = pool.map(lambda a: load(a, net, partition, config.vdf), replicates)
        w = _select(loads)
        ltt, metrics = loads[w]
        gap = average_deviation(ltt, prev)
        wall = (time.perf_counter() - t_start) * 1000.0
        history.append(IterationRecord(it, metrics.total_travel_time, metrics.total_distance, gap, wall, w,
                                       [m.mean_travel_time for _, m in loads], metrics.n_trips, violations))
        logger.info("iteration %d: %d replicates, best %d, total time %.1f s, gap %.5f",
                    it, len(replicates), w, metrics.total_travel_time, gap)
        best = (replicates[w], ltt, metrics)
        if it >= 2 and gap < config.epsilon and converged_at is None:
            converged_at = it
            if config.stop_on_convergence:
                break
        costs = ltt.times
        prev = ltt

    assignment, ltt, metrics = best
    for k in np.flatnonzero(~assignment.routed).tolist():
        unroutable[batch.trip_ids[k]] = "random walk exceeded the step limit on every retry"
    return RunResult(config, batch, assignment, ltt, metrics, history, converged_at is not None, converged_at,
                     unroutable, tables_of() if tables_of else None)


# ---------------------------------------------------------------------------
# random-walk assignment

def run_dta(net: Network, trips: Sequence[Trip], partition: IntervalPartition, config: RunConfig = RunConfig()) -> RunResult:
    """Random-walk dynamic assignment until link times stop changing."""
    batch, unroutable = _prepare(net, trips, config)
    destinations = sorted(set(batch.destination.tolist()))
    params = config.choice_params
    state: dict = {"tables": None}
    max_steps = config.max_steps_factor * net.n_nodes
    workers = config.workers or default_workers()

    def sample(costs, it, pool):
        computed = pool.tables(costs, destinations)
        prev = state["tables"]
        if prev is None:
            tables = computed
        else:
            tables = {key: smooth_tables(net, prev[key], tab, config.smoothing, it) for key, tab in computed.items()}
        state["tables"] = tables
        violations = sum(t.beta_violations for t in computed.values())
        if violations:
            logger.warning("iteration %d: beta %.3g is not below the smallest acyclic choice probability "
                           "at %d (node, table) pairs", it, params.beta, violations)
        tset = TableSet(net, tables, partition.count)
        reps = pool.map(lambda r: sample_assignment(net, batch, tset, costs, partition, config.seed, r,
                                                    max_steps, config.retry_limit, it), range(config.k))
        return reps, violations

    with _Pool(net, params, workers) as pool:
        return _iterate(net, batch, partition, config, sample, unroutable, pool, lambda: state["tables"])


# ---------------------------------------------------------------------------
# logit baseline

def _path_from_tree(nxt: np.ndarray, head: np.ndarray, o: int, d: int) -> tuple[int, ...]:
    path = []
    v = o
    while v != d:
        lk = int(nxt[v])
        if lk < 0:
            raise AssignmentError(f"no path from {o} to {d}")
        path.append(lk)
        v = int(head[lk])
    return tuple(path)


def baseline_mnl_assign(net: Network, trips: Sequence[Trip], partition: IntervalPartition,
                        config: RunConfig = RunConfig(), n_routes: int | None = None) -> RunResult:
    """Iterated logit assignment over accumulated shortest-path route sets.

    Route sets are kept per (origin, destination, departure interval). Every
    iteration adds the current shortest path under that interval's link costs
    and keeps the ``n_routes`` cheapest; each trip then picks a route with
    multinomial logit probabilities (``config.baseline_gamma`` per second).
    The first iteration sees only the free-flow shortest path.
    """
    n_routes = config.n_routes if n_routes is None else n_routes
    if n_routes < 1:
        raise ValueError("n_routes must be at least 1")
    batch, unroutable = _prepare(net, trips, config)
    workers = config.workers or default_workers()
    dep_iv = partition.index_array(batch.departure)
    keys = list(zip(batch.origin.tolist(), batch.destination.tolist(), dep_iv.tolist()))
    groups = sorted(set(keys))
    group_index = {g: k for k, g in enumerate(groups)}
    trip_group = np.array([group_index[g] for g in keys], dtype=np.int64)
    by_dest: dict = {}
    for o, d, iv in groups:
        by_dest.setdefault((d, iv), []).append(o)
    route_sets: dict = {g: [] for g in groups}

    def sample(costs, it, pool):
        for (d, iv), origins in by_dest.items():
            _, nxt = shortest_path_tree(net, costs[iv], d)
            for o in origins:
                p = _path_from_tree(nxt, net.head, o, d)
                rs = route_sets[(o, d, iv)]
                if p not in rs:
                    rs.append(p)
        probs = []
        for g in groups:
            rs = route_sets[g]
            c = costs[g[2]]
            rc = [float(c[list(r)].sum()) for r in rs]
            if len(rs) > n_routes:
                order = sorted(range(len(rs)), key=lambda k: (rc[k], k))[:n_routes]
                order.sort()
                rs[:] = [rs[k] for k in order]
                rc = [rc[k] for k in order]
            probs.append(mnl_probabilities(rc, config.baseline_gamma))
        width = max(len(p) for p in probs)
        cum = np.ones((len(groups), width))
        for k, p in enumerate(probs):
            cs = np.cumsum(p)
            cum[k, :len(p)] = cs / cs[-1]
        flat_routes = [r for g in groups for r in route_sets[g]]
        offsets = np.cumsum([0] + [len(route_sets[g]) for g in groups])[:-1]
        max_len = max(len(r) for r in flat_routes)
        rmat = np.full((len(flat_routes), max_len), -1, dtype=np.int64)
        rlen = np.array([len(r) for r in flat_routes], dtype=np.int64)
        for k, r in enumerate(flat_routes):
            rmat[k, :len(r)] = r

        def one(rep):
            u = stream_uniforms(stream_keys(config.seed, batch.keys, rep, 0, it), 0)
            choice = (cum[trip_group] <= u[:, None]).sum(axis=1)
            ridx = offsets[trip_group] + choice
            lengths = rlen[ridx]
            links = rmat[ridx, :int(lengths.max())]
            n = len(batch)
            return RouteAssignment(links, lengths, np.ones(n, dtype=bool), np.tile(dep_iv[:, None], (1, links.shape[1])),
                                   np.ones(n, dtype=np.int64), batch.departure.copy(), config.seed, rep)

        return pool.map(one, range(config.k)), 0

    with _Pool(net, config.choice_params, workers) as pool:
        return _iterate(net, batch, partition, config, sample, unroutable, pool)
