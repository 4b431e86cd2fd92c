"""Command-line front end.

Subcommands::

    rwdta convert RAW.json OUT.json
    rwdta assign NETWORK TRIPS.csv --out DIR [overrides]
    rwdta baseline NETWORK TRIPS.csv --out DIR [overrides]
    rwdta report DIR [--diff OTHER_DIR] [--out diff.csv]

Exit codes: 0 converged (or success), 2 bad input or missing file, 3 stopped
at the iteration limit without converging, 4 some trips could not be routed.
Only the summary goes to stdout; logging and diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .demand import DemandError, IntervalPartition, parse_trips
from .network import NetworkError, expand_intersections, load_network, parse_network, read_json, save_network
from .orchestrator import AssignmentError, RunConfig, RunResult, baseline_mnl_assign, run_dta
from .sampler import write_routes_csv

logger = logging.getLogger("rwdta")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_UNROUTABLE = 4

METRICS_FILE = "iteration_metrics.csv"
VOLUMES_FILE = "link_volumes.csv"
ROUTES_FILE = "routes.csv"
SUMMARY_FILE = "run_summary.json"
UNROUTABLE_FILE = "unroutable_trips.csv"
REJECTED_FILE = "rejected_trips.csv"

# flag name -> RunConfig field
_OVERRIDES = {
    "gamma": "gamma",
    "beta": "beta",
    "k": "k",
    "epsilon": "epsilon",
    "max_iters": "max_iterations",
    "seed": "seed",
    "vdf_alpha": "vdf_alpha",
    "vdf_beta": "vdf_power",
    "smoothing": "smoothing",
    "n_routes": "n_routes",
    "baseline_gamma": "baseline_gamma",
    "internal_cost": "internal_cost",
    "workers": "workers",
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# convert

def cmd_convert(args) -> int:
    raw = parse_network(args.network)
    net = expand_intersections(raw)
    save_network(net, args.output)
    for w in net.expansion_warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"junctions {len(raw.junctions)}")
    print(f"segments {len(raw.segments)}")
    print(f"connections {len(raw.connections)}")
    print(f"nodes {net.n_nodes}")
    print(f"links {net.n_links}")
    print(f"warnings {len(net.expansion_warnings)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# assign / baseline

def _effective_config(args) -> tuple[RunConfig, IntervalPartition]:
    data: dict = {}
    if args.config is not None:
        data = read_json(args.config)
        if not isinstance(data, dict):
            raise CliError(f"{args.config}: config must be a JSON object")
    horizon = float(data.pop("horizon", 3600.0))
    intervals = int(data.pop("intervals", 4))
    for flag, name in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    if args.wall_time:
        data["record_wall_time"] = True
    if args.horizon is not None:
        horizon = args.horizon
    if args.intervals is not None:
        intervals = args.intervals
    try:
        config = RunConfig.from_dict(data)
        partition = IntervalPartition.from_count(horizon, intervals)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc
    return config, partition


def write_iteration_metrics(result: RunResult, path: Path) -> None:
    """``iteration,total_time_s,total_distance_m,gap,wall_ms``.

    ``wall_ms`` is left empty unless the run recorded wall time, so that the
    file is reproducible byte for byte.
    """
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "total_time_s", "total_distance_m", "gap", "wall_ms"])
        for rec in result.history:
            wall = f"{rec.wall_ms:.1f}" if result.config.record_wall_time else ""
            w.writerow([rec.iteration, repr(rec.total_time), repr(rec.total_distance), repr(rec.gap), wall])


def write_link_volumes(result: RunResult, path: Path) -> None:
    """``link,volume_total``: vehicles entering each expanded link over the horizon."""
    vol = result.metrics.link_volumes
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link", "volume_total"])
        for lk, v in enumerate(vol.tolist()):
            w.writerow([lk, int(v)])


def _summary(result: RunResult, args, partition, mode: str, n_trips: int, n_rejected: int) -> dict:
    return {
        "tool": "rwdta",
        "version": __version__,
        "mode": mode,
        "network": str(args.network),
        "trips": str(args.trips),
        "seed": result.config.seed,
        "config": result.config.to_dict(),
        "horizon_s": partition.horizon,
        "intervals": partition.count,
        "converged": result.converged,
        "converged_iteration": result.converged_iteration,
        "iterations": len(result.history),
        "n_trips": n_trips,
        "n_routed": result.assignment.n_routed,
        "n_unroutable": len(result.unroutable),
        "n_rejected": n_rejected,
        "final_total_time_s": result.metrics.total_travel_time,
        "final_total_distance_m": result.metrics.total_distance,
        "final_gap": result.history[-1].gap,
        "history": [
            {"iteration": r.iteration, "winner": r.winner, "total_time_s": r.total_time, "gap": r.gap,
             "replicate_mean_time_s": r.replicate_mean_times, "beta_violations": r.beta_violations}
            for r in result.history
        ],
    }


def _run(args, mode: str) -> int:
    config, partition = _effective_config(args)
    net = load_network(args.network)
    rejects: list = []
    trips = parse_trips(args.trips, partition, n_nodes=net.n_nodes, rejects=rejects)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if rejects:
        logger.warning("%d trip rows rejected; see %s", len(rejects), out / REJECTED_FILE)
        with (out / REJECTED_FILE).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["diagnostic"])
            w.writerows([msg] for msg in rejects)
    if not trips:
        raise CliError("no valid trips in the demand file")
    logger.info("%s: %d nodes, %d links, %d trips, %d intervals of %g s, k=%d", mode, net.n_nodes, net.n_links,
                len(trips), partition.count, partition.interval_length, config.k)
    fn = run_dta if mode == "random-walk" else baseline_mnl_assign
    try:
        result = fn(net, trips, partition, config)
    except AssignmentError as exc:
        _write_unroutable(out, {t.trip_id: "destination not reachable from origin" for t in trips})
        raise CliError(str(exc), EXIT_UNROUTABLE) from exc

    write_iteration_metrics(result, out / METRICS_FILE)
    write_link_volumes(result, out / VOLUMES_FILE)
    write_routes_csv(net, result.trips, result.assignment, out / ROUTES_FILE)
    with (out / SUMMARY_FILE).open("w", encoding="utf-8") as fh:
        json.dump(_summary(result, args, partition, mode, len(trips), len(rejects)), fh, indent=2, sort_keys=True)
        fh.write("\n")

    print_metrics_table(result.history)
    status = "converged" if result.converged else "not converged"
    print(f"{status} after {len(result.history)} iterations; routed {result.assignment.n_routed}/{len(trips)} trips")
    if result.unroutable:
        _write_unroutable(out, result.unroutable)
        logger.error("%d trips could not be routed; see %s", len(result.unroutable), out / UNROUTABLE_FILE)
        return EXIT_UNROUTABLE
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _write_unroutable(out: Path, unroutable: dict) -> None:
    with (out / UNROUTABLE_FILE).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "reason"])
        for tid, why in unroutable.items():
            w.writerow([tid, why])


def print_metrics_table(history) -> None:
    print(f"{'iteration':>9} {'total_time_s':>14} {'total_distance_m':>16} {'gap':>10}")
    for r in history:
        print(f"{r.iteration:>9d} {r.total_time:>14.1f} {r.total_distance:>16.1f} {r.gap:>10.5f}")


def cmd_assign(args) -> int:
    return _run(args, "random-walk")


def cmd_baseline(args) -> int:
    return _run(args, "logit-baseline")


# ---------------------------------------------------------------------------
# report

def _read_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise CliError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_volumes(run_dir: Path) -> np.ndarray:
    rows = _read_csv(run_dir / VOLUMES_FILE)
    vol = np.zeros(len(rows), dtype=np.int64)
    for r in rows:
        vol[int(r["link"])] = int(r["volume_total"])
    return vol


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    rows = _read_csv(run / METRICS_FILE)
    print(f"{'iteration':>9} {'total_time_s':>14} {'total_distance_m':>16} {'gap':>10}")
    for r in rows:
        print(f"{int(r['iteration']):>9d} {float(r['total_time_s']):>14.1f} {float(r['total_distance_m']):>16.1f} "
              f"{float(r['gap']):>10.5f}")
    if args.diff is None:
        return EXIT_OK
    other = Path(args.diff)
    a, b = read_volumes(run), read_volumes(other)
    if a.shape != b.shape:
        raise CliError(f"runs have different link counts ({a.size} vs {b.size})")
    diff = a - b
    out = Path(args.out) if args.out else run / f"link_volume_diff_{other.name or 'other'}.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link", "volume_a", "volume_b", "difference"])
        for lk in range(a.size):
            w.writerow([lk, int(a[lk]), int(b[lk]), int(diff[lk])])
    print(f"links differing {int(np.count_nonzero(diff))}")
    print(f"volume difference sum {int(diff.sum())}")
    print(f"absolute difference sum {int(np.abs(diff).sum())}")
    logger.info("wrote %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_run_args(p: argparse.ArgumentParser, baseline: bool) -> None:
    p.add_argument("network", type=Path, help="raw junction network or expanded network (JSON)")
    p.add_argument("trips", type=Path, help="trip CSV: trip_id,origin,destination,departure_s")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, help="JSON file with run settings")
    p.add_argument("--k", type=int, help="replicates per iteration")
    p.add_argument("--epsilon", type=float, help="convergence threshold on the relative link-time change")
    p.add_argument("--max-iters", type=int, help="iteration limit")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--intervals", type=int, help="number of departure intervals")
    p.add_argument("--horizon", type=float, help="demand horizon in seconds")
    p.add_argument("--vdf-alpha", type=float, help="volume-delay alpha")
    p.add_argument("--vdf-beta", type=float, help="volume-delay exponent")
    p.add_argument("--internal-cost", type=float, help="free-flow time of turning links in seconds")
    p.add_argument("--workers", type=int, help="worker count (also capped by RWDTA_THREADS)")
    p.add_argument("--wall-time", action="store_true", help="record per-iteration wall time (not reproducible)")
    if baseline:
        p.add_argument("--n-routes", type=int, help="routes kept per OD pair and interval")
        p.add_argument("--baseline-gamma", type=float, help="logit dispersion per second of route time")
    else:
        p.add_argument("--gamma", type=float, help="dispersion parameter (negative)")
        p.add_argument("--beta", type=float, help="probability mass given back to excluded links")
        p.add_argument("--smoothing", choices=["product", "msa", "none"], help="table smoothing rule")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwdta", description="Random-walk dynamic traffic assignment.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="expand a junction network into a directed graph")
    p.add_argument("network", type=Path)
    p.add_argument("output", type=Path)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("assign", help="run the random-walk assignment")
    _add_run_args(p, baseline=False)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("baseline", help="run the logit baseline over accumulated shortest paths")
    _add_run_args(p, baseline=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="print a run's iteration table; optionally diff link volumes")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--diff", type=Path, help="second run directory to compare link volumes against")
    p.add_argument("--out", type=Path, help="where to write the volume difference CSV")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (NetworkError, DemandError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
