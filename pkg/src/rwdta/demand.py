"""Trip tables and the partition of the analysis horizon into intervals."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

TRIP_HEADER = ["trip_id", "origin", "destination", "departure_s"]


class DemandError(ValueError):
    pass


@dataclass(frozen=True)
class Trip:
    trip_id: str
    origin: int
    destination: int
    departure: float


@dataclass(frozen=True)
class IntervalPartition:
    """Half-open intervals ``[k * interval_length, (k + 1) * interval_length)``."""

    horizon: float
    interval_length: float

    def __post_init__(self):
        if not self.interval_length > 0:
            raise DemandError("interval length must be positive")
        if not self.horizon > 0:
            raise DemandError("horizon must be positive")
        ratio = self.horizon / self.interval_length
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise DemandError(f"horizon {self.horizon} is not a multiple of interval length {self.interval_length}")

    @classmethod
    def from_count(cls, horizon: float, count: int) -> "IntervalPartition":
        if count < 1:
            raise DemandError("need at least one interval")
        return cls(float(horizon), float(horizon) / count)

    @property
    def count(self) -> int:
        return int(round(self.horizon / self.interval_length))

    def index_array(self, t: np.ndarray) -> np.ndarray:
        """Vectorized :func:`interval_of` (no negativity check)."""
        idx = np.floor_divide(t, self.interval_length).astype(np.int64)
        return np.minimum(idx, self.count - 1)


def interval_of(t: float, partition: IntervalPartition) -> int:
    """Interval index of time ``t``; times past the horizon map to the last interval."""
    if t < 0 or math.isnan(t):
        raise DemandError(f"time must be non-negative, got {t}")
    return min(int(t // partition.interval_length), partition.count - 1)


def parse_trips(path: str | Path, partition: IntervalPartition, n_nodes: int | None = None,
                rejects: list | None = None) -> list[Trip]:
    """Read a ``trip_id,origin,destination,departure_s`` CSV.

    Rows departing outside ``[0, horizon)`` or with origin equal to destination
    are skipped with a diagnostic (appended to ``rejects`` when given). Node ids
    outside ``[0, n_nodes)`` are an error. Trips come back sorted by departure.
    """
    path = Path(path)
    trips = []
    seen = set()
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DemandError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRIP_HEADER:
            raise DemandError(f"{path}: expected header {','.join(TRIP_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DemandError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            tid = row[0].strip()
            try:
                o, d, dep = int(row[1]), int(row[2]), float(row[3])
            except ValueError as exc:
                raise DemandError(f"{path}:{lineno}: {exc}") from exc
            if tid in seen:
                raise DemandError(f"{path}:{lineno}: duplicate trip id {tid!r}")
            seen.add(tid)
            if n_nodes is not None:
                for v in (o, d):
                    if not 0 <= v < n_nodes:
                        raise DemandError(f"{path}:{lineno}: trip {tid!r} references unknown node {v}")
            problem = None
            if not 0 <= dep < partition.horizon:
                problem = f"departure {dep} outside horizon [0, {partition.horizon})"
            elif o == d:
                problem = "origin equals destination"
            if problem:
                msg = f"{path}:{lineno}: trip {tid!r} rejected: {problem}"
                logger.warning(msg)
                if rejects is not None:
                    rejects.append(msg)
                continue
            trips.append(Trip(tid, o, d, dep))
    trips.sort(key=lambda tr: tr.departure)
    return trips


def write_trips(trips, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_HEADER)
        for tr in trips:
            w.writerow([tr.trip_id, tr.origin, tr.destination, repr(float(tr.departure))])
