"""Regenerate the bundled fixture networks and demand under src/rwdta/data/."""
from __future__ import annotations

import argparse
import random
from pathlib import Path

from rwdta.demand import write_trips
from rwdta.fixtures import (GRID_CAPACITY, RANDOM_OD_JUNCTIONS, grid_network, junction_endpoints, random_network,
                            random_trips)
from rwdta.network import expand_intersections, save_raw_network

DATA = Path(__file__).resolve().parents[1] / "src" / "rwdta" / "data"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    grid = grid_network(capacity=GRID_CAPACITY)
    save_raw_network(grid, args.out / "grid4x4.json")
    write_trips(random_trips(expand_intersections(grid), 8013, seed=11), args.out / "grid4x4_trips.csv")

    rnd = random_network(seed=7)
    save_raw_network(rnd, args.out / "random100.json")
    net = expand_intersections(rnd)
    starts, ends = junction_endpoints(net)
    names = sorted(set(starts) & set(ends), key=lambda s: int(s[1:]))
    od = sorted(random.Random(3).sample(names, RANDOM_OD_JUNCTIONS), key=lambda s: int(s[1:]))
    write_trips(random_trips(net, 8012, seed=12, junctions=od), args.out / "random100_trips.csv")


if __name__ == "__main__":
    main()
