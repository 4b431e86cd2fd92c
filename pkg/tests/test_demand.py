import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rwdta.demand import DemandError, IntervalPartition, Trip, interval_of, parse_trips, write_trips
from rwdta.fixtures import data_path

HOUR = IntervalPartition(3600.0, 900.0)


def write_csv(tmp_path, body, header="trip_id,origin,destination,departure_s"):
    p = tmp_path / "trips.csv"
    p.write_text(header + "\n" + body)
    return p


def test_single_row(tmp_path):
    trips = parse_trips(write_csv(tmp_path, "t1,3,9,120\n"), HOUR)
    assert trips == [Trip("t1", 3, 9, 120.0)]
    assert interval_of(trips[0].departure, HOUR) == 0


def test_departure_at_horizon_rejected(tmp_path):
    rejects = []
    trips = parse_trips(write_csv(tmp_path, "t1,3,9,3600\nt2,3,9,10\n"), HOUR, rejects=rejects)
    assert [t.trip_id for t in trips] == ["t2"]
    assert len(rejects) == 1 and "outside horizon" in rejects[0] and ":2:" in rejects[0]


def test_negative_departure_and_same_od_rejected(tmp_path):
    rejects = []
    trips = parse_trips(write_csv(tmp_path, "a,1,2,-1\nb,4,4,5\nc,1,2,5\n"), HOUR, rejects=rejects)
    assert [t.trip_id for t in trips] == ["c"]
    assert len(rejects) == 2


def test_unknown_node_is_error(tmp_path):
    with pytest.raises(DemandError, match="unknown node 50"):
        parse_trips(write_csv(tmp_path, "t1,3,50,10\n"), HOUR, n_nodes=20)


@pytest.mark.parametrize("body, msg", [
    ("t1,3,9\n", "expected 4 fields"),
    ("t1,x,9,10\n", "invalid literal"),
    ("t1,1,2,10\nt1,2,3,20\n", "duplicate trip id"),
])
def test_malformed_rows(tmp_path, body, msg):
    with pytest.raises(DemandError, match=msg):
        parse_trips(write_csv(tmp_path, body), HOUR)


def test_bad_header(tmp_path):
    with pytest.raises(DemandError, match="expected header"):
        parse_trips(write_csv(tmp_path, "t1,1,2,3\n", header="id,o,d,t"), HOUR)


def test_missing_file(tmp_path):
    with pytest.raises(DemandError, match="cannot read"):
        parse_trips(tmp_path / "none.csv", HOUR)


def test_sorted_by_departure(tmp_path):
    trips = parse_trips(write_csv(tmp_path, "a,1,2,50\nb,1,2,10\nc,1,2,30\n"), HOUR)
    assert [t.trip_id for t in trips] == ["b", "c", "a"]


def test_round_trip(tmp_path):
    trips = [Trip("x", 0, 5, 12.5), Trip("y", 3, 1, 899.999)]
    p = tmp_path / "rt.csv"
    write_trips(trips, p)
    assert parse_trips(p, HOUR) == trips


def test_grid_fixture_demand():
    trips = parse_trips(data_path("grid4x4_trips.csv"), HOUR, n_nodes=96)
    assert len(trips) == 8013
    counts = np.bincount([interval_of(t.departure, HOUR) for t in trips], minlength=4)
    assert counts.sum() == 8013 and (counts > 0).all()


def test_random_fixture_demand():
    trips = parse_trips(data_path("random100_trips.csv"), HOUR)
    assert len(trips) == 8012


@pytest.mark.parametrize("t, want", [(0.0, 0), (899.999, 0), (900.0, 1), (3599.0, 3), (7200.0, 3)])
def test_interval_of_examples(t, want):
    assert interval_of(t, HOUR) == want


def test_interval_of_negative():
    with pytest.raises(DemandError):
        interval_of(-0.5, HOUR)


def test_partition_validation():
    with pytest.raises(DemandError, match="not a multiple"):
        IntervalPartition(3600.0, 700.0)
    with pytest.raises(DemandError):
        IntervalPartition(3600.0, 0.0)
    with pytest.raises(DemandError):
        IntervalPartition.from_count(3600.0, 0)
    p = IntervalPartition.from_count(3600.0, 4)
    assert p.interval_length == 900.0 and p.count == 4


@given(st.lists(st.floats(0, 1e5, allow_nan=False), min_size=2, max_size=50), st.integers(1, 12))
def test_interval_of_monotone_and_vectorized(ts, count):
    part = IntervalPartition.from_count(3600.0, count)
    ts = sorted(ts)
    idx = [interval_of(t, part) for t in ts]
    assert all(a <= b for a, b in zip(idx, idx[1:]))
    assert all(0 <= k < count for k in idx)
    assert part.index_array(np.array(ts)).tolist() == idx


@given(st.integers(1, 24))
def test_interval_of_surjective(count):
    part = IntervalPartition.from_count(3600.0, count)
    hit = {interval_of(k * part.interval_length + 0.5 * part.interval_length, part) for k in range(count)}
    assert hit == set(range(count))
