import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tempimpute.geom_time import (DailyExtrema, Location, build_daysets, extract_extrema, match_extrema,
                                  project_lonlat, window_end_times)


def test_projection_reference_maps_to_origin():
    loc = project_lonlat(-93.0, 42.0, -93.0, 42.0, "A")
    assert loc.east_km == 0 and loc.north_km == 0


def test_projection_one_degree_north():
    loc = project_lonlat(-93.0, 43.0, -93.0, 42.0)
    assert loc.north_km == pytest.approx(110.57)
    assert loc.east_km == 0


def test_projection_close_to_great_circle():
    a = project_lonlat(-93.663, 41.534, -92.75, 42.3, "KDSM")
    b = project_lonlat(-92.400, 42.557, -92.75, 42.3, "KALO")
    # haversine reference on a 6371 km sphere
    p1, p2 = math.radians(41.534), math.radians(42.557)
    dl = math.radians(-92.400 + 93.663)
    h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    gc = 2 * 6371.0 * math.asin(math.sqrt(h))
    assert a.distance_km(b) == pytest.approx(gc, rel=0.01)


def test_projection_rejects_poles_and_nan():
    with pytest.raises(ValueError):
        project_lonlat(0.0, 89.5, 0.0, 45.0)
    with pytest.raises(ValueError):
        project_lonlat(float("nan"), 0.0, 0.0, 0.0)


def test_location_requires_id():
    with pytest.raises(ValueError):
        Location("", 0.0, 0.0)


def test_window_end_times_anchor():
    days, ends = window_end_times(0.0, 71.0, 11)
    # the last window must close at or after the final time
    assert list(days) == [0, 1, 2, 3]
    assert list(ends) == [11.0, 35.0, 59.0, 83.0]


def test_reading_at_measurement_instant_closes_window():
    grid = np.arange(0.0, 72.0)
    ds = build_daysets(grid, 11)
    full = {d.day_index: d for d in ds}
    assert 35.0 in grid[full[1].member_indices]
    assert 11.0 not in grid[full[1].member_indices]
    assert len(full[1]) == 24


def test_partial_edges_dropped_and_kept():
    grid = np.arange(0.0, 72.0)
    assert [d.day_index for d in build_daysets(grid, 11)] == [1, 2]
    kept = build_daysets(grid, 11, keep_partial=True)
    assert [d.day_index for d in kept] == [0, 1, 2, 3]


def test_epoch_offset_shifts_clock():
    grid = np.arange(0.0, 96.0)
    a = build_daysets(grid, 11, epoch_offset=0.0)
    b = build_daysets(grid, 17, epoch_offset=6.0)
    assert [d.window_end for d in a] == [d.window_end for d in b]


def test_interior_window_too_sparse_raises():
    grid = np.array([0.0, 1.0, 5.0, 30.0, 60.0, 61.0, 70.0, 71.0])
    with pytest.raises(ValueError):
        build_daysets(grid, 11, keep_partial=True)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        build_daysets([], 3)
    with pytest.raises(ValueError):
        build_daysets([0.0, 1.0], 24)
    with pytest.raises(ValueError):
        build_daysets([1.0, 0.0], 3)
    with pytest.raises(ValueError):
        DailyExtrema(0, 2.0, 1.0)


@given(hour=st.integers(0, 23), start=st.floats(-50, 50), days=st.integers(2, 8),
       step=st.sampled_from([0.5, 1.0, 2.0]))
def test_daysets_partition_interior(hour, start, days, step):
    grid = start + step * np.arange(int(days * 24 / step))
    ds = build_daysets(grid, hour)
    seen = np.concatenate([d.member_indices for d in ds]) if ds else np.array([], int)
    assert len(seen) == len(set(seen.tolist()))
    for d in ds:
        t = grid[d.member_indices]
        assert np.all(t > d.window_start - 1e-9) and np.all(t <= d.window_end + 1e-9)
        assert d.window_end - d.window_start == 24.0
        assert (d.window_end - hour) % 24 == pytest.approx(0.0, abs=1e-9) or \
            (d.window_end - hour) % 24 == pytest.approx(24.0, abs=1e-9)
        assert grid[0] <= d.window_start + 1e-9 and grid[-1] >= d.window_end - 1e-9
    assert all(b.day_index == a.day_index + 1 for a, b in zip(ds, ds[1:]))


@given(st.lists(st.floats(-30, 30), min_size=72, max_size=72), st.integers(0, 23))
def test_extrema_bound_every_member(values, hour):
    grid = np.arange(72.0)
    v = np.array(values)
    ds = build_daysets(grid, hour)
    for d, e in zip(ds, extract_extrema(v, ds)):
        w = v[d.member_indices]
        assert e.tn == w.min() and e.tx == w.max()
        assert e.day_index == d.day_index


def test_match_extrema_skips_unpaired():
    grid = np.arange(120.0)
    ds = build_daysets(grid, 5)
    ex = [DailyExtrema(2, 0.0, 1.0), DailyExtrema(99, 0.0, 1.0), DailyExtrema(3, 1.0, 2.0)]
    mds, mex = match_extrema(ds, ex)
    assert [d.day_index for d in mds] == [2, 3]
    assert [e.day_index for e in mex] == [2, 3]
