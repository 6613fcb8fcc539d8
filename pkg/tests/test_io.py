import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tempimpute import io


FRAME = io.TimeFrame(dt.date(2020, 3, 1), dt.timedelta(hours=-6))


def write(path, text):
    path.write_text(text)
    return path


def test_timeframe_hours_and_days():
    t = io.parse_timestamp("2020-03-01T12:00-06:00")
    assert FRAME.hours(t) == 12.0
    assert FRAME.hours(io.parse_timestamp("2020-03-01T18:00Z")) == 12.0
    assert FRAME.timestamp(36.0) == "2020-03-02T12:00-06:00"
    assert FRAME.day_index(dt.date(2020, 3, 4)) == 3
    assert io.TimeFrame.from_dict(FRAME.to_dict()) == FRAME
    with pytest.raises(ValueError):
        io.parse_timestamp("2020-03-01T12:00")


@given(h=st.integers(-10_000, 10_000))
def test_timestamp_round_trip(h):
    assert FRAME.hours(io.parse_timestamp(FRAME.timestamp(h))) == h


@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(io.fmt(x)) == x


def test_station_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    lonlat = {"S1": (-93.5, 41.5), "S2": (-92.25, 42.0)}
    series = {s: (np.arange(0.0, 48.0), rng.normal(10, 3, 48)) for s in lonlat}
    p = tmp_path / "st.csv"
    io.write_station_file(p, FRAME, lonlat, series)
    rec = io.read_station_file(p)
    assert rec.frame == FRAME
    assert rec.lonlat == lonlat
    for s in series:
        assert np.array_equal(rec.series[s][0], series[s][0])
        assert np.array_equal(rec.series[s][1], series[s][1])
    ds = rec.dataset(exclude=["S2"])
    assert ds.station_ids == ["S1"]
    locs = rec.locations()
    assert locs["S1"].distance_km(locs["S2"]) == pytest.approx(118, rel=0.05)


HEADER = "station_id,lon_deg,lat_deg,timestamp,temp_c\n"


@pytest.mark.parametrize("body,line,needle", [
    ("A,-93,41,2020-01-01T00:00-06:00,1\nA,-93,41,2020-01-01T00:00-06:00,2\n", 3, "does not increase"),
    ("A,-93,41,2020-01-01T02:00-06:00,1\nA,-93,41,2020-01-01T01:00-06:00,2\n", 3, "does not increase"),
    ("A,-93,41,2020-01-01T00:00,1\n", 2, "UTC offset"),
    ("A,-93,41,2020-01-01T00:00Z,abc\n", 2, "not a number"),
    ("A,-93,41,2020-01-01T00:00Z,1\nA,-93,41,2020-01-01T01:00Z,75\n", 3, "outside"),
    ("A,-193,41,2020-01-01T00:00Z,1\n", 2, "lon_deg"),
    ("A,-93,41,2020-01-01T00:00Z,1\nA,-93,42,2020-01-01T01:00Z,1\n", 3, "changes coordinates"),
    (",-93,41,2020-01-01T00:00Z,1\n", 2, "empty station_id"),
])
def test_station_file_errors_carry_line_numbers(tmp_path, body, line, needle):
    p = write(tmp_path / "bad.csv", HEADER + body)
    with pytest.raises(io.ParseError) as e:
        io.read_station_file(p)
    assert e.value.line == line
    assert needle in str(e.value) and f"bad.csv:{line}" in str(e.value)


def test_station_file_structure_errors(tmp_path):
    with pytest.raises(io.ParseError, match="missing column"):
        io.read_station_file(write(tmp_path / "a.csv", "station_id,timestamp\nA,x\n"))
    with pytest.raises(io.ParseError, match="no records"):
        io.read_station_file(write(tmp_path / "b.csv", HEADER))
    with pytest.raises(io.ParseError, match="empty file"):
        io.read_station_file(write(tmp_path / "c.csv", ""))
    with pytest.raises(io.ParseError, match="cannot open"):
        io.read_station_file(tmp_path / "missing.csv")


def test_extrema_round_trip(tmp_path):
    recs = [io.ExtremaRecord("X", dt.date(2020, 3, 2), 1.5, 9.25, 7, -93.0, 42.0),
            io.ExtremaRecord("X", dt.date(2020, 3, 3), -2.0, 4.0, None, -93.0, 42.0)]
    p = tmp_path / "ex.csv"
    io.write_extrema_file(p, recs)
    assert io.read_extrema_file(p) == recs
    daily = io.extrema_for_station(recs, "X", FRAME)
    assert [d.day_index for d in daily] == [1, 2]


EX_HEADER = "station_id,date,tn_c,tx_c,meas_hour\n"


@pytest.mark.parametrize("body,needle", [
    ("X,2020-01-01,5,4,7\n", "exceeds"),
    ("X,2020-01-01,1,4,24\n", "outside 0-23"),
    ("X,2020-01-01,1,4,7.5\n", "not an integer"),
    ("X,2020-13-01,1,4,7\n", "bad date"),
    ("X,2020-01-01,1,4,7\nX,2020-01-01,1,4,7\n", "duplicate"),
])
def test_extrema_errors(tmp_path, body, needle):
    with pytest.raises(io.ParseError, match=needle):
        io.read_extrema_file(write(tmp_path / "e.csv", EX_HEADER + body))


def test_draws_and_envelope_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    grid = np.arange(5.0, 15.0)
    s = rng.normal(size=(6, grid.size))
    mu = rng.normal(size=(6, 2))
    io.write_draws(tmp_path / "d.csv", FRAME, grid, s, mu)
    g, s2, mu2 = io.read_draws(tmp_path / "d.csv", FRAME)
    assert np.array_equal(g, grid) and np.array_equal(s2, s) and np.array_equal(mu2, mu)
    q = np.quantile(s, io.ENVELOPE_LEVELS, axis=0)
    io.write_envelope(tmp_path / "e.csv", FRAME, grid, q)
    header, ts, vals = io.read_envelope(tmp_path / "e.csv")
    assert header == ["timestamp", "q10", "q25", "q50", "q75", "q90"]
    assert np.array_equal(vals, q.T) and len(ts) == grid.size


def test_json_is_canonical(tmp_path):
    obj = {"b": np.float64(1.5), "a": [np.int64(2), np.bool_(True)], "c": float("nan"), "d": np.eye(2)}
    io.write_json(tmp_path / "x.json", obj)
    assert io.read_json(tmp_path / "x.json") == {"a": [2, True], "b": 1.5, "c": None, "d": [[1, 0], [0, 1]]}
    assert (tmp_path / "x.json").read_text().index('"a"') < (tmp_path / "x.json").read_text().index('"b"')
    with pytest.raises(ValueError):
        io.fmt(float("inf"))
