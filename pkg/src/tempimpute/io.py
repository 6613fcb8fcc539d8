"""CSV/JSON formats for station records, daily extrema, draws and reports.

Timestamps in files are ISO-8601 with an explicit UTC offset. Internally
times are hours since an epoch at local midnight (in the offset of the first
record) of the earliest date, so measurement hours are read on that clock.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geom_time import DailyExtrema, Location, project_lonlat
from .gp_core import Dataset

TEMP_RANGE = (-90.0, 60.0)
STATION_COLUMNS = ("station_id", "lon_deg", "lat_deg", "timestamp", "temp_c")
EXTREMA_COLUMNS = ("station_id", "date", "tn_c", "tx_c", "meas_hour")
EXTREMA_OPTIONAL = ("lon_deg", "lat_deg")


class ParseError(ValueError):
    """Malformed or physically implausible input, with file and line context."""

    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path, self.line = str(path), line


def fmt(x) -> str:
    """Shortest round-tripping text for a float (stable across runs)."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"refusing to write non-finite value {x}")
    return repr(x)


def parse_timestamp(text: str) -> dt.datetime:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    t = dt.datetime.fromisoformat(s)
    if t.tzinfo is None:
        raise ValueError(f"timestamp {text!r} lacks a UTC offset")
    return t


@dataclass(frozen=True)
class TimeFrame:
    """Maps aware datetimes to hours since local midnight of ``epoch_date``."""

    epoch_date: dt.date
    utc_offset: dt.timedelta

    @property
    def tz(self) -> dt.timezone:
        return dt.timezone(self.utc_offset)

    @property
    def epoch(self) -> dt.datetime:
        return dt.datetime.combine(self.epoch_date, dt.time(0), self.tz)

    def hours(self, t: dt.datetime) -> float:
        return (t - self.epoch).total_seconds() / 3600.0

    def timestamp(self, hours: float) -> str:
        t = self.epoch + dt.timedelta(hours=float(hours))
        return t.isoformat(timespec="minutes") if t.second == 0 and t.microsecond == 0 else t.isoformat()

    def day_index(self, date: dt.date) -> int:
        return (date - self.epoch_date).days

    def to_dict(self):
        return {"epoch_date": self.epoch_date.isoformat(),
                "utc_offset_hours": self.utc_offset.total_seconds() / 3600.0}

    @classmethod
    def from_dict(cls, d):
        return cls(dt.date.fromisoformat(d["epoch_date"]), dt.timedelta(hours=d["utc_offset_hours"]))


@dataclass
class StationRecords:
    """Parsed hourly station file."""

    frame: TimeFrame
    lonlat: dict                  # station id -> (lon, lat)
    series: dict                  # station id -> (times (h), temps)

    def locations(self, ref: tuple | None = None) -> dict[str, Location]:
        lon0, lat0 = ref if ref is not None else reference_point(self.lonlat.values())
        return {s: project_lonlat(lon, lat, lon0, lat0, s) for s, (lon, lat) in self.lonlat.items()}

    def dataset(self, ref: tuple | None = None, exclude: Iterable[str] = ()) -> Dataset:
        locs = self.locations(ref)
        skip = set(exclude)
        return Dataset.from_series({locs[s]: self.series[s] for s in sorted(self.series) if s not in skip})


def reference_point(lonlats) -> tuple[float, float]:
    pts = np.array(list(lonlats), dtype=float)
    return float(pts[:, 0].mean()), float(pts[:, 1].mean())


def _open_rows(path, required: Sequence[str]):
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as e:
        raise ParseError(path, None, f"cannot open: {e.strerror}") from e
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(path, 1, "empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ParseError(path, 1, f"missing column(s) {missing}")
        for row in reader:
            yield reader.line_num, row


def _float(path, line, row, col, lo=-math.inf, hi=math.inf):
    try:
        v = float(row[col])
    except (TypeError, ValueError):
        raise ParseError(path, line, f"{col}={row[col]!r} is not a number") from None
    if not math.isfinite(v) or not lo <= v <= hi:
        raise ParseError(path, line, f"{col}={v} outside [{lo}, {hi}]")
    return v


def read_station_file(path, frame: TimeFrame | None = None) -> StationRecords:
    """Parse an hourly station CSV; timestamps must strictly increase per station."""
    rows = []
    for line, row in _open_rows(path, STATION_COLUMNS):
        sid = (row["station_id"] or "").strip()
        if not sid:
            raise ParseError(path, line, "empty station_id")
        try:
            t = parse_timestamp(row["timestamp"])
        except ValueError as e:
            raise ParseError(path, line, str(e)) from None
        lon = _float(path, line, row, "lon_deg", -180, 180)
        lat = _float(path, line, row, "lat_deg", -90, 90)
        temp = _float(path, line, row, "temp_c", *TEMP_RANGE)
        rows.append((line, sid, lon, lat, t, temp))
    if not rows:
        raise ParseError(path, None, "no records")
    if frame is None:
        first = min(rows, key=lambda r: r[4])[4]
        frame = TimeFrame(first.date(), first.utcoffset())
    lonlat, series, last = {}, {}, {}
    for line, sid, lon, lat, t, temp in rows:
        if sid in lonlat and lonlat[sid] != (lon, lat):
            raise ParseError(path, line, f"station {sid} changes coordinates")
        lonlat[sid] = (lon, lat)
        h = frame.hours(t)
        if sid in last and h <= last[sid]:
            raise ParseError(path, line, f"timestamp for {sid} does not increase ({row_ts(t)})")
        last[sid] = h
        series.setdefault(sid, ([], []))
        series[sid][0].append(h)
        series[sid][1].append(temp)
    series = {s: (np.array(v[0]), np.array(v[1])) for s, v in series.items()}
    return StationRecords(frame, lonlat, series)


def row_ts(t: dt.datetime) -> str:
    return t.isoformat()


def write_station_file(path, frame: TimeFrame, lonlat: dict, series: dict) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_COLUMNS)
        for sid in sorted(series):
            lon, lat = lonlat[sid]
            for h, v in zip(*series[sid]):
                w.writerow([sid, fmt(lon), fmt(lat), frame.timestamp(h), fmt(v)])


@dataclass(frozen=True)
class ExtremaRecord:
    station_id: str
    date: dt.date
    tn: float
    tx: float
    meas_hour: int | None
    lon: float | None = None
    lat: float | None = None


def read_extrema_file(path) -> list[ExtremaRecord]:
    out = []
    for line, row in _open_rows(path, EXTREMA_COLUMNS):
        sid = (row["station_id"] or "").strip()
        if not sid:
            raise ParseError(path, line, "empty station_id")
        try:
            date = dt.date.fromisoformat(row["date"].strip())
        except (ValueError, AttributeError):
            raise ParseError(path, line, f"bad date {row['date']!r}") from None
        tn = _float(path, line, row, "tn_c", *TEMP_RANGE)
        tx = _float(path, line, row, "tx_c", *TEMP_RANGE)
        if tn > tx:
            raise ParseError(path, line, f"tn={tn} exceeds tx={tx}")
        mh = (row.get("meas_hour") or "").strip()
        if mh:
            try:
                mh = int(mh)
            except ValueError:
                raise ParseError(path, line, f"meas_hour {mh!r} is not an integer") from None
            if not 0 <= mh <= 23:
                raise ParseError(path, line, f"meas_hour {mh} outside 0-23")
        else:
            mh = None
        lon = _float(path, line, row, "lon_deg", -180, 180) if (row.get("lon_deg") or "").strip() else None
        lat = _float(path, line, row, "lat_deg", -90, 90) if (row.get("lat_deg") or "").strip() else None
        out.append(ExtremaRecord(sid, date, tn, tx, mh, lon, lat))
    if not out:
        raise ParseError(path, None, "no records")
    seen = set()
    for r in out:
        key = (r.station_id, r.date)
        if key in seen:
            raise ParseError(path, None, f"duplicate record for {r.station_id} on {r.date}")
        seen.add(key)
    return out


def write_extrema_file(path, records: Sequence[ExtremaRecord]) -> None:
    with_coords = any(r.lon is not None for r in records)
    cols = EXTREMA_COLUMNS + (EXTREMA_OPTIONAL if with_coords else ())
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in sorted(records, key=lambda r: (r.station_id, r.date)):
            row = [r.station_id, r.date.isoformat(), fmt(r.tn), fmt(r.tx),
                   "" if r.meas_hour is None else str(r.meas_hour)]
            if with_coords:
                row += ["" if r.lon is None else fmt(r.lon), "" if r.lat is None else fmt(r.lat)]
            w.writerow(row)


def extrema_for_station(records: Sequence[ExtremaRecord], station_id: str, frame: TimeFrame) -> list[DailyExtrema]:
    return [DailyExtrema(frame.day_index(r.date), r.tn, r.tx)
            for r in records if r.station_id == station_id]


def write_draws(path, frame: TimeFrame, grid, samples, mu_miss) -> None:
    """One row per draw: the series at each grid time, then one offset per window."""
    samples = np.asarray(samples)
    mu = np.asarray(mu_miss).reshape(samples.shape[0], -1)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([frame.timestamp(t) for t in grid] + [f"mu_miss_{j}" for j in range(mu.shape[1])])
        for s, m in zip(samples, mu):
            w.writerow([fmt(v) for v in s] + [fmt(v) for v in m])


def read_draws(path, frame: TimeFrame):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        n_t = sum(1 for h in header if not h.startswith("mu_miss_"))
        rows = np.array([[float(v) for v in row] for row in r])
    grid = np.array([frame.hours(parse_timestamp(h)) for h in header[:n_t]])
    return grid, rows[:, :n_t], rows[:, n_t:]


ENVELOPE_LEVELS = (0.1, 0.25, 0.5, 0.75, 0.9)


def write_envelope(path, frame: TimeFrame, grid, quantiles, levels=ENVELOPE_LEVELS) -> None:
    """Quantile envelope: timestamp then one column per level."""
    q = np.asarray(quantiles)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [f"q{int(round(100 * l)):02d}" for l in levels])
        for i, t in enumerate(grid):
            w.writerow([frame.timestamp(t)] + [fmt(v) for v in q[:, i]])


def read_envelope(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    return header, [row[0] for row in rows], np.array([[float(v) for v in row[1:]] for row in rows])


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, list(r)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as e:
        raise ParseError(path, None, f"cannot open: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise ParseError(path, e.lineno, f"invalid JSON: {e.msg}") from None
