"""Station coordinates, measurement windows and daily extrema.

Timestamps are plain floats: hours since a dataset epoch. A measurement
window ("dayset") is the half-open interval ``(end - 24, end]`` closed by
the observer's daily reading; a reading taken exactly at the measurement
instant belongs to the window it closes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

KM_PER_DEG_LON_EQUATOR = 111.32
KM_PER_DEG_LAT = 110.57
HOURS_PER_DAY = 24.0

# window boundaries are compared with this slack so that float grids built
# from sums of fractional steps still land on the intended side
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class Location:
    station_id: str
    east_km: float
    north_km: float

    def __post_init__(self):
        if not self.station_id:
            raise ValueError("station_id must be non-empty")
        if not (math.isfinite(self.east_km) and math.isfinite(self.north_km)):
            raise ValueError(f"non-finite coordinates for station {self.station_id!r}")

    def distance_km(self, other: "Location") -> float:
        return math.hypot(self.east_km - other.east_km, self.north_km - other.north_km)


@dataclass(frozen=True)
class DaySet:
    """Grid indices falling in one 24-hour measurement window."""

    day_index: int
    window_start: float
    window_end: float
    member_indices: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.member_indices)


@dataclass(frozen=True)
class DailyExtrema:
    day_index: int
    tn: float
    tx: float

    def __post_init__(self):
        if not self.tn <= self.tx:
            raise ValueError(f"day {self.day_index}: tn={self.tn} exceeds tx={self.tx}")


def project_lonlat(lon, lat, ref_lon, ref_lat, station_id: str = "site") -> Location:
    """Local equirectangular projection to kilometres east/north of a reference."""
    vals = (lon, lat, ref_lon, ref_lat)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite coordinate in {vals}")
    if abs(lat) >= 89.0 or abs(ref_lat) >= 89.0:
        raise ValueError("latitude too close to a pole for a tangent-plane projection")
    east = (lon - ref_lon) * KM_PER_DEG_LON_EQUATOR * math.cos(math.radians(ref_lat))
    north = (lat - ref_lat) * KM_PER_DEG_LAT
    return Location(station_id, east, north)


def window_end_times(first_time: float, last_time: float, meas_hour: int, epoch_offset: float = 0.0):
    """Measurement instants (window ends) covering ``[first_time, last_time]``.

    ``epoch_offset`` is added to dataset hours to get the local clock, so a
    window closes whenever ``(t + epoch_offset) mod 24 == meas_hour``.

    Returns ``(day_indices, ends)``; day index ``n`` closes at
    ``24 n + meas_hour - epoch_offset``.
    """
    anchor = meas_hour - epoch_offset
    n_first = math.ceil((first_time - anchor) / HOURS_PER_DAY - _TIME_EPS)
    n_last = math.ceil((last_time - anchor) / HOURS_PER_DAY - _TIME_EPS)
    days = np.arange(n_first, n_last + 1)
    return days, anchor + HOURS_PER_DAY * days


def build_daysets(grid: Sequence[float], meas_hour: int, epoch_offset: float = 0.0,
                  keep_partial: bool = False) -> list[DaySet]:
    """Split a sorted time grid into 24-hour measurement windows.

    Windows close at successive daily occurrences of ``meas_hour`` and are
    end-inclusive. Windows at either end of the grid that are not fully
    covered are dropped (logged) unless ``keep_partial``; even then an edge
    window holding fewer than two points is dropped. An interior window with
    fewer than two points raises, since its extrema carry no information.
    """
    t = np.asarray(grid, dtype=float)
    if t.size == 0:
        raise ValueError("empty time grid")
    if not (0 <= int(meas_hour) <= 23):
        raise ValueError(f"meas_hour must be in 0..23, got {meas_hour}")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")

    days, ends = window_end_times(t[0], t[-1], int(meas_hour), epoch_offset)
    # index of the window each point falls in: first end >= t
    which = np.searchsorted(ends, t - _TIME_EPS, side="left")
    bounds = np.searchsorted(which, np.arange(len(ends) + 1), side="left")

    out = []
    dropped = []
    last = len(ends) - 1
    for w, (day, end) in enumerate(zip(days, ends)):
        members = np.arange(bounds[w], bounds[w + 1])
        start = end - HOURS_PER_DAY
        edge = w == 0 or w == last
        covered = t[0] <= start + _TIME_EPS and t[-1] >= end - _TIME_EPS
        if edge and (len(members) < 2 or not (covered or keep_partial)):
            dropped.append(int(day))
            continue
        if len(members) < 2:
            raise ValueError(
                f"window ending at t={end:g} h holds {len(members)} grid point(s); "
                "every interior window needs at least 2")
        out.append(DaySet(int(day), float(start), float(end), members))
    if dropped:
        logger.info("dropped %d edge window(s): day indices %s", len(dropped), dropped)
    return out


def extract_extrema(values, daysets: Sequence[DaySet]) -> list[DailyExtrema]:
    """Per-window minimum and maximum of ``values`` (indexed like the grid)."""
    v = np.asarray(values, dtype=float)
    out = []
    for ds in daysets:
        if len(ds.member_indices) == 0:
            raise ValueError(f"window {ds.day_index} has no members")
        w = v[ds.member_indices]
        out.append(DailyExtrema(ds.day_index, float(w.min()), float(w.max())))
    return out


def match_extrema(daysets: Sequence[DaySet], extrema: Sequence[DailyExtrema]):
    """Pair daysets with the extrema record of the same day index.

    Days present in only one of the two inputs are skipped.
    """
    by_day = {e.day_index: e for e in extrema}
    pairs = [(ds, by_day[ds.day_index]) for ds in daysets if ds.day_index in by_day]
    return [p[0] for p in pairs], [p[1] for p in pairs]
