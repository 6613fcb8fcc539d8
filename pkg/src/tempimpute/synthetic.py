"""Synthetic multi-station temperature fields drawn from a separable-sum GP.

Each Sum-of-Products term ``k_time(r) * k_space(h)`` is sampled as
``A W B^T``: ``A`` acts along time through circulant embedding on the regular
hourly grid, ``B`` is the spatial Cholesky factor. Independent terms add up.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geom_time import Location, build_daysets, extract_extrema, project_lonlat
from .gp_core import Dataset
from .kernels import Kernel, Lags, Points, StationMean, preset, preset_noise_var, time_space_terms
from .linalg import robust_cholesky

logger = logging.getLogger(__name__)

# Approximate positions (lon, lat) of four Iowa airport stations, nudged so
# that every pairwise distance lies in 100-300 km.
IOWA_LONLAT = {
    "KALO": (-92.400, 42.557),
    "KCID": (-91.600, 41.850),
    "KDSM": (-93.663, 41.534),
    "KMCW": (-93.331, 43.158),
}
DEFAULT_HIDDEN = "KALO"


def iowa_layout() -> dict[str, Location]:
    lon0 = float(np.mean([v[0] for v in IOWA_LONLAT.values()]))
    lat0 = float(np.mean([v[1] for v in IOWA_LONLAT.values()]))
    return {sid: project_lonlat(lon, lat, lon0, lat0, sid) for sid, (lon, lat) in IOWA_LONLAT.items()}


def _circulant_sqrt_eigs(cov_fn, n: int, dt: float, max_size: int = 2**24) -> np.ndarray:
    """sqrt eigenvalues of a circulant embedding of the Toeplitz covariance.

    Embedding sizes 2^j and 3*2^j are tried in increasing order; the latter
    are multiples of 24 so purely periodic daily terms embed exactly.
    """
    sizes = sorted(m for j in range(2, 25) for m in (2**j, 3 * 2**j) if 2 * n <= m <= max_size)
    for m in sizes:
        lag = np.minimum(np.arange(m), m - np.arange(m)) * dt
        lam = np.fft.fft(cov_fn(lag)).real
        if lam.min() >= -1e-8 * lam.max():
            return np.sqrt(np.clip(lam, 0.0, None) / m)
    neg = -lam.min() / lam.max()
    logger.warning("circulant embedding not PSD (relative negative eigenvalue %.2g); clipping", neg)
    return np.sqrt(np.clip(lam, 0.0, None) / m)


def _time_cov(factors, lag):
    if not factors:
        return np.ones_like(lag)
    r = Lags.from_separation(np.zeros_like(lag), lag)
    out = np.ones_like(lag)
    for f in factors:
        out = out * f.value(r)
    return out


def _space_cov(factors, locs):
    pts = Points.at(locs[0], [0.0]) if len(locs) == 1 else Points.concat([Points.at(l, [0.0]) for l in locs])
    K = np.ones((len(locs), len(locs)))
    for f in factors:
        K = K * f.value(Lags(pts, pts))
    return K


def simulate_field(kernel: Kernel, locations: list[Location], times, rng: np.random.Generator,
                   offset_sd: float = 1.0) -> np.ndarray:
    """Latent field at ``locations`` x ``times`` (regular grid), shape (n_stations, n_times).

    The station-mean term, if present, is replaced by offsets with sd ``offset_sd``.
    """
    t = np.asarray(times, dtype=float)
    n = len(t)
    dt = t[1] - t[0] if n > 1 else 1.0
    if n > 2 and not np.allclose(np.diff(t), dt):
        raise ValueError("simulation needs a regular time grid")
    S = len(locations)
    field = np.zeros((S, n))
    for tf, sf in time_space_terms(kernel):
        sq = _circulant_sqrt_eigs(lambda lag: _time_cov(tf, lag), n, dt)
        m = len(sq)
        xi = rng.standard_normal((S, m)) + 1j * rng.standard_normal((S, m))
        W = np.fft.fft(sq * xi, axis=1).real[:, :n]        # rows iid with the time covariance
        B = robust_cholesky(_space_cov(sf, locations))
        field += B @ W
    if kernel.has_station_mean():
        field += offset_sd * rng.standard_normal((S, 1))
    return field


@dataclass
class SyntheticData:
    locations: dict             # station id -> Location
    times: np.ndarray
    truth: dict                 # station id -> latent series
    observed: dict              # station id -> noisy hourly series
    hidden: str
    meas_hour: int
    kernel: Kernel
    noise_var: float

    @property
    def target(self) -> Location:
        return self.locations[self.hidden]

    def nearby(self) -> Dataset:
        return Dataset.from_series({loc: (self.times, self.observed[sid])
                                    for sid, loc in self.locations.items() if sid != self.hidden})

    def all_stations(self) -> Dataset:
        return Dataset.from_series({loc: (self.times, self.observed[sid]) for sid, loc in self.locations.items()})

    def hidden_truth(self) -> np.ndarray:
        """What a thermometer at the hidden station reads (noise included)."""
        return self.observed[self.hidden]

    def extrema(self, meas_hour: int | None = None):
        h = self.meas_hour if meas_hour is None else meas_hour
        return extract_extrema(self.hidden_truth(), build_daysets(self.times, h))


def simulate(kernel: Kernel | str = "se_x_se", days: float = 60, seed=0, meas_hour: int = 11,
             locations: dict | None = None, hidden: str = DEFAULT_HIDDEN, noise_var: float | None = None,
             base_temp: float = 10.0, offset_sd: float = 1.0, diurnal_amplitude: float = 0.0,
             peak_hour: float = 15.0, step_hours: float = 1.0) -> SyntheticData:
    """Hourly truth and noisy observations for a station network, one station hidden."""
    if isinstance(kernel, str):
        if noise_var is None:
            noise_var = preset_noise_var(kernel)
        kernel = preset(kernel)
    if noise_var is None:
        raise ValueError("noise_var is required for a custom kernel")
    locations = dict(locations or iowa_layout())
    if hidden not in locations:
        raise ValueError(f"hidden station {hidden!r} not in layout")
    rng = np.random.default_rng(seed)
    times = np.arange(0.0, days * 24.0, step_hours)
    ids = sorted(locations)
    field = simulate_field(kernel, [locations[s] for s in ids], times, rng, offset_sd)
    field += base_temp + diurnal_amplitude * np.cos(2 * np.pi * (times - peak_hour) / 24.0)
    noise = np.sqrt(noise_var) * rng.standard_normal(field.shape)
    truth = {s: field[i] for i, s in enumerate(ids)}
    observed = {s: field[i] + noise[i] for i, s in enumerate(ids)}
    return SyntheticData(locations, times, truth, observed, hidden, meas_hour, kernel, float(noise_var))


__all__ = ["IOWA_LONLAT", "iowa_layout", "simulate", "simulate_field", "SyntheticData", "StationMean"]
