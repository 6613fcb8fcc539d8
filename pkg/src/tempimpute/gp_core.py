"""Marginal likelihood, chunked hyperparameter fitting and GP conditioning."""
from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from . import kernels as kern
from .geom_time import HOURS_PER_DAY, Location
from .kernels import Kernel, Points
from .linalg import NumericalError, chol_logdet, chol_solve, mvn_logpdf_chol, robust_cholesky

logger = logging.getLogger(__name__)

NOISE_NAME = "noise.variance"
_LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Observation:
    station_id: str
    location: Location
    time: float
    temp_c: float


@dataclass(frozen=True)
class Dataset:
    """Hourly observations from one or more stations, stored column-wise."""

    points: Points
    temp: np.ndarray
    locations: dict = field(default_factory=dict)

    def __post_init__(self):
        temp = np.asarray(self.temp, dtype=float)
        object.__setattr__(self, "temp", temp)
        if len(temp) != len(self.points):
            raise ValueError("temperature vector length differs from number of points")
        if not np.all(np.isfinite(temp)):
            raise ValueError("temperatures must be finite")
        for sid in np.unique(self.points.station):
            t = self.points.time[self.points.station == sid]
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"timestamps for station {sid!r} are not strictly increasing")

    @classmethod
    def from_observations(cls, obs: Sequence[Observation]) -> "Dataset":
        locs = {}
        for o in obs:
            known = locs.setdefault(o.station_id, o.location)
            if known != o.location:
                raise ValueError(f"station {o.station_id!r} has inconsistent locations")
        pts = Points(np.array([o.station_id for o in obs], dtype=object),
                     np.array([o.location.east_km for o in obs], dtype=float),
                     np.array([o.location.north_km for o in obs], dtype=float),
                     np.array([o.time for o in obs], dtype=float))
        return cls(pts, np.array([o.temp_c for o in obs], dtype=float), locs)

    @classmethod
    def from_series(cls, series: dict) -> "Dataset":
        """Build from ``{Location: (times, temps)}``."""
        parts, temps, locs = [], [], {}
        for loc, (t, y) in series.items():
            parts.append(Points.at(loc, t))
            temps.append(np.asarray(y, dtype=float))
            locs[loc.station_id] = loc
        return cls(Points.concat(parts), np.concatenate(temps), locs)

    @classmethod
    def empty(cls) -> "Dataset":
        z = np.zeros(0)
        return cls(Points(np.zeros(0, dtype=object), z, z, z), z, {})

    def __len__(self) -> int:
        return len(self.temp)

    @property
    def station_ids(self) -> list[str]:
        return sorted(self.locations)

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        pts = self.points.take(idx)
        keep = set(pts.station)
        return Dataset(pts, self.temp[idx], {k: v for k, v in self.locations.items() if k in keep})

    def station(self, station_id: str) -> "Dataset":
        return self.subset(self.points.station == station_id)

    def drop_station(self, station_id: str) -> "Dataset":
        return self.subset(self.points.station != station_id)

    def between(self, t0: float, t1: float) -> "Dataset":
        t = self.points.time
        return self.subset((t >= t0) & (t <= t1))

    def chunks(self, chunk_days: float) -> list["Dataset"]:
        """Disjoint chunks aligned to midnight of the dataset epoch."""
        key = np.floor(self.points.time / (HOURS_PER_DAY * chunk_days)).astype(int)
        return [self.subset(key == c) for c in np.unique(key)]


@dataclass(frozen=True)
class FittedGP:
    kernel: Kernel
    noise_var: float
    log_likelihood: float = float("nan")
    iterations: int = 0
    n_chunks: int = 0
    converged: bool = True
    message: str = ""
    history: tuple = ()

    def __post_init__(self):
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")

    def hyper_names(self) -> list[str]:
        return self.kernel.hyper_names() + [NOISE_NAME]

    def log_hyper(self) -> np.ndarray:
        return np.append(np.log(self.kernel.hyper_values()), math.log(self.noise_var))

    def to_dict(self) -> dict:
        return {
            "format": "tempimpute.fitted_gp/1",
            "kernel": self.kernel.to_dict(),
            "noise_var": float(self.noise_var),
            "meta": {"log_likelihood": float(self.log_likelihood), "iterations": int(self.iterations),
                     "n_chunks": int(self.n_chunks), "converged": bool(self.converged),
                     "message": self.message},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedGP":
        meta = d.get("meta", {})
        return cls(kern.from_dict(d["kernel"]), float(d["noise_var"]),
                   float(meta.get("log_likelihood", float("nan"))), int(meta.get("iterations", 0)),
                   int(meta.get("n_chunks", 0)), bool(meta.get("converged", True)),
                   str(meta.get("message", "")))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FittedGP":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# marginal likelihood
# ---------------------------------------------------------------------------

def _chunk_lml(k: Kernel, noise_var: float, data: Dataset, with_grad: bool):
    lags = kern.Lags(data.points, data.points)
    K = k.value(lags)
    K[np.diag_indices_from(K)] += noise_var
    L = robust_cholesky(K)
    y = data.temp
    alpha = chol_solve(L, y)
    n = len(y)
    value = -0.5 * float(y @ alpha) - 0.5 * chol_logdet(L) - 0.5 * n * _LOG2PI
    if not with_grad:
        return value, None
    W = np.outer(alpha, alpha) - chol_solve(L, np.eye(n))
    dK = k.grads(lags)
    g = [0.5 * float(np.sum(W * dK[name])) for name in k.hyper_names()]
    g.append(0.5 * noise_var * float(np.trace(W)))
    return value, np.array(g)


def log_marginal_likelihood(k: Kernel, noise_var: float, data: Dataset | Sequence[Dataset],
                            with_grad: bool = True, threads: int = 1):
    """Log N(T | 0, K + noise I), summed over independent chunks.

    ``data`` may be a single Dataset or a list of chunks. The gradient is with
    respect to log hyperparameters, ordered as ``k.hyper_names()`` followed by
    the noise variance.
    """
    chunks = [data] if isinstance(data, Dataset) else list(data)
    chunks = [c for c in chunks if len(c) > 0]
    if not chunks:
        raise ValueError("no observations")

    def one(c):
        return _chunk_lml(k, noise_var, c, with_grad)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, chunks))
    else:
        results = [one(c) for c in chunks]
    value = sum(r[0] for r in results)
    if not with_grad:
        return value, None
    return value, np.sum([r[1] for r in results], axis=0)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def heuristic_scales(k: Kernel, data: Dataset) -> dict[str, float]:
    """Rough starting values: 3 h time scales, 100 km space scales, data variance split."""
    resid = data.temp.copy()
    for sid in np.unique(data.points.station):
        m = data.points.station == sid
        resid[m] -= resid[m].mean()
    var = float(np.var(resid)) if len(resid) > 1 else 1.0
    var = var if var > 0 else 1.0
    n_var_terms = sum(1 for leaf in k.leaves()
                      if "variance" in leaf.free_params and not isinstance(leaf, kern.SESpace))
    out = {}
    for leaf in k.leaves():
        for p in leaf.free_params:
            name = f"{leaf.name}.{p}"
            if p == "variance":
                out[name] = var / max(n_var_terms, 1)
            elif p == "alpha":
                out[name] = 1.0
            elif isinstance(leaf, kern.SESpace):
                out[name] = 100.0
            elif isinstance(leaf, kern.Periodic24):
                out[name] = 1.0
            else:
                out[name] = 3.0
    out[NOISE_NAME] = 0.05 * var
    return out


def fit_hyperparameters(kernel: Kernel | str, data: Dataset, chunk_days: float = 10,
                        init: dict | None = None, max_iters: int = 200, tol: float = 1e-7,
                        n_starts: int = 5, seed: int = 0, threads: int = 1,
                        max_chunk_points: int = 6000) -> FittedGP:
    """Maximise the chunked marginal likelihood over log hyperparameters.

    ``init`` maps hyperparameter names (including ``"noise.variance"``) to raw
    values and is used as the first start; otherwise the heuristic scales are.
    Further starts are drawn log-uniformly within one decade of the heuristic
    scales. The best start wins; if it did not converge within ``max_iters``
    the result is returned with ``converged=False``.
    """
    k0 = kern.preset(kernel) if isinstance(kernel, str) else kernel
    chunks = []
    for c in data.chunks(chunk_days):
        if len(c) <= 1:
            warnings.warn(f"skipping degenerate chunk with {len(c)} observation(s)")
            continue
        if len(c) > max_chunk_points:
            raise ValueError(f"chunk of {len(c)} points exceeds max_chunk_points={max_chunk_points}")
        chunks.append(c)
    if not chunks:
        raise ValueError("no usable chunks")

    names = k0.hyper_names() + [NOISE_NAME]
    heur = heuristic_scales(k0, data)
    centre = np.log([heur[n] for n in names])
    starts = []
    if init is not None:
        unknown = set(init) - set(names)
        if unknown:
            raise KeyError(f"unknown hyperparameter(s) in init: {sorted(unknown)}")
        first = dict(heur)
        first.update(init)
        starts.append(np.log([first[n] for n in names]))
    else:
        starts.append(centre)
    rng = np.random.default_rng(seed)
    while len(starts) < n_starts:
        starts.append(centre + rng.uniform(-math.log(10), math.log(10), size=len(names)))

    nk = len(names) - 1

    def objective(x):
        try:
            kx = k0.with_log_hyper(x[:nk])
            v, g = log_marginal_likelihood(kx, math.exp(x[nk]), chunks, threads=threads)
        except NumericalError:
            return 1e25, np.zeros_like(x)
        return -v, -g

    bounds = [(-12.0, 12.0)] * len(names)
    best = None
    for s in starts:
        cache = {}

        def fun(x):
            f, g = objective(x)
            cache[x.tobytes()] = f
            return f, g

        hist = []

        def callback(xk):
            hist.append(-cache.get(xk.tobytes(), objective(xk)[0]))

        res = optimize.minimize(fun, np.clip(s, -12, 12), jac=True, method="L-BFGS-B",
                                bounds=bounds, callback=callback,
                                options={"maxiter": max_iters, "ftol": tol, "gtol": 1e-6})
        if best is None or res.fun < best[0].fun:
            best = (res, hist)
    res, hist = best
    kfit = k0.with_log_hyper(res.x[:nk])
    converged = bool(res.success) and res.fun < 1e24
    if not converged:
        logger.warning("hyperparameter fit did not converge: %s", res.message)
    return FittedGP(kfit, math.exp(res.x[nk]), -float(res.fun), int(res.nit), len(chunks),
                    converged, str(res.message), tuple(hist))


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPosterior:
    points: Points
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        n = len(self.points)
        if self.mean.shape != (n,) or self.cov.shape != (n, n):
            raise ValueError("posterior dimensions inconsistent")

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(self.var, 0.0, None))

    def marginal(self, idx) -> "GaussianPosterior":
        idx = np.asarray(idx)
        return GaussianPosterior(self.points.take(idx), self.mean[idx], self.cov[np.ix_(idx, idx)])

    def logpdf(self, x) -> float:
        return mvn_logpdf_chol(x, self.mean, robust_cholesky(self.cov))


def condition(fit: FittedGP, nearby: Dataset, query: Points, include_noise: bool = True,
              query_station_mean: bool = True) -> GaussianPosterior:
    """Exact Gaussian conditioning of the query values on nearby observations.

    ``include_noise`` adds the noise variance to the query-query block, so the
    posterior describes measured rather than latent temperatures.
    ``query_station_mean=False`` drops the station-mean term from that block;
    use it when a separate offset parameter models the query station's level.
    """
    k = fit.kernel
    kq = k if query_station_mean or not k.has_station_mean() else kern.strip_station_mean(k)
    Kmm = kq(query)
    if include_noise:
        Kmm[np.diag_indices_from(Kmm)] += fit.noise_var
    if len(nearby) == 0:
        return GaussianPosterior(query, np.zeros(len(query)), Kmm)
    Koo = k(nearby.points)
    Koo[np.diag_indices_from(Koo)] += fit.noise_var
    L = robust_cholesky(Koo)
    Kom = k(nearby.points, query)
    A = linalg.solve_triangular(L, Kom, lower=True, check_finite=False)
    w = linalg.solve_triangular(L, nearby.temp, lower=True, check_finite=False)
    mean = A.T @ w
    cov = Kmm - A.T @ A
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(query, mean, cov)


def sample_posterior(post: GaussianPosterior, n: int, seed=None) -> np.ndarray:
    """``n`` independent draws, shape (n, dim)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d = len(post.mean)
    if not np.any(post.cov):
        return np.tile(post.mean, (n, 1))
    L = robust_cholesky(post.cov)
    z = rng.standard_normal((n, d))
    return post.mean + z @ L.T


# ---------------------------------------------------------------------------
# windowed prediction
# ---------------------------------------------------------------------------

def window_starts(t0: float, t1: float, length: float, stride: float) -> np.ndarray:
    """Start times of overlapping windows of ``length`` covering ``[t0, t1]``."""
    if length <= 0 or stride <= 0:
        raise ValueError("window length and stride must be positive")
    span = t1 - t0
    if span <= length:
        return np.array([t0 + 0.5 * span - 0.5 * length])
    n = int(math.ceil((span - length) / stride)) + 1
    starts = t0 + stride * np.arange(n, dtype=float)
    starts[-1] = t1 - length
    return starts


def assign_to_windows(t, starts: np.ndarray, length: float) -> np.ndarray:
    """Index of the window in which each time is farthest from an edge."""
    t = np.asarray(t, dtype=float)
    margin = np.minimum(t[:, None] - starts[None, :], starts[None, :] + length - t[:, None])
    return np.argmax(margin, axis=1)


@dataclass(frozen=True)
class WindowedPrediction:
    starts: np.ndarray
    length: float
    posteriors: list
    grid_index: list         # per window: grid indices it predicts
    source: np.ndarray       # per grid point: window it is taken from
    local: np.ndarray        # per grid point: index inside that window

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.posteriors[w].mean[i] for w, i in zip(self.source, self.local)])

    @property
    def var(self) -> np.ndarray:
        return np.array([self.posteriors[w].cov[i, i] for w, i in zip(self.source, self.local)])

    def centre_indices(self, w: int) -> np.ndarray:
        """Grid indices whose prediction is taken from window ``w``."""
        return np.flatnonzero(self.source == w)


def predict_windows(fit: FittedGP, nearby: Dataset, target: Location, grid, window_days: float = 73,
                    overlap_days: float = 48, include_noise: bool = True,
                    query_station_mean: bool = True, threads: int = 1) -> WindowedPrediction:
    """Condition on nearby data in overlapping windows and stitch the centres."""
    grid = np.asarray(grid, dtype=float)
    if len(grid) == 0:
        raise ValueError("empty grid")
    length = window_days * HOURS_PER_DAY
    stride = (window_days - overlap_days) * HOURS_PER_DAY
    starts = window_starts(grid[0], grid[-1], length, stride)
    source = assign_to_windows(grid, starts, length)
    inside = (grid >= starts[source]) & (grid <= starts[source] + length)
    if not np.all(inside):
        raise ValueError("grid point not covered by any prediction window")

    def run(w):
        s = starts[w]
        idx = np.flatnonzero((grid >= s) & (grid <= s + length))
        post = condition(fit, nearby.between(s, s + length), Points.at(target, grid[idx]),
                         include_noise=include_noise, query_station_mean=query_station_mean)
        return idx, post

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, range(len(starts))))
    else:
        results = [run(w) for w in range(len(starts))]
    grid_index = [r[0] for r in results]
    local = np.empty(len(grid), dtype=int)
    for w, idx in enumerate(grid_index):
        mine = source[idx] == w
        local[idx[mine]] = np.flatnonzero(mine)
    return WindowedPrediction(starts, length, [r[1] for r in results], grid_index, source, local)
