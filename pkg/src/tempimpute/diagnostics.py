"""Model checks: variograms, error metrics, per-hour summaries and measurement-hour inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geom_time import DailyExtrema, build_daysets, extract_extrema, match_extrema
from .gp_core import Dataset, GaussianPosterior, WindowedPrediction, predict_windows, sample_posterior
from .smoothhmc import (ImputationDraws, SamplerConfig, plan_windows, sample_batch, targets_from_plan,
                        window_priors)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# variogram
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariogramEstimate:
    station_pair: tuple
    distance_km: float
    lags: np.ndarray        # bin centres, hours
    gamma: np.ndarray
    counts: np.ndarray

    def rows(self):
        pair = f"{self.station_pair[0]}-{self.station_pair[1]}"
        return [(pair, self.distance_km, float(r), float(g), int(n))
                for r, g, n in zip(self.lags, self.gamma, self.counts)]


def _range_sums(ts, vs, lo, hi):
    """For sorted ``ts``: count, sum and sum of squares of ``vs`` with lo <= t <= hi."""
    c1 = np.concatenate([[0.0], np.cumsum(vs)])
    c2 = np.concatenate([[0.0], np.cumsum(vs * vs)])
    i0 = np.searchsorted(ts, lo, side="left")
    i1 = np.searchsorted(ts, hi, side="right")
    return i1 - i0, c1[i1] - c1[i0], c2[i1] - c2[i0]


def empirical_variogram(data: Dataset, pair: tuple, lag_bin_width: float = 1.0,
                        max_lag: float = 48.0) -> VariogramEstimate:
    """Semi-variogram between two stations' mean-removed series, binned in |time lag|."""
    a_id, b_id = pair
    a, b = data.station(a_id), data.station(b_id)
    if len(a) < 2 or len(b) < 2:
        raise ValueError(f"stations {pair} need at least 2 observations each")
    ta, va = a.points.time, a.temp - a.temp.mean()
    order = np.argsort(b.points.time, kind="stable")
    tb, vb = b.points.time[order], b.temp[order] - b.temp.mean()
    same = a_id == b_id
    half = 0.5 * lag_bin_width
    centres = np.arange(0.0, max_lag + 1e-9, lag_bin_width)
    lags, gam, cnt = [], [], []
    for c in centres:
        ranges = [(c - half, c + half)] if c - half <= 0 else [(c - half, c + half), (-c - half, -c + half)]
        if c - half <= 0 < c + half:
            ranges = [(-c - half, c + half)]
        n = s = 0.0
        for lo, hi in ranges:
            k, s1, s2 = _range_sums(tb, vb, ta + lo - 1e-9, ta + hi + 1e-9)
            n += k.sum()
            s += np.sum(k * va * va - 2 * va * s1 + s2)
        if same and c - half <= 0:
            n -= len(ta)                    # drop self-pairs (zero difference)
        if same:
            n /= 2.0
            s /= 2.0
        if n > 0:
            lags.append(c)
            gam.append(max(0.5 * s / n, 0.0))
            cnt.append(int(round(n)))
    if not lags:
        logger.warning("no station pairs within %g h for %s", max_lag, pair)
    dist = a.locations[a_id].distance_km(b.locations[b_id])
    return VariogramEstimate((a_id, b_id), dist, np.array(lags), np.array(gam), np.array(cnt, dtype=int))


def pool_variograms(estimates: Sequence[VariogramEstimate]) -> VariogramEstimate:
    """Pair-count weighted average of estimates for the same pair from independent realizations.

    Components with infinite memory (a purely periodic term, say) are not
    ergodic: one realization's variogram does not converge to the model no
    matter how long the record, while pooling realizations does.
    """
    if not estimates:
        raise ValueError("nothing to pool")
    first = estimates[0]
    lags = np.unique(np.concatenate([e.lags for e in estimates]))
    num = np.zeros(len(lags))
    cnt = np.zeros(len(lags), dtype=int)
    for e in estimates:
        if e.station_pair != first.station_pair:
            raise ValueError("estimates refer to different station pairs")
        pos = np.searchsorted(lags, e.lags)
        num[pos] += e.gamma * e.counts
        cnt[pos] += e.counts
    return VariogramEstimate(first.station_pair, first.distance_km, lags, num / np.maximum(cnt, 1), cnt)


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorReport:
    var_err: float
    var_err_expected: float
    mse: float
    mse_expected: float
    n: int

    def as_dict(self):
        return {"var_err": self.var_err, "var_err_expected": self.var_err_expected,
                "mse": self.mse, "mse_expected": self.mse_expected, "n": self.n}


def error_metrics(truth, post, n_draws: int = 200, seed=0) -> ErrorReport:
    """Realised error statistics against ``truth`` and their model-expected values.

    The expected values replace the truth by posterior draws (``n_draws`` of
    them for a Gaussian posterior; all stored draws otherwise). A windowed
    prediction draws each window's centre block independently. Variances are
    population variances so that ``mse == var_err + mean_err**2``.
    """
    truth = np.asarray(truth, dtype=float)
    if isinstance(post, GaussianPosterior):
        if n_draws < 1:
            raise ValueError("need at least one draw for the expected statistics")
        mean = post.mean
        draws = sample_posterior(post, n_draws, seed)
    elif isinstance(post, WindowedPrediction):
        if n_draws < 1:
            raise ValueError("need at least one draw for the expected statistics")
        mean = post.mean
        draws = np.empty((n_draws, len(mean)))
        rng = np.random.default_rng(seed)
        for w, wpost in enumerate(post.posteriors):
            cen = post.centre_indices(w)
            if len(cen):
                draws[:, cen] = sample_posterior(wpost.marginal(post.local[cen]), n_draws, rng)
    elif isinstance(post, ImputationDraws):
        draws = post.samples
        if draws.shape[0] == 0:
            raise ValueError("need at least one draw for the expected statistics")
        mean = draws.mean(axis=0)
    else:
        raise TypeError(f"unsupported posterior type {type(post).__name__}")
    if truth.shape != mean.shape:
        raise ValueError(f"truth has shape {truth.shape}, posterior {mean.shape}")
    err = truth - mean
    e_k = draws - mean
    return ErrorReport(float(err.var()), float(e_k.var(axis=1).mean()),
                       float(np.mean(err ** 2)), float(np.mean(e_k ** 2)), int(truth.size))


# ---------------------------------------------------------------------------
# per-hour summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HourlySummary:
    hours: np.ndarray
    avg_tx: np.ndarray           # (hours,) or (draws, hours)
    avg_tn: np.ndarray
    avg_abs_dtx: np.ndarray
    avg_abs_dtn: np.ndarray

    def mean(self) -> "HourlySummary":
        return self._reduce(lambda a: a.mean(axis=0) if a.ndim == 2 else a)

    def sd(self) -> "HourlySummary":
        return self._reduce(lambda a: a.std(axis=0, ddof=1) if a.ndim == 2 and len(a) > 1
                            else np.zeros(a.shape[-1]))

    def _reduce(self, f):
        return HourlySummary(self.hours, f(self.avg_tx), f(self.avg_tn),
                             f(self.avg_abs_dtx), f(self.avg_abs_dtn))


def _window_stats(values, grid, hour, epoch_offset):
    ds = build_daysets(grid, hour, epoch_offset)
    if len(ds) < 2:
        raise ValueError(f"need at least 2 full windows at hour {hour}, got {len(ds)}")
    v = np.atleast_2d(values)
    idx = [d.member_indices for d in ds]
    tx = np.stack([v[:, i].max(axis=1) for i in idx], axis=1)
    tn = np.stack([v[:, i].min(axis=1) for i in idx], axis=1)
    days = np.array([d.day_index for d in ds])
    consec = np.diff(days) == 1
    dtx = np.abs(np.diff(tx, axis=1))[:, consec]
    dtn = np.abs(np.diff(tn, axis=1))[:, consec]
    return tx.mean(1), tn.mean(1), dtx.mean(1), dtn.mean(1)


def summary_stats(values, grid, hours: Sequence[int] = range(24), epoch_offset: float = 0.0) -> HourlySummary:
    """Mean Tx, Tn and mean absolute day-to-day changes, re-windowed for each measurement hour.

    ``values`` is one series (n,) or draws (n_draws, n); for draws each entry
    has a leading draw axis and :meth:`HourlySummary.mean`/``sd`` summarise it.
    """
    values = np.asarray(values, dtype=float)
    hours = np.asarray(list(hours), dtype=int)
    stats = [_window_stats(values, grid, h, epoch_offset) for h in hours]
    cols = [np.stack([s[j] for s in stats], axis=1) for j in range(4)]
    if values.ndim == 1:
        cols = [c[0] for c in cols]
    return HourlySummary(hours, *cols)


# ---------------------------------------------------------------------------
# concordance and hour inference
# ---------------------------------------------------------------------------

def concordance(unconstrained, constrained_mean) -> float:
    """Log density of the constrained mean under the unconstrained posterior.

    A :class:`WindowedPrediction` contributes each window's centre block as an
    independent term.
    """
    mu = np.asarray(constrained_mean, dtype=float)
    if isinstance(unconstrained, WindowedPrediction):
        if mu.shape != unconstrained.source.shape:
            raise ValueError("mean length does not match the prediction grid")
        total = 0.0
        for w, post in enumerate(unconstrained.posteriors):
            cen = unconstrained.centre_indices(w)
            if len(cen):
                total += post.marginal(unconstrained.local[cen]).logpdf(mu[cen])
        return float(total)
    if mu.shape != unconstrained.mean.shape:
        raise ValueError("mean length does not match the posterior")
    return unconstrained.logpdf(mu)


@dataclass
class HourScan:
    hours: np.ndarray
    delta: np.ndarray
    means: np.ndarray                    # (hours, n) constrained posterior means
    converged: np.ndarray
    unconstrained_mean: np.ndarray
    diagnostics: list = field(default_factory=list)

    @property
    def best_hour(self) -> int:
        return int(self.hours[int(np.argmax(self.delta))])

    def distance_from_unconstrained(self) -> np.ndarray:
        """Euclidean distance of each constrained mean from the unconstrained one, levels removed.

        The unconstrained prediction carries no information on the station's
        level, so both series are centred first.
        """
        diff = self.means - self.unconstrained_mean
        return np.linalg.norm(diff - diff.mean(axis=1, keepdims=True), axis=1)


def infer_measurement_hour(fit, nearby: Dataset, target_loc, extrema: Sequence[DailyExtrema], grid,
                           config: SamplerConfig = SamplerConfig(), hours: Sequence[int] = range(24),
                           window_days: int = 9, overlap_days: int = 3, prediction_window_days: float = 73,
                           prediction_overlap_days: float = 48, include_noise: bool = True,
                           epoch_offset: float = 0.0) -> HourScan:
    """Impute under each assumed measurement hour and score it by concordance.

    The same extrema records are re-read as closing at each candidate hour on
    their date. All candidate imputations share one batched sampler run.
    """
    grid = np.asarray(grid, dtype=float)
    hours = np.asarray(list(hours), dtype=int)
    pred = predict_windows(fit, nearby, target_loc, grid, prediction_window_days, prediction_overlap_days,
                           include_noise=include_noise)
    plans = []
    for h in hours:
        ds, ex = match_extrema(build_daysets(grid, int(h), epoch_offset), extrema)
        plans.append(plan_windows(grid, ds, ex, window_days, overlap_days, anchor="grid"))
    for plan in plans[1:]:
        if any(not np.array_equal(a, b) for a, b in zip(plan.grid_index, plans[0].grid_index)):
            raise RuntimeError("hour plans do not share their sampling windows")
    priors = window_priors(fit, nearby, target_loc, plans[0], grid, config, include_noise)
    per_hour = [targets_from_plan(plan, priors, config) for plan in plans]
    n_win = len(priors)
    # window-major order: the candidates for one window share its prior factor
    order = [(w, n) for w in range(n_win) for n in range(len(hours))]
    parts = sample_batch([per_hour[n][w] for w, n in order], config.hmc(), seed=config.seed,
                         init=config.init, keep=[plans[n].owned[w] for w, n in order])
    by_key = dict(zip(order, parts))
    means = np.empty((len(hours), len(grid)))
    conv = np.zeros(len(hours), dtype=bool)
    diags = []
    for n, plan in enumerate(plans):
        ok = True
        for w, (idx, own) in enumerate(zip(plan.grid_index, plan.owned)):
            part = by_key[(w, n)]
            means[n, idx[own]] = part.samples.mean(axis=0)
            ok &= part.diagnostics[0]["converged"]
        conv[n] = ok
        diags.append([by_key[(w, n)].diagnostics[0] for w in range(n_win)])
        if not ok:
            logger.warning("hour %d: sampler flagged unconverged", hours[n])
    delta = np.array([concordance(pred, m) for m in means])
    return HourScan(hours, delta, means, conv, pred.mean, diags)


def extrema_from_truth(values, grid, meas_hour: int, epoch_offset: float = 0.0) -> list[DailyExtrema]:
    """Daily extrema a min/max thermometer read at ``meas_hour`` would record."""
    return extract_extrema(values, build_daysets(grid, meas_hour, epoch_offset))
