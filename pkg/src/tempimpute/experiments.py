"""Reusable experiment drivers shared by the CLI, scripts/ and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import toy_oracle as toy
from .diagnostics import HourScan, error_metrics, infer_measurement_hour, summary_stats
from .gp_core import FittedGP, fit_hyperparameters, predict_windows
from .hmc import effective_sample_size
from .smoothhmc import ConstrainedTarget, ImputationDraws, SamplerConfig, constraint_satisfaction, \
    impute_station, sample_batch
from .synthetic import simulate

logger = logging.getLogger(__name__)

QUANTILE_LEVELS = (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)


def toy_target(spec: toy.IndepNormalSpec, x_min: float, x_max: float, k: float = 10.0,
               eps: float = 0.1) -> ConstrainedTarget:
    """Independent-normal prior with one extrema window over all coordinates, offset pinned."""
    return ConstrainedTarget(spec.means, np.diag(spec.sds), (np.arange(spec.p),), [x_min], [x_max],
                             k=k, eps=eps, mu_sd=None)


@dataclass
class ToyRun:
    label: str
    draws: ImputationDraws
    ks: np.ndarray
    satisfaction: float
    rhat_max: float

    def summary(self) -> dict:
        return {"label": self.label, "ks_max": float(self.ks.max()),
                "n_ks_below_0.02": int(np.sum(self.ks < 0.02)),
                "n_ks_below_0.05": int(np.sum(self.ks < 0.05)),
                "constraint_satisfaction": self.satisfaction, "rhat_max": self.rhat_max,
                "accept_rate": self.draws.diagnostics[0]["accept_rate"],
                "converged": self.draws.diagnostics[0]["converged"]}


def run_toy(config: SamplerConfig, p: int = 100, x_min: float = 8.8, x_max: float = 12.5,
            hard: bool = False, hard_init: str = "uniform") -> tuple[toy.ExtremaPairProbs, ToyRun]:
    """SmoothHMC (or the hard-max baseline) on the independent-normal toy target.

    The baseline runs on untransformed temperatures from ``hard_init``, the
    way a generic sampler would be applied to the exact likelihood.
    """
    spec = toy.toy_spec(p)
    probs = toy.extrema_pair_probs(spec, x_min, x_max)
    target = toy_target(spec, x_min, x_max, config.k, config.eps)
    draws = sample_batch([target], config.hmc(), seed=config.seed, hard=hard,
                         init=hard_init if hard else config.init, centered=hard)[0]
    ks = np.array([toy.ks_distance(spec, probs, i, draws.samples[:, i], x_min, x_max) for i in range(p)])
    sat = float(constraint_satisfaction(draws.samples, [np.arange(p)], [x_min], [x_max], config.eps).mean())
    return probs, ToyRun("hard" if hard else "smoothhmc", draws, ks, sat, draws.diagnostics[0]["rhat_max"])


def boundary_masses(draws: ImputationDraws, i: int, j: int) -> dict:
    """Fraction of draws where coordinate ``i`` is the minimum and ``j`` the maximum (0-based),
    with binomial standard errors using the effective sample size of each indicator."""
    s = draws.samples
    out = {}
    for name, flag in (("i_is_min", s.argmin(axis=1) == i), ("j_is_max", s.argmax(axis=1) == j)):
        f = flag.astype(float)
        chains = f.reshape(draws.n_chains, -1, 1)
        ess = float(effective_sample_size(chains)[0]) if f.std() > 0 else float(len(f))
        ess = max(min(ess, len(f)), 1.0)
        p = f.mean()
        out[name] = {"fraction": p, "ess": ess, "se": float(np.sqrt(max(p * (1 - p), 1e-300) / ess))}
    return out


@dataclass
class HiddenStationRun:
    seed: int
    fit: FittedGP
    unconstrained: object            # ErrorReport
    constrained: object              # ErrorReport
    draws: ImputationDraws
    truth: np.ndarray
    grid: np.ndarray

    def summary(self) -> dict:
        return {"seed": self.seed, "unconstrained": self.unconstrained.as_dict(),
                "constrained": self.constrained.as_dict(), "converged": self.draws.converged,
                "noise_var": self.fit.noise_var,
                "hyper": dict(zip(self.fit.kernel.hyper_names(), self.fit.kernel.hyper_values().tolist()))}


def hidden_station(seed: int, config: SamplerConfig, kernel: str = "se_x_se", days: float = 60,
                   meas_hour: int = 11, fit_starts: int = 1, refit: bool = True,
                   diurnal_amplitude: float = 0.0) -> HiddenStationRun:
    """Simulate four stations, hide one, fit on the rest and impute it from its extrema."""
    syn = simulate(kernel, days=days, seed=seed, meas_hour=meas_hour, diurnal_amplitude=diurnal_amplitude)
    nearby = syn.nearby()
    if refit:
        fit = fit_hyperparameters(kernel, nearby, n_starts=fit_starts, seed=seed)
    else:
        fit = FittedGP(syn.kernel, syn.noise_var)
    truth = syn.hidden_truth()
    pred = predict_windows(fit, nearby, syn.target, syn.times)
    unc = error_metrics(truth, pred, seed=seed)
    draws = impute_station(fit, nearby, syn.target, syn.extrema(), meas_hour, syn.times, config=config)
    con = error_metrics(truth, draws)
    return HiddenStationRun(seed, fit, unc, con, draws, truth, syn.times)


def summary_coverage(truth, samples, grid, hours=range(24), n_sd: float = 2.0) -> dict:
    """Per-hour check that the imputed avg Tx and avg Tn bands (mean +- n_sd sd) hold the truth."""
    t = summary_stats(truth, grid, hours)
    d = summary_stats(samples, grid, hours)
    m, s = d.mean(), d.sd()
    cov_tx = np.abs(t.avg_tx - m.avg_tx) <= n_sd * s.avg_tx
    cov_tn = np.abs(t.avg_tn - m.avg_tn) <= n_sd * s.avg_tn
    return {"hours": t.hours, "covered_tx": cov_tx, "covered_tn": cov_tn, "covered": cov_tx & cov_tn,
            "truth_tx": t.avg_tx, "truth_tn": t.avg_tn, "mean_tx": m.avg_tx, "mean_tn": m.avg_tn,
            "sd_tx": s.avg_tx, "sd_tn": s.avg_tn}


def hour_inference(seed: int, config: SamplerConfig, kernel: str = "se_x_se", days: float = 60,
                   meas_hour: int = 11, hours=range(24), refit: bool = False,
                   fit_starts: int = 1) -> HourScan:
    """Concordance scan over candidate hours for a simulated hidden station."""
    syn = simulate(kernel, days=days, seed=seed, meas_hour=meas_hour)
    nearby = syn.nearby()
    if refit:
        fit = fit_hyperparameters(kernel, nearby, n_starts=fit_starts, seed=seed)
    else:
        fit = FittedGP(syn.kernel, syn.noise_var)
    return infer_measurement_hour(fit, nearby, syn.target, syn.extrema(), syn.times, config=config,
                                  hours=hours)
