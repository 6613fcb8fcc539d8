"""Shared builders and reference implementations for the test suite."""
import numpy as np
from scipy import special, stats

from tempimpute import smoothhmc as sh
from tempimpute.geom_time import Location
from tempimpute.gp_core import Dataset
from tempimpute.kernels import Points


def small_dataset(rng, n_per=10, n_st=3, days=1.0):
    series = {}
    for i in range(n_st):
        loc = Location(f"S{i}", *rng.uniform(-120, 120, 2))
        t = np.sort(rng.choice(np.arange(0.0, 24 * days), n_per, replace=False))
        series[loc] = (t, 10 + 3 * rng.standard_normal(n_per))
    return Dataset.from_series(series)


def brute_condition(k, noise, data, query, include_noise):
    """Partitioned-Gaussian formula on the joint covariance, with dense inverses."""
    allp = Points.concat([data.points, query])
    J = k(allp)
    n = len(data)
    J[np.arange(n), np.arange(n)] += noise
    if include_noise:
        J[np.arange(n, len(allp)), np.arange(n, len(allp))] += noise
    Soo, Som, Smm = J[:n, :n], J[:n, n:], J[n:, n:]
    inv = np.linalg.inv(Soo)
    return Som.T @ inv @ data.temp, Smm - Som.T @ inv @ Som


def random_target(seed, d=12, n_days=3, offset=True, k=10.0, eps=0.1):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d)) * 0.3
    cov = A @ A.T + np.eye(d)
    L = np.linalg.cholesky(cov)
    mean = rng.normal(10, 2, d)
    cuts = np.sort(rng.choice(np.arange(1, d), n_days, replace=False))
    sets = [np.arange(a, b) for a, b in zip(np.r_[0, cuts][:-1], cuts)]
    tn = np.array([mean[s].min() - rng.uniform(0, 1) for s in sets])
    tx = np.array([mean[s].max() + rng.uniform(0, 1) for s in sets])
    return sh.ConstrainedTarget(mean, L, tuple(sets), tn, tx, k=k, eps=eps, mu_sd=10.0 if offset else None)


def reference_logp(t, z, m):
    """Smoothed model log density written out directly."""
    T = m + t.prior_mean + t.chol @ z
    lp = stats.norm.logpdf(z).sum()
    if t.has_offset:
        lp += stats.norm.logpdf(m, 0, t.mu_sd)
    for idx, lo, hi in zip(t.daysets, t.tn, t.tx):
        smax = special.logsumexp(t.k * T[idx]) / t.k
        smin = -special.logsumexp(-t.k * T[idx]) / t.k
        lp += stats.norm.logpdf(hi, smax, t.eps) + stats.norm.logpdf(lo, smin, t.eps)
    return lp


def fd_relative_error(t, z, m, h=1e-6):
    _, gz, gm = t.log_density_grad(z, m)
    fd = np.empty(t.dim)
    for i in range(t.dim):
        e = np.zeros(t.dim)
        e[i] = h
        fd[i] = (t.log_density_grad(z + e, m)[0] - t.log_density_grad(z - e, m)[0]) / (2 * h)
    g = np.append(gz, gm) if t.has_offset else gz
    if t.has_offset:
        fd = np.append(fd, (t.log_density_grad(z, m + h)[0] - t.log_density_grad(z, m - h)[0]) / (2 * h))
    return np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0)
