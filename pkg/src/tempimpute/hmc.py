"""Batched Hamiltonian Monte Carlo with windowed warmup adaptation.

States have shape ``(B, C, n)``: ``B`` independent targets, ``C`` chains
each. Every (target, chain) pair keeps its own step size and diagonal
metric, so one vectorised run is equivalent to ``B * C`` separate chains.

Warmup follows the usual three-phase layout: a fast initial buffer that
tunes only the step size, a sequence of doubling slow windows that also
estimate the diagonal metric, and a terminal fast buffer. Step size is
tuned by dual averaging towards ``target_accept``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class HMCConfig:
    chains: int = 4
    warmup: int = 10000
    iters: int = 10000
    n_leapfrog: int = 32
    target_accept: float = 0.8
    max_energy_error: float = 1000.0
    adapt_metric: bool = True
    thin: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.iters < 1 or self.warmup < 0:
            raise ValueError("chains and iters must be >= 1, warmup >= 0")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must be in (0, 1)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class HMCResult:
    draws: np.ndarray              # (B, C, N, k) output of the transform
    accept_rate: np.ndarray        # (B, C)
    step_size: np.ndarray          # (B, C)
    divergences: np.ndarray        # (B, C), post-warmup
    warmup_divergences: np.ndarray
    inv_metric: np.ndarray = field(repr=False, default=None)


def adaptation_windows(warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                       base_window: int = 25) -> tuple[int, list[int]]:
    """First slow-phase iteration and the (exclusive) ends of the metric windows."""
    if warmup < 20:
        return warmup, []
    if init_buffer + term_buffer + base_window > warmup:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.1 * warmup)
        base_window = warmup - init_buffer - term_buffer
    ends = []
    start, size = init_buffer, base_window
    slow_end = warmup - term_buffer
    while start < slow_end:
        end = start + size
        if end + 2 * size > slow_end:
            end = slow_end
        ends.append(end)
        start, size = end, 2 * size
    return init_buffer, ends


class _DualAveraging:
    def __init__(self, step, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step)

    def restart(self, step):
        self.mu = np.log(10.0 * step)
        self.t = 0
        self.hbar = np.zeros_like(step)
        self.log_bar = np.zeros_like(step)

    def update(self, accept_stat):
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.hbar = (1 - w) * self.hbar + w * (self.target - accept_stat)
        log_step = self.mu - math.sqrt(self.t) / self.gamma * self.hbar
        eta = self.t ** (-self.kappa)
        self.log_bar = eta * log_step + (1 - eta) * self.log_bar
        return np.exp(log_step)

    @property
    def final(self):
        return np.exp(self.log_bar)


def _kinetic(p, inv_metric):
    return 0.5 * np.sum(p * p * inv_metric, axis=-1)


def _initial_step(logp_grad, q, lp, g, inv_metric, rng, step0=0.5, max_iter=30):
    """Per-chain doubling/halving until the one-step acceptance crosses 0.8."""
    step = np.full(q.shape[:2], step0)
    direction = None
    done = np.zeros(q.shape[:2], dtype=bool)
    for _ in range(max_iter):
        p = rng.standard_normal(q.shape) / np.sqrt(inv_metric)
        h0 = -lp + _kinetic(p, inv_metric)
        ph = p + 0.5 * step[..., None] * g
        q1 = q + step[..., None] * inv_metric * ph
        lp1, g1 = logp_grad(q1)
        p1 = ph + 0.5 * step[..., None] * g1
        h1 = -lp1 + _kinetic(p1, inv_metric)
        dh = h0 - h1
        dh = np.where(np.isfinite(dh), dh, -np.inf)
        up = dh > math.log(0.8)
        if direction is None:
            direction = np.where(up, 1.0, -1.0)
        crossed = (direction > 0) != up
        done |= crossed
        if np.all(done):
            break
        step = np.where(done, step, step * np.where(direction > 0, 2.0, 0.5))
        step = np.clip(step, 1e-8, 1e3)
    return step


def run_hmc(logp_grad, q0, config: HMCConfig, rng: np.random.Generator, transform=None) -> HMCResult:
    """Run warmup then sampling for every (target, chain) in the batch.

    ``logp_grad(q)`` returns ``(logp (B, C), grad (B, C, n))``. ``transform(q)``
    maps kept states to the stored draw array (defaults to the state).
    """
    q = np.array(q0, dtype=float)
    if q.ndim != 3:
        raise ValueError("initial state must have shape (B, C, n)")
    B, C, n = q.shape
    transform = transform or (lambda x: x.copy())
    lp, g = logp_grad(q)
    if not np.all(np.isfinite(lp)):
        raise ValueError("log density is not finite at the initial state")

    inv_metric = np.ones_like(q)
    step = _initial_step(logp_grad, q, lp, g, inv_metric, rng)
    da = _DualAveraging(step, config.target_accept)
    win_start, windows = adaptation_windows(config.warmup)
    if not config.adapt_metric:
        windows = []
    w_n = 0
    w_mean = np.zeros_like(q)
    w_m2 = np.zeros_like(q)

    L = config.n_leapfrog
    lo = max(1, int(math.ceil(L / 2)))
    total = config.warmup + config.iters
    n_keep = (config.iters + config.thin - 1) // config.thin
    draws = None
    accept_sum = np.zeros((B, C))
    div = np.zeros((B, C), dtype=int)
    wdiv = np.zeros((B, C), dtype=int)
    kept = 0

    for it in range(total):
        warm = it < config.warmup
        n_steps = rng.integers(lo, L + 1, size=(B, C))
        p = rng.standard_normal(q.shape) / np.sqrt(inv_metric)
        h0 = -lp + _kinetic(p, inv_metric)
        eps = step[..., None]
        q1, g1, lp1 = q, g, lp
        p1 = p + 0.5 * eps * g1
        for s in range(int(n_steps.max())):
            active = (s < n_steps)[..., None]
            q1 = np.where(active, q1 + eps * inv_metric * p1, q1)
            lp1, g1 = logp_grad(q1)
            last = (s == n_steps - 1)[..., None]
            coef = np.where(last, 0.5, 1.0)
            p1 = np.where(active, p1 + coef * eps * g1, p1)
        h1 = -lp1 + _kinetic(p1, inv_metric)
        dh = h0 - h1
        bad = ~np.isfinite(dh) | (-dh > config.max_energy_error)
        dh = np.where(np.isfinite(dh), dh, -np.inf)
        accept_prob = np.exp(np.minimum(dh, 0.0))
        accept = (rng.random((B, C)) < accept_prob) & ~bad
        q = np.where(accept[..., None], q1, q)
        lp = np.where(accept, lp1, lp)
        g = np.where(accept[..., None], g1, g)

        if warm:
            wdiv += bad
            step = da.update(accept_prob)
            if windows and win_start <= it < windows[-1]:
                w_n += 1
                delta = q - w_mean
                w_mean += delta / w_n
                w_m2 += delta * (q - w_mean)
                if it + 1 in windows:
                    var = w_m2 / max(w_n - 1, 1)
                    inv_metric = (w_n / (w_n + 5.0)) * var + 1e-3 * (5.0 / (w_n + 5.0))
                    w_n = 0
                    w_mean[:] = 0
                    w_m2[:] = 0
                    lp, g = logp_grad(q)
                    step = _initial_step(logp_grad, q, lp, g, inv_metric, rng, step0=1.0)
                    da.restart(step)
            if it == config.warmup - 1:
                step = da.final
        else:
            div += bad
            accept_sum += accept_prob
            if (it - config.warmup) % config.thin == 0:
                out = transform(q)
                if draws is None:
                    draws = np.empty((B, C, n_keep) + out.shape[2:])
                draws[:, :, kept] = out
                kept += 1

    return HMCResult(draws, accept_sum / config.iters, step, div, wdiv, inv_metric)


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

def split_rhat(x) -> np.ndarray:
    """Split-R-hat per coordinate for draws of shape (chains, draws, dim)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    C, N = x.shape[:2]
    half = N // 2
    if half < 2:
        return np.full(x.shape[2:], np.nan)
    parts = np.concatenate([x[:, :half], x[:, N - half:]], axis=0)
    means = parts.mean(axis=1)
    variances = parts.var(axis=1, ddof=1)
    W = variances.mean(axis=0)
    Bv = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * W + Bv / half
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    # constant coordinates (e.g. pinned values) count as converged
    return np.where(W > 0, r, 1.0)


def effective_sample_size(x) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial positive sequence, shape (chains, draws[, dim])."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[..., None]
    C, N, d = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    nfft = 1 << int(math.ceil(math.log2(2 * N)))
    f = np.fft.rfft(xc, n=nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :N] / N
    chain_var = acov[:, 0] * N / max(N - 1, 1)
    W = chain_var.mean(axis=0)
    means = x.mean(axis=1)
    Bn = means.var(axis=0, ddof=1) if C > 1 else np.zeros(d)
    var_plus = (N - 1) / N * W + Bn
    out = np.empty(d)
    for j in range(d):
        if not var_plus[j] > 0:
            out[j] = C * N
            continue
        rho = 1.0 - (W[j] - acov[:, :, j].mean(axis=0)) / var_plus[j]
        rho[0] = 1.0
        total = 0.0
        prev = np.inf
        for t in range(0, N - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            total += pair
            prev = pair
        tau = -1.0 + 2.0 * total
        out[j] = C * N / max(tau, 1.0 / math.log10(max(C * N, 10)))
    return out[0] if squeeze else out
