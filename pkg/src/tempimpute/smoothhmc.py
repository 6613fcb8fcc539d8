"""SmoothHMC: sampling a Gaussian prior conditioned on per-window minima/maxima.

The exact conditional puts all its mass on the set where each window's
maximum equals ``tx`` and minimum equals ``tn``. SmoothHMC replaces the
indicator likelihood with narrow normals of width ``eps`` around smooth
surrogates of the window max/min (log-sum-exp with sharpness ``k``), which
keeps the gradient informative for every coordinate of the window.

States are whitened: ``T = m + prior_mean + L z`` with ``z`` standard normal
a priori and ``m`` an optional station offset with a N(0, mu_sd^2) prior.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .geom_time import HOURS_PER_DAY, DailyExtrema, DaySet, build_daysets, match_extrema
from .kernels import STATION_MEAN_SD, Points
from .linalg import robust_cholesky
from .hmc import HMCConfig, run_hmc, split_rhat

logger = logging.getLogger(__name__)

_HALF_LOG2PI = 0.5 * math.log(2.0 * math.pi)


def softmax(xs, k: float = 10.0, axis: int = -1):
    """Smooth maximum ``log(sum(exp(k x))) / k``, overflow-safe."""
    x = np.asarray(xs, dtype=float)
    if x.size == 0 or x.shape[axis] == 0:
        raise ValueError("softmax of an empty input")
    if not k > 0:
        raise ValueError("sharpness k must be positive")
    mx = np.max(x, axis=axis, keepdims=True)
    s = np.sum(np.exp(k * (x - mx)), axis=axis, keepdims=True)
    return np.squeeze(mx + np.log(s) / k, axis=axis)


def softmin(xs, k: float = 10.0, axis: int = -1):
    return -softmax(-np.asarray(xs, dtype=float), k, axis=axis)


def softmax_weights(xs, k: float = 10.0, axis: int = -1):
    """Gradient of :func:`softmax` with respect to each element."""
    x = np.asarray(xs, dtype=float)
    e = np.exp(k * (x - np.max(x, axis=axis, keepdims=True)))
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass(frozen=True)
class ConstrainedTarget:
    """Whitened Gaussian prior plus soft window-extrema likelihood terms.

    ``daysets`` holds one integer index array per constrained window (indices
    into the state), with ``tn``/``tx`` aligned to it. ``mu_sd=None`` pins the
    offset ``m`` at zero.
    """

    prior_mean: np.ndarray
    chol: np.ndarray
    daysets: tuple
    tn: np.ndarray
    tx: np.ndarray
    k: float = 10.0
    eps: float = 0.1
    mu_sd: float | None = 10.0
    day_index: tuple = ()

    def __post_init__(self):
        mean = np.asarray(self.prior_mean, dtype=float)
        chol = np.asarray(self.chol, dtype=float)
        object.__setattr__(self, "prior_mean", mean)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "tn", np.atleast_1d(np.asarray(self.tn, dtype=float)))
        object.__setattr__(self, "tx", np.atleast_1d(np.asarray(self.tx, dtype=float)))
        object.__setattr__(self, "daysets", tuple(np.asarray(d, dtype=int) for d in self.daysets))
        d = len(mean)
        if chol.shape != (d, d):
            raise ValueError(f"cholesky factor must be {d}x{d}, got {chol.shape}")
        if not (self.k > 0 and self.eps > 0):
            raise ValueError("k and eps must be positive")
        if self.mu_sd is not None and not self.mu_sd > 0:
            raise ValueError("mu_sd must be positive or None")
        if len(self.tn) != len(self.daysets) or len(self.tx) != len(self.daysets):
            raise ValueError("one (tn, tx) pair is required per dayset")
        if np.any(self.tn > self.tx):
            raise ValueError("tn must not exceed tx")
        seen = np.zeros(d, dtype=bool)
        for idx in self.daysets:
            if len(idx) == 0:
                raise ValueError("empty dayset")
            if idx.min() < 0 or idx.max() >= d:
                raise ValueError("dayset index outside the state")
            if np.any(seen[idx]):
                raise ValueError("daysets must be disjoint")
            seen[idx] = True

    @classmethod
    def from_extrema(cls, prior_mean, chol, daysets: Sequence[DaySet], extrema: Sequence[DailyExtrema],
                     offset: int = 0, **kw) -> "ConstrainedTarget":
        """Build from matched DaySet/DailyExtrema lists; ``offset`` shifts grid indices."""
        if len(daysets) != len(extrema):
            raise ValueError("daysets and extrema must be matched one-to-one")
        for ds, ex in zip(daysets, extrema):
            if ds.day_index != ex.day_index:
                raise ValueError(f"dayset {ds.day_index} paired with extrema {ex.day_index}")
        return cls(prior_mean, chol, tuple(ds.member_indices - offset for ds in daysets),
                   np.array([e.tn for e in extrema]), np.array([e.tx for e in extrema]),
                   day_index=tuple(ds.day_index for ds in daysets), **kw)

    @property
    def dim(self) -> int:
        return len(self.prior_mean)

    @property
    def has_offset(self) -> bool:
        return self.mu_sd is not None

    @property
    def n_state(self) -> int:
        return self.dim + int(self.has_offset)

    def temperatures(self, z, m=0.0):
        return m + self.prior_mean + self.chol @ np.asarray(z, dtype=float)

    def log_density_grad(self, z, m: float = 0.0):
        """Smoothed log density and its gradient: ``(logp, grad_z, grad_m)``."""
        lp, g = _Batch([self]).logp_grad(self._pack(z, m), hard=False)
        return self._unpack(lp, g)

    def hard_log_density(self, z, m: float = 0.0) -> float:
        """Same model with exact max/min inside the normal likelihood."""
        lp, _ = _Batch([self]).logp_grad(self._pack(z, m), hard=True)
        return float(lp[0, 0])

    def hard_log_density_grad(self, z, m: float = 0.0):
        lp, g = _Batch([self]).logp_grad(self._pack(z, m), hard=True)
        return self._unpack(lp, g)

    def _pack(self, z, m):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"expected z of shape ({self.dim},), got {z.shape}")
        q = z if not self.has_offset else np.append(z, m)
        return q[None, None, :]

    def _unpack(self, lp, g):
        g = g[0, 0]
        gm = float(g[self.dim]) if self.has_offset else 0.0
        return float(lp[0, 0]), g[: self.dim].copy(), gm

    def feasible_offset(self) -> float:
        """Offset putting each window's prior-mean extrema inside [tn, tx] if possible."""
        if not self.has_offset or not self.daysets:
            return 0.0
        lo = np.array([tn - self.prior_mean[idx].min() for idx, tn in zip(self.daysets, self.tn)])
        hi = np.array([tx - self.prior_mean[idx].max() for idx, tx in zip(self.daysets, self.tx)])
        if lo.max() <= hi.min():
            return float(0.5 * (lo.max() + hi.min()))
        return float(np.median(0.5 * (lo + hi)))


class _Batch:
    """Several targets stacked (and padded) for vectorised evaluation.

    ``centered=True`` samples the temperatures (less the offset) directly
    under their correlated prior instead of the whitened ``z``; it exists to
    reproduce what a generic sampler does with the untransformed model.
    """

    def __init__(self, targets: Sequence[ConstrainedTarget], centered: bool = False):
        if not targets:
            raise ValueError("no targets")
        has_off = {t.has_offset for t in targets}
        if len(has_off) != 1:
            raise ValueError("targets in one batch must agree on the offset parameter")
        self.targets = list(targets)
        self.has_offset = has_off.pop()
        B = len(targets)
        d = max(t.dim for t in targets)
        self.B, self.d = B, d
        self.n = d + int(self.has_offset)
        self.mean = np.zeros((B, d))
        # consecutive targets sharing one Cholesky factor are multiplied together
        firsts = [0] + [b for b in range(1, B) if targets[b].chol is not targets[b - 1].chol]
        sizes = np.diff(firsts + [B])
        self.group = int(sizes[0]) if np.all(sizes == sizes[0]) else 1
        U = B // self.group
        self.chol_T = np.zeros((U, d, d))
        self.true_dim = np.array([t.dim for t in targets])
        n_days = max(len(t.daysets) for t in targets)
        width = max((len(ix) for t in targets for ix in t.daysets), default=1)
        self.day_idx = np.zeros((B, max(n_days, 1), width), dtype=np.int64)
        self.day_len = np.zeros((B, max(n_days, 1)), dtype=np.int64)
        self.tn = np.zeros((B, max(n_days, 1)))
        self.tx = np.zeros((B, max(n_days, 1)))
        self.k_vec = np.array([float(t.k) for t in targets])
        self.eps_vec = np.array([float(t.eps) for t in targets])
        self.mu_var = np.array([(t.mu_sd or 1.0) ** 2 for t in targets])[:, None]
        self.log_mu_sd = np.log([t.mu_sd or 1.0 for t in targets])[:, None]
        for b, t in enumerate(targets):
            self.mean[b, : t.dim] = t.prior_mean
            if b % self.group == 0:
                L = np.eye(d)
                L[: t.dim, : t.dim] = t.chol
                self.chol_T[b // self.group] = L.T
            for j, ix in enumerate(t.daysets):
                self.day_idx[b, j, : len(ix)] = ix
                self.day_len[b, j] = len(ix)
                self.tn[b, j] = t.tn[j]
                self.tx[b, j] = t.tx[j]
        self.has_days = n_days > 0
        self.centered = centered
        if centered:
            self.prec = np.empty((B, d, d))
            self.half_logdet = np.zeros((B, 1))
            for b in range(B):
                Lt = self.chol_T[b // self.group]
                Linv = np.linalg.inv(Lt.T)
                self.prec[b] = Linv.T @ Linv
                self.half_logdet[b] = np.sum(np.log(np.diag(Lt)))

    def split(self, q):
        z = q[..., : self.d]
        m = q[..., self.d] if self.has_offset else np.zeros(q.shape[:2])
        return z, m

    def temperatures(self, q):
        z, m = self.split(q)
        if self.centered:
            return z + m[..., None]
        return self.mean[:, None, :] + m[..., None] + self._times_chol_T(z)

    def _times_chol_T(self, x):
        """Row vectors times L^T, per target."""
        B, C, d = x.shape
        G = self.group
        return np.matmul(x.reshape(B // G, G * C, d), self.chol_T).reshape(B, C, d)

    def _times_chol(self, x):
        B, C, d = x.shape
        G = self.group
        return np.matmul(x.reshape(B // G, G * C, d),
                         np.transpose(self.chol_T, (0, 2, 1))).reshape(B, C, d)

    def logp_grad(self, q, hard: bool = False):
        B, C = q.shape[:2]
        z, m = self.split(q)
        T = self.temperatures(q)
        if self.centered:
            r = z - self.mean[:, None, :]
            gz = -np.matmul(r, self.prec)
            lp = 0.5 * np.sum(r * gz, axis=-1) - self.half_logdet \
                - self.true_dim[:, None] * _HALF_LOG2PI
        else:
            lp = -0.5 * np.sum(z * z, axis=-1) - self.true_dim[:, None] * _HALF_LOG2PI
            gz = -z
        if self.has_offset:
            lp = lp - 0.5 * m * m / self.mu_var - self.log_mu_sd - _HALF_LOG2PI
        if self.has_days:
            like, gT = _extrema_terms(np.ascontiguousarray(T), self.day_idx, self.day_len, self.tn, self.tx,
                                      self.k_vec, self.eps_vec, hard)
            lp = lp + like
            gz = gz + (gT if self.centered else self._times_chol(np.ascontiguousarray(gT)))
            gm = gT.sum(axis=-1)
        else:
            gm = np.zeros((B, C))
        if self.has_offset:
            gm = gm - m / self.mu_var
            return lp, np.concatenate([gz, gm[..., None]], axis=-1)
        return lp, gz


@numba.njit(cache=True)
def _extrema_terms(T, day_idx, day_len, tn, tx, k, eps, hard):
    """Sum of window log-likelihood terms and their gradient w.r.t. T."""
    B, C, d = T.shape
    D = day_idx.shape[1]
    ex = np.empty(day_idx.shape[2])
    en = np.empty(day_idx.shape[2])
    lp = np.zeros((B, C))
    g = np.zeros((B, C, d))
    for b in range(B):
        kb = k[b]
        inv_e2 = 1.0 / (eps[b] * eps[b])
        norm = 2.0 * (math.log(eps[b]) + _HALF_LOG2PI)
        for c in range(C):
            for j in range(D):
                n = day_len[b, j]
                if n == 0:
                    continue
                hi = -np.inf
                lo = np.inf
                ihi = 0
                ilo = 0
                for a in range(n):
                    v = T[b, c, day_idx[b, j, a]]
                    if v > hi:
                        hi = v
                        ihi = a
                    if v < lo:
                        lo = v
                        ilo = a
                if hard:
                    rx = tx[b, j] - hi
                    rn = tn[b, j] - lo
                    g[b, c, day_idx[b, j, ihi]] += rx * inv_e2
                    g[b, c, day_idx[b, j, ilo]] += rn * inv_e2
                else:
                    sx = 0.0
                    sn = 0.0
                    for a in range(n):
                        v = T[b, c, day_idx[b, j, a]]
                        ex[a] = math.exp(kb * (v - hi))
                        en[a] = math.exp(-kb * (v - lo))
                        sx += ex[a]
                        sn += en[a]
                    smax = hi + math.log(sx) / kb
                    smin = lo - math.log(sn) / kb
                    rx = (tx[b, j] - smax)
                    rn = (tn[b, j] - smin)
                    wx = rx * inv_e2 / sx
                    wn = rn * inv_e2 / sn
                    for a in range(n):
                        g[b, c, day_idx[b, j, a]] += wx * ex[a] + wn * en[a]
                lp[b, c] -= 0.5 * (rx * rx + rn * rn) * inv_e2 + norm
    return lp, g


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass
class ImputationDraws:
    """Posterior draws in temperature space, chains stacked chain-major."""

    samples: np.ndarray              # (n_draws, dim)
    mu_miss_samples: np.ndarray      # (n_draws, n_windows); zeros when the offset is pinned
    n_chains: int
    diagnostics: list = field(default_factory=list)   # one dict per window
    grid: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return all(d["converged"] for d in self.diagnostics)

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def quantiles(self, levels=(0.1, 0.25, 0.5, 0.75, 0.9)) -> np.ndarray:
        return np.quantile(self.samples, levels, axis=0)

    def chains(self) -> np.ndarray:
        """Samples reshaped to (chains, draws, dim)."""
        n = self.samples.shape[0] // self.n_chains
        return self.samples.reshape(self.n_chains, n, -1)


def initial_state(targets: Sequence[ConstrainedTarget], chains: int, rng, init: str = "feasible",
                  centered: bool = False):
    """Starting states, shape (B, chains, n).

    ``"feasible"`` starts near the prior mean (small jitter on ``z``) with the
    offset chosen by :meth:`ConstrainedTarget.feasible_offset`. ``"uniform"``
    mimics generic defaults: temperatures (and offset) uniform on (-2, 2).
    """
    batch = _Batch(targets)
    q = np.zeros((batch.B, chains, batch.n))
    for b, t in enumerate(targets):
        if init == "feasible":
            jitter = rng.uniform(-0.1, 0.1, size=(chains, t.dim))
            q[b, :, : t.dim] = t.prior_mean + jitter @ t.chol.T if centered else jitter
            if t.has_offset:
                q[b, :, batch.d] = t.feasible_offset()
        elif init == "uniform":
            x = rng.uniform(-2.0, 2.0, size=(chains, t.dim))
            m = rng.uniform(-2.0, 2.0, size=chains) if t.has_offset else np.zeros(chains)
            if centered:
                q[b, :, : t.dim] = x - m[:, None]
            else:
                resid = (x - t.prior_mean - m[:, None]).T
                q[b, :, : t.dim] = np.linalg.solve(t.chol, resid).T
            if t.has_offset:
                q[b, :, batch.d] = m
        else:
            raise ValueError(f"unknown init {init!r}")
    return q


def sample_batch(targets: Sequence[ConstrainedTarget], config: HMCConfig = HMCConfig(), seed=0,
                 hard: bool = False, init: str = "feasible", keep: Sequence | None = None,
                 rhat_threshold: float = 1.2, rhat_fraction: float = 0.05,
                 divergence_fraction: float = 0.1, centered: bool = False) -> list[ImputationDraws]:
    """Sample several independent targets in one vectorised HMC run.

    ``keep[b]`` optionally restricts the stored coordinates of target ``b``.
    """
    rng = np.random.default_rng(seed)
    batch = _Batch(targets, centered=centered)
    keep = [np.arange(t.dim) for t in targets] if keep is None else [np.asarray(k) for k in keep]
    width = max(len(k) for k in keep)
    kidx = np.zeros((batch.B, 1, width), dtype=int)
    for b, k in enumerate(keep):
        kidx[b, 0, : len(k)] = k
    C = config.chains

    def transform(q):
        T = batch.temperatures(q)
        kept = np.take_along_axis(T, np.broadcast_to(kidx, (batch.B, C, width)), axis=2)
        if batch.has_offset:
            return np.concatenate([kept, q[..., batch.d:batch.d + 1]], axis=-1)
        return kept

    q0 = initial_state(targets, C, rng, init, centered)
    res = run_hmc(lambda q: batch.logp_grad(q, hard=hard), q0, config, rng, transform)
    out = []
    for b, t in enumerate(targets):
        nk = len(keep[b])
        d = res.draws[b]                       # (C, N, width [+1])
        temps = d[..., :nk]
        mu = d[..., width] if batch.has_offset else np.zeros(d.shape[:2])
        rhat = split_rhat(np.concatenate([temps, mu[..., None]], axis=-1) if batch.has_offset else temps)
        frac_bad = float(np.mean(rhat > rhat_threshold))
        n_iter = config.iters
        all_div = bool(np.all(res.divergences[b] > divergence_fraction * n_iter))
        diag = {
            "accept_rate": res.accept_rate[b].tolist(),
            "step_size": res.step_size[b].tolist(),
            "divergences": res.divergences[b].tolist(),
            "warmup_divergences": res.warmup_divergences[b].tolist(),
            "rhat_max": float(np.nanmax(rhat)),
            "rhat_frac_above": frac_bad,
            "converged": not (all_div or frac_bad > rhat_fraction),
            "degenerate_days": [int(t.day_index[j]) if t.day_index else j
                                for j in range(len(t.daysets)) if t.tn[j] == t.tx[j]],
        }
        if not diag["converged"]:
            logger.warning("sampler flagged unconverged: R-hat>%.2f on %.1f%% of coordinates, "
                           "divergences %s", rhat_threshold, 100 * frac_bad, diag["divergences"])
        out.append(ImputationDraws(temps.reshape(C * temps.shape[1], nk),
                                   mu.reshape(-1, 1), C, [diag]))
        if not np.all(np.isfinite(out[-1].samples)):
            raise FloatingPointError("sampler produced non-finite draws")
    return out


def sample(target: ConstrainedTarget, chains: int = 4, warmup: int = 10000, iters: int = 10000,
           seed=0, n_leapfrog: int = 32, hard: bool = False, init: str = "feasible",
           config: HMCConfig | None = None, centered: bool = False) -> ImputationDraws:
    """Draw from a single constrained target (SmoothHMC, or the hard-max baseline)."""
    cfg = config or HMCConfig(chains=chains, warmup=warmup, iters=iters, n_leapfrog=n_leapfrog)
    return sample_batch([target], cfg, seed=seed, hard=hard, init=init, centered=centered)[0]


def constraint_satisfaction(samples, daysets: Sequence, tn, tx, eps: float = 0.1,
                            band: float = 3.0) -> np.ndarray:
    """Per-draw flag: every window's max within band*eps of tx, min within band*eps of tn,
    and no value outside [tn - band*eps, tx + band*eps]."""
    s = np.atleast_2d(samples)
    ok = np.ones(s.shape[0], dtype=bool)
    tol = band * eps
    for idx, lo, hi in zip(daysets, np.atleast_1d(tn), np.atleast_1d(tx)):
        w = s[:, np.asarray(idx)]
        mx, mn = w.max(axis=1), w.min(axis=1)
        ok &= (np.abs(mx - hi) <= tol) & (np.abs(mn - lo) <= tol)
    return ok


# ---------------------------------------------------------------------------
# station imputation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 10000
    iters: int = 10000
    n_leapfrog: int = 32
    target_accept: float = 0.8
    k: float = 10.0
    eps: float = 0.1
    mu_sd: float | None = STATION_MEAN_SD
    init: str = "feasible"
    seed: int = 0

    def hmc(self) -> HMCConfig:
        return HMCConfig(chains=self.chains, warmup=self.warmup, iters=self.iters,
                         n_leapfrog=self.n_leapfrog, target_accept=self.target_accept)


@dataclass(frozen=True)
class ImputePlan:
    """Which grid points each sampling window covers and which it reports."""

    windows: list          # per window: (first dayset, last dayset) positions, inclusive
    grid_index: list       # per window: grid indices in the window's state
    owned: list            # per window: positions (into grid_index[w]) it reports
    daysets: list          # matched daysets
    extrema: list


def plan_windows(grid, daysets: Sequence[DaySet], extrema: Sequence[DailyExtrema],
                 window_days: int = 9, overlap_days: int = 3, anchor: str = "daysets") -> ImputePlan:
    """Split the grid into overlapping sampling windows.

    With ``anchor="daysets"`` a window spans ``window_days`` consecutive
    matched daysets and consecutive windows share ``2 * overlap_days`` of
    them, so every dayset is reported by a window in which it sits at least
    ``overlap_days`` daysets from an edge (range ends excepted).

    With ``anchor="grid"`` windows are fixed ``window_days * 24`` hour spans
    starting at the first grid time, independent of the measurement hour;
    each reports the daysets closest to its centre (at least
    ``overlap_days - 0.5`` days from an edge). Plans for different hours on
    one grid then share their window priors.

    Grid points outside any dayset are reported by the window in which they
    are farthest from an edge; the end windows extend to the grid ends.
    """
    grid = np.asarray(grid, dtype=float)
    n = len(daysets)
    if n == 0:
        raise ValueError("no daysets with matching extrema inside the grid")
    if window_days < 1 or overlap_days < 0 or window_days - 2 * overlap_days < 1:
        raise ValueError("need window_days >= 2 * overlap_days + 1")
    stride = window_days - 2 * overlap_days
    first_t = np.array([grid[ds.member_indices[0]] for ds in daysets])
    last_t = np.array([grid[ds.member_indices[-1]] for ds in daysets])
    if anchor == "daysets":
        if n <= window_days:
            firsts = [0]
        else:
            firsts = list(range(0, n - window_days, stride)) + [n - window_days]
        windows = [(f, min(f + window_days, n) - 1) for f in firsts]
        lo = np.array([daysets[a].window_start for a, _ in windows])
        hi = np.array([daysets[b].window_end for _, b in windows])
        pos = np.arange(n)
        margin = np.stack([np.minimum(pos - a, b - pos) for a, b in windows])
    elif anchor == "grid":
        length = window_days * HOURS_PER_DAY
        lo = _grid_window_starts(grid, length, stride * HOURS_PER_DAY)
        hi = lo + length
        inside = (first_t[None, :] >= lo[:, None]) & (last_t[None, :] <= hi[:, None])
        windows = []
        for w in range(len(lo)):
            members = np.flatnonzero(inside[w])
            windows.append((int(members[0]), int(members[-1])) if len(members) else (0, -1))
        margin = np.minimum(first_t[None, :] - lo[:, None], hi[:, None] - last_t[None, :])
        margin = np.where(inside, margin, -np.inf)
        if np.any(~inside.any(axis=0)):
            raise ValueError("a dayset does not fit inside any sampling window")
    else:
        raise ValueError(f"unknown anchor {anchor!r}")
    owner_day = np.argmax(margin, axis=0)

    loose_mask = np.ones(len(grid), dtype=bool)
    for ds in daysets:
        loose_mask[ds.member_indices] = False
    tmargin = np.minimum(grid[:, None] - lo[None, :], hi[None, :] - grid[:, None])
    owner = np.where(loose_mask, np.argmax(tmargin, axis=1), 0)
    for d, ds in enumerate(daysets):
        owner[ds.member_indices] = owner_day[d]

    grid_index, owned = [], []
    last = len(windows) - 1
    for w in range(len(windows)):
        t0 = -np.inf if w == 0 else lo[w]
        t1 = np.inf if w == last else hi[w]
        lower_ok = grid >= t0 if anchor == "grid" else grid > t0
        idx = np.flatnonzero((lower_ok & (grid <= t1)) | (owner == w))
        grid_index.append(idx)
        owned.append(np.flatnonzero(owner[idx] == w))
    return ImputePlan(windows, grid_index, owned, list(daysets), list(extrema))


def _grid_window_starts(grid, length, stride):
    from .gp_core import window_starts
    starts = window_starts(grid[0], grid[-1], length, stride)
    return np.maximum(starts, grid[0]) if len(starts) > 1 else starts


def window_priors(fit, nearby, target_loc, plan: ImputePlan, grid, config: SamplerConfig = SamplerConfig(),
                  include_noise: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
    """(prior mean, Cholesky factor) of the target series in each window, given nearby data."""
    from .gp_core import condition
    grid = np.asarray(grid, dtype=float)
    out = []
    for idx in plan.grid_index:
        t = grid[idx]
        post = condition(fit, nearby.between(t[0], t[-1]), Points.at(target_loc, t),
                         include_noise=include_noise, query_station_mean=config.mu_sd is None)
        out.append((post.mean, robust_cholesky(post.cov)))
    return out


def targets_from_plan(plan: ImputePlan, priors, config: SamplerConfig = SamplerConfig()) -> list[ConstrainedTarget]:
    targets = []
    for (a, b), idx, (mean, chol) in zip(plan.windows, plan.grid_index, priors):
        local = np.full(idx.max() + 1, -1)
        local[idx] = np.arange(len(idx))
        sets = tuple(local[ds.member_indices] for ds in plan.daysets[a:b + 1])
        ex = plan.extrema[a:b + 1]
        targets.append(ConstrainedTarget(
            mean, chol, sets, np.array([e.tn for e in ex]), np.array([e.tx for e in ex]),
            k=config.k, eps=config.eps, mu_sd=config.mu_sd,
            day_index=tuple(ds.day_index for ds in plan.daysets[a:b + 1])))
    return targets


def build_targets(fit, nearby, target_loc, plan: ImputePlan, grid, config: SamplerConfig = SamplerConfig(),
                  include_noise: bool = True) -> list[ConstrainedTarget]:
    """Prior (conditioned on nearby data) plus extrema terms for every window."""
    return targets_from_plan(plan, window_priors(fit, nearby, target_loc, plan, grid, config, include_noise),
                             config)


def impute_station(fit, nearby, target_loc, extrema: Sequence[DailyExtrema], meas_hour: int, grid,
                   window_days: int = 9, overlap_days: int = 3, config: SamplerConfig = SamplerConfig(),
                   epoch_offset: float = 0.0, include_noise: bool = True) -> ImputationDraws:
    """Posterior draws of the hourly series at ``target_loc`` given its daily extrema.

    Windows are sampled jointly in one batched run; the result is stitched so
    each grid point comes from the window owning it (see :func:`plan_windows`).
    """
    grid = np.asarray(grid, dtype=float)
    daysets = build_daysets(grid, meas_hour, epoch_offset)
    daysets, matched = match_extrema(daysets, extrema)
    plan = plan_windows(grid, daysets, matched, window_days, overlap_days)
    targets = build_targets(fit, nearby, target_loc, plan, grid, config, include_noise)
    parts = sample_batch(targets, config.hmc(), seed=config.seed, init=config.init,
                         keep=plan.owned)
    n_draws = parts[0].samples.shape[0]
    samples = np.empty((n_draws, len(grid)))
    covered = np.zeros(len(grid), dtype=bool)
    for part, idx, own in zip(parts, plan.grid_index, plan.owned):
        samples[:, idx[own]] = part.samples
        covered[idx[own]] = True
    if not np.all(covered):
        raise ValueError("some grid points were not assigned to a sampling window")
    diags = []
    for w, part in enumerate(parts):
        d = dict(part.diagnostics[0])
        d["window"] = w
        d["days"] = [int(plan.daysets[plan.windows[w][0]].day_index),
                     int(plan.daysets[plan.windows[w][1]].day_index)]
        diags.append(d)
    mu = np.concatenate([p.mu_miss_samples for p in parts], axis=1)
    return ImputationDraws(samples, mu, config.chains, diags, grid)
