"""Exact conditional law of independent normals given their observed minimum and maximum.

For ``X_i ~ N(mu_i, sigma_i^2)`` independent and the event ``min X = a``,
``max X = b``, exactly one pair ``(i, j)`` attains the extrema. With

    P[i, j] ∝ f_i(a) f_j(b) prod_{k != i, j} (F_k(b) - F_k(a))

the marginal of ``X_i`` is a mixture of an atom at ``a`` (mass ``p_i.``), an
atom at ``b`` (mass ``p_.i``) and the normal truncated to ``(a, b)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats


@dataclass(frozen=True)
class IndepNormalSpec:
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        s = np.atleast_1d(np.asarray(self.sds, dtype=float))
        if m.shape != s.shape or m.ndim != 1:
            raise ValueError("means and sds must be equal-length vectors")
        if not np.all(s > 0):
            raise ValueError("sds must be positive")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "sds", s)

    @property
    def p(self) -> int:
        return len(self.means)

    def shift(self, c: float) -> "IndepNormalSpec":
        return IndepNormalSpec(self.means + c, self.sds)


@dataclass(frozen=True)
class ExtremaPairProbs:
    P: np.ndarray     # P[i, j] = Pr(X_i is the min and X_j the max)

    @property
    def row(self) -> np.ndarray:
        """p_i. = Pr(X_i is the minimum)."""
        return self.P.sum(axis=1)

    @property
    def col(self) -> np.ndarray:
        """p_.j = Pr(X_j is the maximum)."""
        return self.P.sum(axis=0)


def toy_spec(p: int = 100, period: float = 50.0) -> IndepNormalSpec:
    i = np.arange(1, p + 1)
    return IndepNormalSpec(10.0 + np.sin(2 * np.pi * i / period),
                           0.1 + np.cos(2 * np.pi * i / period) ** 2)


def _log_interval_mass(spec, lo, hi):
    """log(F(hi) - F(lo)) per coordinate, stable in both tails."""
    a = (lo - spec.means) / spec.sds
    b = (hi - spec.means) / spec.sds
    # use the upper tail when the interval sits above the mean
    upper = a > 0
    la = np.where(upper, special.log_ndtr(-b), special.log_ndtr(a))
    lb = np.where(upper, special.log_ndtr(-a), special.log_ndtr(b))
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def extrema_pair_probs(spec: IndepNormalSpec, x_min: float, x_max: float) -> ExtremaPairProbs:
    if not x_min < x_max:
        raise ValueError("x_min must be strictly below x_max")
    lmass = _log_interval_mass(spec, x_min, x_max)
    if not np.all(np.isfinite(lmass)):
        raise ValueError("degenerate support: some coordinate has zero mass in [x_min, x_max]")
    lf_lo = stats.norm.logpdf(x_min, spec.means, spec.sds)
    lf_hi = stats.norm.logpdf(x_max, spec.means, spec.sds)
    total = lmass.sum()
    L = lf_lo[:, None] + lf_hi[None, :] + total - lmass[:, None] - lmass[None, :]
    np.fill_diagonal(L, -np.inf)
    L -= L.max()
    P = np.exp(L)
    P /= P.sum()
    return ExtremaPairProbs(P)


def _truncated_cdf(spec, i, x, x_min, x_max):
    m, s = spec.means[i], spec.sds[i]
    lmass = _log_interval_mass(IndepNormalSpec([m], [s]), x_min, np.asarray(x, dtype=float))
    lden = _log_interval_mass(IndepNormalSpec([m], [s]), x_min, x_max)
    return np.exp(lmass - lden)


def _check_index(spec, i):
    if not 0 <= i < spec.p:
        raise IndexError(f"coordinate {i} outside 0..{spec.p - 1}")


def conditional_cdf(spec, probs: ExtremaPairProbs, i: int, x, x_min: float, x_max: float):
    """CDF of X_i given the extrema (0-based ``i``); vectorised over ``x``."""
    _check_index(spec, i)
    x = np.asarray(x, dtype=float)
    lo, hi = probs.row[i], probs.col[i]
    inside = np.clip(x, x_min, x_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(inside > x_min, _truncated_cdf(spec, i, inside, x_min, x_max), 0.0)
    out = lo + (1.0 - lo - hi) * frac
    out = np.where(x < x_min, 0.0, out)
    out = np.where(x >= x_max, 1.0, out)
    return out if out.ndim else float(out)


def conditional_quantiles(spec, probs, i: int, qs, x_min: float, x_max: float, tol: float = 1e-9):
    """Generalised inverse ``inf{x : F(x) >= q}`` by bisection."""
    _check_index(spec, i)
    qs = np.atleast_1d(np.asarray(qs, dtype=float))
    if np.any((qs <= 0) | (qs >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    out = np.empty_like(qs)
    for n, q in enumerate(qs):
        if conditional_cdf(spec, probs, i, x_min, x_min, x_max) >= q:
            out[n] = x_min
            continue
        lo, hi = x_min, x_max
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if conditional_cdf(spec, probs, i, mid, x_min, x_max) >= q:
                hi = mid
            else:
                lo = mid
        out[n] = hi
    return out


@dataclass(frozen=True)
class PairDensity:
    """Joint law of (X_i, X_j) given the extrema.

    ``interior`` is a density on the open square; each boundary entry is a
    density along one edge (the other coordinate pinned at an extremum); the
    atoms are the two corners.
    """

    interior: float
    i_min: float
    i_max: float
    j_min: float
    j_max: float
    atom_i_min_j_max: float
    atom_j_min_i_max: float


def joint_pdf_pair(spec, probs: ExtremaPairProbs, i: int, j: int, x, y, x_min: float, x_max: float) -> PairDensity:
    """Densities of every case for X_i near ``x`` and X_j near ``y``.

    ``i_max`` is the density of X_j at ``y`` jointly with X_i being the
    maximum, and so on.
    """
    if i == j:
        raise ValueError("need two distinct coordinates")
    _check_index(spec, i)
    _check_index(spec, j)
    P, r, c = probs.P, probs.row, probs.col

    def trunc_pdf(k, v):
        if not x_min < v < x_max:
            return 0.0
        lm = _log_interval_mass(IndepNormalSpec([spec.means[k]], [spec.sds[k]]), x_min, x_max)[0]
        return float(np.exp(stats.norm.logpdf(v, spec.means[k], spec.sds[k]) - lm))

    fx, fy = trunc_pdf(i, x), trunc_pdf(j, y)
    neither = 1.0 - (r[i] + c[i] + r[j] + c[j] - P[i, j] - P[j, i])
    return PairDensity(
        interior=fx * fy * max(neither, 0.0),
        i_min=fy * max(r[i] - P[i, j], 0.0),
        i_max=fy * max(c[i] - P[j, i], 0.0),
        j_min=fx * max(r[j] - P[j, i], 0.0),
        j_max=fx * max(c[j] - P[i, j], 0.0),
        atom_i_min_j_max=float(P[i, j]),
        atom_j_min_i_max=float(P[j, i]),
    )


def rejection_band_sample(spec, x_min: float, x_max: float, n_proposals: int, delta: float = 0.02,
                          seed=None, batch: int = 1_000_000):
    """Proposals from the prior kept when both extrema fall within ``delta`` of the targets.

    Returns the accepted draws (n_acc, p) and the proposal count used.
    """
    rng = np.random.default_rng(seed)
    kept = []
    done = 0
    while done < n_proposals:
        n = min(batch, n_proposals - done)
        x = spec.means + spec.sds * rng.standard_normal((n, spec.p))
        ok = (np.abs(x.min(axis=1) - x_min) < delta) & (np.abs(x.max(axis=1) - x_max) < delta)
        kept.append(x[ok])
        done += n
    return np.concatenate(kept, axis=0), done


def quantile_table(spec, x_min, x_max, levels=(0.1, 0.25, 0.5, 0.75, 0.9)):
    """Rows (coordinate, level, value) for every coordinate, 1-based coordinates."""
    probs = extrema_pair_probs(spec, x_min, x_max)
    rows = []
    for i in range(spec.p):
        for q, v in zip(levels, conditional_quantiles(spec, probs, i, levels, x_min, x_max)):
            rows.append((i + 1, float(q), float(v)))
    return rows


def ks_distance(spec, probs, i: int, samples, x_min: float, x_max: float) -> float:
    """Sup-distance between the empirical CDF of ``samples`` and the conditional CDF of X_i.

    Both one-sided limits are checked at every sample and at the two atoms.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("no samples")
    v = np.unique(np.concatenate([x, [x_min, x_max]]))
    F = conditional_cdf(spec, probs, i, v, x_min, x_max)
    # left limits differ from F only at the atoms
    F_left = np.where(v == x_min, 0.0, np.where(v == x_max, 1.0 - probs.col[i], F))
    e_right = np.searchsorted(x, v, side="right") / n
    e_left = np.searchsorted(x, v, side="left") / n
    d = max(np.max(np.abs(e_right - F)), np.max(np.abs(e_left - F_left)))
    return float(d)
