"""Recompute the frozen reference values in tests/data/oracles.json.

Everything here uses mpmath at 50 digits and re-derives formulas from
scratch; nothing is imported from the package, so the frozen numbers are an
independent check on it.
"""
import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "oracles.json"


def toy(p=100, period=50):
    mus = [10 + mp.sin(2 * mp.pi * i / period) for i in range(1, p + 1)]
    sds = [mp.mpf("0.1") + mp.cos(2 * mp.pi * i / period) ** 2 for i in range(1, p + 1)]
    return mus, sds


def pair_probs(mus, sds, a, b):
    p = len(mus)
    dens_a = [mp.npdf(a, m, s) for m, s in zip(mus, sds)]
    dens_b = [mp.npdf(b, m, s) for m, s in zip(mus, sds)]
    mass = [mp.ncdf(b, m, s) - mp.ncdf(a, m, s) for m, s in zip(mus, sds)]
    prod = mp.fprod(mass)
    P = [[mp.mpf(0) if i == j else dens_a[i] * dens_b[j] * prod / (mass[i] * mass[j])
          for j in range(p)] for i in range(p)]
    z = mp.fsum(mp.fsum(r) for r in P)
    return [[x / z for x in r] for r in P], mass


def cond_cdf(i, x, mus, sds, a, b, row, col, mass):
    if x < a:
        return mp.mpf(0)
    if x >= b:
        return mp.mpf(1)
    inner = (mp.ncdf(x, mus[i], sds[i]) - mp.ncdf(a, mus[i], sds[i])) / mass[i]
    return row[i] + (1 - row[i] - col[i]) * inner


def cond_quantile(i, q, mus, sds, a, b, row, col, mass):
    if q <= row[i]:
        return a
    if q > 1 - col[i]:
        return b
    return mp.findroot(lambda x: cond_cdf(i, x, mus, sds, a, b, row, col, mass) - q,
                       (a, b), solver="anderson")


def main():
    out = {}
    a, b = mp.mpf("8.8"), mp.mpf("12.5")
    mus, sds = toy()
    P, mass = pair_probs(mus, sds, a, b)
    row = [mp.fsum(r) for r in P]
    col = [mp.fsum(P[i][j] for i in range(100)) for j in range(100)]
    coords = [1, 23, 49, 52, 75, 100]
    levels = [0.1, 0.5, 0.9]
    out["toy"] = {
        "x_min": 8.8, "x_max": 12.5,
        "row": [float(v) for v in row], "col": [float(v) for v in col],
        "P_23_52": float(P[22][51]),
        "quantiles": {str(c): {str(q): float(cond_quantile(c - 1, mp.mpf(q), mus, sds, a, b, row, col, mass))
                               for q in levels} for c in coords},
    }
    small_mus = [mp.mpf("0.3"), mp.mpf("-0.2"), mp.mpf("1.1")]
    small_sds = [mp.mpf("1.0"), mp.mpf("0.7"), mp.mpf("1.5")]
    Ps, _ = pair_probs(small_mus, small_sds, mp.mpf("-0.5"), mp.mpf("1.0"))
    out["p3"] = {"means": [0.3, -0.2, 1.1], "sds": [1.0, 0.7, 1.5], "x_min": -0.5, "x_max": 1.0,
                 "P": [[float(x) for x in r] for r in Ps]}

    # SE-time x SE-space variogram plus noise nugget at a few separations
    v, lt, ls, nug = mp.mpf("13.69"), mp.mpf("2.7"), mp.mpf("176"), mp.mpf("0.16")
    pts = [(0, 1), (0, 6), (100, 0), (150, 3), (250, 24)]
    out["variogram_se_x_se"] = [[h, r, float(nug + v - v * mp.exp(-r**2 / (2 * lt**2)) * mp.exp(-h**2 / (2 * ls**2)))]
                                for h, r in pts]

    xs = [mp.mpf(x) for x in ("1.0", "2.5", "2.4", "-3.0", "0.0")]
    k = 10
    lse = mp.log(mp.fsum(mp.exp(k * x) for x in xs)) / k
    lse_min = -mp.log(mp.fsum(mp.exp(-k * x) for x in xs)) / k
    out["softmax"] = {"xs": [float(x) for x in xs], "k": k, "softmax": float(lse), "softmin": float(lse_min)}

    # expected max of two normals with equal sd s: E max(X, Y), X ~ N(m1, s^2), Y ~ N(m2, s^2)
    m1, m2, s = mp.mpf("0.9659258262890683"), mp.mpf(1), mp.mpf(1)
    th = mp.sqrt(2) * s
    d = (m1 - m2) / th
    emax = m2 + (m1 - m2) * mp.ncdf(d) + th * mp.npdf(d)
    out["max_two_normals"] = {"m1": float(m1), "m2": float(m2), "s": 1.0, "expected_max": float(emax)}

    OUT.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
