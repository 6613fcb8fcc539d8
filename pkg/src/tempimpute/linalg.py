"""Cholesky with bounded jitter escalation, and friends."""
from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class NumericalError(RuntimeError):
    """Raised when a covariance matrix cannot be factorised."""


def robust_cholesky(A, return_jitter: bool = False):
    """Lower Cholesky factor of ``A``, adding diagonal jitter only if needed.

    Jitter starts at ``1e-10 * trace/n`` and doubles up to ``1e-4 * trace/n``;
    past that a :class:`NumericalError` is raised rather than returning a
    silently regularised factor.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix has non-finite entries")
    try:
        L = linalg.cholesky(A, lower=True, check_finite=False)
        return (L, 0.0) if return_jitter else L
    except linalg.LinAlgError:
        pass
    n = A.shape[0]
    scale = np.trace(A) / n
    if not scale > 0:
        raise NumericalError(f"matrix trace is {np.trace(A):g}; cannot scale jitter")
    jitter = JITTER_START * scale
    eye = np.eye(n)
    while jitter <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            L = linalg.cholesky(A + jitter * eye, lower=True, check_finite=False)
            logger.debug("cholesky needed jitter %.3g (%.3g x mean diag)", jitter, jitter / scale)
            return (L, jitter) if return_jitter else L
        except linalg.LinAlgError:
            jitter *= 2.0
    min_eig = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    raise NumericalError(
        f"cholesky failed for n={n} even with jitter {jitter / 2:.3g} "
        f"(mean diagonal {scale:.3g}, smallest eigenvalue {min_eig:.3g})")


def chol_solve(L, b):
    return linalg.cho_solve((L, True), b, check_finite=False)


def chol_logdet(L) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def mvn_logpdf_chol(x, mean, L) -> float:
    """Log density of N(mean, L L^T) at x."""
    r = linalg.solve_triangular(L, np.asarray(x) - np.asarray(mean), lower=True, check_finite=False)
    n = len(r)
    return float(-0.5 * r @ r - 0.5 * chol_logdet(L) - 0.5 * n * np.log(2 * np.pi))
