"""Convergence diagnostics and interval summaries for MCMC output."""
import math

import numpy as np


def batch_means_var(x, n_batches=20):
    """Variance of the mean of ``x`` estimated from non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    if size < 2:
        raise ValueError(f"need at least {2 * n_batches} values for {n_batches} batches")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return means.var(ddof=1) / n_batches


def geweke_z(x, first=0.1, last=0.5, n_batches=20):
    """Geweke z-score comparing the start and the end of a chain.

    Parameters
    ----------
    x : array-like
        One chain column, post burn-in, at least 1000 draws.
    first, last : float
        Fractions of the chain forming the early and late windows.
    n_batches : int
        Batches per window for the variance of each window mean.

    Returns
    -------
    float
        ``(mean_first - mean_last) / sqrt(var_first + var_last)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 1000:
        raise ValueError(f"chain too short for Geweke diagnostic ({x.size} < 1000)")
    if not (0 < first and 0 < last and first + last <= 1):
        raise ValueError("windows must be positive and not overlap")
    a = x[: int(first * x.size)]
    b = x[x.size - int(last * x.size):]
    var = batch_means_var(a, n_batches) + batch_means_var(b, n_batches)
    if not var > 0:
        raise ValueError("zero variance in Geweke windows (constant chain?)")
    return float((a.mean() - b.mean()) / math.sqrt(var))


def hpd_interval(sample, level=0.95):
    """Shortest interval holding ``ceil(level * m)`` of the sorted draws."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    m = x.size
    if m < 100:
        raise ValueError(f"HPD needs at least 100 draws, got {m}")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    n_in = math.ceil(level * m)
    widths = x[n_in - 1:] - x[: m - n_in + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + n_in - 1])
