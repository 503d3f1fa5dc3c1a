"""Posterior summaries of parameters and of functionals of the model."""
from dataclasses import dataclass

import numpy as np

from .diagnostics import geweke_z, hpd_interval
from .model import LOG_S0_FLOOR, ModelParams, _log_uncured_mass

CURVE_KINDS = ("S0", "Sp", "Su", "logHRp", "logHRu")


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    median: float
    hpd_low: float
    hpd_high: float
    sd: float
    q025: float
    q05: float
    q95: float
    q975: float


@dataclass(frozen=True)
class Contrast:
    """Two covariate profiles compared by the hazard-ratio curves.

    Group 1 is ``(x1, z1)``; the single-group curves (Sp, Su) use it too.
    """

    x1: np.ndarray
    z1: np.ndarray
    x2: np.ndarray
    z2: np.ndarray

    @classmethod
    def from_data(cls, data, covariate, levels=(1.0, 0.0)):
        """Set ``covariate`` to two levels, everything else at its sample median.

        The covariate is matched by name in both the cure and latency designs.
        """
        xm = np.median(data.X, axis=0) if data.p else np.zeros(0)
        zm = np.median(data.Z, axis=0) if data.q else np.zeros(0)
        if covariate not in data.x_names and covariate not in data.z_names:
            raise ValueError(f"unknown covariate {covariate!r}")
        profiles = []
        for level in levels:
            x, z = xm.copy(), zm.copy()
            if covariate in data.x_names:
                x[data.x_names.index(covariate)] = level
            if covariate in data.z_names:
                z[data.z_names.index(covariate)] = level
            profiles.append((x, z))
        (x1, z1), (x2, z2) = profiles
        return cls(x1, z1, x2, z2)


@dataclass
class CurveBand:
    kind: str
    times: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def summarize_parameters(chain, names=None, level=0.95):
    """Posterior median, HPD interval, sd and equal-tailed quantiles by name."""
    names = chain.regression_names + ["tau", "delta"] if names is None else names
    out = []
    for name in names:
        x = chain.column(name)
        lo, hi = hpd_interval(x, level)
        q = np.quantile(x, [0.025, 0.05, 0.95, 0.975])
        out.append(ParameterSummary(name, float(np.median(x)), lo, hi,
                                    float(x.std(ddof=1)), *map(float, q)))
    return out


def geweke_table(chain, names=None):
    if names is None:
        fixed = f"phi_{chain.n_basis}"
        names = [n for n in chain.names if n != fixed]
    return {name: geweke_z(chain.column(name)) for name in names}


def curve_grid(t_max, n_points=200):
    return np.linspace(0.0, t_max, n_points)


def _draw_blocks(chain):
    K, p, q = chain.n_basis, len(chain.x_names), len(chain.z_names)
    D = chain.draws
    return D[:, :K], D[:, K], D[:, K + 1:K + 1 + p], D[:, K + 1 + p:K + 1 + p + q]


def _log_s0(grid, Phi, times):
    """``log S0`` at ``times`` for every row of ``Phi``: shape ``(len(times), m)``."""
    table = np.cumsum(np.exp(grid.basis_at_midpoints @ Phi.T) * grid.widths[:, None], axis=0)
    out = np.zeros((times.size, Phi.shape[0]))
    pos = times > 0
    if np.any(pos):
        out[pos] = -table[grid.bin_of(np.minimum(times[pos], grid.t_max))]
    return np.maximum(out, LOG_S0_FLOOR)


def curve_draws(chain, grid, kind, times, contrast=None):
    """Functional ``kind`` at ``times`` for every stored draw, ``(len(times), m)``."""
    if kind not in CURVE_KINDS:
        raise ValueError(f"kind must be one of {CURVE_KINDS}")
    times = np.asarray(times, dtype=float)
    Phi, b0, B, G = _draw_blocks(chain)
    logS0 = _log_s0(grid, Phi, times)
    if kind == "S0":
        return np.exp(logS0)
    if contrast is None:
        raise ValueError(f"{kind} needs a covariate contrast")
    log_th1 = b0 + B @ contrast.x1
    zg1 = G @ contrast.z1
    e1 = np.exp(zg1)
    if kind in ("Sp", "Su"):
        log_S = e1 * logS0
        th = np.exp(log_th1)
        Sp = np.exp(th * np.expm1(log_S))
        if kind == "Sp":
            return Sp
        return Sp * (-np.expm1(-th * np.exp(log_S))) / (-np.expm1(-th))
    log_th2 = b0 + B @ contrast.x2
    zg2 = G @ contrast.z2
    e2 = np.exp(zg2)
    log_hrp = (log_th1 - log_th2) + (zg1 - zg2) + (e1 - e2) * logS0
    if kind == "logHRp":
        return log_hrp
    return (log_hrp - _log_uncured_mass(log_th1, e1 * logS0)
            + _log_uncured_mass(log_th2, e2 * logS0))


def curve_bands(chain, grid, kind, times=None, contrast=None, level=0.95):
    """Pointwise posterior median and equal-tailed band of a functional."""
    times = curve_grid(grid.t_max) if times is None else np.asarray(times, dtype=float)
    values = curve_draws(chain, grid, kind, times, contrast)
    a = (1 - level) / 2
    lo, med, hi = np.quantile(values, [a, 0.5, 1 - a], axis=1)
    return CurveBand(kind, times, med, lo, hi)


def posterior_median_params(chain):
    """Componentwise posterior medians packed as model parameters."""
    Phi, b0, B, G = _draw_blocks(chain)
    return ModelParams(np.median(Phi, axis=0), np.median(b0),
                       np.median(B, axis=0), np.median(G, axis=0))
