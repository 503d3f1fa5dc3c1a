"""Promotion time cure model with a P-spline baseline log-hazard.

Population survival is ``exp(-theta(x) * (1 - S0(t) ** exp(z'gamma)))`` with
``theta(x) = exp(beta0 + x'beta)``. The baseline hazard is
``exp(sum_k b_k(t) phi_k)`` and its integral is approximated by the rectangle
rule over ``J`` equal bins of ``[0, t_max]``.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .splines import build_knot_grid, eval_basis, penalty_matrix

LOG_S0_FLOOR = -700.0


class PlateauError(ValueError):
    """Raised when a susceptible quantity is evaluated on the cure plateau."""


@dataclass
class SurvivalDataset:
    """Right-censored survival data with separate cure and latency designs.

    ``X`` enters the cure probability, ``Z`` the latent event-time
    distribution. Neither carries an intercept column.
    """

    times: np.ndarray
    events: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    x_names: list = field(default=None)
    z_names: list = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        n = self.times.shape[0]
        ev = np.asarray(self.events).ravel()
        if ev.shape[0] != n:
            raise ValueError("times and events differ in length")
        bad = np.flatnonzero((ev != 0) & (ev != 1))
        if bad.size:
            raise ValueError(f"event indicator must be 0 or 1 (row {bad[0] + 1})")
        self.events = ev.astype(float)
        self.X = _as_design(self.X, n, "X")
        self.Z = _as_design(self.Z, n, "Z")
        if np.any(~np.isfinite(self.times)) or np.any(self.times <= 0):
            bad = np.flatnonzero(~(self.times > 0))
            raise ValueError(f"times must be strictly positive (row {bad[0] + 1})")
        for name, M in (("X", self.X), ("Z", self.Z)):
            if M.shape[1] and np.linalg.matrix_rank(M.T @ M) < M.shape[1]:
                raise ValueError(f"design {name} is rank deficient ({name}'{name} singular)")
        if self.x_names is None:
            self.x_names = [f"x{j + 1}" for j in range(self.p)]
        if self.z_names is None:
            self.z_names = [f"z{j + 1}" for j in range(self.q)]
        self.x_names, self.z_names = list(self.x_names), list(self.z_names)

    @property
    def n(self):
        return self.times.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Z.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return SurvivalDataset(self.times[idx], self.events[idx], self.X[idx],
                               self.Z[idx], self.x_names, self.z_names)


def _as_design(M, n, name):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(n, -1) if M.size else np.zeros((n, 0))
    if M.ndim != 2 or M.shape[0] != n:
        raise ValueError(f"{name} must have {n} rows")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite values")
    return M


@dataclass
class ModelParams:
    phi: np.ndarray
    beta0: float
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float).ravel()
        self.beta0 = float(self.beta0)
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()

    @property
    def beta_tilde(self):
        return np.concatenate([[self.beta0], self.beta])

    def copy(self, **changes):
        out = replace(self, phi=self.phi.copy(), beta=self.beta.copy(),
                      gamma=self.gamma.copy())
        return replace(out, **changes) if changes else out


@dataclass(frozen=True)
class PenaltyHypers:
    """Roughness penalty ``tau`` and its robust hyperprior.

    ``tau | delta ~ Gamma(nu/2, rate=nu*delta/2)`` and
    ``delta ~ Gamma(a_delta, rate=b_delta)``.
    """

    tau: float = 1.0
    delta: float = 1.0
    nu: float = 2.0
    a_delta: float = 1e-4
    b_delta: float = 1e-4

    def __post_init__(self):
        for name in ("tau", "delta", "nu", "a_delta", "b_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class Priors:
    """Independent ``Normal(0, reg_var)`` priors on beta0, beta and gamma."""

    reg_var: float = 1e4

    def __post_init__(self):
        if not self.reg_var > 0:
            raise ValueError("reg_var must be positive")


class QuadratureGrid:
    """Rectangle-rule grid of ``J`` equal bins on ``[0, t_max]``.

    Parameters
    ----------
    knots : KnotGrid
        Spline basis definition; its upper bound is the end of follow up.
    n_bins : int
        Number of bins ``J``.
    """

    def __init__(self, knots, n_bins=300):
        if n_bins < 1:
            raise ValueError("n_bins must be positive")
        self.knots = knots
        self.J = int(n_bins)
        self.t_max = knots.upper
        self.boundaries = np.linspace(knots.lower, knots.upper, self.J + 1)
        self.widths = np.diff(self.boundaries)
        self.midpoints = 0.5 * (self.boundaries[:-1] + self.boundaries[1:])
        self.basis_at_midpoints = eval_basis(knots, self.midpoints)

    @property
    def K(self):
        return self.knots.num_basis

    def bin_of(self, t):
        """0-based index ``j`` with ``tau_j < t <= tau_{j+1}``."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= self.boundaries[0]) or np.any(t > self.t_max):
            raise ValueError(f"times must lie in (0, {self.t_max}]")
        j = np.searchsorted(self.boundaries[1:], t, side="left")
        return np.minimum(j, self.J - 1)

    def cumulative_table(self, phi):
        """Cumulative baseline hazard at the right end of every bin."""
        return np.cumsum(np.exp(self.basis_at_midpoints @ phi) * self.widths)

    def baseline(self, phi):
        return SplineBaseline(self, phi)


class SplineBaseline:
    """Baseline hazard/survival for fixed spline coefficients.

    The cumulative hazard table is computed once; evaluations are lookups.
    """

    def __init__(self, grid, phi):
        self.grid = grid
        self.phi = np.asarray(phi, dtype=float)
        self.cumhaz_table = grid.cumulative_table(self.phi)
        self.t_max = grid.t_max

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_max) or np.any(np.isnan(t)):
            raise ValueError(f"t outside [0, {self.t_max}]")
        return t

    def log_hazard(self, t):
        t = self._check(t)
        return eval_basis(self.grid.knots, t) @ self.phi

    def cumulative_hazard(self, t):
        t = self._check(t)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        H = np.zeros(t.shape)
        pos = t > 0
        if np.any(pos):
            H[pos] = self.cumhaz_table[self.grid.bin_of(t[pos])]
        return H[0] if scalar else H

    def log_survival(self, t):
        return np.maximum(-self.cumulative_hazard(t), LOG_S0_FLOOR)


class WeibullBaseline:
    """Exact Weibull baseline, ``S0(t) = exp(-(t/scale)**shape)``.

    Drop-in replacement for :class:`SplineBaseline` in the functionals below.
    """

    def __init__(self, shape, scale):
        self.shape = float(shape)
        self.scale = float(scale)

    def log_hazard(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return (np.log(self.shape / self.scale)
                    + (self.shape - 1) * np.log(t / self.scale))

    def cumulative_hazard(self, t):
        return (np.asarray(t, dtype=float) / self.scale) ** self.shape

    def log_survival(self, t):
        return np.maximum(-self.cumulative_hazard(t), LOG_S0_FLOOR)

    def cdf(self, t):
        return -np.expm1(-self.cumulative_hazard(t))


def _baseline(params, grid):
    if isinstance(grid, QuadratureGrid):
        return grid.baseline(params.phi)
    return grid


def _lin(coef, v, name):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != coef.shape:
        raise ValueError(f"{name} has dimension {v.shape[-1:]}, expected {coef.shape}")
    return v @ coef


def baseline_hazard(params, grid, t):
    return np.exp(_baseline(params, grid).log_hazard(t))


def baseline_survival(params, grid, t):
    return np.exp(_baseline(params, grid).log_survival(t))


def theta(params, x):
    """Mean number of latent risks, ``exp(beta0 + x'beta)``."""
    return np.exp(params.beta0 + _lin(params.beta, x, "x"))


def cure_probability(params, x):
    return np.exp(-theta(params, x))


def _latent_log_survival(params, base, z, t):
    """``log S(t|z) = exp(z'gamma) * log S0(t)``."""
    return np.exp(_lin(params.gamma, z, "z")) * base.log_survival(t)


def population_survival(params, grid, x, z, t):
    base = _baseline(params, grid)
    S = np.exp(_latent_log_survival(params, base, z, t))
    return np.exp(-theta(params, x) * (1.0 - S))


def log_population_hazard(params, grid, x, z, t):
    base = _baseline(params, grid)
    zg = _lin(params.gamma, z, "z")
    return (params.beta0 + _lin(params.beta, x, "x") + zg + base.log_hazard(t)
            + np.exp(zg) * base.log_survival(t))


def population_hazard(params, grid, x, z, t):
    """``theta(x) * f(t|z)`` where ``f(t|z) = exp(z'gamma) h0(t) S0(t)**exp(z'gamma)``."""
    return np.exp(log_population_hazard(params, grid, x, z, t))


def _log_uncured_mass(log_theta, log_S):
    """``log(1 - exp(-theta * S))`` from logs, accurate when ``theta * S`` is tiny."""
    log_m = log_theta + log_S
    m = np.exp(log_m)
    small = log_m < -20
    with np.errstate(divide="ignore"):
        out = np.where(small, log_m - 0.5 * m, np.log(-np.expm1(-m)))
    return out


def susceptible_survival(params, grid, x, z, t):
    """Survival among the uncured, ``(Sp - exp(-theta)) / (1 - exp(-theta))``."""
    th = theta(params, x)
    if np.any(th < 1e-300):
        raise ValueError("theta(x) is numerically zero: everybody is cured")
    base = _baseline(params, grid)
    log_S = _latent_log_survival(params, base, z, t)
    Sp = np.exp(-th * (1.0 - np.exp(log_S)))
    return Sp * (-np.expm1(-th * np.exp(log_S))) / (-np.expm1(-th))


def log_susceptible_hazard(params, grid, x, z, t):
    base = _baseline(params, grid)
    log_th = params.beta0 + _lin(params.beta, x, "x")
    log_S = _latent_log_survival(params, base, z, t)
    return log_population_hazard(params, grid, x, z, t) - _log_uncured_mass(log_th, log_S)


def susceptible_hazard(params, grid, x, z, t, form="ratio"):
    """Hazard of the uncured subpopulation.

    ``form="ratio"`` uses ``Sp / (Sp - exp(-theta)) * hp``; ``form="conditional"``
    uses ``hp / P(T < inf | T > t)``. Both are algebraically identical.
    """
    if form == "ratio":
        return np.exp(log_susceptible_hazard(params, grid, x, z, t))
    if form != "conditional":
        raise ValueError(f"unknown form {form!r}")
    hp = population_hazard(params, grid, x, z, t)
    th = theta(params, x)
    Sp = population_survival(params, grid, x, z, t)
    p_fail = 1.0 - np.exp(-th) / Sp
    if np.any(p_fail <= 0):
        raise PlateauError("population survival has reached the cure plateau")
    return hp / p_fail


def log_hazard_ratio_population(params, grid, x1, z1, x2, z2, t):
    """Log population hazard ratio of group 1 versus group 2 at time ``t``."""
    base = _baseline(params, grid)
    zg1 = _lin(params.gamma, z1, "z1")
    zg2 = _lin(params.gamma, z2, "z2")
    dx = _lin(params.beta, x1, "x1") - _lin(params.beta, x2, "x2")
    return dx + (zg1 - zg2) + (np.exp(zg1) - np.exp(zg2)) * base.log_survival(t)


def log_hazard_ratio_susceptible(params, grid, x1, z1, x2, z2, t):
    # the baseline hazard cancels, which keeps t = 0 finite for Weibull shapes > 1
    base = _baseline(params, grid)
    log_S0 = base.log_survival(t)
    mass = [
        _log_uncured_mass(params.beta0 + _lin(params.beta, x, "x"),
                          np.exp(_lin(params.gamma, z, "z")) * log_S0)
        for x, z in ((x1, z1), (x2, z2))
    ]
    return (log_hazard_ratio_population(params, base, x1, z1, x2, z2, t)
            - mass[0] + mass[1])


# --- likelihood -----------------------------------------------------------


class DataCache:
    """Per-dataset quantities reused by every likelihood evaluation."""

    def __init__(self, data, grid):
        if np.any(data.times > grid.t_max * (1 + 1e-12)):
            raise ValueError(f"observed times exceed the follow-up bound {grid.t_max}")
        self.data = data
        self.grid = grid
        self.bins = grid.bin_of(np.minimum(data.times, grid.t_max))
        self.basis_obs = eval_basis(grid.knots, np.minimum(data.times, grid.t_max))
        self.events = data.events
        self.n_events = data.events.sum()
        self.X = data.X
        self.Z = data.Z


def subject_loglik(log_h, cumhaz, eta, zeta, events):
    """Per-subject ``events*log hp + log Sp`` from linear predictors."""
    e = np.exp(zeta)
    log_S = np.maximum(-cumhaz, LOG_S0_FLOOR) * e
    return events * (eta + zeta + log_h + log_S) + np.exp(eta) * np.expm1(log_S)


def _linear_parts(params, cache):
    log_h = cache.basis_obs @ params.phi
    cumhaz = cache.grid.cumulative_table(params.phi)[cache.bins]
    eta = params.beta0 + cache.X @ params.beta
    zeta = cache.Z @ params.gamma
    return log_h, cumhaz, eta, zeta


def log_likelihood(params, grid, data, cache=None):
    """Log-likelihood ``sum_i events_i log hp(t_i) + log Sp(t_i)``."""
    cache = cache if cache is not None else DataCache(data, grid)
    terms = subject_loglik(*_linear_parts(params, cache), cache.events)
    if not np.all(np.isfinite(terms)):
        bad = int(np.flatnonzero(~np.isfinite(terms))[0])
        raise FloatingPointError(f"non-finite log-likelihood for subject {bad}")
    return float(terms.sum())


def log_prior_phi(phi, tau, penalty):
    K = phi.shape[0]
    return 0.5 * K * np.log(tau) - 0.5 * tau * phi @ penalty.P @ phi


def log_gamma_density(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


def log_prior_regression(params, priors):
    coefs = np.concatenate([[params.beta0], params.beta, params.gamma])
    v = priors.reg_var
    return float(-0.5 * coefs.size * np.log(2 * np.pi * v) - 0.5 * coefs @ coefs / v)


def log_posterior(params, hypers, penalty, data, grid, priors=Priors(), cache=None):
    """Unnormalised joint log-posterior of all parameters."""
    tau, delta, nu = hypers.tau, hypers.delta, hypers.nu
    return (log_likelihood(params, grid, data, cache)
            + log_prior_phi(params.phi, tau, penalty)
            + log_gamma_density(tau, nu / 2, nu * delta / 2)
            + log_gamma_density(delta, hypers.a_delta, hypers.b_delta)
            + log_prior_regression(params, priors))


def log_likelihood_grad(params, cache):
    """Gradient of the log-likelihood w.r.t. ``(phi, beta0, beta, gamma)``.

    The ``phi`` block covers all K coefficients, the fixed one included.
    """
    grid = cache.grid
    h_mid = np.exp(grid.basis_at_midpoints @ params.phi) * grid.widths
    table = np.cumsum(h_mid)
    cumhaz = table[cache.bins]
    eta = params.beta0 + cache.X @ params.beta
    zeta = cache.Z @ params.gamma
    ev = cache.events
    e = np.exp(zeta)
    th = np.exp(eta)
    clamped = cumhaz > -LOG_S0_FLOOR
    H = np.where(clamped, -LOG_S0_FLOOR, cumhaz)
    G = np.exp(-e * H)
    d_eta = ev - th * (1 - G)
    d_zeta = ev * (1 - e * H) - th * G * e * H
    d_H = np.where(clamped, 0.0, -ev * e - th * e * G)
    # dH_i/dphi = sum_{l <= bin_i} h_mid_l * B_l: accumulate per bin, then suffix-sum
    per_bin = np.bincount(cache.bins, weights=d_H, minlength=grid.J)
    weight = np.cumsum(per_bin[::-1])[::-1]
    g_phi = cache.basis_obs.T @ ev + grid.basis_at_midpoints.T @ (weight * h_mid)
    g_beta0 = d_eta.sum()
    g_beta = cache.X.T @ d_eta
    g_gamma = cache.Z.T @ d_zeta
    return g_phi, g_beta0, g_beta, g_gamma


def log_posterior_grad(params, hypers, penalty, cache, priors=Priors()):
    """Gradient of :func:`log_posterior` w.r.t. ``(free phi, beta0, beta, gamma)``.

    Returned as one flat vector in that order.
    """
    g_phi, g_b0, g_b, g_g = log_likelihood_grad(params, cache)
    g_phi = g_phi - hypers.tau * penalty.P @ params.phi
    v = priors.reg_var
    return np.concatenate([
        g_phi[:-1],
        [g_b0 - params.beta0 / v],
        g_b - params.beta / v,
        g_g - params.gamma / v,
    ])


@dataclass(frozen=True)
class ModelConfig:
    """Structural settings of the spline baseline."""

    n_basis: int = 12
    n_bins: int = 300
    penalty_order: int = 3
    ridge: float = 1e-6
    phi_last: float = 10.0

    def build(self, t_max):
        knots = build_knot_grid(0.0, t_max, self.n_basis)
        grid = QuadratureGrid(knots, self.n_bins)
        penalty = penalty_matrix(self.n_basis, self.penalty_order, self.ridge)
        return grid, penalty
