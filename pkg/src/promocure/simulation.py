"""Data generation by the latent carcinogenic-cell mechanism.

Each subject carries ``N ~ Poisson(theta(x))`` latent cells; with ``N = 0``
the subject is cured, otherwise the failure time is the smallest of ``N``
latent times drawn from ``S0(t) ** exp(z'gamma)`` with a Weibull ``S0``.
"""
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from .model import SurvivalDataset, WeibullBaseline

CURED_TIME = 999.0

# (mean, sd, truncation point) of the Weibull censoring laws; setting 1 is uniform
CENSORING = {
    1: ("uniform", 20.0, 25.0),
    2: ("weibull", (22.28, 8.08), 25.0),
    3: ("weibull", (17.9, 6.5), 13.7),
    4: ("weibull", (17.9, 6.5), 10.6),
}
FOLLOW_UP = {1: 25.0, 2: 25.0, 3: 13.7, 4: 10.6}

# regression truths printed for the 25% and 40% cure scenarios
TRUTHS = {
    (25, 1): (0.75, (0.8, -0.5), (0.4, -0.4)),
    (40, 1): (0.30, (1.00, -0.75), (0.4, -0.4)),
    (25, 3): (0.70, (-0.70,), (0.40,)),
    (40, 3): (0.30, (-0.80,), (0.40,)),
}


def weibull_from_moments(mean, sd):
    """Weibull ``(shape, scale)`` with the given mean and standard deviation.

    The shape solves the coefficient-of-variation equation by bracketed
    root finding; the scale then follows from the mean.
    """
    if not (mean > 0 and sd > 0):
        raise ValueError("mean and sd must be positive")
    target = np.log(sd / mean)

    def log_cv(log_k):
        k = np.exp(log_k)
        g1 = gammaln(1 + 1 / k)
        g2 = gammaln(1 + 2 / k)
        return 0.5 * np.log(np.expm1(g2 - 2 * g1)) - target

    lo, hi = np.log(0.02), np.log(1e3)
    if log_cv(lo) * log_cv(hi) > 0:
        raise ValueError(f"coefficient of variation {sd / mean:.4g} out of range")
    log_k = brentq(log_cv, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    shape = float(np.exp(log_k))
    scale = float(mean / np.exp(gammaln(1 + 1 / shape)))
    return shape, scale


def truncated_weibull_sample(shape, scale, upper, size, rng):
    """Inverse-CDF draws from a Weibull restricted to ``[0, upper]``."""
    F_up = -np.expm1(-(upper / scale) ** shape)
    u = rng.random(size)
    return np.minimum(scale * (-np.log1p(-u * F_up)) ** (1 / shape), upper)


def latent_time(baseline, zeta, u):
    """Invert ``S0(t) ** exp(zeta) = u`` for a Weibull baseline."""
    return baseline.scale * (-np.log(u) * np.exp(-zeta)) ** (1 / baseline.shape)


@dataclass
class ScenarioConfig:
    """One simulation scenario; ``beta0``/``beta``/``gamma`` default to the printed truths."""

    n: int = 300
    replicates: int = 100
    cure_pct: int = 25
    setting: int = 1
    beta0: float = None
    beta: tuple = None
    gamma: tuple = None
    baseline_mean: float = 8.0
    baseline_sd: float = 4.18
    event_time_cap: float = 23.0
    t_rcens: float = None
    seed: int = 0

    def __post_init__(self):
        if self.setting not in CENSORING:
            raise ValueError(f"setting must be one of 1-4, got {self.setting}")
        if self.beta0 is None or self.beta is None or self.gamma is None:
            key = (self.cure_pct, 1 if self.setting in (1, 2) else 3)
            if key not in TRUTHS:
                raise ValueError(
                    f"no default truth for {self.cure_pct}% cure; give beta0, beta and gamma")
            b0, b, g = TRUTHS[key]
            self.beta0 = b0 if self.beta0 is None else self.beta0
            self.beta = b if self.beta is None else self.beta
            self.gamma = g if self.gamma is None else self.gamma
        self.beta0 = float(self.beta0)
        self.beta = tuple(float(v) for v in np.atleast_1d(self.beta))
        self.gamma = tuple(float(v) for v in np.atleast_1d(self.gamma))
        if self.t_rcens is None:
            self.t_rcens = FOLLOW_UP[self.setting]
        expected = 2 if self.setting in (1, 2) else 1
        if len(self.beta) != expected or len(self.gamma) != expected:
            raise ValueError(
                f"setting {self.setting} needs {expected} cure and {expected} latency "
                "coefficients")
        if self.n < 1 or self.replicates < 1:
            raise ValueError("n and replicates must be positive")

    @property
    def shared_covariates(self):
        return self.setting in (1, 2)

    @property
    def x_names(self):
        return ["W1", "W2"] if self.shared_covariates else ["W2"]

    @property
    def z_names(self):
        return ["W1", "W2"] if self.shared_covariates else ["W1"]

    def baseline(self):
        return WeibullBaseline(*weibull_from_moments(self.baseline_mean, self.baseline_sd))

    def truth_vector(self):
        """Regression truth in the order ``beta0, beta, gamma``."""
        return np.array([self.beta0, *self.beta, *self.gamma])

    def parameter_names(self):
        return (["beta0"] + [f"beta_{v}" for v in self.x_names]
                + [f"gamma_{v}" for v in self.z_names])

    def to_dict(self):
        d = asdict(self)
        d["beta"], d["gamma"] = list(self.beta), list(self.gamma)
        return d


@dataclass
class GeneratedDataset:
    data: SurvivalDataset
    cured: np.ndarray
    raw_times: np.ndarray
    retries: int = 0
    W: np.ndarray = field(default=None)


def generate_subject(beta0, beta, gamma, x, z, baseline, cap, rng, max_retries=1000):
    """Simulate one subject; returns ``(raw time, cured)``.

    The latent-time draw is repeated until the minimum falls below ``cap``.
    """
    th = np.exp(beta0 + np.dot(x, beta))
    N = rng.poisson(th)
    if N == 0:
        return CURED_TIME, True
    zeta = float(np.dot(z, gamma))
    for _ in range(max_retries):
        T = latent_time(baseline, zeta, rng.random(N)).min()
        if T < cap:
            return float(T), False
    raise RuntimeError(f"no latent time below {cap} after {max_retries} attempts")


def draw_covariates(n, rng):
    W1 = rng.standard_normal(n)
    W2 = (rng.random(n) < 0.5).astype(float)
    return np.column_stack([W1, W2])


def design_matrices(config, W):
    if config.shared_covariates:
        return W.copy(), W.copy()
    return W[:, [1]], W[:, [0]]


def generate_raw_times(beta0, beta, gamma, X, Z, baseline, cap, rng, max_retries=1000):
    """Vectorised counterpart of :func:`generate_subject` for a whole sample.

    Returns ``(raw_times, cured, retries)``.
    """
    n = X.shape[0]
    th = np.exp(beta0 + X @ np.asarray(beta))
    N = rng.poisson(th)
    cured = N == 0
    raw = np.full(n, CURED_TIME)
    zeta = Z @ np.asarray(gamma)
    todo = np.flatnonzero(~cured)
    retries = 0
    for _ in range(max_retries):
        if todo.size == 0:
            break
        counts = N[todo]
        u = rng.random(counts.sum())
        Y = latent_time(baseline, np.repeat(zeta[todo], counts), u)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        T = np.minimum.reduceat(Y, starts)
        ok = T < cap
        raw[todo[ok]] = T[ok]
        todo = todo[~ok]
        retries += int((~ok).sum())
    else:
        if todo.size:
            raise RuntimeError(f"{todo.size} subjects without a latent time below {cap}")
    return raw, cured, retries


def censoring_times(setting, size, rng):
    kind, params, upper = CENSORING[setting]
    if kind == "uniform":
        return rng.uniform(params, upper, size)
    shape, scale = weibull_from_moments(*params)
    return truncated_weibull_sample(shape, scale, upper, size, rng)


def apply_censoring(raw, setting, rng):
    """Observed times and event indicators under a censoring setting."""
    raw = np.asarray(raw, dtype=float)
    C = censoring_times(setting, raw.shape, rng)
    event = raw <= C
    return np.where(event, raw, C), event.astype(int)


def generate_dataset(config, rng):
    """Draw one dataset for ``config`` using generator ``rng``."""
    W = draw_covariates(config.n, rng)
    X, Z = design_matrices(config, W)
    raw, cured, retries = generate_raw_times(
        config.beta0, config.beta, config.gamma, X, Z, config.baseline(),
        config.event_time_cap, rng)
    times, events = apply_censoring(raw, config.setting, rng)
    data = SurvivalDataset(times, events, X, Z, config.x_names, config.z_names)
    return GeneratedDataset(data, cured, raw, retries, W)
