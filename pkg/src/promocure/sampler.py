"""Metropolis-within-Gibbs sampler for the promotion time cure model.

One iteration updates, in order: the free spline coefficients (univariate
random-walk Metropolis along whitened directions), ``tau`` and ``delta``
(exact Gamma conditionals), the cure regression ``(beta0, beta)`` and the
latency regression ``gamma`` (univariate Metropolis).

Random streams: a chain seeded with ``seed`` draws from
``np.random.default_rng(np.random.SeedSequence(seed))``. Independent chains
for replicate ``r`` of a study use ``SeedSequence(seed).spawn(R)[r]``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (
    LOG_S0_FLOOR,
    DataCache,
    ModelParams,
    PenaltyHypers,
    Priors,
)
from .mode import ModeNotConverged, initial_params, posterior_mode, reparametrize_from_hessian

logger = logging.getLogger(__name__)

SD_MIN, SD_MAX = 1e-8, 1e4


class ChainError(RuntimeError):
    """The chain reached a non-finite state."""

    def __init__(self, iteration, parameter, value):
        super().__init__(
            f"non-finite state at iteration {iteration}: {parameter} = {value!r}")
        self.iteration = iteration
        self.parameter = parameter
        self.value = value
        self.partial_draws = None
        self.names = None


@dataclass
class ChainConfig:
    n_iter: int = 23000
    burnin: int = 3000
    seed: int = 0
    target_accept: float = 0.44
    adapt_during_burnin_only: bool = True
    reparametrize: bool = True
    use_mode: bool = True
    adapt_window: int = 50
    init_delta: float = 1.0
    init_sd: float = 2.4

    def __post_init__(self):
        if not 0 <= self.burnin < self.n_iter:
            raise ValueError("burnin must be smaller than n_iter")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be positive")


@dataclass
class ChainOutput:
    """Post burn-in draws with one column per parameter in ``names``.

    Column order: ``phi_1..phi_K`` (the last one fixed), ``beta0``, one
    ``beta_<x>`` per cure covariate, one ``gamma_<z>`` per latency
    covariate, ``tau``, ``delta``.
    """

    draws: np.ndarray
    names: list
    acceptance_rates: dict
    proposal_sds: dict
    seed: int
    n_basis: int
    x_names: list
    z_names: list
    mode: object = None
    reparam_fallback: bool = False
    adaptation_history: list = field(default_factory=list)

    def column(self, name):
        return self.draws[:, self.names.index(name)]

    def params_at(self, i):
        """:class:`ModelParams` of stored draw ``i``."""
        row = self.draws[i]
        K, p, q = self.n_basis, len(self.x_names), len(self.z_names)
        return ModelParams(row[:K], row[K], row[K + 1:K + 1 + p],
                           row[K + 1 + p:K + 1 + p + q])

    def thin(self, step):
        out = ChainOutput(**{**self.__dict__})
        out.draws = self.draws[::step]
        return out

    @property
    def regression_names(self):
        return (["beta0"] + [f"beta_{v}" for v in self.x_names]
                + [f"gamma_{v}" for v in self.z_names])


def parameter_names(n_basis, x_names, z_names):
    return ([f"phi_{k + 1}" for k in range(n_basis)] + ["beta0"]
            + [f"beta_{v}" for v in x_names] + [f"gamma_{v}" for v in z_names]
            + ["tau", "delta"])


def gibbs_tau(phi, P, hypers, rng, size=None):
    """Draw ``tau ~ Gamma((nu + K)/2, rate=(nu*delta + phi'P phi)/2)``.

    ``size`` draws several independent values from the same conditional.
    """
    phi = np.asarray(phi, dtype=float)
    shape = 0.5 * (hypers.nu + phi.size)
    rate = 0.5 * (hypers.nu * hypers.delta + phi @ P @ phi)
    if not rate > 0:
        raise ValueError(f"non-positive Gamma rate {rate}")
    return rng.gamma(shape, 1.0 / rate, size)


def gibbs_delta(tau, hypers, rng, size=None):
    """Draw ``delta ~ Gamma(a_delta + nu/2, rate=b_delta + nu*tau/2)``."""
    shape = hypers.a_delta + 0.5 * hypers.nu
    rate = hypers.b_delta + 0.5 * hypers.nu * tau
    if not rate > 0:
        raise ValueError(f"non-positive Gamma rate {rate}")
    return rng.gamma(shape, 1.0 / rate, size)


def adapt_proposals(acc_rates, current_sds, target, round_index):
    """Rescale proposal sds towards the target acceptance rate.

    Each sd is multiplied by ``exp(c * (acc - target))`` with the diminishing
    weight ``c = min(1, 10 / round_index)``, then clipped to ``[1e-8, 1e4]``.
    """
    c = min(1.0, 10.0 / max(round_index, 1))
    sds = np.asarray(current_sds, dtype=float) * np.exp(
        c * (np.asarray(acc_rates, dtype=float) - target))
    return np.clip(sds, SD_MIN, SD_MAX)


def metropolis_update(x, log_target, directions, sds, rng, accepted=None):
    """Sequential univariate random-walk Metropolis along each direction.

    ``log_target(x)`` returns the log density; a non-finite value is a
    rejection. Returns ``(x, log_target(x), accept flags)``.
    """
    x = np.array(x, dtype=float)
    lp = log_target(x)
    flags = np.zeros(len(sds), dtype=bool)
    for k in range(len(sds)):
        prop = x + sds[k] * rng.standard_normal() * directions[:, k]
        lp_new = log_target(prop)
        if np.isfinite(lp_new) and np.log(rng.random()) < lp_new - lp:
            x, lp = prop, lp_new
            flags[k] = True
    if accepted is not None:
        accepted += flags
    return x, lp, flags


class _ChainState:
    """Incrementally maintained linear predictors of the current state."""

    def __init__(self, cache, penalty, priors, hypers, params, tau, delta):
        self.cache = cache
        grid = cache.grid
        self.Bmid = grid.basis_at_midpoints
        self.w = grid.widths
        self.bins = cache.bins
        self.events = cache.events
        self.P = penalty.P
        self.reg_var = priors.reg_var
        self.hypers = hypers
        self.phi = params.phi.copy()
        self.btilde = params.beta_tilde.copy()
        self.gamma = params.gamma.copy()
        self.Xt = np.column_stack([np.ones(cache.data.n), cache.X])
        self.Z = cache.Z
        self.tau, self.delta = tau, delta
        self.log_h_mid = self.Bmid @ self.phi
        self.log_h_obs = cache.basis_obs @ self.phi
        self.cumhaz = self._cumhaz(self.log_h_mid)
        self.eta = self.Xt @ self.btilde
        self.zeta = self.Z @ self.gamma

    def _cumhaz(self, log_h_mid):
        return np.cumsum(np.exp(log_h_mid) * self.w)[self.bins]

    def _loglik(self, log_h_obs, cumhaz, eta, zeta):
        log_S = np.maximum(-cumhaz, LOG_S0_FLOOR) * np.exp(zeta)
        return (self.events @ (eta + zeta + log_h_obs + log_S)
                + np.exp(eta) @ np.expm1(log_S))

    def loglik(self):
        return self._loglik(self.log_h_obs, self.cumhaz, self.eta, self.zeta)


def _block_transform(neg_hessian, idx, reparametrize):
    H = neg_hessian[np.ix_(idx, idx)]
    if reparametrize:
        return reparametrize_from_hessian(H)
    d = np.sqrt(np.clip(np.diag(H), 1e-12, None))
    return reparametrize_from_hessian(np.diag(d ** 2))


def run_chain(data, grid, penalty, config=ChainConfig(), hypers=PenaltyHypers(),
              priors=Priors(), phi_last=10.0, init=None, callback=None):
    """Run the Metropolis-within-Gibbs chain and keep the post burn-in draws.

    Parameters
    ----------
    data : SurvivalDataset
    grid : QuadratureGrid
    penalty : PenaltyMatrix
    config : ChainConfig
    hypers : PenaltyHypers
        Only ``nu``, ``a_delta`` and ``b_delta`` are used; ``tau`` and
        ``delta`` start from the mode (or 1) and are sampled.
    priors : Priors
    phi_last : float
        Value of the fixed last spline coefficient.
    init : ModelParams, optional
        Starting point for the mode search (or the chain when
        ``config.use_mode`` is off).

    Returns
    -------
    ChainOutput
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    cache = DataCache(data, grid)
    K, p, q = grid.K, data.p, data.q
    if init is None:
        init = initial_params(data, phi_last, K)
    elif not np.isclose(init.phi[-1], phi_last):
        raise ValueError("init.phi[-1] must equal phi_last")
    hyp = PenaltyHypers(1.0, config.init_delta, hypers.nu, hypers.a_delta, hypers.b_delta)

    mode = None
    fallback = False
    if config.use_mode:
        try:
            mode = posterior_mode(data, grid, penalty, hyp, priors, phi_last, init=init)
        except ModeNotConverged as exc:
            logger.warning("%s; starting from the best iterate", exc)
            mode = exc.best
        params, tau = mode.params, mode.tau
        negH = mode.neg_hessian
    else:
        params, tau = init.copy(), 1.0
        negH = None
    delta = config.init_delta

    blocks = {
        "phi": np.arange(K - 1),
        "beta": np.arange(K - 1, K + p),
        "gamma": np.arange(K + p, K + p + q),
    }
    directions = {}
    for name, idx in blocks.items():
        if negH is not None:
            T = _block_transform(negH, idx, config.reparametrize)
            fallback |= T.fallback
            directions[name] = T.directions
        else:
            directions[name] = np.eye(idx.size) * 0.1
    init_sd = config.init_sd if negH is not None else 1.0
    sds = {name: np.full(idx.size, init_sd) for name, idx in blocks.items()}

    st = _ChainState(cache, penalty, priors, hyp, params, tau, delta)
    nu, a_d, b_d = hyp.nu, hyp.a_delta, hyp.b_delta
    P = st.P
    v = st.reg_var
    # moves along a direction shift the linear predictors by a fixed profile
    phi_dir = np.vstack([directions["phi"], np.zeros((1, K - 1))])
    dmid = st.Bmid @ phi_dir
    dobs = cache.basis_obs @ phi_dir
    dbeta = st.Xt @ directions["beta"]
    dgamma = st.Z @ directions["gamma"]

    names = parameter_names(K, data.x_names, data.z_names)
    n_keep = config.n_iter - config.burnin
    draws = np.empty((n_keep, len(names)))
    acc_window = {name: np.zeros(idx.size) for name, idx in blocks.items()}
    acc_total = {name: np.zeros(idx.size) for name, idx in blocks.items()}
    history = []
    n_round = 0
    ll = st.loglik()
    if not np.isfinite(ll):
        raise ChainError(0, "loglik", ll)

    for it in range(config.n_iter):
        post = it >= config.burnin
        # phi block
        sd = sds["phi"]
        pen = st.phi @ P @ st.phi
        for k in range(K - 1):
            step = sd[k] * rng.standard_normal()
            phi_new = st.phi + step * phi_dir[:, k]
            lmid = st.log_h_mid + step * dmid[:, k]
            lobs = st.log_h_obs + step * dobs[:, k]
            cum = st._cumhaz(lmid)
            ll_new = st._loglik(lobs, cum, st.eta, st.zeta)
            pen_new = phi_new @ P @ phi_new
            log_ratio = ll_new - ll - 0.5 * st.tau * (pen_new - pen)
            if np.isfinite(log_ratio) and np.log(rng.random()) < log_ratio:
                st.phi, st.log_h_mid, st.log_h_obs, st.cumhaz = phi_new, lmid, lobs, cum
                ll, pen = ll_new, pen_new
                acc_window["phi"][k] += 1
                if post:
                    acc_total["phi"][k] += 1
        # tau and delta
        st.tau = rng.gamma(0.5 * (nu + K), 2.0 / (nu * st.delta + pen))
        st.delta = rng.gamma(a_d + 0.5 * nu, 1.0 / (b_d + 0.5 * nu * st.tau))
        # cure regression
        sd = sds["beta"]
        for k in range(p + 1):
            step = sd[k] * rng.standard_normal()
            b_new = st.btilde + step * directions["beta"][:, k]
            eta = st.eta + step * dbeta[:, k]
            ll_new = st._loglik(st.log_h_obs, st.cumhaz, eta, st.zeta)
            log_ratio = ll_new - ll - 0.5 * (b_new @ b_new - st.btilde @ st.btilde) / v
            if np.isfinite(log_ratio) and np.log(rng.random()) < log_ratio:
                st.btilde, st.eta, ll = b_new, eta, ll_new
                acc_window["beta"][k] += 1
                if post:
                    acc_total["beta"][k] += 1
        # latency regression
        sd = sds["gamma"]
        for k in range(q):
            step = sd[k] * rng.standard_normal()
            g_new = st.gamma + step * directions["gamma"][:, k]
            zeta = st.zeta + step * dgamma[:, k]
            ll_new = st._loglik(st.log_h_obs, st.cumhaz, st.eta, zeta)
            log_ratio = ll_new - ll - 0.5 * (g_new @ g_new - st.gamma @ st.gamma) / v
            if np.isfinite(log_ratio) and np.log(rng.random()) < log_ratio:
                st.gamma, st.zeta, ll = g_new, zeta, ll_new
                acc_window["gamma"][k] += 1
                if post:
                    acc_total["gamma"][k] += 1

        if not (np.isfinite(ll) and st.tau > 0 and st.delta > 0):
            bad = ("loglik", ll) if not np.isfinite(ll) else (
                ("tau", st.tau) if not st.tau > 0 else ("delta", st.delta))
            err = ChainError(it, *bad)
            err.partial_draws = draws[:max(0, it - config.burnin)].copy()
            err.names = names
            raise err

        adapting = it < config.burnin or not config.adapt_during_burnin_only
        if (it + 1) % config.adapt_window == 0:
            if adapting:
                n_round += 1
                for name in blocks:
                    rate = acc_window[name] / config.adapt_window
                    sds[name] = adapt_proposals(rate, sds[name], config.target_accept, n_round)
                history.append({name: sds[name].copy() for name in blocks})
            for name in blocks:
                acc_window[name][:] = 0
        if post:
            row = draws[it - config.burnin]
            row[:K] = st.phi
            row[K:K + p + 1] = st.btilde
            row[K + p + 1:K + p + 1 + q] = st.gamma
            row[-2] = st.tau
            row[-1] = st.delta
        if callback is not None:
            callback(it, st)

    acceptance = {}
    proposal = {}
    labels = {"phi": names[:K - 1], "beta": names[K:K + p + 1],
              "gamma": names[K + p + 1:K + p + 1 + q]}
    for name in blocks:
        acceptance.update(zip(labels[name], (acc_total[name] / n_keep).tolist()))
        proposal.update(zip(labels[name], sds[name].tolist()))
    return ChainOutput(draws, names, acceptance, proposal, config.seed, K,
                       list(data.x_names), list(data.z_names), mode, fallback, history)
