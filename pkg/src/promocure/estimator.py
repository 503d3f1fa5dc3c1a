"""scikit-learn style front end to the sampler."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .model import (
    ModelConfig,
    PenaltyHypers,
    Priors,
    SurvivalDataset,
    log_likelihood,
)
from .sampler import ChainConfig, run_chain
from .summary import (
    Contrast,
    curve_draws,
    geweke_table,
    posterior_median_params,
    summarize_parameters,
)

SURVIVAL_DTYPE = [("event", bool), ("time", float)]


def make_survival_target(time, event):
    """Pack times and event indicators into a structured ``y`` array."""
    time = np.asarray(time, dtype=float).ravel()
    event = np.asarray(event).ravel()
    if time.shape != event.shape:
        raise ValueError("time and event differ in length")
    y = np.empty(time.shape[0], dtype=SURVIVAL_DTYPE)
    y["time"] = time
    y["event"] = event.astype(bool)
    return y


def check_survival_target(y):
    """Return ``(time, event)`` from a structured array or an ``(n, 2)`` array.

    A plain array is read as columns ``(time, event)``.
    """
    if isinstance(y, np.ndarray) and y.dtype.names:
        if not {"time", "event"} <= set(y.dtype.names):
            raise ValueError("structured y needs 'time' and 'event' fields")
        time, event = y["time"], y["event"]
    else:
        y = check_array(y, ensure_2d=True, dtype=float)
        if y.shape[1] != 2:
            raise ValueError(f"y must have two columns (time, event), got {y.shape[1]}")
        time, event = y[:, 0], y[:, 1]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    if not np.all((event == 0) | (event == 1)):
        raise ValueError("event indicators must be 0/1")
    if not np.all(time > 0):
        raise ValueError("times must be strictly positive")
    return time, event


def _resolve_features(features, names, n_features):
    if features is None:
        return list(range(n_features))
    idx = []
    for f in features:
        if isinstance(f, str):
            if names is None or f not in names:
                raise ValueError(f"unknown feature {f!r}")
            idx.append(names.index(f))
        else:
            if not 0 <= int(f) < n_features:
                raise ValueError(f"feature index {f} out of range")
            idx.append(int(f))
    return idx


class PromotionTimeCureModel(BaseEstimator):
    """Bayesian promotion time cure model with a P-spline baseline hazard.

    Parameters
    ----------
    cure_features, latency_features : list of int or str, optional
        Columns of ``X`` entering the cure probability and the latent
        event-time distribution. Default: all columns in both.
    follow_up : float, optional
        Upper bound of follow up carrying the spline basis; defaults to the
        largest observed time.
    n_basis, n_bins, penalty_order, ridge, phi_last : see :class:`ModelConfig`.
    reg_var : float
        Prior variance of every regression coefficient.
    nu, a_delta, b_delta : float
        Hyperprior constants of the roughness penalty.
    n_iter, burnin, target_accept, reparametrize : see :class:`ChainConfig`.
    random_state : int, optional
        Seed of the chain; ``None`` draws fresh entropy, kept in ``seed_``.

    Attributes
    ----------
    chain_ : ChainOutput
    intercept_ : float
        Posterior median of ``beta0``.
    cure_coef_, latency_coef_ : ndarray
        Posterior medians of ``beta`` and ``gamma``.
    """

    def __init__(self, cure_features=None, latency_features=None, follow_up=None,
                 n_basis=12, n_bins=300, penalty_order=3, ridge=1e-6, phi_last=10.0,
                 reg_var=1e4, nu=2.0, a_delta=1e-4, b_delta=1e-4, n_iter=23000,
                 burnin=3000, target_accept=0.44, reparametrize=True, random_state=None):
        self.cure_features = cure_features
        self.latency_features = latency_features
        self.follow_up = follow_up
        self.n_basis = n_basis
        self.n_bins = n_bins
        self.penalty_order = penalty_order
        self.ridge = ridge
        self.phi_last = phi_last
        self.reg_var = reg_var
        self.nu = nu
        self.a_delta = a_delta
        self.b_delta = b_delta
        self.n_iter = n_iter
        self.burnin = burnin
        self.target_accept = target_accept
        self.reparametrize = reparametrize
        self.random_state = random_state

    def _dataset(self, X, time=None, event=None):
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        Xc, Zc = X[:, self.cure_idx_], X[:, self.latency_idx_]
        if time is None:
            return Xc, Zc
        return SurvivalDataset(time, event, Xc, Zc, self.cure_names_, self.latency_names_)

    def fit(self, X, y):
        """Sample the posterior given covariates ``X`` and survival target ``y``."""
        if hasattr(X, "columns"):
            self.feature_names_in_ = np.asarray([str(c) for c in X.columns], dtype=object)
        elif hasattr(self, "feature_names_in_"):
            del self.feature_names_in_
        X_arr = check_array(X, dtype=float)
        time, event = check_survival_target(y)
        if time.shape[0] != X_arr.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        self.n_features_in_ = X_arr.shape[1]
        names = list(self.feature_names_in_) if hasattr(self, "feature_names_in_") \
            else [f"x{j}" for j in range(self.n_features_in_)]
        self.cure_idx_ = _resolve_features(self.cure_features, names, self.n_features_in_)
        self.latency_idx_ = _resolve_features(self.latency_features, names, self.n_features_in_)
        self.cure_names_ = [names[j] for j in self.cure_idx_]
        self.latency_names_ = [names[j] for j in self.latency_idx_]
        data = self._dataset(X_arr, time, event)

        follow_up = float(time.max()) if self.follow_up is None else float(self.follow_up)
        if time.max() > follow_up:
            raise ValueError("observed times exceed follow_up")
        self.model_config_ = ModelConfig(self.n_basis, self.n_bins, self.penalty_order,
                                         self.ridge, self.phi_last)
        self.grid_, self.penalty_ = self.model_config_.build(follow_up)
        self.seed_ = (int(self.random_state) if self.random_state is not None
                      else int(np.random.SeedSequence().generate_state(1, np.uint64)[0]))
        config = ChainConfig(n_iter=self.n_iter, burnin=self.burnin, seed=self.seed_,
                             target_accept=self.target_accept,
                             reparametrize=self.reparametrize)
        hypers = PenaltyHypers(1.0, 1.0, self.nu, self.a_delta, self.b_delta)
        self.chain_ = run_chain(data, self.grid_, self.penalty_, config, hypers,
                                Priors(self.reg_var), self.phi_last)
        med = posterior_median_params(self.chain_)
        self.intercept_ = med.beta0
        self.cure_coef_ = med.beta
        self.latency_coef_ = med.gamma
        self.spline_coef_ = med.phi
        return self

    def summary(self):
        """Posterior median, 95% HPD interval and sd of every regression parameter."""
        check_is_fitted(self, "chain_")
        return summarize_parameters(self.chain_)

    def geweke(self):
        check_is_fitted(self, "chain_")
        return geweke_table(self.chain_)

    def _per_row(self, X, fn):
        check_is_fitted(self, "chain_")
        Xc, Zc = self._dataset(X)
        chain = self.chain_
        K = chain.n_basis
        b0 = chain.draws[:, K]
        B = chain.draws[:, K + 1:K + 1 + Xc.shape[1]]
        G = chain.draws[:, K + 1 + Xc.shape[1]:-2]
        return fn(Xc, Zc, b0, B, G)

    def predict_cure_probability(self, X):
        """Posterior mean of the cure probability ``exp(-theta(x))`` per row."""
        return self._per_row(
            X, lambda Xc, Zc, b0, B, G: np.exp(-np.exp(b0[None, :] + Xc @ B.T)).mean(axis=1))

    predict = predict_cure_probability

    def predict_survival_function(self, X, times):
        """Posterior mean of the population survival, shape ``(n, len(times))``."""
        check_is_fitted(self, "chain_")
        Xc, Zc = self._dataset(X)
        times = np.asarray(times, dtype=float)
        out = np.empty((Xc.shape[0], times.size))
        for i in range(Xc.shape[0]):
            c = Contrast(Xc[i], Zc[i], Xc[i], Zc[i])
            out[i] = curve_draws(self.chain_, self.grid_, "Sp", times, c).mean(axis=1)
        return out

    def score(self, X, y):
        """Mean log-likelihood per subject at the posterior medians."""
        check_is_fitted(self, "chain_")
        time, event = check_survival_target(y)
        data = self._dataset(check_array(X, dtype=float), time, event)
        return log_likelihood(posterior_median_params(self.chain_), self.grid_, data) / data.n
