"""Posterior mode at fixed ``delta`` and the Hessian-based change of coordinates."""
import logging
from dataclasses import dataclass

import numpy as np

from .model import (
    DataCache,
    ModelParams,
    PenaltyHypers,
    Priors,
    log_posterior,
    log_posterior_grad,
)

logger = logging.getLogger(__name__)


class ModeNotConverged(RuntimeError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass
class ModeResult:
    params: ModelParams
    tau: float
    delta: float
    neg_hessian: np.ndarray
    grad: np.ndarray
    log_post: float
    n_iter: int


def initial_params(data, phi_last, n_basis):
    """Constant-hazard start: free ``phi`` at ``log(events / exposure)``."""
    rate = max(data.events.sum(), 1.0) / data.times.sum()
    phi = np.full(n_basis, np.log(rate))
    phi[-1] = phi_last
    return ModelParams(phi, 0.0, np.zeros(data.p), np.zeros(data.q))


def _unpack(v, template):
    K1 = template.phi.size - 1
    p, q = template.beta.size, template.gamma.size
    phi = np.concatenate([v[:K1], template.phi[-1:]])
    params = ModelParams(phi, v[K1], v[K1 + 1:K1 + 1 + p], v[K1 + 1 + p:K1 + 1 + p + q])
    # line-search trials may push log tau past the float range; the objective rejects them
    with np.errstate(over="ignore"):
        return params, float(np.exp(v[-1]))


def _pack(params, tau):
    return np.concatenate([params.phi[:-1], [params.beta0], params.beta,
                           params.gamma, [np.log(tau)]])


class _Objective:
    """Log-posterior at fixed ``delta`` over ``(free phi, beta0, beta, gamma, log tau)``."""

    def __init__(self, data, grid, penalty, hypers, priors, template):
        self.data, self.grid, self.penalty = data, grid, penalty
        self.hypers, self.priors = hypers, priors
        self.template = template
        self.cache = DataCache(data, grid)

    def value(self, v):
        params, tau = _unpack(v, self.template)
        h = PenaltyHypers(tau, self.hypers.delta, self.hypers.nu,
                          self.hypers.a_delta, self.hypers.b_delta)
        try:
            # overshooting line-search trials may overflow; they score -inf
            with np.errstate(over="ignore", invalid="ignore"):
                return log_posterior(params, h, self.penalty, self.data, self.grid,
                                     self.priors, self.cache)
        except FloatingPointError:
            return -np.inf

    def grad(self, v):
        params, tau = _unpack(v, self.template)
        h = PenaltyHypers(tau, self.hypers.delta, self.hypers.nu,
                          self.hypers.a_delta, self.hypers.b_delta)
        g = log_posterior_grad(params, h, self.penalty, self.cache, self.priors)
        K, nu = params.phi.size, h.nu
        quad = params.phi @ self.penalty.P @ params.phi
        g_logtau = 0.5 * K + 0.5 * nu - 1.0 - 0.5 * tau * (quad + nu * h.delta)
        return np.append(g, g_logtau)

    def hessian(self, v, step=1e-5):
        d = v.size
        H = np.empty((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = step * max(1.0, abs(v[i]))
            H[:, i] = (self.grad(v + e) - self.grad(v - e)) / (2 * e[i])
        return 0.5 * (H + H.T)


def posterior_mode(data, grid, penalty, hypers=PenaltyHypers(), priors=Priors(),
                   phi_last=10.0, init=None, tol=1e-5, max_iter=200):
    """Maximise the log-posterior over everything but ``delta``.

    Damped Newton ascent: analytic gradient, finite-difference Hessian, a
    ridge added until the Newton matrix is negative definite, and step
    halving until the objective increases.

    Returns
    -------
    ModeResult
        ``neg_hessian`` is ordered ``(free phi, beta0, beta, gamma, log tau)``.

    Raises
    ------
    ModeNotConverged
        Carries the best iterate in ``.best``.
    """
    template = init if init is not None else initial_params(data, phi_last, grid.K)
    obj = _Objective(data, grid, penalty, hypers, priors, template)
    v = _pack(template, hypers.tau)
    f = obj.value(v)
    if not np.isfinite(f):
        raise ValueError("log-posterior is not finite at the starting point")
    g = obj.grad(v)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < tol:
            break
        H = obj.hessian(v)
        step = _newton_step(H, g)
        t = 1.0
        while True:
            v_new = v + t * step
            f_new = obj.value(v_new)
            if np.isfinite(f_new) and f_new >= f - 1e-10 * abs(f):
                break
            t *= 0.5
            if t < 1e-10:
                # Newton direction failed; fall back on gradient ascent
                step = g / max(1.0, np.linalg.norm(g))
                t = 1.0
                v_new = v + step
                f_new = obj.value(v_new)
                while not (np.isfinite(f_new) and f_new > f) and t > 1e-12:
                    t *= 0.5
                    v_new = v + t * step
                    f_new = obj.value(v_new)
                break
        v, f = v_new, f_new
        g = obj.grad(v)
    H = obj.hessian(v)
    params, tau = _unpack(v, template)
    result = ModeResult(params, tau, hypers.delta, -H, g, f, it)
    if np.max(np.abs(g)) >= tol:
        raise ModeNotConverged(
            f"mode search stopped after {it} iterations, |grad| = {np.max(np.abs(g)):.3g}",
            result)
    return result


def _newton_step(H, g):
    A = -H
    lam = 0.0
    scale = max(1e-8, np.max(np.abs(np.diag(A))))
    for _ in range(60):
        try:
            L = np.linalg.cholesky(A + lam * np.eye(A.shape[0]))
            return np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            lam = max(2 * lam, 1e-8 * scale)
    return g / max(1.0, np.linalg.norm(g))


@dataclass(frozen=True)
class LinearTransform:
    """Coordinates ``u`` with ``v = center + directions @ u``.

    Columns of ``directions`` are the proposal directions.
    """

    directions: np.ndarray
    inverse: np.ndarray
    fallback: bool = False

    def to_original(self, u):
        return self.directions @ u

    def to_whitened(self, v):
        return self.inverse @ v


def reparametrize_from_hessian(H, max_ridge=1e6):
    """Whitening transform from a precision (negative Hessian) matrix.

    With ``H = L L'`` the directions are the columns of ``L^{-T}``, so the
    quadratic form ``v' H v`` becomes ``u'u``. A growing ridge is tried when
    ``H`` is not positive definite; past ``max_ridge`` the identity is
    returned with ``fallback=True``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    if not np.allclose(H, H.T, rtol=1e-8, atol=1e-10 * max(1.0, np.abs(H).max())):
        raise ValueError("H must be symmetric")
    d = H.shape[0]
    ridge = 0.0
    base = max(1e-12, np.abs(np.diag(H)).max()) * 1e-10
    while ridge <= max_ridge:
        try:
            L = np.linalg.cholesky(H + ridge * np.eye(d))
            break
        except np.linalg.LinAlgError:
            ridge = base if ridge == 0 else ridge * 10
    else:
        logger.warning("Hessian not positive definite; using identity directions")
        return LinearTransform(np.eye(d), np.eye(d), fallback=True)
    A = np.linalg.solve(L.T, np.eye(d))
    return LinearTransform(A, L.T.copy(), fallback=False)
