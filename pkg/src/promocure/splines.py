"""Cubic B-spline basis on equidistant knots and difference penalties."""
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3


@dataclass(frozen=True)
class KnotGrid:
    """Equidistant knot sequence carrying ``num_basis`` cubic B-splines.

    The ``num_basis - 3`` equal intervals of ``[lower, upper]`` are closed by
    boundary knots of multiplicity four, so ``b_1(lower) = b_K(upper) = 1``.
    Fixing the last coefficient therefore pins the log-hazard at ``upper``.
    """

    lower: float
    upper: float
    num_basis: int
    knots: np.ndarray

    @property
    def spacing(self):
        return (self.upper - self.lower) / (self.num_basis - DEGREE)


@dataclass(frozen=True)
class PenaltyMatrix:
    order: int
    D: np.ndarray
    P: np.ndarray
    ridge: float


def build_knot_grid(lower, upper, num_basis):
    """Return the knot grid for ``num_basis`` cubic B-splines on ``[lower, upper]``."""
    lower, upper = float(lower), float(upper)
    if not upper > lower:
        raise ValueError(f"empty interval [{lower}, {upper}]")
    num_basis = int(num_basis)
    if num_basis < DEGREE + 1:
        raise ValueError(f"num_basis must be >= {DEGREE + 1}, got {num_basis}")
    n_intervals = num_basis - DEGREE
    dx = (upper - lower) / n_intervals
    inner = lower + dx * np.arange(n_intervals + 1)
    inner[-1] = upper
    knots = np.concatenate([[lower] * DEGREE, inner, [upper] * DEGREE])
    return KnotGrid(lower, upper, num_basis, knots)


def eval_basis(grid, t):
    """Evaluate all basis functions at ``t``.

    Parameters
    ----------
    grid : KnotGrid
    t : float or array-like, values in ``[grid.lower, grid.upper]``

    Returns
    -------
    ndarray
        Shape ``(K,)`` for scalar ``t``, else ``(len(t), K)``.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < grid.lower) or np.any(t > grid.upper) or np.any(np.isnan(t)):
        raise ValueError(
            f"evaluation point outside [{grid.lower}, {grid.upper}]"
        )
    B = BSpline.design_matrix(t, grid.knots, DEGREE).toarray()
    return B[0] if scalar else B


def difference_matrix(num_basis, order):
    """``(K - r) x K`` matrix of r-th order finite differences.

    Rows follow the ``(1, -3, 3, -1)`` sign convention for ``order=3``.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    if order >= num_basis:
        raise ValueError(f"order {order} >= num_basis {num_basis}")
    return (-1) ** order * np.diff(np.eye(num_basis), n=order, axis=0)


def penalty_from_difference(D, ridge=1e-6):
    """Return ``P = D'D + ridge * I`` wrapped as a :class:`PenaltyMatrix`."""
    if not ridge > 0:
        raise ValueError(f"ridge must be positive, got {ridge}")
    D = np.asarray(D, dtype=float)
    P = D.T @ D + ridge * np.eye(D.shape[1])
    # D'D has integer entries when D comes from difference_matrix
    P = 0.5 * (P + P.T)
    order = _infer_order(D)
    return PenaltyMatrix(order=order, D=D, P=P, ridge=float(ridge))


def _infer_order(D):
    return D.shape[1] - D.shape[0]


def penalty_matrix(num_basis, order=3, ridge=1e-6):
    return penalty_from_difference(difference_matrix(num_basis, order), ridge)
