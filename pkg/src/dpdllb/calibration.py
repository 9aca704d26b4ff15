"""Loss-scale calibration by information matching.

The variability matrix is the mean outer product of per-observation loss
gradients and the sensitivity matrix is the mean Hessian, both at the
empirical risk minimizer. The calibrated loss scale is
``tr(H V^-1 H^T) / tr(H)`` with ``V`` the variability and ``H`` the
sensitivity.
"""

from dataclasses import dataclass

import numpy as np

from .dpd import pointwise_gradient
from .errors import DegenerateDataError, ShapeError, SingularityError
from .models import as_points

COND_LIMIT = 1e12


@dataclass
class InformationPair:
    variability: np.ndarray
    sensitivity: np.ndarray
    at_theta: np.ndarray

    def sandwich(self):
        """``H^-1 V H^-1``, the asymptotic covariance of ``sqrt(n)`` times a bootstrap draw."""
        hinv = _inverse(self.sensitivity, "sensitivity")
        return hinv @ self.variability @ hinv


def _inverse(A, label):
    A = np.atleast_2d(A)
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > COND_LIMIT:
        raise SingularityError(f"{label} is numerically singular (condition number "
                               f"{np.linalg.cond(A):.3g})")
    return np.linalg.inv(A)


def fd_steps(theta, rel=1e-5):
    return rel * (1.0 + np.abs(theta))


def estimate_information(loss_grad, data, theta_hat):
    """Empirical variability and sensitivity matrices at ``theta_hat``.

    ``loss_grad(theta, x)`` returns per-observation loss gradients with shape
    ``(n, p)``. The sensitivity comes from central differences of their mean with step
    ``1e-5 (1 + |theta_k|)`` per coordinate.
    """
    x = as_points(data)
    theta = np.asarray(theta_hat, dtype=float)
    p = theta.size
    G = np.asarray(loss_grad(theta, x), dtype=float)
    if G.shape != (x.shape[0], p):
        raise ShapeError(f"loss_grad returned shape {G.shape}, expected {(x.shape[0], p)}")
    if x.shape[0] <= p:
        raise ShapeError(f"need n > p observations, got n={x.shape[0]} for p={p}")
    var = G.T @ G / x.shape[0]
    h = fd_steps(theta)
    sens = np.empty((p, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = h[k]
        up = np.mean(loss_grad(theta + e, x), axis=0)
        down = np.mean(loss_grad(theta - e, x), axis=0)
        sens[:, k] = (up - down) / (2.0 * h[k])
    sens = 0.5 * (sens + sens.T)
    if not (np.all(np.isfinite(var)) and np.all(np.isfinite(sens))):
        raise SingularityError("non-finite information matrices")
    _inverse(sens, "sensitivity")
    return InformationPair(var, sens, theta)


def calibrate_scale(pair):
    """``tr(H V^-1 H^T) / tr(H)`` for variability ``V`` and sensitivity ``H``."""
    vinv = _inverse(pair.variability, "variability")
    sens = np.atleast_2d(pair.sensitivity)
    tr = float(np.trace(sens))
    if abs(tr) <= 1e-12 * max(1.0, float(np.max(np.abs(sens)))):
        raise DegenerateDataError("trace(sensitivity)",
                                  "sensitivity trace is zero; the calibrated scale is undefined")
    return float(np.trace(sens @ vinv @ sens.T) / tr)


def self_information_grad(model):
    """Per-observation gradient of ``-log f``."""
    return lambda theta, x: -model.score(theta, x)


def dpd_loss_grad(model, alpha):
    """Per-observation gradient of the DPD loss (closed-form models)."""
    return lambda theta, x: pointwise_gradient(model, theta, x, alpha)


def calibrate_dpd(model, data, alpha, theta_hat=None):
    """Calibrated loss scale for the DPD posterior of a closed-form model.

    ``theta_hat`` defaults to the exact minimizer of the unweighted loss.
    Returns ``(scale, InformationPair)``.
    """
    from .bootstrap import exact_minimizer

    x = as_points(data)
    if theta_hat is None:
        theta_hat, _, _ = exact_minimizer(model, x, alpha)(np.full(x.shape[0], 1.0 / x.shape[0]))
    pair = estimate_information(dpd_loss_grad(model, alpha), x, theta_hat)
    return calibrate_scale(pair), pair
