"""Density power divergence loss, weighted objective and its gradients.

The pointwise loss for robustness parameter ``alpha`` is

    q(theta, x) = -f(x|theta)^alpha / alpha + (1 + alpha)^-1 * int f^(1 + alpha)

and the bootstrap objective is ``L_w(theta) = sum_i w_i q(theta, x_i)``. Its
gradient is ``-sum_i w_i f(x_i)^alpha u(x_i) + E_theta[f(X)^alpha u(X)]``
where ``u`` is the score. The expectation is exact for closed-form models and
replaced by an average over ``m`` fresh model draws otherwise, which keeps the
estimate unbiased.

``alpha = 0`` is accepted as the likelihood limit: the pointwise loss becomes
``-log f(x|theta)`` and the gradient formulas hold unchanged.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UnsupportedModelError
from .models import as_points


@dataclass(frozen=True)
class DpdConfig:
    alpha: float = 0.5
    m: int = 10

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"m must be a positive integer, got {self.m}")


@dataclass
class GradientEstimate:
    value: np.ndarray
    pseudo_samples_used: int = 0
    is_stochastic: bool = False
    density_evaluations: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)


def powered(logf, alpha):
    """``f^alpha`` from ``log f``; points outside the support give 0."""
    if alpha > 0:
        return np.exp(alpha * logf)
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(logf), np.exp(alpha * logf), 0.0)


def _mask_score(fa, u):
    # a score may overflow where the density underflows; f^alpha * u is 0 there
    if np.all(np.isfinite(u)):
        return u
    return np.where((fa[..., None] == 0) & ~np.isfinite(u), 0.0, u)


def powered_score(model, theta, x, alpha):
    """Return ``(f^alpha, u)`` from one joint density/score evaluation."""
    logf, u = model.logpdf_and_score(theta, x)
    fa = powered(logf, alpha)
    return fa, _mask_score(fa, u)


def weighted_score_sum(a, u):
    """``sum_k a_k u_k`` over the point axis, batched: ``(..., k) x (..., k, p) -> (..., p)``."""
    return np.matmul(a[..., None, :], u)[..., 0, :]


def _check_weights(weights, n):
    weights = np.asarray(weights, dtype=float)
    if weights.shape[-1] != n:
        raise ShapeError(f"{weights.shape[-1]} weights for {n} observations")
    return weights


def _mc_draws(model, theta, m, rng):
    if np.ndim(theta) == 1:
        return model.sample(theta, m, rng)
    return model.sample_batch(theta, m, rng)


def integral_term(model, theta, cfg, rng=None, method="auto"):
    """``(1 + alpha)^-1 * int f^(1 + alpha)``, closed form or Monte Carlo.

    ``method`` is ``"auto"`` (closed form when the model has one),
    ``"closed"`` or ``"mc"``. The Monte Carlo estimate averages ``f(z)^alpha``
    over ``cfg.m`` draws ``z ~ F_theta`` and needs ``rng``.
    """
    theta = model.check(theta)
    if method == "auto":
        method = "closed" if model.has_closed_form else "mc"
    if method == "closed":
        if not model.has_closed_form:
            raise UnsupportedModelError(f"{model.name} has no closed-form integral term")
        return float(model.integral_term(theta, cfg.alpha))
    if rng is None:
        raise ValueError("a Monte Carlo integral term needs an rng")
    z = model.sample(theta, cfg.m, rng)
    logf, _ = model.logpdf_and_score(theta, z)
    return float(np.mean(powered(logf, cfg.alpha)) / (1.0 + cfg.alpha))


def pointwise_loss(model, theta, x, cfg, rng=None, method="auto"):
    """DPD loss ``q(theta, x)`` for one or many observations ``x``."""
    theta = model.check(theta)
    x, single = model._points_axis(x)
    logf, _ = model.logpdf_and_score(theta, x)
    if cfg.alpha == 0:
        out = -logf
    else:
        out = -powered(logf, cfg.alpha) / cfg.alpha + integral_term(model, theta, cfg, rng, method)
    return float(out[0]) if single else out


def weighted_objective(model, theta, data, weights, cfg, rng=None, method="auto"):
    """``L_w(theta) = sum_i w_i q(theta, x_i)``."""
    x = as_points(data)
    weights = _check_weights(weights, x.shape[0])
    theta = model.check(theta)
    logf, _ = model.logpdf_and_score(theta, x)
    if cfg.alpha == 0:
        return float(np.sum(weights * -logf))
    data_part = -np.sum(weights * powered(logf, cfg.alpha)) / cfg.alpha
    return float(data_part + weights.sum() * integral_term(model, theta, cfg, rng, method))


def data_term(model, theta, x, weights, alpha):
    """``sum_i w_i f(x_i)^alpha u(x_i)``, batched over leading axes of ``theta``/``weights``."""
    fa, u = powered_score(model, theta, x, alpha)
    return weighted_score_sum(weights * fa, u)


def batch_analytic_gradient(model, theta, x, weights, alpha):
    grad = -data_term(model, theta, x, weights, alpha)
    return grad + weights.sum(axis=-1)[..., None] * model.integral_term_grad(theta, alpha)


def batch_stochastic_gradient(model, theta, x, weights, alpha, m, rng):
    """Stochastic gradient for one ``theta`` (``rng`` a Generator) or a batch
    of rows (``rng`` a sequence of Generators, one per row)."""
    grad = -data_term(model, theta, x, weights, alpha)
    z = _mc_draws(model, theta, m, rng)
    fa, u = powered_score(model, theta, z, alpha)
    return grad + weights.sum(axis=-1)[..., None] * weighted_score_sum(fa, u) / m


def analytic_gradient(model, theta, data, weights, cfg):
    """Exact ``grad L_w`` for models with a closed-form expectation term."""
    if not model.has_closed_form:
        raise UnsupportedModelError(
            f"{model.name} has no closed-form expectation term; use stochastic_gradient"
        )
    x = as_points(data)
    weights = _check_weights(weights, x.shape[0])
    theta = model.check(theta)
    value = batch_analytic_gradient(model, theta, x, weights, cfg.alpha)
    return GradientEstimate(value, 0, False, x.shape[0])


def stochastic_gradient(model, theta, data, weights, cfg, rng):
    """Unbiased estimate of ``grad L_w`` using ``cfg.m`` fresh draws from ``F_theta``."""
    x = as_points(data)
    weights = _check_weights(weights, x.shape[0])
    theta = model.check(theta)
    value = batch_stochastic_gradient(model, theta, x, weights, cfg.alpha, cfg.m, rng)
    return GradientEstimate(value, cfg.m, True, x.shape[0] + cfg.m)


def pointwise_gradient(model, theta, data, alpha):
    """Per-observation ``grad q(theta, x_i)`` (closed-form models), shape ``(n, p)``."""
    if not model.has_closed_form:
        raise UnsupportedModelError(f"{model.name} has no closed-form expectation term")
    x = as_points(data)
    theta = model.check(theta)
    fa, u = powered_score(model, theta, x, alpha)
    return -fa[:, None] * u + model.integral_term_grad(theta, alpha)
