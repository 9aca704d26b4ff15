"""Plain SGD with decaying learning rates, run on an unconstrained scale.

Positive parameters are updated as ``log theta`` so iterates never leave the
domain and no projection is needed. The minimizer accepts a single parameter
vector ``(p,)`` or a batch ``(B, p)``; a batch is advanced in lock-step, which
is how the bootstrap samplers run many replicates per numpy call.
"""

from dataclasses import dataclass

import numpy as np

from .dpd import GradientEstimate
from .errors import ConfigError, ConstraintError, DivergenceError
from .models import from_unconstrained, to_unconstrained

SCHEDULE_KINDS = ("inverse-time", "step-decay")


@dataclass(frozen=True)
class Schedule:
    """Learning-rate sequence ``eta_t``, ``t = 0, 1, ...``.

    ``inverse-time``: ``eta_init / (1 + t / tau)`` with ``decay_param = tau``.

    ``step-decay``: piecewise constant, ``eta_init / (1 + k (1/factor - 1))``
    on the ``k``-th block of ``period`` steps, with
    ``decay_param = (factor, period)``. The first drop multiplies the rate by
    ``factor``; later drops follow the same harmonic law so that
    ``sum eta_t`` still diverges.
    """

    kind: str
    eta_init: float
    decay_param: object

    def rates(self, T):
        t = np.arange(T, dtype=float)
        if self.kind == "inverse-time":
            return self.eta_init / (1.0 + t / self.decay_param)
        factor, period = self.decay_param
        k = np.floor(t / period)
        return self.eta_init / (1.0 + k * (1.0 / factor - 1.0))

    def rate(self, t):
        return float(self.rates(int(t) + 1)[-1])

    def mean_rate(self, T):
        """``T^-1 sum_t eta_t``, the fixed step used by the gradient-descent baselines."""
        return float(self.rates(T).mean())


def make_schedule(kind="inverse-time", eta_init=0.1, decay_param=None, T=500):
    """Build a validated :class:`Schedule`.

    ``decay_param`` defaults to ``tau = T / 5`` for inverse-time and to
    ``(0.5, T // 5)`` for step-decay.
    """
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; choose from {SCHEDULE_KINDS}")
    if not (np.isfinite(eta_init) and eta_init > 0):
        raise ConfigError(f"eta_init must be positive, got {eta_init}")
    if kind == "inverse-time":
        tau = max(T / 5.0, 1.0) if decay_param is None else decay_param
        if not (np.isfinite(tau) and tau > 0):
            raise ConfigError(f"tau must be positive, got {tau}")
        return Schedule(kind, float(eta_init), float(tau))
    if decay_param is None:
        decay_param = (0.5, max(T // 5, 1))
    factor, period = decay_param
    if not (0 < factor < 1):
        raise ConfigError(f"step-decay factor must lie in (0, 1), got {factor}")
    if int(period) != period or period < 1:
        raise ConfigError(f"step-decay period must be a positive integer, got {period}")
    return Schedule(kind, float(eta_init), (float(factor), int(period)))


def rate_sums(schedule, T):
    """Return ``(sum eta_t, sum eta_t^2 / sum eta_t)`` over the first ``T`` steps."""
    r = schedule.rates(T)
    s = r.sum()
    return float(s), float((r * r).sum() / s)


@dataclass
class SgdTrace:
    final_theta: np.ndarray
    iterations: int
    final_grad_norm: np.ndarray
    grad_norms: np.ndarray
    path: np.ndarray = None
    failed: np.ndarray = None


def sgd_minimize(
    grad_fn,
    theta_init,
    schedule,
    T,
    rng=None,
    positive=None,
    clip=None,
    record_every=0,
    on_nonfinite="raise",
):
    """Run exactly ``T`` updates ``phi <- phi - eta_t * g`` and return an :class:`SgdTrace`.

    ``grad_fn(theta, rng)`` returns the gradient with respect to the natural
    parameters (an array or :class:`GradientEstimate`); it is converted to the
    unconstrained scale with the chain rule. ``clip`` caps the Euclidean norm
    of the unconstrained gradient per row. With ``on_nonfinite="freeze"`` a
    batch row whose gradient turns non-finite stops moving and is flagged in
    ``trace.failed`` instead of raising.
    """
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if on_nonfinite not in ("raise", "freeze"):
        raise ConfigError(f"on_nonfinite must be 'raise' or 'freeze', got {on_nonfinite!r}")
    theta = np.array(theta_init, dtype=float)
    p = theta.shape[-1]
    positive = np.zeros(p, dtype=bool) if positive is None else np.asarray(positive, dtype=bool)
    if not np.all(np.isfinite(theta)) or np.any(theta[..., positive] <= 0):
        raise ConstraintError(f"invalid initial parameter {theta_init}")
    batch = theta.shape[:-1]
    phi = to_unconstrained(theta, positive)
    failed = np.zeros(batch, dtype=bool)
    rates = schedule.rates(T)
    grad_norms = np.empty((T,) + batch)
    path = [] if record_every else None
    g = np.zeros_like(theta)
    for t in range(T):
        theta = from_unconstrained(phi, positive)
        with np.errstate(all="ignore"):
            g = grad_fn(theta, rng)
            if isinstance(g, GradientEstimate):
                g = g.value
            g_phi = np.array(g, dtype=float)
            g_phi[..., positive] *= theta[..., positive]
        bad = ~np.all(np.isfinite(g_phi), axis=-1)
        if np.any(bad):
            if on_nonfinite == "raise":
                rows = np.flatnonzero(bad) if batch else None
                raise DivergenceError(t + 1, rows)
            failed |= bad
        g_phi = np.where(failed[..., None], 0.0, g_phi)
        if clip is not None:
            norm = np.linalg.norm(g_phi, axis=-1, keepdims=True)
            g_phi = g_phi * np.minimum(1.0, clip / np.maximum(norm, 1e-300))
        grad_norms[t] = np.linalg.norm(np.where(failed[..., None], 0.0, g), axis=-1)
        phi = phi - rates[t] * g_phi
        with np.errstate(over="ignore"):
            bad_phi = ~np.all(np.isfinite(from_unconstrained(phi, positive)), axis=-1)
        if np.any(bad_phi & ~failed):
            if on_nonfinite == "raise":
                raise DivergenceError(t + 1, np.flatnonzero(bad_phi) if batch else None,
                                      f"iterate overflowed at iteration {t + 1}")
            failed |= bad_phi
            phi = np.where(bad_phi[..., None], to_unconstrained(theta, positive), phi)
        if record_every and (t + 1) % record_every == 0:
            path.append(from_unconstrained(phi, positive))
    final = from_unconstrained(phi, positive)
    if not failed.any() and np.any(final[..., positive] <= 0):
        raise ConstraintError("positive parameter underflowed to zero")
    return SgdTrace(
        final_theta=final,
        iterations=int(T),
        final_grad_norm=grad_norms[-1],
        grad_norms=grad_norms,
        path=np.array(path) if record_every else None,
        failed=failed,
    )
