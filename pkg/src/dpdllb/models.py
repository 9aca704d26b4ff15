"""Parametric models used by the DPD samplers.

Every model evaluates densities and scores with numpy broadcasting. A
parameter array has shape ``(*batch, p)`` and an observation array has shape
``(*batch, k)`` for scalar models or ``(*batch, k, d)`` for vector models; the
result then has shape ``(*batch, k)`` (log-density) or ``(*batch, k, p)``
(score). The two batch shapes only need to broadcast, so one data vector of
length ``n`` can be evaluated against ``B`` parameter rows at once.

Positive parameters (scales, rates) are exposed on their natural scale.
Optimizers work on ``log`` of those components; see :func:`to_unconstrained`.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .errors import ConstraintError, DegenerateDataError, ShapeError

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
MAD_SCALE = 1.4826


@dataclass
class Dataset:
    """Observations ``points`` (``(n,)`` or ``(n, d)``) plus optional outlier flags.

    The flags come from the simulators and are never read by a sampler.
    """

    points: np.ndarray
    is_outlier: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim not in (1, 2):
            raise ShapeError(f"points must be 1-D or 2-D, got shape {self.points.shape}")
        if self.points.shape[0] < 1:
            raise ShapeError("a dataset needs at least one observation")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return 1 if self.points.ndim == 1 else self.points.shape[1]


def as_points(data):
    """Return the observation array of a :class:`Dataset` or array-like."""
    if isinstance(data, Dataset):
        return data.points
    return np.asarray(data, dtype=float)


def to_unconstrained(theta, positive):
    phi = np.array(theta, dtype=float, copy=True)
    phi[..., positive] = np.log(phi[..., positive])
    return phi


def from_unconstrained(phi, positive):
    theta = np.array(phi, dtype=float, copy=True)
    theta[..., positive] = np.exp(theta[..., positive])
    return theta


class Model:
    """Capability bundle for a parametric family ``f(x | theta)``.

    Subclasses implement ``logpdf_and_score`` (unchecked, broadcasting),
    ``sample`` and ``init``. Models with a tractable DPD integral set
    ``has_closed_form`` and implement ``integral_term`` and
    ``integral_term_grad``.
    """

    name = "model"
    names = ()
    positive = ()
    obs_dim = 1
    has_closed_form = False

    @property
    def dim(self):
        return len(self.names)

    @property
    def positive_mask(self):
        return np.asarray(self.positive, dtype=bool)

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.dim,):
            raise ConstraintError(
                f"{self.name}: expected {self.dim} parameters {self.names}, got shape {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise ConstraintError(f"{self.name}: non-finite parameter {theta}")
        pos = self.positive_mask
        if np.any(theta[..., pos] <= 0):
            bad = [nm for nm, p in zip(self.names, pos) if p]
            raise ConstraintError(f"{self.name}: parameters {bad} must be strictly positive, got {theta}")
        return theta

    def _points_axis(self, x):
        """Add a point axis to a single observation; report whether one was added."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == (0 if self.obs_dim == 1 else 1)
        if single:
            x = x[None] if self.obs_dim == 1 else x[None, :]
        return x, single

    def log_density(self, theta, x):
        theta = self.check(theta)
        x, single = self._points_axis(x)
        logf, _ = self.logpdf_and_score(theta, x)
        return logf[..., 0] if single else logf

    def score(self, theta, x):
        theta = self.check(theta)
        x, single = self._points_axis(x)
        _, u = self.logpdf_and_score(theta, x)
        return u[..., 0, :] if single else u

    def sample(self, theta, m, rng):
        raise NotImplementedError

    def sample_batch(self, theta, m, rngs):
        """Draw ``m`` points for each row of ``theta`` from its own generator."""
        return np.stack([self.sample(th, m, r) for th, r in zip(theta, rngs)])

    def init(self, data):
        raise NotImplementedError

    def mle(self, data):
        raise NotImplementedError

    def integral_term(self, theta, alpha):
        raise NotImplementedError

    def integral_term_grad(self, theta, alpha):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Normal(Model):
    """Univariate normal with mean ``mu`` and standard deviation ``sigma``."""

    name = "normal"
    names = ("mu", "sigma")
    positive = (False, True)
    has_closed_form = True

    def logpdf_and_score(self, theta, x):
        mu = theta[..., 0, None]
        sigma = theta[..., 1, None]
        z = (x - mu) / sigma
        z2 = z * z
        logf = -0.5 * z2 - (np.log(sigma) + HALF_LOG_2PI)
        u = np.empty(z.shape + (2,))
        np.divide(z, sigma, out=u[..., 0])
        z2 -= 1.0
        np.divide(z2, sigma, out=u[..., 1])
        return logf, u

    def sample(self, theta, m, rng):
        return theta[0] + theta[1] * rng.standard_normal(m)

    def init(self, data):
        x = as_points(data)
        if x.size < 2:
            raise DegenerateDataError("n", "robust initialization needs at least two points")
        med = np.median(x)
        mad = np.median(np.abs(x - med))
        if mad <= 0:
            raise DegenerateDataError("MAD")
        return np.array([med, MAD_SCALE * mad])

    def mle(self, data):
        x = as_points(data)
        return np.array([x.mean(), x.std()])

    def _integral_const(self, alpha):
        return (2.0 * np.pi) ** (-alpha / 2.0) * (1.0 + alpha) ** (-1.5)

    def integral_term(self, theta, alpha):
        # (1 + alpha)^-1 * integral of f^(1 + alpha)
        theta = np.asarray(theta, dtype=float)
        return self._integral_const(alpha) * theta[..., 1] ** (-alpha)

    def integral_term_grad(self, theta, alpha):
        theta = np.asarray(theta, dtype=float)
        sigma = theta[..., 1]
        g = np.zeros_like(theta)
        g[..., 1] = -alpha * self._integral_const(alpha) * sigma ** (-alpha - 1.0)
        return g


class IsotropicNormal(Model):
    """``N_d(mu, I)``: unknown mean, identity covariance."""

    name = "mvn"
    positive = ()
    has_closed_form = True

    def __init__(self, dim):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.obs_dim = int(dim)
        self.names = tuple(f"mu{k + 1}" for k in range(self.obs_dim))
        self.positive = (False,) * self.obs_dim

    def logpdf_and_score(self, theta, x):
        mu = theta[..., None, :]
        diff = x - mu
        logf = -0.5 * np.sum(diff * diff, axis=-1) - self.obs_dim * HALF_LOG_2PI
        return logf, diff

    def sample(self, theta, m, rng):
        return theta + rng.standard_normal((m, self.obs_dim))

    def init(self, data):
        x = as_points(data).reshape(-1, self.obs_dim)
        if x.shape[0] < 2:
            raise DegenerateDataError("n", "robust initialization needs at least two points")
        return np.median(x, axis=0)

    def mle(self, data):
        return as_points(data).reshape(-1, self.obs_dim).mean(axis=0)

    def integral_term(self, theta, alpha):
        d = self.obs_dim
        c = (2.0 * np.pi) ** (-d * alpha / 2.0) * (1.0 + alpha) ** (-d / 2.0) / (1.0 + alpha)
        theta = np.asarray(theta, dtype=float)
        return np.full(theta.shape[:-1], c)

    def integral_term_grad(self, theta, alpha):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def __repr__(self):
        return f"IsotropicNormal({self.obs_dim})"


class Poisson(Model):
    """Poisson with rate ``lam``; no closed-form DPD integral."""

    name = "poisson"
    names = ("lam",)
    positive = (True,)

    def logpdf_and_score(self, theta, x):
        lam = theta[..., 0, None]
        ok = (x >= 0) & (x == np.floor(x))
        xs = np.where(ok, x, 0.0)
        with np.errstate(invalid="ignore"):
            logf = np.where(ok, xs * np.log(lam) - lam - gammaln(xs + 1.0), -np.inf)
            u = np.where(ok, xs / lam - 1.0, 0.0)
        return logf, u[..., None]

    def sample(self, theta, m, rng):
        return rng.poisson(theta[0], m).astype(float)

    def init(self, data):
        x = as_points(data)
        if x.size < 2:
            raise DegenerateDataError("n", "robust initialization needs at least two points")
        med = float(np.median(x))
        if med <= 0:
            raise DegenerateDataError("median", "median of the counts is zero; rate init undefined")
        return np.array([med])

    def mle(self, data):
        return np.array([as_points(data).mean()])


class InverseGaussian(Model):
    """Inverse Gaussian ``IG(mu, lam)`` with mean ``mu`` and shape ``lam``."""

    name = "invgauss"
    names = ("mu", "lam")
    positive = (True, True)

    def logpdf_and_score(self, theta, x):
        mu = theta[..., 0, None]
        lam = theta[..., 1, None]
        ok = x > 0
        xs = np.where(ok, x, 1.0)
        r = xs - mu
        logf = 0.5 * (np.log(lam) - 3.0 * np.log(xs)) - HALF_LOG_2PI - lam * r * r / (2.0 * mu * mu * xs)
        logf = np.where(ok, logf, -np.inf)
        d_mu = np.where(ok, lam * r / mu**3, 0.0)
        d_lam = np.where(ok, 0.5 / lam - r * r / (2.0 * mu * mu * xs), 0.0)
        return logf, np.stack(np.broadcast_arrays(d_mu, d_lam), axis=-1)

    def sample(self, theta, m, rng):
        return rng.wald(theta[0], theta[1], m)

    def init(self, data):
        return self.mle(data)

    def mle(self, data):
        x = as_points(data)
        if x.size < 2:
            raise DegenerateDataError("n", "the IG estimator needs at least two points")
        if np.any(x <= 0):
            raise DegenerateDataError("support", "inverse Gaussian data must be positive")
        mu = x.mean()
        denom = np.sum(1.0 / x - 1.0 / mu)
        # sum(1/x) >= n/mean with equality iff all x equal
        if denom <= 1e-12 * np.sum(1.0 / x):
            raise DegenerateDataError("lambda", "sum(1/x - 1/mean) is zero; shape estimate undefined")
        return np.array([mu, x.size / denom])


class Gompertz(Model):
    """Gompertz with density ``lam * exp(omega x - lam/omega (exp(omega x) - 1))``, ``x >= 0``."""

    name = "gompertz"
    names = ("omega", "lam")
    positive = (True, True)

    bracket = (1e-6, 20.0)
    xtol = 1e-10

    def logpdf_and_score(self, theta, x):
        omega = theta[..., 0, None]
        lam = theta[..., 1, None]
        ok = x >= 0
        xs = np.where(ok, x, 0.0)
        with np.errstate(over="ignore", invalid="ignore"):
            em1 = np.expm1(omega * xs)
            logf = np.log(lam) + omega * xs - lam / omega * em1
            d_omega = xs - lam * (xs * (em1 + 1.0) / omega - em1 / omega**2)
            d_lam = 1.0 / lam - em1 / omega
        logf = np.where(ok, logf, -np.inf)
        d_omega = np.where(ok, d_omega, 0.0)
        d_lam = np.where(ok, d_lam, 0.0)
        return logf, np.stack(np.broadcast_arrays(d_omega, d_lam), axis=-1)

    def sample(self, theta, m, rng):
        omega, lam = theta
        u = 1.0 - rng.random(m)
        return np.log1p(-omega / lam * np.log(u)) / omega

    def init(self, data):
        return self.mle(data)

    def score_equation(self, omega, x):
        """Profile score in ``omega`` after eliminating ``lam``; its root is the MLE."""
        n = x.size
        one_minus = -np.expm1(omega * x)
        return x.sum() + n / one_minus.sum() * np.sum(one_minus / omega + x * np.exp(omega * x))

    def mle(self, data):
        x = as_points(data)
        if x.size < 2:
            raise DegenerateDataError("n", "the Gompertz estimator needs at least two points")
        if np.any(x < 0):
            raise DegenerateDataError("support", "Gompertz data must be non-negative")
        if np.all(x == x[0]):
            raise DegenerateDataError("omega", "all observations equal")
        lo, hi = self.bracket
        g_lo, g_hi = self.score_equation(lo, x), self.score_equation(hi, x)
        if not (np.isfinite(g_lo) and np.isfinite(g_hi)) or np.sign(g_lo) == np.sign(g_hi):
            raise DegenerateDataError("omega", f"score equation has no sign change on [{lo}, {hi}]")
        omega = optimize.bisect(self.score_equation, lo, hi, args=(x,), xtol=self.xtol)
        lam = -x.size * omega / np.sum(-np.expm1(omega * x))
        return np.array([omega, lam])


MODELS = {
    "normal": Normal,
    "poisson": Poisson,
    "invgauss": InverseGaussian,
    "gompertz": Gompertz,
    "mvn": IsotropicNormal,
}


def get_model(name, dim=None):
    """Instantiate a registered model; ``dim`` is required for ``mvn``."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    if cls is IsotropicNormal:
        if dim is None:
            raise ValueError("the mvn model needs a dimension")
        return cls(dim)
    return cls()
