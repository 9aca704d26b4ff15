"""DPD loss and LLB-SGD for generalized linear models.

Each observation ``(y_i, x_i)`` has its own conditional law ``F_i`` and hence
its own expectation term. The bootstrap weight ``w_i`` multiplies the whole
per-observation gradient, data part and expectation part together.

Two families ship: ``poisson-log`` (``theta = beta``) and
``normal-identity`` (``theta = (beta, sigma)``). Design matrices always carry
the intercept as their first column.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .bootstrap import DEFAULT_CHUNK, batched_llb
from .dpd import DpdConfig, GradientEstimate
from .errors import ConfigError, ConstraintError, InitializationError, ShapeError
from .models import HALF_LOG_2PI

TAIL_MASS = 1e-13


@dataclass
class GlmDataset:
    """Responses ``y`` (n,) and design ``X`` (n, P) with the intercept column first."""

    y: np.ndarray
    X: np.ndarray
    is_outlier: np.ndarray = None
    beta_true: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.y.ndim != 1:
            raise ShapeError(f"responses must be 1-D, got shape {self.y.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise ShapeError(f"{self.X.shape[0]} design rows for {self.y.shape[0]} responses")
        if self.y.size < 1:
            raise ShapeError("a GLM dataset needs at least one observation")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("GLM dataset contains non-finite entries")

    @classmethod
    def from_covariates(cls, y, Z, **kw):
        """Build from raw covariates ``Z`` (n, p) by prepending an intercept column."""
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        return cls(y, np.column_stack([np.ones(Z.shape[0]), Z]), **kw)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def n_coef(self):
        return self.X.shape[1]


def poisson_support_bound(lam, tail=TAIL_MASS):
    """Smallest ``K`` with ``P(Y >= K) < tail`` for every rate in ``lam``."""
    lam_max = float(np.max(lam))
    return int(stats.poisson.isf(tail, lam_max)) + 2


class GlmFamily:
    """Shared plumbing for the shipped families.

    ``logpdf_and_score(theta, y, X)`` broadcasts ``theta`` (*b, q) against
    responses ``y`` (*b, n, k): ``k`` candidate responses per observation.
    It returns log-densities (*b, n, k) and scores (*b, n, k, q).
    """

    name = "glm"
    has_closed_form = False

    def names(self, P):
        raise NotImplementedError

    def positive_mask(self, P):
        raise NotImplementedError

    def dim(self, P):
        return len(self.names(P))

    def check(self, theta, P):
        theta = np.asarray(theta, dtype=float)
        q = self.dim(P)
        if theta.shape[-1:] != (q,):
            raise ConstraintError(f"{self.name}: expected {q} parameters, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ConstraintError(f"{self.name}: non-finite parameter {theta}")
        if np.any(theta[..., self.positive_mask(P)] <= 0):
            raise ConstraintError(f"{self.name}: scale parameter must be positive, got {theta}")
        return theta

    def log_density(self, theta, y, X):
        """``log f(y_i | x_i, theta)`` for each row, shape (n,)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        theta = self.check(theta, X.shape[1])
        logf, _ = self.logpdf_and_score(theta, np.asarray(y, dtype=float)[:, None], X)
        return logf[..., 0]

    def score(self, theta, y, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        theta = self.check(theta, X.shape[1])
        _, u = self.logpdf_and_score(theta, np.asarray(y, dtype=float)[:, None], X)
        return u[..., 0, :]


class PoissonLog(GlmFamily):
    """Poisson responses with ``log E[y | x] = x^T beta``."""

    name = "poisson-log"

    def names(self, P):
        return tuple(f"beta{k}" for k in range(P))

    def positive_mask(self, P):
        return np.zeros(P, dtype=bool)

    def mean(self, theta, X):
        return np.exp(theta @ X.T)

    def logpdf_and_score(self, theta, y, X):
        eta = (theta @ X.T)[..., None]
        lam = np.exp(eta)
        ok = (y >= 0) & (y == np.floor(y))
        ys = np.where(ok, y, 0.0)
        logf = np.where(ok, ys * eta - lam - gammaln(ys + 1.0), -np.inf)
        resid = np.where(ok, ys - lam, 0.0)
        return logf, resid[..., None] * X[:, None, :]

    def sample(self, theta, X, m, rng):
        lam = self.mean(theta, X)
        return rng.poisson(lam[:, None], (lam.shape[0], m)).astype(float)

    def mle(self, data, max_iter=100, tol=1e-10):
        """Poisson-regression MLE by damped Newton (IRLS)."""
        y, X = data.y, data.X
        if y.mean() <= 0:
            raise InitializationError("all responses are zero; the Poisson MLE does not exist")
        beta = np.zeros(X.shape[1])
        beta[0] = np.log(y.mean())

        def nll(b):
            eta = X @ b
            return float(np.sum(np.exp(eta) - y * eta))

        f = nll(beta)
        for _ in range(max_iter):
            lam = np.exp(X @ beta)
            grad = X.T @ (y - lam)
            H = X.T @ (lam[:, None] * X)
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError as exc:
                raise InitializationError(f"singular information matrix in Poisson IRLS: {exc}") from exc
            t = 1.0
            while t > 1e-8:
                cand = beta + t * step
                fc = nll(cand)
                if np.isfinite(fc) and fc <= f + 1e-12 * abs(f):
                    break
                t *= 0.5
            else:
                raise InitializationError("Poisson IRLS line search failed")
            beta, f = cand, fc
            if np.max(np.abs(t * step)) < tol * (1.0 + np.max(np.abs(beta))):
                break
        else:
            raise InitializationError(f"Poisson IRLS did not converge in {max_iter} iterations")
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 50:
            raise InitializationError(f"Poisson MLE diverged (separation-like data): {beta}")
        return beta

    def _expectations(self, lam, alpha, K):
        """Per-observation ``(int f^(1+alpha), E[f^alpha (Y - lam)])`` over ``k < K``."""
        k = np.arange(K, dtype=float)
        loglam = np.log(lam)[..., None]
        logp = k * loglam - lam[..., None] - gammaln(k + 1.0)
        p1a = np.exp((1.0 + alpha) * logp)
        return p1a.sum(axis=-1), np.sum(p1a * (k - lam[..., None]), axis=-1)

    def exact_terms(self, theta, X, alpha, K=None):
        lam = self.mean(theta, X)
        K = poisson_support_bound(lam) if K is None else int(K)
        return self._expectations(lam, alpha, K)

    def batch_gradient(self, theta, y, X, W, alpha, m=None, rngs=None, method="mc", K=None):
        if theta.ndim == 1:
            rngs = None if rngs is None else [rngs]
            return self.batch_gradient(theta[None], y, X, W[None], alpha, m, rngs, method, K)[0]
        eta = theta @ X.T
        lam = np.exp(eta)
        logf = y * eta - lam - gammaln(y + 1.0)
        c = np.exp(alpha * logf) * (y - lam)
        if method == "mc":
            e = _poisson_mc_factor(lam, alpha, m, rngs)
        elif method == "mc-direct":
            e = _poisson_direct_factor(lam, alpha, m, rngs)
        else:
            _, e = self._expectations(lam, alpha, poisson_support_bound(lam) if K is None else K)
        return -((W * (c - e)) @ X)


def _poisson_pmf_table(lam, K):
    k = np.arange(K, dtype=float)
    return k, np.exp(k * np.log(lam)[:, None] - lam[:, None] - gammaln(k + 1.0))


def _poisson_histogram(lam, m, K, rng):
    """Counts of ``m`` Poisson(lam_i) draws per observation, bucketed on ``0..K-1``.

    Draws at or above ``K`` are returned individually. The counts have the
    same joint law as ``m`` direct draws.
    """
    _, pmf = _poisson_pmf_table(lam, K)
    tail = np.clip(1.0 - pmf.sum(axis=1), 0.0, None)
    pvals = np.column_stack([pmf, tail])
    pvals /= pvals.sum(axis=1, keepdims=True)
    counts = rng.multinomial(m, pvals)
    n_tail = counts[:, -1]
    extra = []
    if n_tail.any():
        rows = np.repeat(np.arange(lam.size), n_tail)
        lo = stats.poisson.cdf(K - 1, lam[rows])
        u = lo + (1.0 - lo) * rng.random(rows.size)
        vals = np.maximum(stats.poisson.ppf(u, lam[rows]), K)
        extra = (rows, vals)
    return counts[:, :-1], extra


def poisson_counts(lam, m, rng, tail=TAIL_MASS):
    """Per-observation histogram ``(n, K)`` of ``m`` Poisson(lam_i) draws, exact in law."""
    K = poisson_support_bound(lam, tail)
    counts, extra = _poisson_histogram(lam, m, K, rng)
    if len(extra):
        rows, vals = extra
        vals = vals.astype(int)
        wide = np.zeros((lam.size, max(K, vals.max() + 1)), dtype=counts.dtype)
        wide[:, :K] = counts
        np.add.at(wide, (rows, vals), 1)
        counts = wide
    return counts


def _poisson_mc_factor(lam, alpha, m, rngs):
    """``m^-1 sum_j f(z_ij)^alpha (z_ij - lam_i)`` for each replicate row and observation."""
    out = np.empty_like(lam)
    K = poisson_support_bound(lam, 1e-6)
    k = np.arange(K, dtype=float)
    for b, rng in enumerate(rngs):
        lb = lam[b]
        counts, extra = _poisson_histogram(lb, m, K, rng)
        logp = k * np.log(lb)[:, None] - lb[:, None] - gammaln(k + 1.0)
        g = np.exp(alpha * logp) * (k - lb[:, None])
        acc = np.sum(counts * g, axis=1)
        if len(extra):
            rows, vals = extra
            lr = lb[rows]
            la = np.exp(alpha * (vals * np.log(lr) - lr - gammaln(vals + 1.0))) * (vals - lr)
            np.add.at(acc, rows, la)
        out[b] = acc / m
    return out


def _poisson_direct_factor(lam, alpha, m, rngs):
    out = np.empty_like(lam)
    for b, rng in enumerate(rngs):
        lb = lam[b][:, None]
        z = rng.poisson(lb, (lb.shape[0], m)).astype(float)
        logp = z * np.log(lb) - lb - gammaln(z + 1.0)
        out[b] = np.mean(np.exp(alpha * logp) * (z - lb), axis=1)
    return out


class NormalIdentity(GlmFamily):
    """Gaussian responses ``y ~ N(x^T beta, sigma^2)`` with ``sigma`` free."""

    name = "normal-identity"
    has_closed_form = True

    def names(self, P):
        return tuple(f"beta{k}" for k in range(P)) + ("sigma",)

    def positive_mask(self, P):
        mask = np.zeros(P + 1, dtype=bool)
        mask[-1] = True
        return mask

    def mean(self, theta, X):
        return theta[..., :-1] @ X.T

    def logpdf_and_score(self, theta, y, X):
        mu = self.mean(theta, X)[..., None]
        sigma = theta[..., -1, None, None]
        z = (y - mu) / sigma
        logf = -0.5 * z * z - np.log(sigma) - HALF_LOG_2PI
        u_beta = (z / sigma)[..., None] * X[:, None, :]
        u_sigma = np.broadcast_to(((z * z - 1.0) / sigma)[..., None], u_beta.shape[:-1] + (1,))
        return logf, np.concatenate([u_beta, u_sigma], axis=-1)

    def sample(self, theta, X, m, rng):
        mu = self.mean(theta, X)
        return mu[:, None] + theta[-1] * rng.standard_normal((mu.shape[0], m))

    def mle(self, data):
        """Ordinary least squares with ``sigma^2 = RSS / n``."""
        y, X = data.y, data.X
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        rss = float(np.sum((y - X @ beta) ** 2))
        if not rss > 0:
            raise InitializationError("residual sum of squares is zero; sigma MLE is degenerate")
        return np.append(beta, np.sqrt(rss / y.size))

    def _integral_const(self, alpha):
        return (2.0 * np.pi) ** (-alpha / 2.0) * (1.0 + alpha) ** (-1.5)

    def exact_terms(self, theta, X, alpha, K=None):
        sigma = np.asarray(theta)[..., -1]
        c = self._integral_const(alpha)
        n = X.shape[0]
        integral = np.full(np.shape(sigma) + (n,), (1.0 + alpha) * c) * sigma[..., None] ** (-alpha)
        d_sigma = np.broadcast_to(-alpha * c * sigma[..., None] ** (-alpha - 1.0), integral.shape)
        return integral, d_sigma

    def batch_gradient(self, theta, y, X, W, alpha, m=None, rngs=None, method="mc", K=None):
        mu = self.mean(theta, X)
        sigma = theta[..., -1, None]
        z = (y - mu) / sigma
        fa = np.exp(alpha * (-0.5 * z * z - np.log(sigma) - HALF_LOG_2PI))
        c_beta = fa * z / sigma
        c_sigma = fa * (z * z - 1.0) / sigma
        if method == "exact":
            e_beta = 0.0
            e_sigma = -alpha * self._integral_const(alpha) * sigma ** (-alpha - 1.0)
        else:
            n = X.shape[0]
            zeta = np.stack([r.standard_normal((n, m)) for r in rngs]) if theta.ndim > 1 \
                else rngs.standard_normal((n, m))
            fz = np.exp(alpha * (-0.5 * zeta * zeta - np.log(sigma)[..., None] - HALF_LOG_2PI))
            e_beta = np.mean(fz * zeta, axis=-1) / sigma
            e_sigma = np.mean(fz * (zeta * zeta - 1.0), axis=-1) / sigma
        g_beta = -((W * (c_beta - e_beta)) @ X)
        g_sigma = -np.sum(W * (c_sigma - e_sigma), axis=-1)
        return np.concatenate([g_beta, g_sigma[..., None]], axis=-1)


FAMILIES = {"poisson-log": PoissonLog, "normal-identity": NormalIdentity}


def get_family(name):
    try:
        return FAMILIES[name]()
    except KeyError:
        raise ValueError(f"unknown GLM family {name!r}; choose from {sorted(FAMILIES)}") from None


def glm_pointwise_loss(family, theta, y_i, x_i, cfg, rng=None, method="exact"):
    """DPD loss of one observation; ``method`` is ``"exact"`` or ``"mc"`` (needs ``rng``)."""
    X = np.atleast_2d(np.asarray(x_i, dtype=float))
    theta = family.check(theta, X.shape[1])
    y = np.atleast_1d(np.asarray(y_i, dtype=float))
    logf = family.log_density(theta, y, X)[0]
    if cfg.alpha == 0:
        return float(-logf)
    if method == "exact":
        integral = float(family.exact_terms(theta, X, cfg.alpha)[0][0])
    else:
        if rng is None:
            raise ValueError("a Monte Carlo expectation term needs an rng")
        z = family.sample(theta, X, cfg.m, rng)
        lz, _ = family.logpdf_and_score(theta, z, X)
        integral = float(np.mean(np.exp(cfg.alpha * lz)))
    return float(-np.exp(cfg.alpha * logf) / cfg.alpha + integral / (1.0 + cfg.alpha))


def _check_data(family, theta, data, weights):
    if weights.shape[-1] != data.n:
        raise ShapeError(f"{weights.shape[-1]} weights for {data.n} observations")
    return family.check(theta, data.n_coef)


def glm_exact_gradient(family, theta, data, weights, alpha):
    """``grad L_w`` with every expectation term evaluated exactly (truncated sum or closed form)."""
    weights = np.asarray(weights, dtype=float)
    theta = _check_data(family, theta, data, weights)
    value = family.batch_gradient(theta, data.y, data.X, weights, alpha, method="exact")
    return GradientEstimate(value, 0, False, data.n)


def glm_stochastic_gradient(family, theta, data, weights, cfg, rng, method="mc"):
    """Unbiased estimate of ``grad L_w`` with ``cfg.m`` pseudo-responses per observation.

    ``method="mc-direct"`` draws the ``n * m`` Poisson pseudo-responses one by
    one. The default ``"mc"`` draws their per-observation histogram from the
    equivalent multinomial law, which is cheaper for large ``m``.
    """
    weights = np.asarray(weights, dtype=float)
    theta = _check_data(family, theta, data, weights)
    value = family.batch_gradient(theta, data.y, data.X, weights, cfg.alpha, cfg.m, rng, method)
    return GradientEstimate(value, data.n * cfg.m, True, data.n * (1 + cfg.m))


def llb_sgd_glm_sample(family, data, cfg, schedule, S, T, seed, theta_init=None, workers=1,
                       chunk_size=DEFAULT_CHUNK, clip=None, method="mc"):
    """LLB with SGD for a GLM; every replicate starts from the family MLE."""
    P = data.n_coef
    if data.n < P + 1:
        raise ConfigError(f"need n >= p + 1 observations, got n={data.n} for {P} coefficients")
    theta_init = family.mle(data) if theta_init is None else family.check(theta_init, P)
    y, X, alpha, m = data.y, data.X, cfg.alpha, cfg.m

    def make_grad(W):
        return lambda theta, rngs: family.batch_gradient(theta, y, X, W, alpha, m, rngs, method)

    return batched_llb(family.names(P), family.positive_mask(P), data.n, make_grad, theta_init,
                       schedule, T, S, seed, workers, chunk_size, clip,
                       config={"sampler": "llb-sgd-glm", "family": family.name, "alpha": alpha,
                               "m": m, "method": method, "theta_init": theta_init.tolist()})


__all__ = [
    "DpdConfig",
    "GlmDataset",
    "PoissonLog",
    "NormalIdentity",
    "get_family",
    "glm_pointwise_loss",
    "glm_exact_gradient",
    "glm_stochastic_gradient",
    "llb_sgd_glm_sample",
]
