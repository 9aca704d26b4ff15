"""Comparator samplers.

* Random-walk Metropolis on the closed-form DPD posterior
  ``exp{-w Q_n(theta)}`` (flat prior on the unconstrained scale).
* Random-walk Metropolis on the ordinary likelihood posterior of the Normal
  model with prior ``p(mu, sigma) ~ 1/sigma``.
* Bootstrap with fixed-step gradient descent whose expectation term is a
  midpoint Riemann sum over a grid (GD+NI).
* The existing-method GLM baseline: fixed-step gradient descent on a
  finite-sum surrogate of each per-observation expectation term.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .bootstrap import DEFAULT_CHUNK, PosteriorDraws, batched_llb, replicate_rng
from .dpd import GradientEstimate, powered, weighted_score_sum
from .errors import BudgetError, ConfigError, MixingError, UnsupportedModelError
from .glm import PoissonLog, poisson_counts
from .models import Normal, as_points, from_unconstrained, to_unconstrained

DEFAULT_BUDGET = 10**6


@dataclass(frozen=True)
class MhConfig:
    steps: int = 51500
    burn_in: int = 1500
    thin: int = 50
    proposal_sd: object = 0.05
    loss_scale: float = 1.0

    def __post_init__(self):
        if not (self.steps > self.burn_in >= 0):
            raise ConfigError(f"need steps > burn_in >= 0, got {self.steps}, {self.burn_in}")
        if int(self.thin) != self.thin or self.thin < 1:
            raise ConfigError(f"thin must be a positive integer, got {self.thin}")
        if np.any(np.asarray(self.proposal_sd, dtype=float) <= 0):
            raise ConfigError(f"proposal_sd must be positive, got {self.proposal_sd}")
        if not self.loss_scale > 0:
            raise ConfigError(f"loss_scale must be positive, got {self.loss_scale}")

    @property
    def n_keep(self):
        return len(range(self.burn_in, self.steps, self.thin))


@dataclass
class MhResult:
    chain: np.ndarray
    acceptance_rate: float
    burn_in_acceptance: float


def rw_metropolis(log_target, x0, cfg, rng):
    """Gaussian random-walk Metropolis; keeps every ``thin``-th state after burn-in."""
    x = np.array(x0, dtype=float)
    lp = log_target(x)
    if not np.isfinite(lp):
        raise ConfigError(f"log target is not finite at the starting point {x0}")
    sd = np.broadcast_to(np.asarray(cfg.proposal_sd, dtype=float), x.shape)
    keep = []
    accepted = 0
    burn_acc = 0
    steps = np.empty((cfg.steps,) + x.shape)
    rng.standard_normal(out=steps)
    logu = np.log(rng.random(cfg.steps))
    for t in range(cfg.steps):
        prop = x + sd * steps[t]
        lp_prop = log_target(prop)
        if logu[t] < lp_prop - lp:
            x, lp = prop, lp_prop
            accepted += 1
            if t < cfg.burn_in:
                burn_acc += 1
        if t + 1 == cfg.burn_in and cfg.burn_in > 0 and burn_acc == 0:
            raise MixingError(f"no proposal accepted in {cfg.burn_in} burn-in steps "
                              f"(proposal sd {cfg.proposal_sd}, start {x0})")
        if t >= cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            keep.append(x.copy())
    return MhResult(np.array(keep), accepted / cfg.steps,
                    burn_acc / cfg.burn_in if cfg.burn_in else float("nan"))


def dpd_total_loss(model, theta, x, alpha):
    """``Q_n(theta) = sum_i q(theta, x_i)`` with the closed-form integral term."""
    logf, _ = model.logpdf_and_score(theta, x)
    return float(-np.sum(powered(logf, alpha)) / alpha + x.shape[0] * model.integral_term(theta, alpha))


def mh_sample_dpd(model, data, alpha, cfg, seed, theta_init=None):
    """Random-walk MH on ``exp{-w Q_n(theta)}`` over the unconstrained parameters."""
    if not model.has_closed_form:
        raise UnsupportedModelError(f"{model.name} has no closed-form integral term")
    if not alpha > 0:
        raise ConfigError("the DPD posterior needs alpha > 0")
    x = as_points(data)
    pos = model.positive_mask
    theta0 = model.init(x) if theta_init is None else model.check(theta_init)
    w = cfg.loss_scale

    def log_target(phi):
        return -w * dpd_total_loss(model, from_unconstrained(phi, pos), x, alpha)

    res = rw_metropolis(log_target, to_unconstrained(theta0, pos), cfg, replicate_rng(seed, 0))
    return PosteriorDraws(
        draws=from_unconstrained(res.chain, pos),
        names=model.names,
        config={"sampler": "mh-dpd", "model": model.name, "alpha": alpha, "seed": int(seed),
                "loss_scale": w, "steps": cfg.steps, "burn_in": cfg.burn_in, "thin": cfg.thin,
                "proposal_sd": np.asarray(cfg.proposal_sd).tolist(),
                "acceptance_rate": res.acceptance_rate},
    )


def mh_sample_standard_bayes(model, data, cfg, seed, theta_init=None):
    """Likelihood posterior of the Normal model under ``p(mu, sigma) ~ 1/sigma``.

    The walk runs on ``(mu, log sigma)``, where that prior is flat.
    """
    if not isinstance(model, Normal):
        raise UnsupportedModelError("standard-Bayes MH is provided for the Normal model only")
    x = as_points(data)
    pos = model.positive_mask
    theta0 = model.mle(x) if theta_init is None else model.check(theta_init)

    def log_target(phi):
        logf, _ = model.logpdf_and_score(from_unconstrained(phi, pos), x)
        return float(np.sum(logf))

    res = rw_metropolis(log_target, to_unconstrained(theta0, pos), cfg, replicate_rng(seed, 0))
    return PosteriorDraws(
        draws=from_unconstrained(res.chain, pos),
        names=model.names,
        config={"sampler": "mh-bayes", "model": model.name, "seed": int(seed),
                "steps": cfg.steps, "burn_in": cfg.burn_in, "thin": cfg.thin,
                "proposal_sd": np.asarray(cfg.proposal_sd).tolist(),
                "acceptance_rate": res.acceptance_rate},
    )


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid of ``points_per_axis`` equispaced points per axis spanning
    the cube ``[-half_width, half_width]^dim``.

    Both end points of each axis are nodes. Every node carries the cell
    volume ``(2 half_width / (points_per_axis - 1))^dim`` of a rectangle rule.
    """

    points_per_axis: int = 10
    half_width: float = 2.0
    dim: int = 1
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 2:
            raise ConfigError(f"grid needs at least 2 points per dimension, got {self.points_per_axis}")
        if not self.half_width > 0:
            raise ConfigError(f"grid half-width must be positive, got {self.half_width}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"grid dimension must be a positive integer, got {self.dim}")
        if self.n_points > self.budget:
            raise BudgetError(f"grid of {self.points_per_axis}^{self.dim} = {self.n_points} points exceeds "
                              f"the evaluation budget {self.budget}")

    @property
    def n_points(self):
        return int(self.points_per_axis) ** int(self.dim)

    @property
    def cell_volume(self):
        return (2.0 * self.half_width / (self.points_per_axis - 1)) ** self.dim

    def nodes(self):
        axis = np.linspace(-self.half_width, self.half_width, self.points_per_axis)
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        return pts[:, 0] if self.dim == 1 else pts


def _grid_expectation(model, theta, alpha, grid, nodes, max_elems=4_000_000):
    """Riemann sum of ``f^(1 + alpha) u`` over the grid, batched over rows of ``theta``."""
    single = theta.ndim == 1
    th = theta[None] if single else theta
    G = grid.n_points
    per_row = max(1, max_elems // max(G * th.shape[-1], 1))
    out = np.empty_like(th)
    for lo in range(0, th.shape[0], per_row):
        part = th[lo:lo + per_row]
        logf, u = model.logpdf_and_score(part, nodes[None])
        out[lo:lo + per_row] = weighted_score_sum(powered(logf, 1.0 + alpha), u) * grid.cell_volume
    return out[0] if single else out


def gd_ni_gradient(model, theta, data, weights, alpha, grid):
    """``grad L_w`` with the expectation term replaced by grid quadrature."""
    x = as_points(data)
    if grid.dim != model.obs_dim:
        raise ConfigError(f"grid dimension {grid.dim} does not match the sample space ({model.obs_dim})")
    theta = model.check(theta)
    weights = np.asarray(weights, dtype=float)
    fa_logf, u = model.logpdf_and_score(theta, x)
    data_part = weighted_score_sum(weights * powered(fa_logf, alpha), u)
    value = -data_part + weights.sum() * _grid_expectation(model, theta, alpha, grid, grid.nodes())
    return GradientEstimate(value, 0, False, grid.n_points + x.shape[0])


@dataclass(frozen=True)
class FixedRate:
    """Constant learning rate, used by the gradient-descent baselines."""

    eta_init: float
    kind: str = "constant"
    decay_param: object = None

    def rates(self, T):
        return np.full(int(T), float(self.eta_init))

    def rate(self, t):
        return float(self.eta_init)

    def mean_rate(self, T):
        return float(self.eta_init)


def llb_gdni_sample(model, data, alpha, grid, S, T, fixed_eta, seed, theta_init=None,
                    workers=1, chunk_size=DEFAULT_CHUNK):
    """Bootstrap with fixed-step GD and grid quadrature; starts from the model MLE."""
    x = as_points(data)
    if grid.dim != model.obs_dim:
        raise ConfigError(f"grid dimension {grid.dim} does not match the sample space ({model.obs_dim})")
    theta_init = model.mle(x) if theta_init is None else model.check(theta_init)
    nodes = grid.nodes()

    def make_grad(W):
        wsum = W.sum(axis=-1)[:, None]

        def grad(theta, rngs):
            logf, u = model.logpdf_and_score(theta, x)
            data_part = weighted_score_sum(W * powered(logf, alpha), u)
            return -data_part + wsum * _grid_expectation(model, theta, alpha, grid, nodes)

        return grad

    return batched_llb(model.names, model.positive_mask, x.shape[0], make_grad, theta_init,
                       FixedRate(fixed_eta), T, S, seed, workers, chunk_size,
                       config={"sampler": "gdni", "model": model.name, "alpha": alpha,
                               "grid": {"points_per_axis": grid.points_per_axis, "half_width": grid.half_width, "dim": grid.dim},
                               "theta_init": theta_init.tolist()})


def truncated_support(grid_half_width):
    """Number of count values ``0, 1, ...`` inside the window ``[-D, D]``."""
    return int(np.floor(grid_half_width)) + 1


def _frozen_mc_grad(family, y, X, W, alpha, M, theta_init):
    """Gradient of the loss whose expectation term is an average over ``M``
    pseudo-responses per observation drawn once at ``theta_init``.

    The draws stay fixed while ``theta`` moves, so differentiating the
    averaged ``f^alpha`` yields ``alpha / (1 + alpha)`` times the sample
    mean of ``f^alpha u``.
    """
    lam0 = family.mean(theta_init, X)
    state = {}

    def grad(theta, rngs):
        if "counts" not in state:
            per = [poisson_counts(lam0, M, r) for r in rngs]
            K = max(c.shape[1] for c in per)
            state["counts"] = np.stack([np.pad(c, ((0, 0), (0, K - c.shape[1]))) for c in per])
            state["k"] = np.arange(K, dtype=float)
        counts, k = state["counts"], state["k"]
        eta = theta @ X.T
        lam = np.exp(eta)
        c = np.exp(alpha * (y * eta - lam - gammaln(y + 1.0))) * (y - lam)
        logp = k * eta[..., None] - lam[..., None] - gammaln(k + 1.0)
        e = np.sum(counts * np.exp(alpha * logp) * (k - lam[..., None]), axis=-1) / M
        return -((W * (c - alpha / (1.0 + alpha) * e)) @ X)

    return grad


def llb_existing_glm_sample(family, data, alpha, S, T, fixed_eta, seed, approx="frozen-mc", M=None,
                            grid_half_width=2.0, theta_init=None, workers=1,
                            chunk_size=DEFAULT_CHUNK):
    """Existing-method GLM baseline: fixed-step GD on a finite-sum surrogate loss.

    ``approx="frozen-mc"`` (default) replaces each per-observation integral by
    the average over ``M`` (default ``n``) pseudo-responses drawn once per
    replicate at the MLE. ``approx="truncated"`` instead truncates each count
    sum to the responses inside ``[-D, D]``.
    """
    if not isinstance(family, PoissonLog):
        raise UnsupportedModelError("the finite-sum GLM baseline is provided for poisson-log only")
    if approx not in ("frozen-mc", "truncated"):
        raise ConfigError(f"unknown approximation {approx!r}; choose 'frozen-mc' or 'truncated'")
    P = data.n_coef
    theta_init = family.mle(data) if theta_init is None else family.check(theta_init, P)
    y, X = data.y, data.X
    M = data.n if M is None else int(M)
    K = truncated_support(grid_half_width)

    def make_grad(W):
        if approx == "frozen-mc":
            return _frozen_mc_grad(family, y, X, W, alpha, M, theta_init)
        return lambda theta, rngs: family.batch_gradient(theta, y, X, W, alpha, method="exact", K=K)

    cfg = {"sampler": "existing-glm", "family": family.name, "alpha": alpha, "approx": approx,
           "theta_init": theta_init.tolist()}
    cfg.update({"M": M} if approx == "frozen-mc" else {"support": K})
    return batched_llb(family.names(P), family.positive_mask(P), data.n, make_grad, theta_init,
                       FixedRate(fixed_eta), T, S, seed, workers, chunk_size, config=cfg)
