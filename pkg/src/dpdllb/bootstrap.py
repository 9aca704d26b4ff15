"""Loss-likelihood bootstrap: Dirichlet reweighting plus a per-replicate minimizer.

Randomness for replicate ``s`` comes only from
``SeedSequence(seed, spawn_key=(s, attempt))``, so a run is a pure function of
the master seed and the configuration. Replicates are processed in fixed-size
chunks; the chunk size never depends on the worker count, which makes the
output identical for any number of workers.
"""

import csv
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dpd import batch_analytic_gradient, batch_stochastic_gradient
from .errors import ConfigError, ConstraintError, DivergenceError, ReplicateError
from .models import as_points
from .sgd import sgd_minimize

DEFAULT_CHUNK = 250


def replicate_rng(seed, s, attempt=0):
    """Generator for replicate ``s`` (and retry ``attempt``) under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(s), int(attempt))))


def draw_weights(n, rng):
    """Dirichlet(1, ..., 1) weights as normalized standard exponentials."""
    if int(n) != n or n < 1:
        raise ConfigError(f"n must be a positive integer, got {n}")
    e = rng.standard_exponential(int(n))
    return e / e.sum()


@dataclass
class PosteriorDraws:
    """``S x p`` bootstrap draws with per-replicate metadata."""

    draws: np.ndarray
    names: tuple
    attempts: np.ndarray = None
    iterations: np.ndarray = None
    final_grad_norm: np.ndarray = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        S = self.draws.shape[0]
        if self.attempts is None:
            self.attempts = np.zeros(S, dtype=int)
        if self.iterations is None:
            self.iterations = np.zeros(S, dtype=int)
        if self.final_grad_norm is None:
            self.final_grad_norm = np.full(S, np.nan)
        self.names = tuple(self.names)

    @property
    def S(self):
        return self.draws.shape[0]

    def __len__(self):
        return self.S

    def __getitem__(self, name):
        return self.draws[:, self.names.index(name)]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            for row in self.draws:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        return cls(np.array(rows[1:], dtype=float), tuple(rows[0]))


_TASK = None


def _call_task(chunk):
    return _TASK(chunk)


def run_chunks(task, S, chunk_size=DEFAULT_CHUNK, workers=1):
    """Apply ``task`` to consecutive index ranges covering ``range(S)``.

    With ``workers > 1`` the chunks go to a forked process pool; ``task`` may
    be a closure because it reaches the children through the fork.
    """
    global _TASK
    chunks = [range(i, min(i + chunk_size, S)) for i in range(0, S, chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        return [task(c) for c in chunks]
    _TASK = task
    try:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            return list(ex.map(_call_task, chunks))
    finally:
        _TASK = None


def _valid(theta, positive):
    theta = np.asarray(theta, dtype=float)
    return bool(np.all(np.isfinite(theta)) and np.all(theta[positive] > 0))


def llb_sample(model, data, minimizer, S, seed, workers=1, chunk_size=DEFAULT_CHUNK, config=None):
    """Generic loss-likelihood bootstrap with a user-supplied minimizer.

    ``minimizer(weights, rng)`` returns the weighted-loss minimizer, either as
    an array or as ``(theta, iterations, grad_norm)``. A replicate whose
    minimizer raises or returns an invalid point is redrawn once with a fresh
    sub-seed; a second failure raises :class:`ReplicateError`.
    """
    if int(S) != S or S < 1:
        raise ConfigError(f"S must be a positive integer, got {S}")
    x = as_points(data)
    n = x.shape[0]
    positive = model.positive_mask

    def one(s, attempt):
        rng = replicate_rng(seed, s, attempt)
        w = draw_weights(n, rng)
        out = minimizer(w, rng)
        if isinstance(out, tuple):
            theta, iters, gnorm = out
        else:
            theta, iters, gnorm = out, 0, np.nan
        if not _valid(theta, positive):
            raise ConstraintError(f"minimizer returned invalid point {theta}")
        return np.asarray(theta, dtype=float), iters, gnorm

    def task(chunk):
        rows = []
        for s in chunk:
            try:
                theta, iters, gnorm = one(s, 0)
                attempt = 0
            except Exception:
                try:
                    theta, iters, gnorm = one(s, 1)
                    attempt = 1
                except Exception as exc:
                    raise ReplicateError(s, exc) from exc
            rows.append((theta, attempt, iters, gnorm))
        return rows

    rows = [r for part in run_chunks(task, int(S), chunk_size, workers) for r in part]
    cfg = {"sampler": "llb", "S": int(S), "seed": int(seed)}
    cfg.update(config or {})
    return PosteriorDraws(
        draws=np.array([r[0] for r in rows]),
        names=model.names,
        attempts=np.array([r[1] for r in rows]),
        iterations=np.array([r[2] for r in rows]),
        final_grad_norm=np.array([r[3] for r in rows], dtype=float),
        config=cfg,
    )


def batched_llb(
    names,
    positive,
    n,
    make_grad,
    theta_init,
    schedule,
    T,
    S,
    seed,
    workers=1,
    chunk_size=DEFAULT_CHUNK,
    clip=None,
    config=None,
):
    """Bootstrap driver shared by every SGD/GD sampler.

    ``make_grad(W)`` receives the ``(B, n)`` weight matrix of a chunk and
    returns ``grad_fn(theta, rngs)`` for a ``(B, p)`` parameter batch. A row
    that diverges is rerun on its own with retry sub-seed 1.
    """
    if int(S) != S or S < 1:
        raise ConfigError(f"S must be a positive integer, got {S}")
    positive = np.asarray(positive, dtype=bool)
    theta_init = np.asarray(theta_init, dtype=float)

    def task(chunk):
        rngs = [replicate_rng(seed, s) for s in chunk]
        W = np.stack([draw_weights(n, r) for r in rngs])
        theta0 = np.broadcast_to(theta_init, (len(chunk), theta_init.size)).copy()
        trace = sgd_minimize(make_grad(W), theta0, schedule, T, rngs, positive, clip,
                             on_nonfinite="freeze")
        draws = trace.final_theta
        attempts = np.zeros(len(chunk), dtype=int)
        gnorm = trace.final_grad_norm.copy()
        for b in np.flatnonzero(trace.failed):
            s = chunk[b]
            rng = replicate_rng(seed, s, 1)
            w = draw_weights(n, rng)[None, :]
            try:
                retry = sgd_minimize(make_grad(w), theta_init[None, :], schedule, T, [rng],
                                     positive, clip, on_nonfinite="raise")
            except (DivergenceError, ConstraintError) as exc:
                raise ReplicateError(s, exc) from exc
            draws[b] = retry.final_theta[0]
            gnorm[b] = retry.final_grad_norm[0]
            attempts[b] = 1
        return draws, attempts, gnorm

    parts = run_chunks(task, int(S), chunk_size, workers)
    cfg = {"S": int(S), "T": int(T), "seed": int(seed), "chunk_size": int(chunk_size),
           "schedule": {"kind": schedule.kind, "eta_init": schedule.eta_init,
                        "decay_param": schedule.decay_param}}
    cfg.update(config or {})
    return PosteriorDraws(
        draws=np.concatenate([p[0] for p in parts]),
        names=names,
        attempts=np.concatenate([p[1] for p in parts]),
        iterations=np.full(int(S), int(T)),
        final_grad_norm=np.concatenate([p[2] for p in parts]),
        config=cfg,
    )


def llb_sgd_sample(model, data, cfg, schedule, S, T, seed, theta_init=None, workers=1,
                   chunk_size=DEFAULT_CHUNK, clip=None):
    """LLB with SGD: each replicate minimizes its weighted DPD loss by SGD.

    All replicates start from ``theta_init`` (default ``model.init(data)``)
    and use ``cfg.m`` fresh pseudo-samples per step.
    """
    x = as_points(data)
    theta_init = model.init(x) if theta_init is None else model.check(theta_init)
    alpha, m = cfg.alpha, cfg.m

    def make_grad(W):
        return lambda theta, rngs: batch_stochastic_gradient(model, theta, x, W, alpha, m, rngs)

    return batched_llb(model.names, model.positive_mask, x.shape[0], make_grad, theta_init,
                       schedule, T, S, seed, workers, chunk_size, clip,
                       config={"sampler": "llb-sgd", "model": model.name, "alpha": alpha, "m": m,
                               "theta_init": theta_init.tolist()})


def exact_minimizer(model, data, alpha, theta_init=None, gtol=1e-10, max_iter=200):
    """Minimizer of the weighted DPD loss for closed-form models (L-BFGS on the unconstrained scale).

    Returns ``minimizer(weights, rng)`` suitable for :func:`llb_sample`.
    """
    from scipy import optimize

    from .dpd import weighted_objective, DpdConfig
    from .models import from_unconstrained, to_unconstrained

    x = as_points(data)
    pos = model.positive_mask
    theta_init = model.init(x) if theta_init is None else np.asarray(theta_init, dtype=float)
    phi0 = to_unconstrained(theta_init, pos)
    dcfg = DpdConfig(alpha=alpha, m=1)

    def minimizer(w, rng=None):
        def fun(phi):
            theta = from_unconstrained(phi, pos)
            val = weighted_objective(model, theta, x, w, dcfg)
            g = batch_analytic_gradient(model, theta, x, w, alpha)
            g[pos] *= theta[pos]
            return val, g

        res = optimize.minimize(fun, phi0, jac=True, method="L-BFGS-B",
                                options={"gtol": gtol, "ftol": 1e-15, "maxiter": max_iter})
        theta = from_unconstrained(res.x, pos)
        gnat = batch_analytic_gradient(model, theta, x, w, alpha)
        return theta, int(res.nit), float(np.linalg.norm(gnat))

    return minimizer


def llb_exact_sample(model, data, alpha, S, seed, theta_init=None, workers=1,
                     chunk_size=DEFAULT_CHUNK):
    """LLB with exact minimization of the weighted DPD loss (closed-form models)."""
    mini = exact_minimizer(model, data, alpha, theta_init)
    draws = llb_sample(model, data, mini, S, seed, workers, chunk_size,
                       config={"sampler": "llb-exact", "model": model.name, "alpha": alpha})
    return draws
