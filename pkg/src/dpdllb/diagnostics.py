"""Posterior summaries and repetition-level accuracy metrics.

Quantiles use linear interpolation between order statistics (numpy's
default, "type 7").
"""

from dataclasses import dataclass, field

import numpy as np

from .bootstrap import PosteriorDraws
from .errors import ConfigError, InsufficientDrawsError, ShapeError

MIN_DRAWS_FOR_INTERVAL = 20


def _matrix(draws):
    if isinstance(draws, PosteriorDraws):
        return draws.draws, draws.names
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr, tuple(f"theta{k}" for k in range(arr.shape[1]))


def credible_interval(draws, level=0.95):
    """Equal-tailed interval per parameter, shape ``(p, 2)``."""
    arr, _ = _matrix(draws)
    if not 0 < level < 1:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    if arr.shape[0] < MIN_DRAWS_FOR_INTERVAL:
        raise InsufficientDrawsError(
            f"{arr.shape[0]} draws; a credible interval needs at least {MIN_DRAWS_FOR_INTERVAL}")
    tail = (1.0 - level) / 2.0
    return np.quantile(arr, [tail, 1.0 - tail], axis=0).T


@dataclass
class RunMetrics:
    mse: float
    coverage: float
    avg_length: float
    per_parameter: dict = field(default_factory=dict)

    def as_dict(self):
        return {"mse": self.mse, "coverage": self.coverage, "avg_length": self.avg_length,
                "per_parameter": self.per_parameter}


def evaluate_run(estimates, truth, intervals, names=None):
    """Squared error, coverage and interval length averaged over parameters."""
    est = np.atleast_1d(np.asarray(estimates, dtype=float))
    tru = np.atleast_1d(np.asarray(truth, dtype=float))
    ci = np.atleast_2d(np.asarray(intervals, dtype=float))
    if est.shape != tru.shape or ci.shape != (tru.size, 2):
        raise ShapeError(f"estimates {est.shape}, truth {tru.shape} and intervals {ci.shape} disagree")
    names = tuple(names) if names is not None else tuple(f"theta{k}" for k in range(tru.size))
    sq = (est - tru) ** 2
    covered = (ci[:, 0] <= tru) & (tru <= ci[:, 1])
    length = ci[:, 1] - ci[:, 0]
    per = {nm: {"sq_error": float(s), "covered": bool(c), "length": float(l)}
           for nm, s, c, l in zip(names, sq, covered, length)}
    return RunMetrics(float(sq.mean()), float(covered.mean()), float(length.mean()), per)


def evaluate_draws(draws, truth, level=0.95, estimator="median"):
    """:func:`evaluate_run` with point estimates and intervals taken from ``draws``."""
    arr, names = _matrix(draws)
    est = np.median(arr, axis=0) if estimator == "median" else arr.mean(axis=0)
    return evaluate_run(est, truth, credible_interval(arr, level), names)


def summarize(draws):
    """Per-parameter mean, unbiased variance and median."""
    arr, names = _matrix(draws)
    if arr.shape[0] < 2:
        raise InsufficientDrawsError("summaries need at least two draws")
    mean = arr.mean(axis=0)
    var = arr.var(axis=0, ddof=1)
    med = np.median(arr, axis=0)
    return {nm: {"mean": float(a), "variance": float(v), "median": float(m)}
            for nm, a, v, m in zip(names, mean, var, med)}


def average_metrics(runs):
    """Mean of the scalar metrics over repetitions, per parameter and overall."""
    if not runs:
        raise InsufficientDrawsError("no runs to average")
    out = {"mse": float(np.mean([r.mse for r in runs])),
           "coverage": float(np.mean([r.coverage for r in runs])),
           "avg_length": float(np.mean([r.avg_length for r in runs])),
           "per_parameter": {}}
    for nm in runs[0].per_parameter:
        rows = [r.per_parameter[nm] for r in runs]
        out["per_parameter"][nm] = {
            "mse": float(np.mean([r["sq_error"] for r in rows])),
            "coverage": float(np.mean([r["covered"] for r in rows])),
            "avg_length": float(np.mean([r["length"] for r in rows])),
        }
    return out
