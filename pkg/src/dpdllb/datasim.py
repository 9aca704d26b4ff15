"""Seeded generators for the contaminated simulation designs.

Outlier flags are kept on the returned datasets for diagnostics only.
Normal components are parameterized by standard deviation, so the outlier
law ``N(10, 0.01)`` (variance 0.01) is ``Component("normal", (10, 0.1))``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .glm import GlmDataset
from .models import Dataset, Gompertz

COMPONENT_KINDS = ("normal", "poisson", "invgauss", "gompertz")


@dataclass(frozen=True)
class Component:
    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in COMPONENT_KINDS:
            raise ConfigError(f"unknown component {self.kind!r}; choose from {COMPONENT_KINDS}")

    def draw(self, n, rng):
        a = self.params
        if self.kind == "normal":
            return a[0] + a[1] * rng.standard_normal(n)
        if self.kind == "poisson":
            return rng.poisson(a[0], n).astype(float)
        if self.kind == "invgauss":
            return rng.wald(a[0], a[1], n)
        return Gompertz().sample(np.asarray(a, dtype=float), n, rng)

    def mean(self):
        if self.kind == "gompertz":
            raise NotImplementedError("the Gompertz mean has no elementary closed form")
        return float(self.params[0])


@dataclass(frozen=True)
class ContaminationSpec:
    """``(1 - epsilon) * bulk + epsilon * outlier`` with ``n`` points."""

    epsilon: float
    bulk: Component
    outlier: Component
    n: int

    def __post_init__(self):
        if not 0 <= self.epsilon < 0.5:
            raise ConfigError(f"epsilon must lie in [0, 0.5), got {self.epsilon}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")

    def with_n(self, n):
        return ContaminationSpec(self.epsilon, self.bulk, self.outlier, int(n))

    def with_epsilon(self, eps):
        return ContaminationSpec(float(eps), self.bulk, self.outlier, self.n)


OUTLIER_AT_10 = Component("normal", (10.0, 0.1))

SCALAR_SCENARIOS = {
    "contaminated-normal": ContaminationSpec(0.05, Component("normal", (0.0, 1.0)), OUTLIER_AT_10, 1000),
    "contaminated-poisson": ContaminationSpec(0.05, Component("poisson", (1.0,)),
                                              Component("poisson", (10.0,)), 100),
    "contaminated-invgauss": ContaminationSpec(0.05, Component("invgauss", (1.0, 3.0)), OUTLIER_AT_10, 1000),
    "contaminated-gompertz": ContaminationSpec(0.05, Component("gompertz", (1.0, 0.1)), OUTLIER_AT_10, 1000),
}


def gen_contaminated_scalar(spec, rng):
    """Each point independently from the outlier component with probability ``epsilon``."""
    flags = rng.random(spec.n) < spec.epsilon
    bulk = spec.bulk.draw(spec.n, rng)
    out = spec.outlier.draw(spec.n, rng)
    return Dataset(np.where(flags, out, bulk), is_outlier=flags,
                   meta={"epsilon": spec.epsilon, "bulk": spec.bulk, "outlier": spec.outlier})


def gen_contaminated_mvn(n, p, epsilon, rng, outlier_center=10.0, outlier_sd=0.1):
    """Bulk ``N_p(0, I)``; outliers ``N_p(10 * 1, 0.01 I)``."""
    if int(p) != p or p < 1:
        raise ConfigError(f"dimension p must be a positive integer, got {p}")
    if not 0 <= epsilon < 0.5:
        raise ConfigError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    flags = rng.random(n) < epsilon
    bulk = rng.standard_normal((n, p))
    out = outlier_center + outlier_sd * rng.standard_normal((n, p))
    return Dataset(np.where(flags[:, None], out, bulk), is_outlier=flags,
                   meta={"epsilon": epsilon, "p": p})


def gen_poisson_regression(n, p, rng, beta=None, contamination_mode="clean", epsilon=0.05, shift=10.0):
    """Poisson regression with ``N_p(0, I)`` covariates.

    ``beta`` (length ``p + 1``, intercept first) defaults to independent
    ``U[0, 1/4]`` draws. In ``"mean-shift"`` mode a fraction ``epsilon`` of
    responses follow ``Po(shift + exp(x^T beta))``.
    """
    if contamination_mode not in ("clean", "mean-shift"):
        raise ConfigError(f"unknown contamination mode {contamination_mode!r}")
    if int(p) != p or p < 1:
        raise ConfigError(f"p must be a positive integer, got {p}")
    beta = rng.uniform(0.0, 0.25, p + 1) if beta is None else np.asarray(beta, dtype=float)
    if beta.shape != (p + 1,):
        raise ConfigError(f"beta must have length p + 1 = {p + 1}")
    Z = rng.standard_normal((n, p))
    lam = np.exp(beta[0] + Z @ beta[1:])
    flags = np.zeros(n, dtype=bool)
    if contamination_mode == "mean-shift":
        flags = rng.random(n) < epsilon
    y = rng.poisson(lam + shift * flags).astype(float)
    return GlmDataset.from_covariates(y, Z, is_outlier=flags, beta_true=beta,
                                      meta={"mode": contamination_mode, "epsilon": epsilon})


def gen_linear_regression(n, rng, beta=(0.6, 0.3, 0.2), sigma=1.0, epsilon=0.05, shift=10.0):
    """Linear regression with ``N(0, I)`` covariates and a mean shift of ``shift`` on outliers."""
    beta = np.asarray(beta, dtype=float)
    Z = rng.standard_normal((n, beta.size - 1))
    flags = rng.random(n) < epsilon
    y = beta[0] + Z @ beta[1:] + shift * flags + sigma * rng.standard_normal(n)
    return GlmDataset.from_covariates(y, Z, is_outlier=flags, beta_true=np.append(beta, sigma),
                                      meta={"epsilon": epsilon})
