"""Equal-variance univariate binormal model with a known training distribution.

All training-side quantities (priors, posteriors, their moments, Friedman's
true/false positive rates) are computed analytically or by quadrature; only
the test sample is random. Asymptotic variances of the ML, Friedman and DeBias
estimators of ``q1`` are available for comparison with Monte Carlo results.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.special import expit, ndtr

from prevalest.core import PosteriorModel, PrevalenceVector, sample_prior_shift
from prevalest.errors import InvalidInputError
from prevalest.quantifiers import (
    debias_from_moments,
    em_ml_estimate,
    friedman_classifier,
    friedman_from_rates,
)

log = logging.getLogger(__name__)

QUAD_EPSREL = 1e-8
TAIL_WIDTH = 10.0


@dataclass(frozen=True)
class BinormalSpec:
    mu1: float = 1.5
    mu2: float = 0.0
    sigma: float = 1.0
    p1: float = 0.15

    def __post_init__(self):
        if not self.mu2 < self.mu1:
            raise InvalidInputError(f"need mu2 < mu1, got mu1={self.mu1}, mu2={self.mu2}")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")
        if not 0 < self.p1 < 1:
            raise InvalidInputError("p1 must lie in (0, 1)")

    @property
    def midpoint(self) -> float:
        """Friedman threshold: ``g1(x) > g2(x)`` exactly when ``x`` exceeds it."""
        return 0.5 * (self.mu1 + self.mu2)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.mu2 - TAIL_WIDTH * self.sigma, self.mu1 + TAIL_WIDTH * self.sigma

    def g1(self, x):
        return _npdf(x, self.mu1, self.sigma)

    def g2(self, x):
        return _npdf(x, self.mu2, self.sigma)

    def mixture_density(self, x, q1):
        return q1 * self.g1(x) + (1 - q1) * self.g2(x)

    def log_likelihood_ratio(self, x):
        x = np.asarray(x, dtype=float)
        return ((x - self.mu2) ** 2 - (x - self.mu1) ** 2) / (2 * self.sigma**2)

    def with_p1(self, p1: float) -> "BinormalSpec":
        return BinormalSpec(self.mu1, self.mu2, self.sigma, p1)

    def samplers(self):
        def class1(rng, size):
            return rng.normal(self.mu1, self.sigma, size)

        def class2(rng, size):
            return rng.normal(self.mu2, self.sigma, size)

        return [class1, class2]

    def posterior_model(self) -> PosteriorModel:
        def predict(x):
            post = posterior_exact(self, x[:, 0])
            return np.column_stack([post, 1.0 - post])

        return PosteriorModel(predict, PrevalenceVector([self.p1, 1.0 - self.p1]))

    @cached_property
    def friedman_rates(self) -> tuple[float, float]:
        """``(E_P[f*|Y=1], E_P[f*|Y=2])`` as Gaussian tail probabilities beyond the midpoint."""
        t = self.midpoint
        return float(ndtr((self.mu1 - t) / self.sigma)), float(ndtr((self.mu2 - t) / self.sigma))

    @cached_property
    def posterior_moments_train(self) -> tuple[float, float]:
        """``(E_P[post], var_P[post])`` of the class-1 training posterior."""
        return _posterior_moments(self, self.p1)

    @cached_property
    def posterior_class_means(self) -> tuple[float, float]:
        """``(E_P[post | Y=1], E_P[post | Y=2])``."""
        return (
            _quad(lambda x: posterior_exact(self, x) * self.g1(x), self),
            _quad(lambda x: posterior_exact(self, x) * self.g2(x), self),
        )


def _npdf(x, mu, sigma):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2 * math.pi))


def _quad(fn, spec: BinormalSpec) -> float:
    lo, hi = spec.bounds
    val, _ = integrate.quad(fn, lo, hi, points=[spec.mu2, spec.midpoint, spec.mu1],
                            epsabs=0.0, epsrel=QUAD_EPSREL, limit=200)
    return float(val)


def _posterior_moments(spec: BinormalSpec, q1: float) -> tuple[float, float]:
    dens = lambda x: spec.mixture_density(x, q1)
    m1 = _quad(lambda x: posterior_exact(spec, x) * dens(x), spec)
    m2 = _quad(lambda x: posterior_exact(spec, x) ** 2 * dens(x), spec)
    return m1, m2 - m1 * m1


def _check_q1(q1):
    if not 0 < q1 < 1:
        raise InvalidInputError(f"q1 must lie strictly inside (0, 1), got {q1}")


def posterior_exact(spec: BinormalSpec, x):
    """Bayes posterior ``p1 g1 / (p1 g1 + (1-p1) g2)`` of class 1, evaluated in logit space."""
    logit_p = math.log(spec.p1) - math.log1p(-spec.p1)
    out = expit(logit_p + spec.log_likelihood_ratio(x))
    return float(out) if np.ndim(out) == 0 else out


def sigma2_ml(spec: BinormalSpec, q1: float) -> float:
    """``1 / E_Q[((g1 - g2) / g_Q)^2]``; independent of ``p1``."""
    _check_q1(q1)
    info = _quad(lambda x: (spec.g1(x) - spec.g2(x)) ** 2 / spec.mixture_density(x, q1), spec)
    return 1.0 / info


def sigma2_friedman(spec: BinormalSpec, q1: float) -> float:
    _check_q1(q1)
    tpr, fpr = spec.friedman_rates
    rate = q1 * tpr + (1 - q1) * fpr
    return rate * (1 - rate) / (tpr - fpr) ** 2


def sigma2_debias(spec: BinormalSpec, q1: float) -> float:
    """``(p1 (1-p1) / var_P[post])^2 var_Q[post]`` with the training posterior."""
    _check_q1(q1)
    _, var_p = spec.posterior_moments_train
    _, var_q = _posterior_moments(spec, q1)
    return (spec.p1 * (1 - spec.p1) / var_p) ** 2 * var_q


ANALYTIC_SIGMA2 = {
    "em-ml": sigma2_ml,
    "friedman": sigma2_friedman,
    "debias": sigma2_debias,
    "pac": sigma2_debias,
}


def default_grid() -> np.ndarray:
    return np.arange(1, 100) / 100.0


@dataclass(frozen=True)
class AsymptoticVarianceCurve:
    q1_grid: np.ndarray
    var_ml: np.ndarray
    var_fried: np.ndarray
    var_debias: np.ndarray

    def rows(self):
        return zip(self.q1_grid, self.var_ml, self.var_fried, self.var_debias)


def sweep_variances(spec: BinormalSpec | None = None, grid=None) -> AsymptoticVarianceCurve:
    """Evaluate the three asymptotic variances on a grid of test priors."""
    spec = spec or BinormalSpec()
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(grid <= 0) or np.any(grid >= 1):
        raise InvalidInputError("grid values must lie strictly inside (0, 1)")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise InvalidInputError("grid must be strictly increasing")
    ml = np.array([sigma2_ml(spec, q) for q in grid])
    fr = np.array([sigma2_friedman(spec, q) for q in grid])
    db = np.array([sigma2_debias(spec, q) for q in grid])
    return AsymptoticVarianceCurve(grid, ml, fr, db)


# -- semi-asymptotic estimators on a test sample --------------------------------


def friedman_semi_asymptotic(spec: BinormalSpec, x) -> float:
    """Friedman estimate from test features with the classifier built from the exact posterior."""
    clf = friedman_classifier(spec.posterior_model())
    rate = float(np.mean(clf(np.asarray(x, dtype=float).reshape(-1, 1))[:, 0]))
    return friedman_from_rates(rate, *spec.friedman_rates)


def debias_semi_asymptotic(spec: BinormalSpec, x) -> float:
    _, var_p = spec.posterior_moments_train
    return debias_from_moments(spec.p1, var_p, float(np.mean(posterior_exact(spec, x))))


def pac_semi_asymptotic(spec: BinormalSpec, x) -> float:
    a1, a2 = spec.posterior_class_means
    return (float(np.mean(posterior_exact(spec, x))) - a2) / (a1 - a2)


def em_semi_asymptotic(spec: BinormalSpec, x, tol=1e-8, max_iter=10_000) -> float:
    from prevalest.core import UnlabeledDataset

    return float(em_ml_estimate(spec.posterior_model(), UnlabeledDataset(x), tol=tol, max_iter=max_iter).q[0])


SEMI_ASYMPTOTIC = {
    "friedman": friedman_semi_asymptotic,
    "debias": debias_semi_asymptotic,
    "pac": pac_semi_asymptotic,
    "em-ml": em_semi_asymptotic,
}


@dataclass(frozen=True)
class MonteCarloResult:
    method: str
    q1: float
    n: int
    reps: int
    seed: int
    estimates: np.ndarray
    empirical_mean: float
    empirical_variance_times_n: float | None
    analytic_sigma2: float

    @property
    def ratio(self) -> float | None:
        if self.empirical_variance_times_n is None:
            return None
        return self.empirical_variance_times_n / self.analytic_sigma2

    @property
    def standard_error(self) -> float | None:
        if self.empirical_variance_times_n is None:
            return None
        return math.sqrt(self.empirical_variance_times_n / self.n / self.reps)


def monte_carlo_clt(
    spec: BinormalSpec,
    q1: float,
    n: int,
    reps: int,
    method: str = "friedman",
    seed: int = 0,
    enforce_minimums: bool = True,
) -> MonteCarloResult:
    """Replicate the estimator on ``reps`` independent test samples of size ``n``.

    Replicate ``i`` uses the ``i``-th child of ``SeedSequence(seed)``, so results
    do not depend on execution order. The raw (unclipped) estimate is recorded.
    """
    if method not in SEMI_ASYMPTOTIC:
        raise InvalidInputError(f"unknown method {method!r}; choose from {', '.join(SEMI_ASYMPTOTIC)}")
    _check_q1(q1)
    if enforce_minimums and (n < 1000 or reps < 100):
        raise InvalidInputError("Monte Carlo needs n >= 1000 and reps >= 100")
    if n < 1 or reps < 1:
        raise InvalidInputError("n and reps must be positive")
    estimator = SEMI_ASYMPTOTIC[method]
    samplers = spec.samplers()
    q = PrevalenceVector([q1, 1.0 - q1])
    children = np.random.SeedSequence(seed).spawn(reps)
    estimates = np.empty(reps)
    for i, child in enumerate(children):
        x = sample_prior_shift(samplers, q, n, child).features[:, 0]
        estimates[i] = estimator(spec, x)
    mean = float(estimates.mean())
    if reps > 1:
        var_n = float(estimates.var(ddof=1) * n)
    else:
        var_n = None
        log.warning("sample variance is undefined for a single replicate")
    return MonteCarloResult(method, q1, n, reps, seed, estimates, mean, var_n, ANALYTIC_SIGMA2[method](spec, q1))
