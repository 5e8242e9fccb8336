"""Importance-sampling Bayesian bootstrap comparator (ABDR).

Each draw takes Dirichlet(1, ..., 1) resampling weights ``xi``, refits the
propensity model with ``xi`` as case weights, and maximises the
``w_k(xi) * xi_k``-weighted Gaussian log-likelihood, i.e. solves a weighted
least-squares problem. The flat-prior version is implemented; there is no
prior incorporation step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError
from .model_core import TREATMENT_INDEX, Dataset, OutcomeSpec, ps_columns, static_design
from .propensity import PsSpec, fit_logistic, ps_probability, weight
from .sampler import PosteriorSamples

MAX_DISCARD_FRACTION = 0.05


@dataclass(frozen=True)
class BootstrapConfig:
    n_draws: int = 1000
    seed: int = 0
    ps: PsSpec = field(default_factory=PsSpec)
    outcome: OutcomeSpec = field(default_factory=OutcomeSpec)
    refit_ps: bool = True
    xi_mode: str = "dirichlet"

    def __post_init__(self):
        if self.n_draws < 1:
            raise ConfigurationError("n_draws must be >= 1")
        if self.xi_mode not in ("dirichlet", "uniform"):
            raise ConfigurationError(f"unknown xi_mode {self.xi_mode!r}")
        if self.outcome.uses_ps and self.ps.family == "none":
            raise ConfigurationError("PS covariates need a propensity model")


class RankDeficientDraw(NumericError):
    pass


def draw_dirichlet_weights(n: int, rng) -> np.ndarray:
    """Flat Dirichlet draw as normalised standard exponentials."""
    if n < 1:
        raise ValueError("n must be >= 1")
    e = rng.standard_exponential(n)
    return e / e.sum()


class _Prepared:
    """Per-dataset quantities shared by all draws."""

    def __init__(self, data: Dataset, config: BootstrapConfig):
        base = static_design(config.outcome, data)
        self.base = base.matrix
        _, extra = ps_columns(config.outcome, np.full(data.n, 0.5))
        self.labels = base.labels + tuple(extra) + ("sigma", "mu0_bar")
        self.ps_X = config.ps.design(data) if config.ps.family == "logistic" else None
        self.gamma_fixed = None
        if config.ps.family == "logistic" and not config.refit_ps:
            self.gamma_fixed = fit_logistic(self.ps_X, data.d).gamma


def abdr_draw(data: Dataset, config: BootstrapConfig, xi, rng=None, *, _prep=None) -> np.ndarray:
    """One bootstrap draw ``theta_hat(xi)``.

    Returns the coefficients, then sigma, then ``mu0_bar`` (mean prediction
    with treatment set to 0 over the observed covariates).

    ``xi`` need not be normalised; the maximiser is invariant to its scale.
    ``rng`` is only consulted for the latent-uniform PS, whose unit
    probabilities are drawn afresh for every draw.
    """
    prep = _prep or _Prepared(data, config)
    xi = np.asarray(xi, dtype=float)
    xi = xi / xi.sum()
    ps = config.ps
    e = None
    if ps.family == "logistic":
        gamma = prep.gamma_fixed
        if gamma is None:
            gamma = fit_logistic(prep.ps_X, data.d, case_weights=xi).gamma
        e = ps_probability(gamma, prep.ps_X)
    elif ps.family == "latent_uniform":
        if rng is None:
            raise ConfigurationError("latent-uniform PS draws need an rng")
        e = rng.uniform(size=data.n)
        while np.any(e == 0.0):
            e[e == 0.0] = rng.uniform(size=int(np.count_nonzero(e == 0.0)))
    w = np.ones(data.n) if e is None else weight(data.d, e, ps.marginal_treatment_prob)

    X = prep.base
    if config.outcome.uses_ps:
        cols, _ = ps_columns(config.outcome, e)
        X = np.column_stack([X, *cols])
    cw = w * xi
    sw = np.sqrt(cw)
    Xw = X * sw[:, None]
    beta, _, rank, _ = np.linalg.lstsq(Xw, data.y * sw, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficientDraw("weighted outcome design is rank deficient")
    r = data.y - X @ beta
    sigma = np.sqrt(cw @ (r * r) / cw.sum())
    means = X.mean(axis=0)
    mu0_bar = means @ beta - means[TREATMENT_INDEX] * beta[TREATMENT_INDEX]
    return np.concatenate([beta, [sigma, mu0_bar]])


def abdr_posterior(data: Dataset, config: BootstrapConfig) -> PosteriorSamples:
    """``config.n_draws`` independent ABDR draws, labelled like MCMC output."""
    data.check_estimable()
    prep = _Prepared(data, config)
    rows = []
    discarded = 0
    for s in range(config.n_draws):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(s,)))
        if config.xi_mode == "uniform":
            xi = np.full(data.n, 1.0 / data.n)
        else:
            xi = draw_dirichlet_weights(data.n, rng)
        try:
            rows.append(abdr_draw(data, config, xi, rng, _prep=prep))
        except (NumericError, np.linalg.LinAlgError):
            discarded += 1
    if discarded > MAX_DISCARD_FRACTION * config.n_draws:
        raise NumericError(f"{discarded} of {config.n_draws} bootstrap draws were rank deficient")
    draws = np.asarray(rows)
    return PosteriorSamples(draws, prep.labels, seed=config.seed,
                            meta={"estimator": "abdr", "n_discarded": discarded})
