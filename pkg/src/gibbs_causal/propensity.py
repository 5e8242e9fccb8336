"""Propensity-score models and importance weights ``f_E(d) / f_O(d | x)``."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, NumericError

logger = logging.getLogger(__name__)

#: Probabilities are clamped to ``[EPS, 1 - EPS]`` so that weights stay finite.
EPS = 1e-12

FAMILIES = ("logistic", "latent_uniform", "none")


@dataclass(frozen=True)
class PsSpec:
    """Propensity model.

    ``logistic`` uses an intercept plus ``covariates``; ``latent_uniform``
    gives every unit its own Uniform(0, 1) treatment probability; ``none``
    forces unit weights (used for reductions and ablations).
    """

    family: str = "logistic"
    covariates: tuple = ()
    marginal_treatment_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown PS family {self.family!r}; expected one of {FAMILIES}")
        if not 0.0 < self.marginal_treatment_prob < 1.0:
            raise ConfigurationError("marginal_treatment_prob must lie strictly inside (0, 1)")
        if self.family != "logistic" and self.covariates:
            raise ConfigurationError(f"{self.family} PS takes no covariates")

    def design(self, data) -> np.ndarray:
        """Intercept plus the selected covariates."""
        return np.column_stack([np.ones(data.n), data.columns(self.covariates)])


def ps_probability(gamma, x) -> np.ndarray | float:
    """``expit(x @ gamma)`` clamped into ``[EPS, 1 - EPS]``.

    ``x`` is a design row (or matrix) that already includes the intercept.
    """
    eta = np.asarray(x, dtype=float) @ np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(eta)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(eta)))[0]
        raise NumericError("non-finite PS linear predictor", int(bad))
    e = np.clip(expit(eta), EPS, 1.0 - EPS)
    return float(e) if np.ndim(e) == 0 else e


def clamp_count(gamma, X) -> int:
    """How many rows of ``X`` would have their probability clamped."""
    e = expit(np.asarray(X, dtype=float) @ np.asarray(gamma, dtype=float))
    return int(np.count_nonzero((e < EPS) | (e > 1.0 - EPS)))


def weight(d, e, p_e):
    """``(p_e / e)^d * ((1 - p_e) / (1 - e))^(1 - d)``; vectorised."""
    d = np.asarray(d)
    return np.where(d == 1, p_e / np.asarray(e), (1.0 - p_e) / (1.0 - np.asarray(e)))


def weights_for_dataset(spec: PsSpec, state, data):
    """Per-unit weights for a PS parameter state.

    ``state`` is the coefficient vector for ``logistic`` and the per-unit
    probability vector for ``latent_uniform`` (ignored for ``none``).
    Returns ``None`` when a latent probability falls outside (0, 1): the
    caller should treat the state as having zero posterior density.
    """
    if spec.family == "none":
        return np.ones(data.n)
    if spec.family == "logistic":
        if state is None:
            raise ConfigurationError("logistic PS needs a coefficient vector")
        e = ps_probability(state, spec.design(data))
    else:
        if state is None:
            raise ConfigurationError("latent_uniform PS needs a probability per unit")
        e = np.asarray(state, dtype=float)
        if e.shape != (data.n,):
            raise ConfigurationError(f"latent probabilities must have length {data.n}")
        if not np.all((e > 0) & (e < 1)):
            return None
    return weight(data.d, e, spec.marginal_treatment_prob)


@dataclass(frozen=True)
class PsFit:
    gamma: np.ndarray
    converged: bool
    separated: bool
    n_iter: int


def fit_ps_mle(data, selectors=(), case_weights=None, *, tol=1e-8, max_iter=100) -> PsFit:
    """Weighted logistic MLE by iteratively reweighted least squares.

    Case weights are rescaled to mean one, so the estimate does not depend on
    their overall scale. Coefficients beyond 30 in absolute value, or a fit
    that reproduces every treatment indicator to within 1e-6, are flagged as
    separation.
    """
    X = np.column_stack([np.ones(data.n), data.columns(tuple(selectors))])
    return fit_logistic(X, data.d, case_weights, tol=tol, max_iter=max_iter)


def fit_logistic(X, d, case_weights=None, *, tol=1e-8, max_iter=100) -> PsFit:
    X = np.asarray(X, dtype=float)
    d = np.asarray(d, dtype=float)
    n, q = X.shape
    if case_weights is None:
        cw = np.ones(n)
    else:
        cw = np.asarray(case_weights, dtype=float)
        if cw.shape != (n,) or np.any(cw < 0) or not np.all(np.isfinite(cw)) or cw.sum() <= 0:
            raise ConfigurationError("case weights must be finite, non-negative and not all zero")
        cw = cw * (n / cw.sum())
    active = cw > 0
    if np.linalg.matrix_rank(X[active]) < q:
        raise NumericError("PS design is rank deficient on the weighted sample")

    gamma = np.zeros(q)
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        e = ps_probability(gamma, X)
        grad = X.T @ (cw * (d - e))
        if np.linalg.norm(grad) <= tol:
            converged = True
            break
        H = (X * (cw * e * (1.0 - e))[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            separated = True
            break
        gamma = gamma + step
        if np.max(np.abs(gamma)) > 30.0:
            separated = True
            break
    else:
        e = ps_probability(gamma, X)
        converged = np.linalg.norm(X.T @ (cw * (d - e))) <= tol
    # complete separation can meet the gradient tolerance before |coef| > 30
    if np.max(np.abs(d - ps_probability(gamma, X))[active]) < 1e-6:
        separated = True
    if separated:
        warnings.warn("logistic PS fit shows separation; coefficients are unreliable", RuntimeWarning, stacklevel=3)
    return PsFit(gamma=gamma, converged=bool(converged), separated=bool(separated), n_iter=it)
