"""Gibbs-posterior model assembly: the object the sampler walks over.

Parameter blocks
----------------
``beta``      outcome coefficients (design columns, treatment at index 1)
``log_sigma`` log of the outcome noise scale
``gamma``     logistic PS coefficients (``ps_mode="joint"`` only)
``u_logit``   logit of the per-unit latent treatment probabilities
              (latent-uniform PS only; updated elementwise)

In ``joint`` mode the PS coefficients enter the posterior only through the
weights (and PS covariates), so their conditional posterior depends on the
outcomes. ``plugin`` mode instead fixes them at the logistic MLE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError
from .model_core import (
    TREATMENT_INDEX,
    Dataset,
    OutcomeSpec,
    PriorSpec,
    normal_logpdf,
    ps_columns,
    static_design,
)
from .propensity import EPS, PsSpec, fit_ps_mle, ps_probability, weight

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
PS_MODES = ("joint", "plugin")


@dataclass(frozen=True)
class Block:
    name: str
    size: int
    elementwise: bool = False

    @property
    def target(self) -> float:
        # optimal-scaling heuristics: 0.44 for scalar moves, 0.234 for vectors
        return 0.44 if (self.size == 1 or self.elementwise) else 0.234


class _Memo:
    """Two-slot cache keyed on array bytes (current state and one proposal)."""

    def __init__(self, fn):
        self.fn = fn
        self.slots = []

    def __call__(self, *arrays):
        key = b"|".join(a.tobytes() for a in arrays)
        for k, v in self.slots:
            if k == key:
                return v
        v = self.fn(*arrays)
        self.slots = [(key, v)] + self.slots[:1]
        return v


class GibbsModel:
    """Weighted Gaussian outcome model with a propensity-weighted loss.

    Passing ``sigma`` fixes the noise scale and drops the ``log_sigma`` block.
    """

    def __init__(self, data: Dataset, outcome: OutcomeSpec, ps: PsSpec,
                 prior: Optional[PriorSpec] = None, ps_mode: str = "joint",
                 sigma: Optional[float] = None):
        if ps_mode not in PS_MODES:
            raise ConfigurationError(f"unknown ps_mode {ps_mode!r}; expected one of {PS_MODES}")
        if outcome.uses_ps and ps.family == "none":
            raise ConfigurationError("PS covariates need a propensity model (family 'none' given)")
        data.check_estimable()
        self.data = data
        self.outcome = outcome
        self.ps = ps
        self.prior = prior or PriorSpec()
        self.ps_mode = ps_mode
        self.y = data.y
        if sigma is not None and not sigma > 0:
            raise ConfigurationError("fixed sigma must be positive")
        self.fixed_sigma = sigma

        base = static_design(outcome, data)
        self._base = base.matrix
        _, extra = ps_columns(outcome, np.full(data.n, 0.5))
        self.labels = base.labels + tuple(extra)
        self.k = len(self.labels)
        self.coef_mean, self.coef_sd = self.prior.coefficient_moments(self.k)
        self._coef_prec = 1.0 / self.coef_sd ** 2
        self._coef_const = float(-np.log(self.coef_sd).sum() - self.k * _LOG_SQRT_2PI)

        self._ps_X = ps.design(data) if ps.family == "logistic" else None
        self.gamma_hat = None
        if ps.family == "logistic":
            fit = fit_ps_mle(data, ps.covariates)
            self.gamma_hat = fit.gamma
            self.ps_labels = tuple(f"ps[{c}]" for c in ("intercept", *ps.covariates))

        blocks = [Block("beta", self.k)]
        if sigma is None:
            blocks.append(Block("log_sigma", 1))
        if ps.family == "logistic" and ps_mode == "joint":
            blocks.append(Block("gamma", self._ps_X.shape[1]))
        elif ps.family == "latent_uniform":
            blocks.append(Block("u_logit", data.n, elementwise=True))
        self.blocks = tuple(blocks)

        self._probs = _Memo(self._compute_probs)
        self._design = _Memo(self._compute_design)
        self._resid = _Memo(self._compute_resid)
        self._col_means = _Memo(lambda ps_state: self._design(ps_state).mean(axis=0))

    # -- components -------------------------------------------------------
    def _ps_state(self, state):
        if self.ps.family == "logistic":
            return state["gamma"] if self.ps_mode == "joint" else self.gamma_hat
        if self.ps.family == "latent_uniform":
            return state["u_logit"]
        return np.zeros(0)

    def _compute_probs(self, ps_state):
        """(treatment probabilities, weights, log prior of the PS state)."""
        fam = self.ps.family
        if fam == "none":
            return None, np.ones(self.data.n), 0.0
        if fam == "logistic":
            e = ps_probability(ps_state, self._ps_X)
            lp = 0.0
            if self.ps_mode == "joint":
                lp = float(normal_logpdf(ps_state, self.prior.ps_mean, self.prior.ps_sd).sum())
        else:
            e = np.clip(expit(ps_state), EPS, 1.0 - EPS)
            lp = float(self._u_log_jacobian(ps_state).sum())
        return e, weight(self.data.d, e, self.ps.marginal_treatment_prob), lp

    @staticmethod
    def _u_log_jacobian(u_logit):
        # Uniform(0,1) prior on u, pushed through u = expit(u_logit)
        return -np.logaddexp(0.0, u_logit) - np.logaddexp(0.0, -u_logit)

    def _compute_design(self, ps_state):
        if not self.outcome.uses_ps or ps_state.size == 0:
            return self._base
        e = self._probs(ps_state)[0]
        cols, _ = ps_columns(self.outcome, e)
        return np.column_stack([self._base, *cols])

    def _design_key(self, ps_state):
        return ps_state if self.outcome.uses_ps else np.zeros(0)

    def _compute_resid(self, beta, design_key):
        r = self.y - self._design(design_key) @ beta
        return r, r * r

    def _residuals(self, beta, ps_state):
        return self._resid(beta, self._design_key(ps_state))

    # -- public interface used by the sampler ----------------------------
    def design(self, state) -> np.ndarray:
        return self._design(self._ps_state(state))

    def weights(self, state) -> np.ndarray:
        return self._probs(self._ps_state(state))[1]

    def log_posterior(self, state) -> float:
        ps_state = self._ps_state(state)
        log_sigma = float(state["log_sigma"][0])
        sigma = math.exp(log_sigma)
        _, w, lp_ps = self._probs(ps_state)
        _, r2 = self._residuals(state["beta"], ps_state)
        ll = -0.5 * float(w @ r2) / (sigma * sigma) - (log_sigma + _LOG_SQRT_2PI) * float(w.sum())
        z = state["beta"] - self.coef_mean
        lp_beta = -0.5 * float(z @ (z * self._coef_prec)) + self._coef_const
        s = self.prior.sigma_scale
        lp_sigma = -0.5 * (sigma / s) ** 2 + log_sigma  # half-normal kernel + log Jacobian
        return ll + lp_beta + lp_sigma + lp_ps

    def unit_log_terms(self, state, block: str) -> np.ndarray:
        """Per-unit posterior terms that depend on unit ``i``'s latent parameter."""
        if block != "u_logit":
            raise KeyError(block)
        u_logit = state["u_logit"]
        sigma = math.exp(float(state["log_sigma"][0]))
        _, w, _ = self._probs(u_logit)
        _, r2 = self._residuals(state["beta"], u_logit)
        logf = -0.5 * r2 / (sigma * sigma) - math.log(sigma) - _LOG_SQRT_2PI
        return w * logf + self._u_log_jacobian(u_logit)

    def initial_state(self) -> dict:
        state = {"log_sigma": np.zeros(1)}
        if self.ps.family == "logistic" and self.ps_mode == "joint":
            state["gamma"] = self.gamma_hat.copy()
        elif self.ps.family == "latent_uniform":
            state["u_logit"] = np.zeros(self.data.n)
        ps_state = self._ps_state(state)
        X = self._design(ps_state)
        w = self._probs(ps_state)[1]
        sigma2 = max(float(np.var(self.y)), 1e-8)
        for _ in range(2):
            beta = self._penalised_wls(X, w, sigma2)
            r = self.y - X @ beta
            sigma2 = max(float(w @ (r * r) / w.sum()), 1e-8)
            if self.fixed_sigma is not None:
                sigma2 = self.fixed_sigma ** 2
        state["beta"] = beta
        state["log_sigma"] = np.array([0.5 * math.log(sigma2)])
        return state

    def _penalised_wls(self, X, w, sigma2):
        prec = (X * w[:, None]).T @ X / sigma2 + np.diag(1.0 / self.coef_sd ** 2)
        rhs = X.T @ (w * self.y) / sigma2 + self.coef_mean / self.coef_sd ** 2
        return np.linalg.solve(prec, rhs)

    def proposal_covariance(self, state, block: str) -> np.ndarray:
        """Laplace-style starting shape for a joint random-walk block."""
        ps_state = self._ps_state(state)
        w = self._probs(ps_state)[1]
        if block == "beta":
            X = self._design(ps_state)
            sigma2 = math.exp(2.0 * float(state["log_sigma"][0]))
            prec = (X * w[:, None]).T @ X / sigma2 + np.diag(1.0 / self.coef_sd ** 2)
            return np.linalg.inv(prec)
        if block == "log_sigma":
            return np.array([[1.0 / (2.0 * float(w.sum()))]])
        if block == "gamma":
            e = ps_probability(state["gamma"], self._ps_X)
            info = (self._ps_X * (e * (1 - e))[:, None]).T @ self._ps_X
            return np.linalg.inv(info + np.eye(info.shape[0]) / self.prior.ps_sd ** 2)
        raise KeyError(block)

    # -- recording -------------------------------------------------------
    @property
    def record_labels(self) -> tuple:
        labels = list(self.labels) + ["sigma"]
        if self.ps.family == "logistic" and self.ps_mode == "joint":
            labels.extend(self.ps_labels)
        labels.append("mu0_bar")
        return tuple(labels)

    def record(self, state) -> np.ndarray:
        """Flattened draw: coefficients, sigma, PS coefficients, mean control prediction.

        ``mu0_bar`` is the average model prediction with treatment set to 0
        over the observed covariates.
        """
        beta = state["beta"]
        means = self._col_means(self._design_key(self._ps_state(state)))
        mu0_bar = float(means @ beta - means[TREATMENT_INDEX] * beta[TREATMENT_INDEX])
        parts = [beta, np.exp(state["log_sigma"])]
        if "gamma" in state:
            parts.append(state["gamma"])
        parts.append([mu0_bar])
        return np.concatenate(parts)
