"""Observational data, outcome-model designs and the weighted (Gibbs) log posterior.

The Gibbs posterior replaces the likelihood with the exponentiated negative
loss ``-sum_i w_i log f(y_i | d_i, x_i; theta)``, with the loss temperature
fixed at one. Note that the posterior is *not* invariant to a common
rescaling of the weights: multiplying every ``w_i`` by ``c`` sharpens
(``c > 1``) or flattens (``c < 1``) it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import empirical_quantile, evaluate_basis, make_quartile_basis
from .errors import ConfigurationError, DataError, NumericError

#: Column of the treatment coefficient in every outcome design.
TREATMENT_INDEX = 1
TREATMENT_LABEL = "d"

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    d: np.ndarray
    X: np.ndarray
    names: tuple

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        d = np.asarray(self.d, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        n = y.size
        if n < 1:
            raise DataError("dataset must have at least one row")
        if X.ndim == 1:
            X = X.reshape(n, -1)
        if d.size != n or X.shape[0] != n:
            raise DataError(f"inconsistent row counts: y={n}, d={d.size}, X={X.shape[0]}")
        if X.shape[1] != len(self.names):
            raise DataError(f"{X.shape[1]} covariate columns but {len(self.names)} names")
        bad = np.flatnonzero((d != 0) & (d != 1))
        if bad.size:
            raise DataError(f"treatment must be 0/1; row {int(bad[0])} has {d[bad[0]]!r}")
        if not np.all(np.isfinite(y)):
            raise DataError(f"non-finite outcome at row {int(np.flatnonzero(~np.isfinite(y))[0])}")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite covariate at row {int(r)}, column {self.names[c]!r}")
        for arr in (y, d, X):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(str(s) for s in self.names))

    @property
    def n(self) -> int:
        return self.y.size

    def column(self, name: str) -> np.ndarray:
        try:
            return self.X[:, self.names.index(name)]
        except ValueError:
            raise ConfigurationError(f"unknown covariate column {name!r}; have {list(self.names)}") from None

    def columns(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.column(c) for c in names])

    def check_estimable(self):
        n1 = int(self.d.sum())
        if n1 == 0 or n1 == self.n:
            raise DataError("ATE estimation needs at least one treated and one untreated unit")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Read a comma-delimited file with a header containing ``y`` and ``d``."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            for req in ("y", "d"):
                if req not in header:
                    raise DataError(f"{path}: missing required column {req!r}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
                vals = []
                for col, cell in zip(header, row):
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise DataError(f"{path}: row {lineno}, column {col!r}: not a number: {cell!r}") from None
                rows.append(vals)
        if not rows:
            raise DataError(f"{path}: no data rows")
        arr = np.asarray(rows)
        iy, id_ = header.index("y"), header.index("d")
        cov = [i for i in range(len(header)) if i not in (iy, id_)]
        try:
            return cls(y=arr[:, iy], d=arr[:, id_], X=arr[:, cov].reshape(len(rows), len(cov)),
                       names=tuple(header[i] for i in cov))
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y", "d", *self.names])
            for i in range(self.n):
                w.writerow([repr(float(self.y[i])), int(self.d[i]), *(repr(float(v)) for v in self.X[i])])


@dataclass(frozen=True)
class SplineTerm:
    column: str
    degree: int = 3
    knots: str = "quartiles"

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigurationError(f"spline degree must be >= 1 (column {self.column!r})")
        if self.knots != "quartiles":
            raise ConfigurationError(f"unsupported knot rule {self.knots!r}; only 'quartiles'")


@dataclass(frozen=True)
class OutcomeSpec:
    """Recipe for the Gaussian outcome regression design.

    Columns are always ordered ``[intercept, d, covariates, splines, ps terms]``.
    A spline on a column already listed as a linear covariate replaces the
    linear term (it lies in the spline span). Each spline drops its first
    basis function, which is collinear with the intercept.
    """

    covariate_terms: tuple = ()
    include_ps_covariate: bool = False
    include_inverse_ps_covariate: bool = False
    spline_terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "covariate_terms", tuple(self.covariate_terms))
        terms = tuple(t if isinstance(t, SplineTerm) else SplineTerm(**t) for t in self.spline_terms)
        object.__setattr__(self, "spline_terms", terms)

    @property
    def uses_ps(self) -> bool:
        return self.include_ps_covariate or self.include_inverse_ps_covariate


@dataclass(frozen=True)
class Design:
    matrix: np.ndarray
    labels: tuple

    @property
    def k(self) -> int:
        return self.matrix.shape[1]


def static_design(spec: OutcomeSpec, data: Dataset) -> Design:
    """The part of the design that does not depend on propensity scores."""
    spline_cols = {t.column for t in spec.spline_terms}
    linear = [c for c in spec.covariate_terms if c not in spline_cols]
    blocks = [np.ones((data.n, 1)), data.d[:, None], data.columns(linear)]
    labels = ["intercept", TREATMENT_LABEL, *linear]
    for term in spec.spline_terms:
        x = data.column(term.column)
        basis = make_quartile_basis(x, term.degree)
        B = evaluate_basis(basis, x)[:, 1:]
        blocks.append(B)
        labels.extend(f"bs({term.column})[{j}]" for j in range(1, basis.column_count))
    return Design(np.hstack(blocks), tuple(labels))


def ps_columns(spec: OutcomeSpec, ps_values: np.ndarray) -> tuple:
    cols, labels = [], []
    if spec.include_ps_covariate:
        cols.append(ps_values)
        labels.append("ps")
    if spec.include_inverse_ps_covariate:
        cols.append(1.0 / ps_values)
        labels.append("inv_ps")
    return cols, labels


def build_design_matrix(spec: OutcomeSpec, data: Dataset, ps_values=None) -> Design:
    base = static_design(spec, data)
    if not spec.uses_ps:
        return base
    if ps_values is None:
        raise ConfigurationError("outcome spec uses a PS covariate but no propensity scores were supplied")
    ps_values = np.asarray(ps_values, dtype=float)
    if ps_values.shape != (data.n,):
        raise ConfigurationError(f"ps_values must have length {data.n}")
    if not np.all((ps_values > 0) & (ps_values < 1)):
        raise ConfigurationError("propensity scores must lie strictly inside (0, 1)")
    cols, labels = ps_columns(spec, ps_values)
    return Design(np.column_stack([base.matrix, *cols]), base.labels + tuple(labels))


@dataclass(frozen=True)
class ParamVector:
    beta: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def treatment_effect(self) -> float:
        return float(self.beta[TREATMENT_INDEX])


@dataclass(frozen=True)
class PriorSpec:
    """Independent Normal priors on coefficients and a Half-Normal prior on sigma.

    ``coef_mean``/``coef_sd`` may be scalars (broadcast) or sequences that
    cover the leading design columns; columns beyond a sequence fall back to
    ``default_mean``/``default_sd``.
    """

    coef_mean: object = 0.0
    coef_sd: object = 100.0
    sigma_scale: float = 50.0
    default_mean: float = 0.0
    default_sd: float = 100.0
    ps_mean: float = 0.0
    ps_sd: float = 100.0

    def __post_init__(self):
        sds = np.atleast_1d(np.asarray(self.coef_sd, dtype=float))
        if np.any(sds <= 0) or self.sigma_scale <= 0 or self.default_sd <= 0 or self.ps_sd <= 0:
            raise ConfigurationError("prior scales must be strictly positive")

    def coefficient_moments(self, k: int):
        def expand(v, fallback):
            v = np.atleast_1d(np.asarray(v, dtype=float))
            if v.size == 1:
                return np.full(k, v[0])
            out = np.full(k, float(fallback))
            out[: min(k, v.size)] = v[:k]
            return out
        return expand(self.coef_mean, self.default_mean), expand(self.coef_sd, self.default_sd)

    def log_density(self, theta: ParamVector) -> float:
        if not theta.sigma > 0:
            return -np.inf
        mean, sd = self.coefficient_moments(theta.beta.size)
        return normal_logpdf(theta.beta, mean, sd).sum() + half_normal_logpdf(theta.sigma, self.sigma_scale)


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x) - mean) / sd
    return -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI


def half_normal_logpdf(x, scale):
    if x < 0:
        return -np.inf
    return math.log(2.0) - 0.5 * (x / scale) ** 2 - math.log(scale) - _LOG_SQRT_2PI


def weighted_loglik(theta: ParamVector, design, y, w) -> float:
    """``sum_i w_i log N(y_i; x_i' beta, sigma^2)``."""
    X = design.matrix if isinstance(design, Design) else np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.shape != (y.size, theta.beta.size) or w.shape != y.shape:
        raise ValueError(f"dimension mismatch: X{X.shape}, y{y.shape}, w{w.shape}, beta{theta.beta.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise NumericError("weights must be finite and non-negative", int(np.flatnonzero(~(np.isfinite(w) & (w >= 0)))[0]))
    if not theta.sigma > 0:
        return -np.inf
    r = (y - X @ theta.beta) / theta.sigma
    terms = w * (-0.5 * r * r - math.log(theta.sigma) - _LOG_SQRT_2PI)
    total = float(terms.sum())
    if not np.isfinite(total):
        raise NumericError("non-finite weighted log-likelihood", int(np.flatnonzero(~np.isfinite(terms))[0]))
    return total


def gibbs_log_posterior(theta: ParamVector, design, y, w, prior: PriorSpec) -> float:
    """Unnormalised Gibbs log posterior: weighted log-likelihood plus log prior.

    Returns ``-inf`` for ``sigma <= 0`` so that samplers can reject the state.
    """
    if not theta.sigma > 0:
        return -np.inf
    return weighted_loglik(theta, design, y, w) + prior.log_density(theta)


def summarize_draws(values) -> dict:
    """Mean, sd and 2.5/50/97.5% quantiles (type-7 linear interpolation)."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("cannot summarise an empty sample")
    q = empirical_quantile(v, [0.025, 0.5, 0.975])
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "sd": sd, "q2_5": float(q[0]), "q50": float(q[1]), "q97_5": float(q[2])}


def ate_from_samples(samples) -> dict:
    """Posterior summary of the treatment coefficient, the ATE under a linear outcome model."""
    return summarize_draws(samples.column(TREATMENT_LABEL))
