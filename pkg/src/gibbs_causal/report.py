"""Posterior report artefacts: ATE summaries, percentage change and density grids."""

from __future__ import annotations

import numpy as np
from scipy.stats import gaussian_kde

from .errors import ConfigurationError, DataError
from .model_core import TREATMENT_LABEL, summarize_draws

RHAT_WARN = 1.05
MIN_GRID = 32
MIN_DENSITY_DRAWS = 10

PCT_CHANGE_DEFINITION = (
    "per draw: 100 * ATE / mu0_bar, where mu0_bar is the mean model prediction "
    "with treatment set to 0 over the observed covariates"
)


def pct_change_draws(samples) -> np.ndarray:
    return 100.0 * samples.column(TREATMENT_LABEL) / samples.column("mu0_bar")


def _four(summary):
    return {"posterior_mean": summary["mean"], "posterior_sd": summary["sd"],
            "ci_2_5": summary["q2_5"], "ci_97_5": summary["q97_5"]}


def fit_summary(samples, extra_warnings=()) -> dict:
    """The summary document written by the ``fit`` and ``abdr`` commands."""
    ate = summarize_draws(samples.column(TREATMENT_LABEL))
    warnings = list(extra_warnings)
    for label, r in samples.split_rhat.items():
        if r is not None and r > RHAT_WARN:
            warnings.append(f"split R-hat for {label} is {r:.3f} (> {RHAT_WARN})")
    if samples.stuck:
        warnings.append("chain flagged as stuck")
    return {
        **_four(ate),
        "pct_change": {**_four(summarize_draws(pct_change_draws(samples))), "definition": PCT_CHANGE_DEFINITION},
        "diagnostics": {"ess": samples.ess, "split_rhat": samples.split_rhat, "acceptance": samples.acceptance},
        "warnings": warnings,
    }


def density_grid(values, grid_size: int = 512):
    """Gaussian KDE (Silverman bandwidth) on an even grid over range +/- 3 bandwidths.

    Returns ``(x, density)``.
    """
    v = np.asarray(values, dtype=float)
    if grid_size < MIN_GRID:
        raise ConfigurationError(f"grid size must be at least {MIN_GRID}, got {grid_size}")
    if v.size < MIN_DENSITY_DRAWS:
        raise DataError(f"need at least {MIN_DENSITY_DRAWS} draws for a density, got {v.size}")
    if np.ptp(v) == 0:
        raise DataError("cannot estimate a density from constant draws")
    kde = gaussian_kde(v, bw_method="silverman")
    h = float(np.sqrt(kde.covariance[0, 0]))
    x = np.linspace(v.min() - 3 * h, v.max() + 3 * h, int(grid_size))
    return x, kde(x)
