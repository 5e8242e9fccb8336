"""Adaptive Metropolis-within-Gibbs sampling and single-chain diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericError
from .model_core import summarize_draws

logger = logging.getLogger(__name__)

STUCK_RUN = 500
_COV_CHECKPOINTS = (0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class SamplerConfig:
    n_iterations: int = 4000
    n_burnin: int = 1000
    seed: int = 0
    step_sizes: Optional[dict] = None
    target_acceptance: Optional[dict] = None
    adapt: bool = True

    def __post_init__(self):
        if self.n_iterations < 1 or not 0 <= self.n_burnin < self.n_iterations:
            raise ConfigurationError("need 0 <= n_burnin < n_iterations")
        for v in (self.step_sizes or {}).values():
            if not v > 0:
                raise ConfigurationError("step sizes must be positive")
        for v in (self.target_acceptance or {}).values():
            if not 0 < v < 1:
                raise ConfigurationError("target acceptance rates must lie in (0, 1)")


@dataclass
class PosteriorSamples:
    draws: np.ndarray
    labels: tuple
    acceptance: dict = field(default_factory=dict)
    seed: Optional[int] = None
    stuck: bool = False
    n_nonfinite: int = 0
    ess: dict = field(default_factory=dict)
    split_rhat: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.labels = tuple(self.labels)
        if self.draws.shape[1] != len(self.labels):
            raise ValueError("one label per draw column required")
        if not self.ess and self.draws.shape[0] >= 4:
            diag = diagnostics(self)
            self.ess, self.split_rhat = diag["ess"], diag["split_rhat"]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def column(self, label: str) -> np.ndarray:
        try:
            return self.draws[:, self.labels.index(label)]
        except ValueError:
            raise KeyError(f"no parameter {label!r}; have {list(self.labels)}") from None

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.labels)
            for row in self.draws:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "PosteriorSamples":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: no draws")
        return cls(np.asarray(rows[1:], dtype=float), tuple(rows[0]))

    def metadata(self) -> dict:
        return {
            "labels": list(self.labels),
            "n_draws": self.n_draws,
            "seed": self.seed,
            "acceptance": self.acceptance,
            "stuck": self.stuck,
            "n_nonfinite_proposals": self.n_nonfinite,
            "ess": self.ess,
            "split_rhat": self.split_rhat,
            **self.meta,
        }

    def write_metadata(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _JointKernel:
    """Multivariate Gaussian random walk with Robbins-Monro scale adaptation."""

    def __init__(self, block, cov, step, target):
        self.block = block
        self.d = block.size
        self.log_scale = math.log(step if step is not None else 2.38 / math.sqrt(self.d))
        self.target = target
        self._set_shape(cov)
        self.accepted = 0
        self.proposed = 0
        self.window = []
        self.run = 0
        self.stuck = False

    def _set_shape(self, cov):
        cov = np.atleast_2d(cov)
        jitter = 1e-12 * max(float(np.trace(cov)) / self.d, 1e-300)
        self.chol = np.linalg.cholesky(cov + jitter * np.eye(self.d))

    def propose(self, x, rng):
        return x + math.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.d))

    def adapt(self, acc_prob, t):
        self.log_scale += (acc_prob - self.target) / (t + 1) ** 0.6

    def reshape_from_window(self):
        W = np.asarray(self.window)
        self.window = []
        if W.shape[0] < 50 or self.d == 1:
            return
        moved = np.count_nonzero(np.any(np.diff(W, axis=0) != 0, axis=1))
        if moved < 0.05 * W.shape[0]:
            return
        cov = np.cov(W, rowvar=False)
        try:
            self._set_shape(cov)
        except np.linalg.LinAlgError:
            return
        self.log_scale = math.log(2.38 / math.sqrt(self.d))


def _accept(log_ratio, log_u):
    return log_u < log_ratio


def run_chain(config: SamplerConfig, model, *, rng=None) -> PosteriorSamples:
    """Run one chain of Metropolis-within-Gibbs over ``model.blocks``.

    Each sweep updates the blocks in their declared order. Joint blocks use a
    Gaussian random walk whose shape starts at ``model.proposal_covariance``
    and is re-estimated from burn-in draws; elementwise blocks take
    independent scalar steps per unit with per-unit step sizes. All
    adaptation stops at the end of burn-in, so the retained draws come from
    a fixed Markov kernel.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    steps = config.step_sizes or {}
    targets = config.target_acceptance or {}
    state = {k: np.array(v, dtype=float) for k, v in model.initial_state().items()}
    lp = model.log_posterior(state)
    if not np.isfinite(lp):
        raise NumericError(f"initial state has log posterior {lp}")

    kernels = {}
    unit_steps = {}
    unit_acc = {}
    for b in model.blocks:
        tgt = targets.get(b.name, b.target)
        if b.elementwise:
            unit_steps[b.name] = np.full(b.size, float(steps.get(b.name, 1.0)))
            unit_acc[b.name] = np.zeros(b.size)
        else:
            cov = model.proposal_covariance(state, b.name)
            kernels[b.name] = _JointKernel(b, cov, steps.get(b.name), tgt)

    n_keep = config.n_iterations - config.n_burnin
    labels = model.record_labels
    out = np.empty((n_keep, len(labels)))
    checkpoints = {int(f * config.n_burnin) for f in _COV_CHECKPOINTS} if config.adapt else set()
    n_nonfinite = 0

    for it in range(config.n_iterations):
        burning = it < config.n_burnin
        for b in model.blocks:
            if b.elementwise:
                x = state[b.name]
                step = unit_steps[b.name]
                old_terms = model.unit_log_terms(state, b.name)
                prop = dict(state)
                prop[b.name] = x + step * rng.standard_normal(b.size)
                new_terms = model.unit_log_terms(prop, b.name)
                diff = new_terms - old_terms
                bad = ~np.isfinite(new_terms) & ~(new_terms == -np.inf)
                n_nonfinite += int(bad.sum())
                diff[bad] = -np.inf
                acc = _accept(diff, np.log(rng.random(b.size)))
                state[b.name] = np.where(acc, prop[b.name], x)
                unit_acc[b.name] += acc
                if burning and config.adapt:
                    tgt = targets.get(b.name, b.target)
                    p = np.exp(np.minimum(diff, 0.0))
                    step *= np.exp((p - tgt) / (it + 1) ** 0.6)
                lp = model.log_posterior(state)
                continue

            k = kernels[b.name]
            prop = dict(state)
            prop[b.name] = k.propose(state[b.name], rng)
            lp_new = model.log_posterior(prop)
            if np.isnan(lp_new) or lp_new == np.inf:
                n_nonfinite += 1
                lp_new = -np.inf
            log_ratio = lp_new - lp
            k.proposed += 1
            if _accept(log_ratio, math.log(rng.random())):
                state, lp = prop, lp_new
                k.accepted += 1
                k.run = 0
            else:
                k.run += 1
                if not burning and k.run >= STUCK_RUN:
                    k.stuck = True
            if burning and config.adapt:
                k.adapt(math.exp(min(log_ratio, 0.0)), it)
                if b.size > 1:
                    k.window.append(state[b.name].copy())
        if burning and (it + 1) in checkpoints:
            for k in kernels.values():
                k.reshape_from_window()
        if not burning:
            out[it - config.n_burnin] = model.record(state)

    acceptance = {name: k.accepted / max(k.proposed, 1) for name, k in kernels.items()}
    for name, a in unit_acc.items():
        acceptance[name] = float(a.mean() / config.n_iterations)
    stuck = any(k.stuck for k in kernels.values())
    if stuck:
        logger.warning("chain flagged as stuck (%d consecutive rejections in a block)", STUCK_RUN)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite value among retained draws")
    return PosteriorSamples(out, labels, acceptance=acceptance, seed=config.seed, stuck=stuck,
                            n_nonfinite=n_nonfinite)


# -- diagnostics --------------------------------------------------------

def _autocorr(x):
    n = x.size
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    return acov / acov[0]


def effective_sample_size(x) -> Optional[float]:
    """Single-chain ESS with Geyer's initial monotone sequence truncation.

    Returns ``None`` for a constant chain, where ESS is undefined.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.ptp(x) == 0:
        return None
    rho = _autocorr(x)
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    pos = pairs > 0
    stop = n_pairs if pos.all() else int(np.argmin(pos))
    pairs = np.minimum.accumulate(pairs[:stop])
    tau = -1.0 + 2.0 * pairs.sum()
    return float(n / max(tau, 1.0 / np.log10(n)))


def split_rhat(x) -> Optional[float]:
    """Potential scale reduction from the two halves of one chain."""
    x = np.asarray(x, dtype=float)
    half = x.size // 2
    if half < 2:
        return None
    chains = np.stack([x[:half], x[x.size - half:]])
    within = chains.var(axis=1, ddof=1).mean()
    if within == 0:
        return None
    between = half * chains.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


def diagnostics(samples: PosteriorSamples) -> dict:
    if samples.n_draws < 4:
        raise ValueError("diagnostics need at least 4 retained draws")
    ess = {lab: effective_sample_size(samples.draws[:, j]) for j, lab in enumerate(samples.labels)}
    rhat = {lab: split_rhat(samples.draws[:, j]) for j, lab in enumerate(samples.labels)}
    return {"ess": ess, "split_rhat": rhat, "acceptance": dict(samples.acceptance)}


def summarize(samples: PosteriorSamples, label: str) -> dict:
    """Posterior mean, sd and 2.5/50/97.5% quantiles of one parameter."""
    return summarize_draws(samples.column(label))
