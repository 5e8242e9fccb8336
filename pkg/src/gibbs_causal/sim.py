"""Data-generating processes and replication studies for the two simulation designs.

Example 1 (single confounder)::

    X ~ N(0, 10);  D | X ~ Bernoulli(expit(2 + 0.2 X));  Y | D, X ~ N(10 + 5 D + 0.2 X, 5)

Example 2 (four covariates, one entering through a folded normal)::

    X1..X4 ~ N(0, 1);  U1 = |X1| / sqrt(1 - 2/pi)
    D ~ Bernoulli(expit(0.4 U1 + 0.4 X2 + 0.8 X3));  Y ~ N(D - U1 - X2 - X4, 1)

The second arguments of ``N(., .)`` in Example 1 are read as variances by
default; ``variance_convention="sd"`` reads them as standard deviations.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .assembly import GibbsModel
from .bootstrap import BootstrapConfig, abdr_posterior
from .errors import ConfigurationError
from .model_core import TREATMENT_LABEL, Dataset, OutcomeSpec, PriorSpec, SplineTerm, summarize_draws
from .propensity import PsSpec
from .sampler import SamplerConfig, run_chain

logger = logging.getLogger(__name__)

THREADS_ENV = "GIBBS_CAUSAL_THREADS"
STUCK_EXCLUSION_FRACTION = 0.02

EXAMPLE1_DEFAULTS = {"alpha": (2.0, 0.2), "theta": (10.0, 5.0, 0.2), "x_scale": 10.0, "y_scale": 5.0}
EXAMPLE2_DEFAULTS = {"gamma": (0.4, 0.4, 0.8), "effect": 1.0}


@dataclass(frozen=True)
class DgpSpec:
    example: str = "one"
    n: int = 1000
    variance_convention: str = "variance"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.example not in ("one", "two"):
            raise ConfigurationError(f"example must be 'one' or 'two', got {self.example!r}")
        if self.n < 10:
            raise ConfigurationError("n must be >= 10")
        if self.variance_convention not in ("variance", "sd"):
            raise ConfigurationError("variance_convention must be 'variance' or 'sd'")
        defaults = EXAMPLE1_DEFAULTS if self.example == "one" else EXAMPLE2_DEFAULTS
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ConfigurationError(f"unknown DGP parameters {sorted(unknown)}")
        object.__setattr__(self, "params", {**defaults, **self.params})

    @property
    def truth(self) -> float:
        return float(self.params["theta"][1]) if self.example == "one" else float(self.params["effect"])

    def _sd(self, scale):
        return math.sqrt(scale) if self.variance_convention == "variance" else float(scale)


def dgp_example1(spec: DgpSpec, rng) -> Dataset:
    p = spec.params
    a0, a1 = p["alpha"]
    t0, t1, t2 = p["theta"]
    x = rng.normal(0.0, spec._sd(p["x_scale"]), spec.n)
    d = (rng.random(spec.n) < expit(a0 + a1 * x)).astype(float)
    y = rng.normal(t0 + t1 * d + t2 * x, spec._sd(p["y_scale"]))
    return Dataset(y, d, x[:, None], ("x",))


def dgp_example2(spec: DgpSpec, rng) -> Dataset:
    p = spec.params
    g1, g2, g3 = p["gamma"]
    X = rng.normal(size=(spec.n, 4))
    u1 = np.abs(X[:, 0]) / math.sqrt(1.0 - 2.0 / math.pi)
    d = (rng.random(spec.n) < expit(g1 * u1 + g2 * X[:, 1] + g3 * X[:, 2])).astype(float)
    y = rng.normal(p["effect"] * d - u1 - X[:, 1] - X[:, 3], 1.0)
    return Dataset(y, d, np.column_stack([X, u1]), ("x1", "x2", "x3", "x4", "u1"))


def generate(spec: DgpSpec, rng) -> Dataset:
    return dgp_example1(spec, rng) if spec.example == "one" else dgp_example2(spec, rng)


# scenario -> (example, outcome covariates, PS family, PS covariates)
SCENARIOS = {
    "correct_or_incorrect_ps": ("one", ("x",), "latent_uniform", ()),
    "incorrect_or_correct_ps": ("one", (), "logistic", ("x",)),
    "both_incorrect": ("one", (), "latent_uniform", ()),
    "scenario_I": ("two", ("x1", "x2", "x4"), "logistic", ("u1", "x2", "x3")),
    "scenario_II": ("two", ("u1", "x2", "x4"), "logistic", ("x1", "x2", "x3")),
}
VARIANTS = ("plain", "ps_cov", "inv_ps_cov", "bspline_x1")


def scenario_models(scenario: str, variant: str = "plain", p_treated: float = 0.5):
    """Outcome and PS specifications for a named scenario and model variant."""
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    example, or_cols, family, ps_cols = SCENARIOS[scenario]
    splines = ()
    if variant == "bspline_x1":
        if example != "two":
            raise ConfigurationError("bspline_x1 needs an x1 column (Example 2 scenarios)")
        splines = (SplineTerm("x1"),)
    outcome = OutcomeSpec(or_cols, include_ps_covariate=variant == "ps_cov",
                          include_inverse_ps_covariate=variant == "inv_ps_cov", spline_terms=splines)
    return example, outcome, PsSpec(family, ps_cols, p_treated)


def default_prior(example: str) -> PriorSpec:
    if example == "one":
        return PriorSpec(coef_mean=(10.0, 5.0, 0.2), coef_sd=100.0)
    return PriorSpec(coef_mean=0.0, coef_sd=100.0)


@dataclass(frozen=True)
class StudySpec:
    dgp: DgpSpec
    scenario: str
    estimator: str = "gibbs"
    variant: str = "plain"
    n_replicates: int = 200
    n_iterations: int = 4000
    n_burnin: int = 1000
    n_draws: int = 1000
    master_seed: int = 0
    ps_mode: str = "joint"
    refit_ps: bool = True
    force_unit_weights: bool = False
    xi_mode: str = "dirichlet"

    def __post_init__(self):
        if isinstance(self.dgp, dict):
            object.__setattr__(self, "dgp", DgpSpec(**self.dgp))
        if self.estimator not in ("gibbs", "abdr"):
            raise ConfigurationError(f"estimator must be 'gibbs' or 'abdr', got {self.estimator!r}")
        example = scenario_models(self.scenario, self.variant)[0]
        if example != self.dgp.example:
            raise ConfigurationError(f"scenario {self.scenario!r} belongs to example {example!r}")
        if self.n_replicates < 1:
            raise ConfigurationError("n_replicates must be >= 1")
        SamplerConfig(self.n_iterations, self.n_burnin)

    def models(self):
        _, outcome, ps = scenario_models(self.scenario, self.variant)
        if self.force_unit_weights:
            ps = PsSpec("none")
        return outcome, ps


def replicate_seeds(master_seed: int, index: int):
    """Independent (data, estimator) seeds for one replicate."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    data_ss, est_ss = ss.spawn(2)
    est_seed = int(est_ss.generate_state(1, dtype=np.uint64)[0])
    return data_ss, est_seed


def run_replicate(spec: StudySpec, index: int) -> dict:
    data_ss, est_seed = replicate_seeds(spec.master_seed, index)
    data = generate(spec.dgp, np.random.default_rng(data_ss))
    outcome, ps = spec.models()
    if spec.estimator == "gibbs":
        model = GibbsModel(data, outcome, ps, default_prior(spec.dgp.example), ps_mode=spec.ps_mode)
        samples = run_chain(SamplerConfig(spec.n_iterations, spec.n_burnin, seed=est_seed), model)
    else:
        cfg = BootstrapConfig(spec.n_draws, est_seed, ps, outcome, refit_ps=spec.refit_ps, xi_mode=spec.xi_mode)
        samples = abdr_posterior(data, cfg)
    s = summarize_draws(samples.column(TREATMENT_LABEL))
    truth = spec.dgp.truth
    return {
        "replicate": index,
        "estimate": s["mean"],
        "posterior_sd": s["sd"],
        "draw_var": float(np.var(samples.column(TREATMENT_LABEL))),
        "ci_2_5": s["q2_5"],
        "ci_97_5": s["q97_5"],
        "covered": bool(s["q2_5"] <= truth <= s["q97_5"]),
        "stuck": bool(samples.stuck),
        "ess": samples.ess.get(TREATMENT_LABEL),
        "split_rhat": samples.split_rhat.get(TREATMENT_LABEL),
    }


@dataclass
class SimulationReport:
    truth: float
    av_est: float
    emp_var: float
    mse: float
    coverage: float
    mean_draw_var: float
    n_replicates: int
    n_stuck: int
    n_excluded: int
    records: list

    @classmethod
    def from_records(cls, records, truth: float) -> "SimulationReport":
        """Aggregate replicate records.

        ``emp_var`` is the (ddof=0) variance of the per-replicate posterior
        means, so ``mse == (av_est - truth)**2 + emp_var`` up to rounding.
        Stuck chains are dropped only when they exceed 2% of replicates.
        """
        records = sorted(records, key=lambda r: r["replicate"])
        n_stuck = sum(r["stuck"] for r in records)
        used = records
        if n_stuck > STUCK_EXCLUSION_FRACTION * len(records):
            used = [r for r in records if not r["stuck"]]
        if not used:
            raise ValueError("no usable replicates")
        est = np.array([r["estimate"] for r in used])
        av = float(est.mean())
        return cls(
            truth=float(truth),
            av_est=av,
            emp_var=float(np.mean((est - av) ** 2)),
            mse=float(np.mean((est - truth) ** 2)),
            coverage=float(np.mean([r["covered"] for r in used])),
            mean_draw_var=float(np.mean([r["draw_var"] for r in used])),
            n_replicates=len(records),
            n_stuck=int(n_stuck),
            n_excluded=len(records) - len(used),
            records=records,
        )

    def summary(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "records"}

    def write_json(self, path, extra=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({**(extra or {}), **self.summary()}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_records_csv(self, path):
        keys = list(self.records[0])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in self.records:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def worker_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, os.cpu_count() or 1))


def run_study(spec: StudySpec, workers: Optional[int] = None, indices=None) -> SimulationReport:
    """Run ``spec.n_replicates`` independent replicates and aggregate them."""
    indices = list(range(spec.n_replicates)) if indices is None else list(indices)
    workers = worker_count(workers)
    if workers == 1:
        records = [run_replicate(spec, i) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_replicate, [spec] * len(indices), indices))
    return SimulationReport.from_records(records, spec.dgp.truth)
