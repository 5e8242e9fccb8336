"""Acceptance suite: scaled replication targets plus oracle and property checks.

Every criterion records one or more ``PASS``/``FAIL`` lines which are printed
at the end of the pytest session (see ``conftest.py``).  The module can also
be executed directly::

    python3 tests/test_acceptance.py

The simulation studies are expensive (roughly half an hour on one core);
set ``GIBBS_CAUSAL_THREADS`` to use more worker processes.
"""
import math
import sys
import time

import numpy as np
import pytest
from scipy.stats import halfnorm, norm

from gibbs_causal.assembly import GibbsModel
from gibbs_causal.basis import evaluate_basis, make_quartile_basis
from gibbs_causal.bootstrap import BootstrapConfig, abdr_draw, draw_dirichlet_weights
from gibbs_causal.model_core import OutcomeSpec, ParamVector, PriorSpec, gibbs_log_posterior
from gibbs_causal.propensity import PsSpec
from gibbs_causal.sampler import SamplerConfig, run_chain
from gibbs_causal.sim import (
    DgpSpec,
    SimulationReport,
    StudySpec,
    default_prior,
    dgp_example1,
    dgp_example2,
    run_replicate,
    run_study,
    scenario_models,
)

pytestmark = pytest.mark.slow

RESULTS = []


def check(criterion, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {name} | {detail}"
    RESULTS.append(line)
    return bool(ok)


def note(criterion, detail):
    RESULTS.append(f"[INFO] criterion {criterion}: {detail}")


def within(x, target, tol):
    return abs(x - target) <= tol


# ---------------------------------------------------------------- studies

_STUDIES = {}


def study(key, **kwargs):
    """Run (once per session) and cache a simulation study."""
    if key not in _STUDIES:
        t0 = time.perf_counter()
        rep = run_study(StudySpec(**kwargs))
        _STUDIES[key] = (rep, time.perf_counter() - t0)
    return _STUDIES[key]


def ex1(n=1000, convention="variance"):
    return DgpSpec("one", n, variance_convention=convention)


def ex2(n=1000):
    return DgpSpec("two", n)


# ---------------------------------------------------------------- criterion 1

def test_criterion1_example1_gibbs_plain():
    r1, t1 = study("ex1_case1", dgp=ex1(), scenario="correct_or_incorrect_ps", n_replicates=200, master_seed=101)
    r2, t2 = study("ex1_case2", dgp=ex1(), scenario="incorrect_or_correct_ps", n_replicates=200, master_seed=102)
    r3, t3 = study("ex1_case3", dgp=ex1(), scenario="both_incorrect", n_replicates=200, master_seed=103)
    oks = [
        check(1, "correct OR / incorrect PS av_est = 5.00 +/- 0.05", within(r1.av_est, 5.0, 0.05),
              f"av_est={r1.av_est:.4f}"),
        check(1, "correct OR / incorrect PS emp_var in [0.030, 0.065]", 0.030 <= r1.emp_var <= 0.065,
              f"emp_var={r1.emp_var:.4f}"),
        check(1, "incorrect OR / correct PS av_est = 5.20 +/- 0.07", within(r2.av_est, 5.2, 0.07),
              f"av_est={r2.av_est:.4f}"),
        check(1, "both incorrect av_est = 5.38 +/- 0.10", within(r3.av_est, 5.38, 0.10),
              f"av_est={r3.av_est:.4f}"),
    ]
    note(1, f"wall time {t1 + t2 + t3:.0f}s; stuck chains {r1.n_stuck}/{r2.n_stuck}/{r3.n_stuck}")
    # the alternative reading of the noise scales, recorded for comparison only
    alt, _ = study("ex1_case1_sd", dgp=ex1(convention="sd"), scenario="correct_or_incorrect_ps",
                   n_replicates=50, master_seed=104)
    note(1, f"variance convention emp_var={r1.emp_var:.4f} (R=200); "
            f"sd convention emp_var={alt.emp_var:.4f} (R=50)")
    assert all(oks)


# ---------------------------------------------------------------- criterion 2

def test_criterion2_ps_covariate():
    r, _ = study("ex1_case2_pscov", dgp=ex1(), scenario="incorrect_or_correct_ps", variant="ps_cov",
                 n_replicates=200, master_seed=202)
    oks = [
        check(2, "PS-cov av_est = 5.00 +/- 0.05", within(r.av_est, 5.0, 0.05), f"av_est={r.av_est:.4f}"),
        check(2, "PS-cov mse <= 0.08", r.mse <= 0.08, f"mse={r.mse:.4f}"),
    ]
    assert all(oks)


# ---------------------------------------------------------------- criterion 3

def test_criterion3_abdr_contrast():
    gibbs, _ = study("ex1_case1", dgp=ex1(), scenario="correct_or_incorrect_ps", n_replicates=200, master_seed=101)
    abdr, t = study("ex1_case1_abdr", dgp=ex1(), scenario="correct_or_incorrect_ps", estimator="abdr",
                    n_draws=1000, n_replicates=100, master_seed=301)
    ratio = abdr.mean_draw_var / gibbs.emp_var
    ok = check(3, "ABDR draw variance >= 5 x Gibbs emp_var", ratio >= 5,
               f"abdr_draw_var={abdr.mean_draw_var:.4f} gibbs_emp_var={gibbs.emp_var:.4f} ratio={ratio:.1f}")
    note(3, f"ABDR across-replicate emp_var={abdr.emp_var:.4f} av_est={abdr.av_est:.4f} ({t:.0f}s)")
    assert ok


# ---------------------------------------------------------------- criterion 4

TABLE2 = [
    ("scenario_II", "plain", 1.00, (0.92, 0.97), None),
    ("scenario_I", "plain", 0.81, None, 0.60),
    ("scenario_I", "bspline_x1", 0.99, (0.92, 0.97), None),
    ("scenario_I", "ps_cov", 1.03, (0.87, 0.94), None),
]


def test_criterion4_example2():
    oks = []
    for k, (scenario, variant, target, band, cap) in enumerate(TABLE2):
        r, t = study(f"ex2_{scenario}_{variant}", dgp=ex2(), scenario=scenario, variant=variant,
                     n_replicates=500, master_seed=400 + k)
        label = f"{scenario} {variant}"
        oks.append(check(4, f"{label} av_est = {target:.2f} +/- 0.03", within(r.av_est, target, 0.03),
                         f"av_est={r.av_est:.4f}"))
        if band is not None:
            oks.append(check(4, f"{label} coverage in [{band[0]:.0%}, {band[1]:.0%}]",
                             band[0] <= r.coverage <= band[1], f"coverage={r.coverage:.3f}"))
        else:
            oks.append(check(4, f"{label} coverage <= {cap:.0%}", r.coverage <= cap, f"coverage={r.coverage:.3f}"))
        note(4, f"{label}: emp_var={r.emp_var:.4f} stuck={r.n_stuck} ({t:.0f}s)")
    assert all(oks)


# ---------------------------------------------------------------- criterion 5

def _closed_form(model, sigma):
    state = model.initial_state()
    X, w = model.design(state), model.weights(state)
    prec = (X * w[:, None]).T @ X / sigma ** 2 + np.diag(1 / model.coef_sd ** 2)
    V = np.linalg.inv(prec)
    m = V @ (X.T @ (w * model.y) / sigma ** 2 + model.coef_mean / model.coef_sd ** 2)
    return m, V


def test_criterion5_oracle_equivalence():
    data = dgp_example1(DgpSpec("one", 500), np.random.default_rng(5))
    cases = [
        ("conjugate w=1", PsSpec("none"), PriorSpec(coef_mean=(10.0, 5.0, 0.2), coef_sd=(3.0, 2.0, 1.0)),
         math.sqrt(5.0)),
        ("weighted least squares", PsSpec("logistic", ("x",)), PriorSpec(), 2.0),
    ]
    oks = []
    for k, (name, ps, prior, sigma) in enumerate(cases):
        model = GibbsModel(data, OutcomeSpec(("x",)), ps, prior, ps_mode="plugin", sigma=sigma)
        m, V = _closed_form(model, sigma)
        t0 = time.perf_counter()
        s = run_chain(SamplerConfig(21_000, 1_000, seed=50 + k), model)
        elapsed = time.perf_counter() - t0
        worst = 0.0
        for j, lab in enumerate(model.labels):
            x, ess, sd = s.column(lab), s.ess[lab], math.sqrt(V[j, j])
            worst = max(worst, abs(x.mean() - m[j]) / (sd / math.sqrt(ess)),
                        abs(x.std(ddof=1) - sd) / (sd / math.sqrt(2 * ess)))
        oks.append(check(5, f"{name}: mean and sd within 3 MC-SE at 20000 draws", worst < 3 and s.n_draws == 20_000,
                         f"max |z|={worst:.2f}"))
        oks.append(check(5, f"{name}: runtime <= 60s", elapsed <= 60, f"{elapsed:.1f}s"))
    assert all(oks)


# ---------------------------------------------------------------- criterion 6

def test_criterion6_property_suite():
    rng = np.random.default_rng(6)
    oks = []

    # with w = 1 the Gibbs posterior is the ordinary posterior, checked at retained draws of a chain
    data = dgp_example1(DgpSpec("one", 200), np.random.default_rng(61))
    cfg = SamplerConfig(300, 100, seed=7)
    prior = PriorSpec(coef_mean=(10.0, 5.0, 0.2), coef_sd=100.0)
    unit_model = GibbsModel(data, OutcomeSpec(("x",)), PsSpec("none"), prior)
    chain = run_chain(cfg, unit_model)
    state = unit_model.initial_state()
    X, w = unit_model.design(state), unit_model.weights(state)
    k = X.shape[1]
    worst = 0.0
    for row in chain.draws[::10]:
        th = ParamVector(row[:k], row[k])
        standard = (norm.logpdf(data.y, X @ th.beta, th.sigma).sum()
                    + norm.logpdf(th.beta, prior.coef_mean, 100.0).sum() + halfnorm.logpdf(th.sigma, scale=50.0))
        worst = max(worst, abs(gibbs_log_posterior(th, X, data.y, w, prior) - standard) / abs(standard))
    oks.append(check(6, "unit-weight reduction identity", worst < 1e-12 and np.array_equal(w, np.ones(data.n)),
                     f"max rel diff={worst:.1e} over {len(chain.draws[::10])} draws"))

    err = 0.0
    for _ in range(20):
        x = rng.gamma(2.0, size=200)
        basis = make_quartile_basis(x)
        grid = np.concatenate([x, np.linspace(x.min(), x.max(), 500)])
        err = max(err, np.abs(evaluate_basis(basis, grid).sum(axis=1) - 1).max())
    oks.append(check(6, "B-spline partition of unity (1e-10)", err <= 1e-10, f"max err={err:.1e}"))

    n, reps = 10, 20_000
    xi = np.array([draw_dirichlet_weights(n, rng) for _ in range(reps)])
    mean_z = np.abs(xi.mean(axis=0) - 1 / n) / (xi.std(axis=0) / math.sqrt(reps))
    var_true = (n - 1) / (n ** 2 * (n + 1))
    sq = (xi - 1 / n) ** 2
    var_z = np.abs(sq.mean(axis=0) - var_true) / (sq.std(axis=0) / math.sqrt(reps))
    oks.append(check(6, "Dirichlet draw moments within 3 SE", max(mean_z.max(), var_z.max()) < 3,
                     f"max |z| mean={mean_z.max():.2f} var={var_z.max():.2f}"))

    bcfg = BootstrapConfig(1, 0, PsSpec("logistic", ("x",)), OutcomeSpec(include_ps_covariate=True))
    e = rng.standard_exponential(data.n)
    base = abdr_draw(data, bcfg, e / e.sum())
    exact = all(np.array_equal(abdr_draw(data, bcfg, c * e / e.sum()), base) for c in (2.0 ** -9, 4.0, 2.0 ** 30))
    oks.append(check(6, "xi-rescaling argmax invariance", exact, "power-of-two rescalings bit-identical"))

    recs = [{"replicate": i, "estimate": v, "stuck": False, "covered": True, "draw_var": 0.0}
            for i, v in enumerate(rng.normal(5.1, 0.3, 500))]
    rep = SimulationReport.from_records(recs, 5.0)
    gap = abs(rep.mse - ((rep.av_est - rep.truth) ** 2 + rep.emp_var))
    oks.append(check(6, "bias-variance identity (1e-10)", gap <= 1e-10, f"gap={gap:.1e}"))

    spec = StudySpec(dgp=DgpSpec("two", 300), scenario="scenario_I", variant="bspline_x1", n_replicates=2,
                     n_iterations=300, n_burnin=100, master_seed=66)
    first, second = run_replicate(spec, 1), run_replicate(spec, 1)
    s1 = run_chain(cfg, GibbsModel(data, OutcomeSpec(("x",)), PsSpec("latent_uniform")))
    s2 = run_chain(cfg, GibbsModel(data, OutcomeSpec(("x",)), PsSpec("latent_uniform")))
    oks.append(check(6, "byte-identical rerun determinism",
                     first == second and s1.draws.tobytes() == s2.draws.tobytes(), "replicate record and draws"))
    assert all(oks)


# ---------------------------------------------------------------- criterion 7

def _posterior_d(data, scenario, variant, seed, n_iter=3000, n_burn=1000):
    example, outcome, ps = scenario_models(scenario, variant)
    model = GibbsModel(data, outcome, ps, default_prior(example))
    return run_chain(SamplerConfig(n_iter, n_burn, seed=seed), model).column("d")


CONCENTRATION_RADIUS = 0.25


def test_criterion7_concentration_smoke():
    oks = []
    monotone = 0
    for seed in range(20):
        masses = []
        for n in (200, 1000, 5000):
            data = dgp_example1(DgpSpec("one", n), np.random.default_rng([7, seed, n]))
            d = _posterior_d(data, "correct_or_incorrect_ps", "plain", seed)
            masses.append(np.mean(np.abs(d - 5.0) < CONCENTRATION_RADIUS))
        monotone += masses[0] <= masses[1] <= masses[2]
    oks.append(check(7, "correct-OR concentration nondecreasing in n (majority of 20 seeds)", monotone > 10,
                     f"{monotone}/20 seeds monotone, radius {CONCENTRATION_RADIUS}"))

    flips = 0
    detail = []
    for seed in range(5):
        data = dgp_example2(DgpSpec("two", 5000), np.random.default_rng([77, seed]))
        plain = np.mean(np.abs(_posterior_d(data, "scenario_I", "plain", seed) - 1.0) < 0.1)
        spline = np.mean(np.abs(_posterior_d(data, "scenario_I", "bspline_x1", seed) - 1.0) < 0.1)
        flips += plain < 0.5 < spline
        detail.append(f"{plain:.2f}->{spline:.2f}")
    oks.append(check(7, "scenario I mass near 1 flips from low to high with the x1 B-spline (majority of 5)",
                     flips >= 3, f"P(|d-1|<0.1) plain->spline: {' '.join(detail)}"))
    assert all(oks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
