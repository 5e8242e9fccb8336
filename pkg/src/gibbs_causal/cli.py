"""Command-line entry point: ``gibbs-causal {fit,abdr,simulate,density}``.

Every run is driven by one YAML/JSON config file; only ``--seed`` and
``--out-dir`` may override it. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .assembly import GibbsModel
from .bootstrap import BootstrapConfig, abdr_posterior
from .errors import ConfigurationError, DataError, GibbsCausalError
from .model_core import Dataset, OutcomeSpec, PriorSpec
from .propensity import PsSpec
from .report import density_grid, fit_summary
from .sampler import PosteriorSamples, SamplerConfig, run_chain
from .sim import StudySpec, run_study

logger = logging.getLogger("gibbs_causal")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"config {path} must be a mapping")
    return cfg


def _build(cls, section, cfg):
    try:
        return cls(**(cfg.get(section) or {}))
    except TypeError as exc:
        raise ConfigurationError(f"[{section}] {exc}") from None


def _dataset(cfg, config_path) -> Dataset:
    if "data" not in cfg:
        raise ConfigurationError("config needs a 'data' entry naming the dataset CSV")
    path = Path(cfg["data"])
    if not path.is_absolute():
        path = Path(config_path).parent / path
    if not path.exists():
        raise DataError(f"dataset {path} not found")
    return Dataset.from_csv(path)


def _validate_columns(data, outcome, ps):
    needed = list(outcome.covariate_terms) + [t.column for t in outcome.spline_terms] + list(ps.covariates)
    missing = [c for c in needed if c not in data.names]
    if missing:
        raise ConfigurationError(f"config references absent columns {missing}; dataset has {list(data.names)}")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(out_dir, command, config, seed, outputs, started):
    path = Path(out_dir) / "manifest.json"
    _write_json(path, {
        "command": command,
        "config": str(config) if config else None,
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": [str(p) for p in outputs],
    })
    return path


def cmd_fit(args) -> int:
    started = _now()
    cfg = load_config(args.config)
    outcome = _build(OutcomeSpec, "outcome_spec", cfg)
    ps = _build(PsSpec, "ps_spec", cfg)
    prior = _build(PriorSpec, "prior_spec", cfg)
    sampler_cfg = dict(cfg.get("sampler_config") or {})
    if args.seed is not None:
        sampler_cfg["seed"] = args.seed
    try:
        sconf = SamplerConfig(**sampler_cfg)
    except TypeError as exc:
        raise ConfigurationError(f"[sampler_config] {exc}") from None
    data = _dataset(cfg, args.config)
    _validate_columns(data, outcome, ps)
    model = GibbsModel(data, outcome, ps, prior, ps_mode=cfg.get("ps_mode", "joint"))
    samples = run_chain(sconf, model)
    return _write_fit_outputs(args, "fit", samples, sconf.seed, started,
                              {"variant": cfg.get("variant"), "estimator": "gibbs"})


def cmd_abdr(args) -> int:
    started = _now()
    cfg = load_config(args.config)
    outcome = _build(OutcomeSpec, "outcome_spec", cfg)
    ps = _build(PsSpec, "ps_spec", cfg)
    bcfg = dict(cfg.get("bootstrap_config") or {})
    if args.seed is not None:
        bcfg["seed"] = args.seed
    try:
        conf = BootstrapConfig(ps=ps, outcome=outcome, **bcfg)
    except TypeError as exc:
        raise ConfigurationError(f"[bootstrap_config] {exc}") from None
    data = _dataset(cfg, args.config)
    _validate_columns(data, outcome, ps)
    samples = abdr_posterior(data, conf)
    return _write_fit_outputs(args, "abdr", samples, conf.seed, started,
                              {"variant": cfg.get("variant"), "estimator": "abdr"})


def _write_fit_outputs(args, command, samples, seed, started, header) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "samples.csv", out / "samples_meta.json", out / "summary.json"]
    samples.to_csv(paths[0])
    samples.write_metadata(paths[1])
    summary = {**header, **fit_summary(samples)}
    _write_json(paths[2], summary)
    for w in summary["warnings"]:
        logger.warning(w)
    _manifest(out, command, args.config, seed, paths, started)
    return 0


def cmd_simulate(args) -> int:
    started = _now()
    cfg = load_config(args.config)
    study_cfg = dict(cfg.get("study_spec") or {})
    if args.seed is not None:
        study_cfg["master_seed"] = args.seed
    try:
        spec = StudySpec(**study_cfg)
    except TypeError as exc:
        raise ConfigurationError(f"[study_spec] {exc}") from None
    report = run_study(spec, workers=cfg.get("workers"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "replicates.csv"]
    report.write_json(paths[0], {"scenario": spec.scenario, "variant": spec.variant,
                                 "estimator": spec.estimator, "n": spec.dgp.n})
    report.write_records_csv(paths[1])
    _manifest(out, "simulate", args.config, spec.master_seed, paths, started)
    return 0


def cmd_density(args) -> int:
    started = _now()
    try:
        samples = PosteriorSamples.from_csv(args.samples)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read samples {args.samples}: {exc}") from None
    if args.parameter not in samples.labels:
        raise ConfigurationError(f"parameter {args.parameter!r} not in {list(samples.labels)}")
    x, dens = density_grid(samples.column(args.parameter), args.grid_size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"density_{args.parameter}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for a, b in zip(x, dens):
            w.writerow([repr(float(a)), repr(float(b))])
    _manifest(out, "density", None, None, [path], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbs-causal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("fit", cmd_fit, "sample the Gibbs posterior for a dataset"),
        ("abdr", cmd_abdr, "run the Bayesian-bootstrap comparator"),
        ("simulate", cmd_simulate, "run a replication study"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", default=".")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("density", help="kernel density grid for one parameter")
    sp.add_argument("samples")
    sp.add_argument("--parameter", default="d")
    sp.add_argument("--grid-size", type=int, default=512)
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(func=cmd_density)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GibbsCausalError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
