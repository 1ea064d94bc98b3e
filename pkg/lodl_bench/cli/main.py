#!/usr/bin/env python3
"""
LODL Benchmark CLI
Commands for generating data, sampling neighborhoods, fitting learned losses, training
and evaluating models, and regenerating the benchmark reports.
"""

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from click.core import ParameterSource
from dotenv import load_dotenv

from lodl_bench.cli.config import build_settings, render, resolve
from lodl_bench.domains import build_problem
from lodl_bench.errors import ConfigError, LodlError
from lodl_bench.harness import (
    ArtifactCache, benchmark_amortization, benchmark_parallel, normalize_dq, run_experiment, write_json,
    write_runs_csv,
)
from lodl_bench.harness.experiments import ablation_suite, table1
from lodl_bench.harness.pipeline import TRAINED
from lodl_bench.harness.reports import render_summary, write_experiment_reports, write_rows_csv
from lodl_bench.losses import CONVEX_FAMILIES, FAMILIES, psd_certificate
from lodl_bench.models import evaluate_dq, load_model, model_for_domain, save_model, train_model

logger = logging.getLogger(__name__)

CONTEXT_SETTINGS = {"help_option_names": ["-h", "--help"], "show_default": True}
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class CliState:
    """Global options shared by every command."""

    def __init__(self, config_path: Optional[Path], run_flags: Dict[str, Any], force: bool, quiet: bool):
        self.config_path = config_path
        self.run_flags = run_flags
        self.force = force
        self.quiet = quiet

    def resolve(self, echo: bool = True, **sections: Dict[str, Any]):
        """Resolved config, typed settings and harness config; echoes the config unless quiet."""
        flags = {"run": dict(self.run_flags)}
        for section, values in sections.items():
            values = {k: v for k, v in values.items() if v is not None}
            if values:
                flags.setdefault(section, {}).update(values)
        config = resolve(self.config_path, flags)
        settings, harness = build_settings(config)
        if echo and not self.quiet:
            click.echo("📋 Resolved configuration:")
            click.echo(render(config))
        return config, settings, harness

    def cache(self, config: Dict[str, Any]) -> ArtifactCache:
        return ArtifactCache(Path(config["run"]["output_dir"]), force=self.force)


def _explicit(ctx: click.Context, name: str) -> bool:
    return ctx.get_parameter_source(name) not in (ParameterSource.DEFAULT, ParameterSource.DEFAULT_MAP, None)


def _counts(text: Optional[str], key: str) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of integers, got '{text}'", key=key)
    if not values:
        raise ConfigError(f"{key} must name at least one count", key=key)
    return values


def guarded(stage: str):
    """Print '❌ <stage> failed: <reason>' and exit 1 on configuration errors, 2 on any other failure."""
    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ConfigError as e:
                click.echo(f"❌ {stage} failed: {e}", err=True)
                sys.exit(1)
            except (LodlError, ValueError, OSError) as e:
                click.echo(f"❌ {stage} failed: {e}", err=True)
                sys.exit(2)
        return wrapper
    return decorator


def domain_option(fn):
    return click.option("--domain", default=None,
                        help="Benchmark domain: linear, webadv or portfolio (else [domain] kind from config)")(fn)


def sampling_options(fn):
    fn = click.option("--alpha", type=float, default=None,
                      help="Perturbation scale (default per domain: linear 1.0, webadv 0.05, portfolio 0.05)")(fn)
    fn = click.option("--samples", "-k", type=int, default=None, help="Samples per instance K (config default 5000)")(fn)
    fn = click.option("--strategy", default=None,
                      help="all-perturbed, one-perturbed or two-perturbed (config default all-perturbed)")(fn)
    return fn


@click.group(context_settings=CONTEXT_SETTINGS)
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
              help="TOML (or YAML) configuration file")
@click.option("--output-dir", default="runs", help="Root of data/, samples/, losses/, models/ and reports/")
@click.option("--seed", default=0, type=int, help="Seed for data, sampling, fitting and model initialization")
@click.option("--workers", default=1, type=int, help="Worker processes for sampling and fitting")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
@click.option("-q", "--quiet", is_flag=True, help="Warnings only; no config echo")
@click.option("--force", is_flag=True, help="Rebuild artifacts whose configuration changed")
@click.pass_context
def cli(ctx, config_path, output_dir, seed, workers, verbose, quiet, force):
    """Learned decision-focused losses: data, sampling, fitting, training and benchmarks."""
    load_dotenv()
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)

    given = {"output_dir": output_dir, "seed": seed, "workers": workers}
    run_flags = {key: value for key, value in given.items() if _explicit(ctx, key)}
    ctx.obj = CliState(config_path, run_flags, force, quiet)


@cli.command("show-config")
@domain_option
@click.option("--json", "output_json", is_flag=True, help="Output as JSON")
@click.pass_obj
@guarded("show-config")
def show_config(state: CliState, domain, output_json):
    """Print the fully resolved configuration as TOML."""
    config = resolve(state.config_path, {"run": state.run_flags, "domain": {"kind": domain} if domain else {}})
    build_settings(config)
    if output_json:
        click.echo(json.dumps(config, indent=2))
        return
    click.echo(render(config))


@cli.command("gen-data")
@domain_option
@click.pass_obj
@guarded("gen-data")
def gen_data(state: CliState, domain):
    """Generate the train/val/test dataset of a domain."""
    config, settings, _ = state.resolve(domain={"kind": domain})
    cache = state.cache(config)
    dataset, info = cache.dataset(settings.domain)
    path = cache.dataset_path(settings.domain)
    if info.hit:
        click.echo(f"♻️  Cache hit: {path}")
    else:
        click.echo(f"✅ Generated {settings.domain.kind} dataset in {info.seconds:.2f}s")
    click.echo(f"📊 train {len(dataset.train)} | val {len(dataset.val)} | test {len(dataset.test)}")
    click.echo(f"📁 {path}")


@cli.command()
@domain_option
@sampling_options
@click.pass_obj
@guarded("sample")
def sample(state: CliState, domain, strategy, samples, alpha):
    """Draw K perturbed labels per training instance and score them with the exact oracle."""
    config, settings, _ = state.resolve(domain={"kind": domain},
                                        sampling={"strategy": strategy, "samples": samples, "alpha": alpha})
    cache = state.cache(config)
    dataset = cache.load_dataset(settings.domain)
    problem = build_problem(dataset)
    tables, info = cache.samples(dataset, problem, settings.sampling, workers=settings.workers)
    path = cache.samples_path(settings.domain, settings.sampling)
    if info.hit:
        click.echo(f"♻️  Cache hit: {path} (0 oracle calls)")
    else:
        click.echo(f"✅ Sampled {len(tables)} tables with {info.oracle_calls} oracle calls in {info.seconds:.2f}s")
    click.echo(f"📁 {path}")


@cli.command()
@domain_option
@sampling_options
@click.option("--family", default=None, help=f"Loss family: {', '.join(FAMILIES)} (config default directedquadratic)")
@click.option("--method", "fit_method", default=None, help="gd or closed-form (closed-form: weighted MSE families)")
@click.option("--steps", type=int, default=None, help="Fitting steps (config default 100)")
@click.pass_obj
@guarded("fit")
def fit(state: CliState, domain, strategy, samples, alpha, family, fit_method, steps):
    """Fit one learned loss per training instance from its sample table."""
    config, settings, _ = state.resolve(domain={"kind": domain},
                                        sampling={"strategy": strategy, "samples": samples, "alpha": alpha},
                                        fit={"family": family, "method": fit_method, "steps": steps})
    family = config["fit"]["family"]
    cache = state.cache(config)
    tables = cache.load_samples(settings.domain, settings.sampling)
    fitted, info = cache.losses(tables, settings.domain, settings.sampling, family, settings.fit,
                                method=settings.fit_method, workers=settings.workers)
    path = cache.losses_path(settings.domain, settings.sampling, family)
    if info.hit:
        click.echo(f"♻️  Cache hit: {path}")
    else:
        click.echo(f"✅ Fitted {len(fitted)} {family} losses in {info.seconds:.2f}s")
    if family in ("quadratic", "directedquadratic"):
        reports = [psd_certificate(params) for params in fitted.values()]
        failed = sum(1 for r in reports if not r.ok)
        lowest = min(r.min_eigenvalue for r in reports)
        click.echo(f"📐 Smallest eigenvalue {lowest:.3g} (w_min {settings.fit.w_min:g}); {failed} failed certificates")
    elif family not in CONVEX_FAMILIES:
        click.echo("ℹ️  nn losses carry no convexity guarantee")
    click.echo(f"📁 {path}")


def _train_init(settings, init: int) -> int:
    return settings.domain.seed * 1000 + init


@cli.command()
@domain_option
@sampling_options
@click.option("--method", default="two-stage", type=click.Choice(list(TRAINED) + list(FAMILIES)),
              help="Training regime, or a loss family to train with its fitted losses")
@click.option("--init", default=0, type=int, help="Model initialization index")
@click.option("--steps", type=int, default=None, help="Training steps (config default 500)")
@click.pass_obj
@guarded("train")
def train(state: CliState, domain, strategy, samples, alpha, method, init, steps):
    """Train a predictive model and save its checkpoint."""
    config, settings, _ = state.resolve(domain={"kind": domain},
                                        sampling={"strategy": strategy, "samples": samples, "alpha": alpha},
                                        train={"steps": steps})
    cache = state.cache(config)
    dataset = cache.load_dataset(settings.domain)
    problem = build_problem(dataset)
    losses = cache.load_losses(settings.domain, settings.sampling, method) if method in FAMILIES else None
    model = model_for_domain(settings.domain, seed=_train_init(settings, init), kind=settings.model_kind,
                             sample=dataset.train[0])
    regime = method if method in TRAINED else "lodl"
    result = train_model(regime, model, dataset.train, settings.train, problem=problem, losses=losses,
                         val=dataset.val)
    path = save_model(cache.model_path(settings.domain, method, init), result.model,
                      config={**config, "method": method, "init": init})
    click.echo(f"✅ Trained {method} model: {len(result.loss_curve)} steps in {result.seconds:.2f}s, "
               f"final loss {result.loss_curve[-1]:.6g}, best step {result.best_step}")
    click.echo(f"📁 {path}")


@cli.command("eval")
@domain_option
@click.option("--method", default="two-stage", type=click.Choice(list(TRAINED) + list(FAMILIES)),
              help="Method whose checkpoint to evaluate")
@click.option("--init", default=0, type=int, help="Model initialization index")
@click.option("--json", "output_json", is_flag=True, help="Output as JSON")
@click.pass_obj
@guarded("eval")
def evaluate(state: CliState, domain, method, init, output_json):
    """Evaluate a saved model's normalized decision quality on the test split."""
    config, settings, harness = state.resolve(echo=not output_json, domain={"kind": domain})
    cache = state.cache(config)
    dataset = cache.load_dataset(settings.domain)
    problem = build_problem(dataset)
    model = load_model(cache.model_path(settings.domain, method, init))
    result = evaluate_dq(model, dataset.test, problem)
    refs = cache.references(dataset, problem, harness.random_draws)
    normalized = normalize_dq(result.values, refs["random"], refs["optimal"])
    payload = {"domain": settings.domain.kind, "seed": settings.domain.seed, "method": method, "init": init,
               "mean_dq": result.mean, "normalized_dq": normalized, "random_ref": refs["random"],
               "optimal_ref": refs["optimal"], "per_instance": dict(zip(result.instance_ids, result.values.tolist()))}
    name = f"eval-{settings.domain.kind}-seed{settings.domain.seed}-{method}-init{init}.json"
    path = write_json(cache.report_path(name), payload)
    if output_json:
        click.echo(json.dumps(payload, indent=2))
        return
    click.echo(f"🎯 {method}: normalized DQ {normalized:.4f} (raw {result.mean:.6g})")
    click.echo(f"📁 {path}")


@cli.command("bench-parallel")
@domain_option
@sampling_options
@click.option("--family", default="directedquadratic", type=click.Choice(list(FAMILIES)), help="Loss family")
@click.option("--worker-counts", default=None, help="Comma-separated worker counts (config default 1,2,4,8)")
@click.option("--no-dfl", is_flag=True, help="Skip the DFL comparison run")
@click.option("--json", "output_json", is_flag=True, help="Output as JSON")
@click.pass_obj
@guarded("bench-parallel")
def bench_parallel(state: CliState, domain, strategy, samples, alpha, family, worker_counts, no_dfl,
                   output_json):
    """Time the LODL pipeline at several worker counts next to DFL."""
    config, settings, harness = state.resolve(
        echo=not output_json,
        domain={"kind": domain}, sampling={"strategy": strategy, "samples": samples, "alpha": alpha},
        harness={"worker_counts": _counts(worker_counts, "harness.worker_counts")})
    cache = state.cache(config)
    records = benchmark_parallel(settings, harness.worker_counts, family=family, include_dfl=not no_dfl)
    rows = [r.to_dict() for r in records]
    write_rows_csv(cache.report_path("bench-parallel.csv"), rows)
    path = write_json(cache.report_path("bench-parallel.json"), rows)
    if output_json:
        click.echo(json.dumps(rows, indent=2))
        return
    for r in records:
        click.echo(f"⚙️  P={r.workers}: LODL {r.lodl_seconds:.2f}s (predicted {r.predicted_lodl:.2f}s, "
                   f"speedup {r.speedup:.2f}x) | DFL {r.dfl_seconds:.2f}s (predicted {r.predicted_dfl:.2f}s)")
    click.echo(f"📁 {path}")


@cli.command("bench-amortize")
@domain_option
@sampling_options
@click.option("--family", default="directedquadratic", type=click.Choice(list(FAMILIES)), help="Loss family")
@click.option("--model-counts", default=None, help="Comma-separated model counts (config default 1,2,5,10)")
@click.option("--dfl-models", default=2, type=int, help="DFL models timed for the per-model reference")
@click.option("--json", "output_json", is_flag=True, help="Output as JSON")
@click.pass_obj
@guarded("bench-amortize")
def bench_amortize(state: CliState, domain, strategy, samples, alpha, family, model_counts, dfl_models,
                   output_json):
    """Per-model cost when fitted losses are reused across many models."""
    config, settings, harness = state.resolve(
        echo=not output_json,
        domain={"kind": domain}, sampling={"strategy": strategy, "samples": samples, "alpha": alpha},
        harness={"model_counts": _counts(model_counts, "harness.model_counts")})
    cache = state.cache(config)
    rows = benchmark_amortization(settings, harness.model_counts, family=family, dfl_models=dfl_models)
    write_rows_csv(cache.report_path("bench-amortize.csv"), rows)
    path = write_json(cache.report_path("bench-amortize.json"), rows)
    if output_json:
        click.echo(json.dumps(rows, indent=2))
        return
    for row in rows:
        click.echo(f"⚙️  m={row['models']}: LODL {row['lodl_per_model']:.2f}s/model "
                   f"({row['lodl_over_two_stage']:.1f}x two-stage) | DFL {row['dfl_per_model']:.2f}s/model")
    click.echo(f"📁 {path}")


@cli.command()
@domain_option
@click.option("--family", "families", multiple=True, type=click.Choice(list(FAMILIES)),
              help="Loss families to ablate (repeatable; default all)")
@click.pass_obj
@guarded("ablate")
def ablate(state: CliState, domain, families):
    """Sampling strategy x sample count x loss family, scored by normalized DQ."""
    config, settings, harness = state.resolve(domain={"kind": domain})
    cache = state.cache(config)
    records = ablation_suite(settings, harness, cache.root, families=families or FAMILIES, force=state.force)
    csv_path = write_runs_csv(cache.report_path("ablation.csv"), records)
    render_summary(cache.report_path("ablation.md"), [], records, title="Sampling ablation")
    failed = sum(1 for r in records if not r.ok)
    click.echo(f"✅ {len(records)} ablation cells ({failed} failed)")
    click.echo(f"📁 {csv_path}")


@cli.command("reproduce-table1")
@click.option("--domain", "domains", multiple=True,
              help="Domains to run (repeatable; default all three, or [domain] kind from config)")
@click.option("--method", "methods", multiple=True, help="Methods to run (repeatable; default all)")
@click.option("--seeds", type=int, default=None, help="Seeds per domain (config default 5)")
@click.option("--inits", type=int, default=None, help="Model initializations per seed (config default 3)")
@click.pass_obj
@guarded("reproduce-table1")
def reproduce_table1(state: CliState, domains, methods, seeds, inits):
    """Run the method x domain grid and write runs.csv, timings.json and summary.md."""
    harness_flags = {"methods": list(methods) or None, "seeds": seeds, "inits": inits}
    if not domains:
        from_file = resolve_domain_kind(state)
        domains = (from_file,) if from_file else ("linear", "webadv", "portfolio")
    records = []
    cache = None
    for domain in domains:
        config, settings, harness = state.resolve(domain={"kind": domain}, harness=harness_flags)
        cache = state.cache(config)
        records.extend(run_experiment(settings, harness, cache.root, force=state.force))
    paths = write_experiment_reports(cache.report_path(""), records)
    for method, cells in table1(records).items():
        line = " | ".join(f"{d} {s['mean']:.2f} ± {s['std']:.2f}" for d, s in cells.items())
        click.echo(f"📊 {method}: {line}")
    failed = sum(1 for r in records if not r.ok)
    if failed:
        click.echo(f"⚠️  {failed} of {len(records)} cells failed; see {paths['summary']}", err=True)
    click.echo(f"📁 {paths['runs']}")


def resolve_domain_kind(state: CliState) -> Optional[str]:
    """The [domain] kind set by the config file or environment, if any."""
    try:
        return resolve(state.config_path, {"run": state.run_flags})["domain"]["kind"]
    except ConfigError as e:
        if e.key == "domain.kind":
            return None
        raise


def main():
    cli()


if __name__ == "__main__":
    main()
