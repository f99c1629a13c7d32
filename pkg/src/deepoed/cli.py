"""Command-line interface for training, evaluation and baselines."""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click
import numpy as np

from .exceptions import ConfigError, DivergedError, NonFiniteError
from .harness import (
    ExperimentConfig,
    gamma_sweep as _gamma_sweep,
    load_config,
    run_experiment,
)
from .models import MODEL_NAMES
from .network import load_network
from .risk import RiskReport, evaluate
from .stochastic import task_seed

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _build_config(ctx, **overrides) -> ExperimentConfig:
    opts = ctx.obj
    try:
        if opts["config"]:
            cfg = load_config(opts["config"])
            for key, val in overrides.items():
                if val is not None:
                    setattr(cfg, key, val)
            cfg.__post_init__()
        else:
            cfg = ExperimentConfig(
                **{k: v for k, v in overrides.items() if v is not None})
        if opts["seed"] is not None:
            cfg.seed = opts["seed"]
        if opts["out"] is not None:
            cfg.out = opts["out"]
        if opts["desk_scale"]:
            cfg.desk_scale = True
        return cfg
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _run(func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (NonFiniteError, DivergedError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None,
              help="YAML experiment config; flags override its fields.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--desk-scale", is_flag=True,
              help="Use the small-budget preset (reduced grids and schedules).")
@click.pass_context
def main(ctx, config, seed, out, desk_scale):
    """Optimal experimental design with likelihood-free estimators."""
    ctx.obj = {"config": config, "seed": seed, "out": out,
               "desk_scale": desk_scale}


@main.command()
@click.option("--method", type=click.Choice(["continuous", "tabu"]),
              default=None)
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES),
              default=None)
@click.option("--sparsity", multiple=True, type=int)
@click.option("--gamma", multiple=True, type=float)
@click.pass_context
def train(ctx, method, model_name, sparsity, gamma):
    """Train a design (and its estimator network)."""
    cfg = _build_config(
        ctx, method=method, model=model_name,
        sparsity=list(sparsity) or None, gamma=list(gamma) or None)
    files = _run(run_experiment, cfg)
    for path in files:
        click.echo(str(path))


@main.command("evaluate")
@click.argument("network_file", type=click.Path(exists=True))
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES),
              required=True)
@click.option("--n-sets", type=int, default=50)
@click.option("--set-size", type=int, default=3500)
@click.option("--gamma", type=float, default=1.0)
@click.pass_context
def evaluate_cmd(ctx, network_file, model_name, n_sets, set_size, gamma):
    """Evaluate a saved network/design on fresh sets."""
    cfg = _build_config(ctx, model=model_name)
    model = cfg.build_model()
    net, header = load_network(network_file)
    design_path = Path(network_file).parent / header.get("design_path", "")
    if not header.get("design_path") or not design_path.exists():
        click.echo("config error: network file has no readable design", err=True)
        sys.exit(EXIT_CONFIG)
    with open(design_path) as fh:
        w = np.array([float(row["weight"]) for row in csv.DictReader(fh)])
    rep = _run(evaluate, model, net, w, n_sets=n_sets, set_size=set_size,
               gamma=gamma, seed=task_seed(cfg.seed, "cli-evaluate"),
               method="evaluate")
    rep.seed = cfg.seed
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "evaluate.csv"
    RiskReport.write_csv([rep], path)
    click.echo(str(path))


@main.command()
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES),
              default=None)
@click.option("--sparsity", multiple=True, type=int)
@click.pass_context
def greedy(ctx, model_name, sparsity):
    """Greedy baseline design with pass-count accounting."""
    cfg = _build_config(ctx, method="greedy", model=model_name,
                        sparsity=list(sparsity) or None)
    for path in _run(run_experiment, cfg):
        click.echo(str(path))


@main.command()
@click.option("--sparsity", multiple=True, type=int)
@click.option("--sigma", type=float, default=None)
@click.pass_context
def aopt(ctx, sparsity, sigma):
    """Exhaustive A-optimality baseline on the linearized decay model."""
    cfg = _build_config(ctx, method="aopt", model="exp",
                        sparsity=list(sparsity) or [2], aopt_sigma=sigma)
    for path in _run(run_experiment, cfg):
        click.echo(str(path))


@main.command("random-baseline")
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES),
              default=None)
@click.option("--mode", type=click.Choice(["continuous", "binary"]),
              default=None)
@click.option("--sparsity", type=int, default=None)
@click.option("--n", "n_designs", type=int, default=None)
@click.pass_context
def random_baseline(ctx, model_name, mode, sparsity, n_designs):
    """Risk statistics of networks trained on random designs."""
    cfg = _build_config(ctx, method="random", model=model_name,
                        sparsity=[sparsity] if sparsity is not None else None,
                        random_mode=mode, n_random_designs=n_designs)
    for path in _run(run_experiment, cfg):
        click.echo(str(path))


@main.command("gamma-sweep")
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES),
              default=None)
@click.option("--sparsity", type=int, default=None)
@click.pass_context
def gamma_sweep(ctx, model_name, sparsity):
    """Train across the data-risk weight sweep and report risks."""
    cfg = _build_config(ctx, model=model_name)
    rows = _run(_gamma_sweep, cfg, sparsity)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "gamma_sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    click.echo(str(path))


@main.command()
@click.option("--model", "model_name", type=click.Choice(MODEL_NAMES),
              required=True)
@click.pass_context
def grid(ctx, model_name):
    """Emit the canonical measurement grid as CSV."""
    cfg = _build_config(ctx, model=model_name)
    model = cfg.build_model()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"grid_{model_name}.csv"
    model.grid.to_csv(path)
    click.echo(str(path))


if __name__ == "__main__":
    main()
