"""Command-line harness.

Subcommands: train, eval, sweep, gradcheck, encode, plot.
Exit codes: 0 ok, 1 verification failure, 2 config/input error,
3 numeric failure.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import data as D
from . import encode as E
from . import experiment as X
from . import gradcheck as G
from . import trainer as T
from .plots import plot_comparison, plot_history

EXIT_VERIFICATION = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_config(config, seed, out, desk_scale) -> X.ExperimentConfig:
    if config:
        try:
            cfg = X.ExperimentConfig.from_text(Path(config).read_text())
        except FileNotFoundError:
            raise click.ClickException(f"config file {config} not found")
    else:
        cfg = X.ExperimentConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, out=out)
    if desk_scale is not None:
        cfg = replace(cfg, desk_scale=desk_scale)
    return cfg


def global_options(fn):
    fn = click.option("--config", type=click.Path(), help="flat key=value config file")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--out", type=click.Path(), default=None)(fn)
    fn = click.option("--desk-scale", type=int, default=None)(fn)
    return fn


@click.group()
def main():
    """Desk-scale Alpha-Net training laboratory."""


@main.command()
@global_options
@click.option("--dataset", type=click.Path(), default=None, help="dataset root directory")
def train(config, seed, out, desk_scale, dataset):
    """Run one experiment: build, train, evaluate, persist a result row."""
    try:
        cfg = _load_config(config, seed, out, desk_scale)
        if dataset:
            cfg = replace(cfg, dataset=dataset)
        cfg.validate()
    except (ValueError, click.ClickException) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        row = X.run_experiment(cfg)
    except FileNotFoundError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except T.TrainingDiverged as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    click.echo(f"top1={row.top1:.4f} params={row.param_count} wall_s={row.wall_s:.1f}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--dataset", type=click.Path(), required=True)
@click.option("--dataset-format", default="idx-like")
@click.option("--normalization", default="zscore")
@click.option("--eval-mode", default="single",
              type=click.Choice(["single", "ten_crop", "multi_scale"]))
@click.option("--scales", default="32,64,128")
@click.option("--loss", default="am_softmax_linear")
def eval_cmd(checkpoint, dataset, dataset_format, normalization, eval_mode, scales, loss):
    """Evaluate a saved checkpoint on a dataset split."""
    from . import losses as LS

    try:
        net = T.load_checkpoint(checkpoint)
        ds = D.load_dataset(dataset, dataset_format, split="val")
        ds, _ = D.normalize_dataset(ds, normalization)
    except (FileNotFoundError, ValueError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    kwargs = {}
    if eval_mode == "multi_scale":
        kwargs["scales"] = [int(s) for s in scales.split(",")]
    acc = T.evaluate_top1(net, ds, LS.LossConfig(kind=loss), eval_mode=eval_mode, **kwargs)
    click.echo(f"top1={acc:.4f}")


@main.command()
@global_options
@click.option("--axis", type=click.Choice(sorted(X.SWEEP_AXES)), required=True)
@click.option("--versions", default="v1,v2,v3,v4",
              help="comma-separated subset; empty string for an empty grid")
@click.option("--dataset", type=click.Path(), default=None)
@click.option("--figures/--no-figures", default=True)
def sweep(config, seed, out, desk_scale, axis, versions, dataset, figures):
    """Grid sweep reproducing one comparison table's structure."""
    try:
        cfg = _load_config(config, seed, out, desk_scale)
        if dataset:
            cfg = replace(cfg, dataset=dataset)
    except click.ClickException as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    vlist = tuple(v for v in versions.split(",") if v)
    bad = [v for v in vlist if v not in X.VERSIONS]
    if bad:
        click.echo(f"config error: unknown versions {bad}", err=True)
        sys.exit(EXIT_CONFIG)
    out_dir = Path(cfg.out)
    rows, failures = X.sweep(cfg, axis, versions=vlist, out_dir=out_dir)
    click.echo(f"{len(rows)} cells ok, {len(failures)} failed")
    for version, value, message in failures:
        click.echo(f"  failed {version}/{value}: {message}")
    if figures and rows:
        fig = plot_comparison(out_dir / "results.csv", axis, out_dir / f"figure_{axis}.png")
        click.echo(f"figure written to {fig}")


@main.command()
@click.option("--scope", default="all", type=click.Choice(["layer", "loss", "network", "all"]))
@click.option("--seed", type=int, default=3)
def gradcheck(scope, seed):
    """Finite-difference verification of every analytic gradient."""
    results = G.run_suite(scope=scope, seed=seed)
    failed = 0
    for name, err, tol, ok in results:
        status = "ok" if ok else "FAIL"
        click.echo(f"{status:4s} {name:20s} max_rel_err={err:.3e} (tol {tol:g})")
        failed += not ok
    if failed:
        click.echo(f"{failed} gradient check(s) failed", err=True)
        sys.exit(EXIT_VERIFICATION)
    click.echo("all gradient checks passed")


@main.command()
@click.argument("input_dir", type=click.Path())
@click.argument("output_dir", type=click.Path())
def encode(input_dir, output_dir):
    """Alpha-encode every image in INPUT_DIR to .aenc files in OUTPUT_DIR."""
    in_dir = Path(input_dir)
    out_dir = Path(output_dir)
    if not in_dir.exists():
        click.echo(f"input error: {in_dir} does not exist", err=True)
        sys.exit(EXIT_CONFIG)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw_bytes = 0
    enc_bytes = 0
    max_err = 0.0
    count = 0
    skipped = 0
    for path in sorted(in_dir.iterdir()):
        if not path.is_file():
            continue
        try:
            from PIL import Image

            with Image.open(path) as im:
                img = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1)
        except Exception as exc:
            click.echo(f"warning: skipping {path.name}: {exc}", err=True)
            skipped += 1
            continue
        e = E.alpha_encode(img)
        blob = E.write_aenc(e)
        (out_dir / (path.stem + ".aenc")).write_bytes(blob)
        raw_bytes += img.size * 4
        enc_bytes += len(blob)
        back = E.alpha_decode(E.read_aenc(blob), dtype=np.float64)
        max_err = max(max_err, float(np.abs(back - img).max()))
        count += 1
    ratio = raw_bytes / enc_bytes if enc_bytes else 0.0
    click.echo(f"encoded {count} files ({skipped} skipped)")
    click.echo(f"raw bytes={raw_bytes} encoded bytes={enc_bytes} ratio={ratio:.2f}")
    click.echo(f"max round-trip error={max_err:.6g}")
    if skipped:
        sys.exit(EXIT_CONFIG)


@main.command()
@click.option("--results", type=click.Path(), required=True, help="results.csv from a sweep")
@click.option("--axis", type=click.Choice(sorted(X.SWEEP_AXES)), default="structure")
@click.option("--out", type=click.Path(), required=True)
@click.option("--history", type=click.Path(), default=None, help="optional history.csv to plot")
def plot(results, axis, out, history):
    """Render comparison figures from a results CSV."""
    try:
        path = plot_comparison(results, axis, out)
    except (FileNotFoundError, ValueError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"figure written to {path}")
    if history:
        hp = plot_history(history, Path(out).with_name("history.png"))
        click.echo(f"figure written to {hp}")


if __name__ == "__main__":
    main()
