"""Command-line entry points.

Subcommands: ``forward`` (synthesize measurements), ``invert`` (full closed
loop), ``sweep`` (grids of weight parameters and noise levels), ``verify``
(property suite) and ``export`` (materialize every data stage without
inverting).  Exit codes: 0 success, 1 configuration error, 2 numerical
failure, 3 verification failures present.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import experiment, forward, inversion, serialize
from .experiment import ConfigError, ExperimentConfig, StageError
from .grids import GridError

NUMERICAL_ERRORS = (forward.LinearSolveFailure, forward.BlowUp,
                    forward.FloorViolated, forward.UnstableStep,
                    inversion.Diverged, FloatingPointError)


def _load_config(path: str | None, lam: float | None, delta: float | None,
                 seed: int | None, figures: bool | None) -> ExperimentConfig:
    try:
        raw = {}
        if path is not None:
            raw = json.loads(Path(path).read_text())
        cfg = ExperimentConfig.from_dict(raw)
        cfg = cfg.with_overrides(lam=lam, delta=delta, seed=seed)
        if figures is not None:
            raw = cfg.to_dict()
            raw["output"]["figures"] = figures
            cfg = ExperimentConfig.from_dict(raw)
        return cfg
    except (ConfigError, GridError, ValueError, OSError) as exc:
        raise click.ClickException(f"configuration error: {exc}") from exc


def _run(target, *args, **kwargs):
    try:
        return target(*args, **kwargs)
    except StageError as exc:
        if isinstance(exc.cause, NUMERICAL_ERRORS):
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(2)
        if isinstance(exc.cause, (ConfigError, GridError, ValueError)):
            raise click.ClickException(str(exc)) from exc
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(2)
    except NUMERICAL_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(2)


config_opt = click.option("--config", "config_path", type=click.Path(),
                          default=None, help="JSON configuration file.")
out_opt = click.option("--out", "outdir", type=click.Path(), required=True,
                       help="Output directory.")
seed_opt = click.option("--seed", type=int, default=None,
                        help="Override the noise seed.")
lam_opt = click.option("--lambda", "lam", type=float, default=None,
                       help="Override the weight parameter.")
delta_opt = click.option("--delta", type=float, default=None,
                         help="Override the noise level.")
figures_opt = click.option("--figures/--no-figures", default=None,
                           help="Render PNG figures next to the CSV output.")


@click.group()
@click.version_option(package_name="epirate")
def main():
    """Recover spatial epidemic rates from boundary measurements."""


@main.command("forward")
@config_opt
@out_opt
@seed_opt
@delta_opt
@figures_opt
def forward_cmd(config_path, outdir, seed, delta, figures):
    """Synthesize boundary measurements (no inversion)."""
    cfg = _load_config(config_path, None, delta, seed, figures)
    summary = _run(experiment.run_forward_only, cfg, Path(outdir))
    click.echo(json.dumps(summary, sort_keys=True))


@main.command()
@config_opt
@out_opt
@seed_opt
@lam_opt
@delta_opt
@figures_opt
def invert(config_path, outdir, seed, lam, delta, figures):
    """Run the full closed loop and write the reconstruction report."""
    cfg = _load_config(config_path, lam, delta, seed, figures)
    report = _run(experiment.run_experiment, cfg, Path(outdir))
    click.echo(json.dumps(report.canonical_dict(), sort_keys=True))


@main.command()
@config_opt
@out_opt
@seed_opt
@delta_opt
@click.option("--lambdas", default="0,1,2,3,4,5",
              help="Comma-separated weight parameters.")
@click.option("--deltas", default="0.0",
              help="Comma-separated noise levels.")
@figures_opt
def sweep(config_path, outdir, seed, delta, lambdas, deltas, figures):
    """Cartesian sweep over weight parameters and noise levels."""
    cfg = _load_config(config_path, None, delta, seed, figures)
    try:
        lam_list = [float(x) for x in lambdas.split(",") if x.strip() != ""]
        delta_list = [float(x) for x in deltas.split(",") if x.strip() != ""]
        if not lam_list or not delta_list:
            raise ValueError("empty sweep list")
    except ValueError as exc:
        raise click.ClickException(f"bad sweep list: {exc}") from exc
    rows = _run(experiment.run_sweep, cfg, lam_list, delta_list, Path(outdir))
    failed = [r for r in rows if r["status"] != "ok"]
    click.echo(f"sweep complete: {len(rows)} cells, {len(failed)} failed")
    if failed:
        sys.exit(2)


@main.command()
@click.option("--out", "outdir", type=click.Path(), default=None,
              help="Where to write verification.json (stdout otherwise).")
@click.option("--seed", type=int, default=0)
@click.option("--samples", type=int, default=200,
              help="Sample count for the weighted-estimate probe.")
def verify(outdir, seed, samples):
    """Run the cross-module property suite; exit 3 on any failure."""
    checks = experiment.run_verification(seed=seed, probe_samples=samples)
    payload = json.dumps(checks, sort_keys=True, indent=2)
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verification.json").write_text(payload + "\n")
    click.echo(payload)
    if not checks["all_passed"]["passed"]:
        sys.exit(3)


@main.command()
@config_opt
@out_opt
@seed_opt
@delta_opt
def export(config_path, outdir, seed, delta):
    """Materialize every data stage (problem, forward, traces, extension)."""
    cfg = _load_config(config_path, None, delta, seed, None)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    staged: list = []
    serialize.write_json(out / "config.json", cfg.to_dict())
    staged.append(("config", out / "config.json"))
    _run(experiment.synthesize, cfg, out, staged)
    serialize.write_manifest(out, staged)
    click.echo(f"stages exported to {out}")


if __name__ == "__main__":
    main()
