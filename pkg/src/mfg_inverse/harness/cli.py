"""Command-line entry point.

Exit status: 0 success, 2 invalid config, 3 admissibility violation,
4 non-convergence, 5 degenerate probe.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from ..errors import ConfigError, MfgError
from .config import ExperimentConfig
from .pipeline import AuditLog, MeasurementBundle, reconstruct, run_experiment, run_positivity_demo, simulate
from .report import write_report

MEASUREMENTS = "measurements.json"
AUDIT = "audit.log"


def _fail(exc: MfgError):
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def _load(config: str) -> ExperimentConfig:
    return ExperimentConfig.load(config)


def _out_dir(cfg: ExperimentConfig, out: str | None) -> Path:
    if out:
        return Path(out)
    d = Path(cfg["output"]["directory"])
    return d if d.is_absolute() else cfg.base_dir / d


def _write_audit(audit: AuditLog, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = audit.lines()
    lines.append(f"summary solves={len(audit.entries)} violations={audit.violations}")
    (out_dir / AUDIT).write_text("\n".join(lines) + "\n")


def _summary(doc: dict) -> None:
    for name, err in sorted(doc["errors"].items()):
        click.echo(f"{name}: rel_l2={err['rel_l2']:.3e} max_abs={err['max_abs']:.3e}")
    click.echo(f"content_hash={doc['content_hash']}")


config_option = click.option("--config", "config", required=True,
                             type=click.Path(dir_okay=False), help="Experiment TOML file.")
out_option = click.option("--out", "out", default=None, type=click.Path(file_okay=False),
                          help="Output directory (default: output.directory of the config).")
seed_option = click.option("--seed", default=0, show_default=True, type=int,
                           help="Reserved; the pipeline is deterministic.")
threads_option = click.option("--threads", default=1, show_default=True,
                              type=click.IntRange(min=1), help="Worker threads for solves.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log every nonlinear solve.")
def main(verbose: bool):
    """Simulate MFG boundary measurements and reconstruct kappa, F and K."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(name)s: %(message)s")


@main.command("validate-config")
@config_option
def validate_config(config):
    """Parse and check a config without running anything."""
    try:
        cfg = _load(config)
        if "F" in cfg.unknowns or "K" in cfg.unknowns:
            cfg.g1_level()
    except MfgError as exc:
        _fail(exc)
    click.echo(f"ok: {config} (unknowns: {', '.join(cfg.unknowns)})")


@main.command("simulate")
@config_option
@out_option
@seed_option
@threads_option
def simulate_cmd(config, out, seed, threads):
    """Simulate the nonlinear measurements only."""
    try:
        cfg = _load(config)
        out_dir = _out_dir(cfg, out)
        audit = AuditLog()
        bundle = simulate(cfg, threads, audit)
    except MfgError as exc:
        _fail(exc)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / MEASUREMENTS).write_text(json.dumps(bundle.to_dict(), sort_keys=True))
    _write_audit(audit, out_dir)
    click.echo(f"wrote {out_dir / MEASUREMENTS} ({len(audit.entries)} solves)")


@main.command("reconstruct")
@config_option
@out_option
@click.option("--measurements", default=None, type=click.Path(dir_okay=False),
              help=f"Stored measurements (default: <out>/{MEASUREMENTS}).")
def reconstruct_cmd(config, out, measurements):
    """Reconstruct from stored measurements."""
    try:
        cfg = _load(config)
        out_dir = _out_dir(cfg, out)
        path = Path(measurements) if measurements else out_dir / MEASUREMENTS
        try:
            bundle = MeasurementBundle.from_dict(json.loads(path.read_text()))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read measurements: {exc}", str(path)) from None
        if bundle.config_digest != cfg.digest():
            raise ConfigError("measurements were simulated from a different config", str(path))
        report = reconstruct(cfg, bundle)
    except MfgError as exc:
        _fail(exc)
    doc = write_report(report, out_dir, formats=cfg["output"]["formats"])
    _summary(doc)


@main.command("run")
@config_option
@out_option
@seed_option
@threads_option
def run_cmd(config, out, seed, threads):
    """Simulate and reconstruct end to end."""
    try:
        cfg = _load(config)
        out_dir = _out_dir(cfg, out)
        audit = AuditLog()
        bundle, report = run_experiment(cfg, threads, audit)
    except MfgError as exc:
        _fail(exc)
    _write_audit(audit, out_dir)
    (out_dir / MEASUREMENTS).write_text(json.dumps(bundle.to_dict(), sort_keys=True))
    doc = write_report(report, out_dir, formats=cfg["output"]["formats"])
    _summary(doc)


@main.command("demo-positivity")
@config_option
@out_option
@seed_option
@threads_option
@click.option("--force-negative-g1", is_flag=True,
              help="Push cos(pi x) through the first-order density slot (must be rejected).")
def demo_positivity(config, out, seed, threads, force_negative_g1):
    """Kernel recovery using only nonnegative densities, with an audit log."""
    audit = AuditLog()
    try:
        cfg = _load(config)
        out_dir = _out_dir(cfg, out)
        bundle, report = run_positivity_demo(cfg, threads, audit, force_negative_g1)
    except MfgError as exc:
        _fail(exc)
    _write_audit(audit, out_dir)
    doc = write_report(report, out_dir, formats=cfg["output"]["formats"])
    pos = doc["diagnostics"]["positivity"]
    click.echo(f"solves={len(audit.entries)} violations={pos['violations']} "
               f"min_submitted_m0={pos['min_submitted_m0']:.3e}")
    click.echo(f"sign-changing modes (first-order slot impossible): {pos['sign_changing_modes']}")
    _summary(doc)


if __name__ == "__main__":  # pragma: no cover
    main()
