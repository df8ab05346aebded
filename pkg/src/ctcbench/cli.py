"""Command-line entry point.

Subcommands cover the whole pipeline: ``synth`` (generate a synthetic
dataset), ``split`` (write a split JSON plus the count table), ``train``
(one arm, multi-seed), ``ablate`` (several arms plus the ablation table),
``stats`` (compare two arms' per-seed F1 CSVs), and ``report`` (regenerate
tables from persisted records). Commands refuse to clobber existing outputs
without --overwrite, and every stochastic step takes an explicit seed.
"""

from __future__ import annotations

import csv
import json
import shutil
import sys
from pathlib import Path

import click

from ctcbench import __version__
from ctcbench.config import ConfigError, load_config, persist_resolved
from ctcbench.experiments import ARMS, get_arm, regenerate_reports, run_ablation, run_arm
from ctcbench.manifest import ManifestError, load_manifest
from ctcbench.splitting import (
    SplitError,
    SplitMode,
    SplitPolicy,
    make_split,
    paper_split_policy,
    split_report,
)
from ctcbench.stats import StatsError, compare_arms
from ctcbench.synthgen import SynthError, SynthSpec, generate_dataset
from ctcbench.trainer import TrainerError

_USER_ERRORS = (ConfigError, ManifestError, SplitError, StatsError, SynthError, TrainerError, ValueError)


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _refuse_clobber(path: Path, overwrite: bool, what: str) -> None:
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if not overwrite:
            raise _fail(f"{what} already exists at {path}; pass --overwrite to replace it")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()


@click.group()
@click.version_option(version=__version__, prog_name="ctcbench")
def main():
    """Bright-field single-cell classification benchmark."""


@main.command()
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True, help="Output dataset directory.")
@click.option("--n-spiked", default=100, show_default=True, help="Spiked-in tumor-line cells (train/val pool).")
@click.option("--n-patient", default=10, show_default=True, help="Patient tumor cells (test pool).")
@click.option("--n-leuko", default=80, show_default=True, help="Leukocytes.")
@click.option("--image-size", default=148, show_default=True)
@click.option("--bf-signal", default=1.0, show_default=True, help="Bright-field class-signal strength in [0,1].")
@click.option("--dapi-informativeness", default=1.0, show_default=True)
@click.option("--noise", default=0.0, show_default=True, help="Gaussian pixel noise sigma (on [0,1] scale).")
@click.option("--seed", default=0, show_default=True)
@click.option("--overwrite", is_flag=True)
def synth(out_dir, n_spiked, n_patient, n_leuko, image_size, bf_signal, dapi_informativeness, noise, seed, overwrite):
    """Generate a synthetic dataset with a planted class signal."""
    _refuse_clobber(out_dir, overwrite, "dataset directory")
    try:
        spec = SynthSpec(
            n_spiked_ctc=n_spiked,
            n_patient_ctc=n_patient,
            n_leuko=n_leuko,
            image_size=image_size,
            bf_signal_strength=bf_signal,
            dapi_informativeness=dapi_informativeness,
            noise_sigma=noise,
            seed=seed,
        )
        manifest = generate_dataset(spec, out_dir)
    except _USER_ERRORS as exc:
        raise _fail(str(exc))
    click.echo(f"wrote {len(manifest)} records to {out_dir / 'manifest.csv'}")


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True, help="Split JSON output path.")
@click.option("--policy", type=click.Choice(["paper", "exact", "fractions"]), default="paper", show_default=True)
@click.option("--val-ctc", default=50, show_default=True, help="exact mode: validation CTC count.")
@click.option("--val-leuko", default=29, show_default=True, help="exact mode: validation LEUKO count.")
@click.option("--test-leuko", default=56, show_default=True, help="exact mode: test LEUKO count.")
@click.option("--val-fraction", default=0.1, show_default=True, help="fractions mode.")
@click.option("--leuko-test-fraction", default=0.15, show_default=True, help="fractions mode.")
@click.option("--seed", default=0, show_default=True)
@click.option("--arm", "arm_name", default="BF_W_DAPI", show_default=True,
              help="Arm used for the 'Augmented Train' row of the printed table.")
@click.option("--overwrite", is_flag=True)
def split(manifest_path, out_path, policy, val_ctc, val_leuko, test_leuko,
          val_fraction, leuko_test_fraction, seed, arm_name, overwrite):
    """Split a manifest and print the count table."""
    _refuse_clobber(out_path, overwrite, "split file")
    try:
        if policy == "paper":
            split_policy = paper_split_policy(seed=seed)
        elif policy == "exact":
            split_policy = SplitPolicy(SplitMode.EXACT_COUNTS, seed=seed, val_ctc=val_ctc,
                                       val_leuko=val_leuko, test_leuko=test_leuko)
        else:
            split_policy = SplitPolicy(SplitMode.FRACTIONS, seed=seed, val_fraction=val_fraction,
                                       leuko_test_fraction=leuko_test_fraction)
        manifest = load_manifest(manifest_path)
        result = make_split(manifest, split_policy)
        report = split_report(result, manifest)
        multiplier = get_arm(arm_name).multiplier
    except _USER_ERRORS as exc:
        raise _fail(str(exc))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    result.save(out_path)
    click.echo(report.to_markdown(augment_multiplier=multiplier), nl=False)
    click.echo(f"split written to {out_path}")


@main.command()
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--arm", "arm_name", default=None, help="Override the configured arm.")
@click.option("--seeds", default=None, help="Comma-separated seed list override.")
@click.option("--jobs", default=1, show_default=True, help="Parallel seed runs.")
@click.option("--overwrite", is_flag=True)
def train(config_path, arm_name, seeds, jobs, overwrite):
    """Run one experiment arm across all configured seeds."""
    seeds_tuple = _parse_seeds(seeds)
    try:
        config = load_config(config_path, arm_override=arm_name, seeds_override=seeds_tuple)
        _refuse_clobber(config.experiment_dir / config.arm_name, overwrite, "arm results")
        persist_resolved(config)
        _, aggregate = run_arm(config, jobs=jobs)
    except _USER_ERRORS as exc:
        raise _fail(str(exc))
    if not aggregate.complete:
        raise _fail(f"some seed runs failed: {aggregate.errors}")
    mean, std = aggregate.mean_std("f1")
    click.echo(f"arm {config.arm_name}: test F1 {mean:.3f} ± {std:.3f} over {aggregate.n_seeds} seeds")
    click.echo(f"results under {config.experiment_dir / config.arm_name}")


@main.command()
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--arms", "arms_csv", default=None,
              help="Comma-separated arm names (default: all seven).")
@click.option("--jobs", default=1, show_default=True)
@click.option("--overwrite", is_flag=True)
def ablate(config_path, arms_csv, jobs, overwrite):
    """Run an ablation over several arms and write the comparison table."""
    arm_names = [a.strip() for a in arms_csv.split(",")] if arms_csv else sorted(ARMS)
    try:
        config = load_config(config_path)
        _refuse_clobber(config.experiment_dir, overwrite, "experiment directory")
        persist_resolved(config)
        report = run_ablation(config, arm_names, jobs=jobs)
    except _USER_ERRORS as exc:
        raise _fail(str(exc))
    click.echo(report.to_markdown(), nl=False)
    incomplete = [name for name, agg in report.rows if not agg.complete]
    if incomplete:
        raise _fail(f"arms with failed seed runs: {incomplete}")
    click.echo(f"reports under {config.experiment_dir}")


def _read_f1_csv(path: Path) -> list[float]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "f1" not in rows[0]:
        raise _fail(f"{path}: expected a CSV with an 'f1' column")
    if "arm" in rows[0] and len({r["arm"] for r in rows}) > 1:
        raise _fail(f"{path}: contains multiple arms; export one arm per file")
    return [float(r["f1"]) for r in rows]


@main.command()
@click.option("--arm-a", "arm_a", type=click.Path(path_type=Path), required=True,
              help="CSV of per-seed F1 values for the first arm.")
@click.option("--arm-b", "arm_b", type=click.Path(path_type=Path), required=True,
              help="CSV of per-seed F1 values for the second arm.")
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Where to write the decision-trace JSON.")
def stats(arm_a, arm_b, alpha, out_path):
    """Compare two arms' F1 vectors with the adaptive test procedure."""
    try:
        values_a = _read_f1_csv(arm_a)
        values_b = _read_f1_csv(arm_b)
        trace = compare_arms(values_a, values_b, alpha=alpha)
    except _USER_ERRORS as exc:
        raise _fail(str(exc))
    click.echo(trace.summary_text())
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(trace.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        click.echo(f"trace written to {out_path}")


@main.command()
@click.argument("results_dir", type=click.Path(path_type=Path))
def report(results_dir):
    """Regenerate Markdown/CSV tables from persisted run records."""
    if not results_dir.exists():
        raise _fail(f"results directory not found: {results_dir}")
    written = regenerate_reports(results_dir)
    if not written:
        raise _fail(f"no aggregate.json files under {results_dir}")
    for path in written:
        click.echo(f"wrote {path}")


def _parse_seeds(seeds: str | None) -> tuple[int, ...] | None:
    if seeds is None:
        return None
    try:
        return tuple(int(s.strip()) for s in seeds.split(","))
    except ValueError:
        raise _fail(f"--seeds must be a comma-separated integer list, got {seeds!r}")


if __name__ == "__main__":
    sys.exit(main())
