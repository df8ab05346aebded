"""Ablation arms, experiment orchestration, and report emission.

The seven arms fix how the training set is composed (which channel is
primary, how many augmentation ops, whether the other channel's images are
injected). Validation and test always use primary-channel originals only;
the paths touched while building those sets are recorded in the run manifest
as an access log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from ctcbench import __version__
from ctcbench.augment import (
    AugmentationOp,
    AugmentedSample,
    ImageLoader,
    OpKind,
    Origin,
    PipelinePlan,
    expand_training_set,
    resize_to_working,
)
from ctcbench.manifest import CellRecord, Manifest, load_manifest
from ctcbench.metrics import metrics_table_markdown
from ctcbench.model import BackboneSpec, build_model, get_backbone_spec
from ctcbench.pngio import read_gray_png
from ctcbench.splitting import DatasetSplit, SplitPolicy, make_split, split_report
from ctcbench.trainer import (
    AggregateReport,
    ArmSamples,
    RunRecord,
    TrainConfig,
    train_multi_seed,
)


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentArm:
    name: str
    primary_channel: str  # "BF" or "DAPI"
    n_aug_ops: int
    inject_other_channel: bool

    @property
    def multiplier(self) -> int:
        return 1 + self.n_aug_ops + int(self.inject_other_channel)

    @property
    def uses_dapi(self) -> bool:
        return self.primary_channel == "DAPI" or self.inject_other_channel

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "primary_channel": self.primary_channel,
            "n_aug_ops": self.n_aug_ops,
            "inject_other_channel": self.inject_other_channel,
        }


ARMS: dict[str, ExperimentArm] = {
    arm.name: arm
    for arm in (
        ExperimentArm("AUG1", "BF", 1, False),
        ExperimentArm("AUG2", "BF", 2, False),
        ExperimentArm("BF_WO_DAPI", "BF", 3, False),
        ExperimentArm("BF_W_DAPI_NO_AUG", "BF", 0, True),
        ExperimentArm("BF_W_DAPI", "BF", 3, True),
        ExperimentArm("DAPI_WO_BF", "DAPI", 3, False),
        ExperimentArm("DAPI_W_BF", "DAPI", 3, True),
    )
}


def get_arm(name: str) -> ExperimentArm:
    if name not in ARMS:
        raise ExperimentError(f"unknown arm {name!r}; choose from {sorted(ARMS)}")
    return ARMS[name]


@dataclass(frozen=True)
class AugmentSettings:
    """Op parameter ranges shared by all arms, plus the augmentation seed."""

    rotation_degrees: tuple[float, float] = (-180.0, 180.0)
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    brightness_range: tuple[float, float] = (0.7, 1.3)
    gamma_range: tuple[float, float] = (0.8, 1.25)
    contrast_range: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "rotation_degrees": list(self.rotation_degrees),
            "hflip_prob": self.hflip_prob,
            "vflip_prob": self.vflip_prob,
            "brightness_range": list(self.brightness_range),
            "gamma_range": list(self.gamma_range),
            "contrast_range": list(self.contrast_range),
            "seed": self.seed,
        }


def build_plan(arm: ExperimentArm, settings: AugmentSettings) -> PipelinePlan:
    """Resolve an arm into an executable plan.

    Single-op arms use GEOMETRIC; two-op arms GEOMETRIC+BRIGHTNESS; three-op
    arms all families. This composition is a documented choice (the arm
    definitions never named which ops) and is logged in the run manifest.
    """
    all_ops = (
        AugmentationOp(
            OpKind.GEOMETRIC,
            {
                "rotation_degrees": settings.rotation_degrees,
                "hflip_prob": settings.hflip_prob,
                "vflip_prob": settings.vflip_prob,
            },
            seed=settings.seed,
        ),
        AugmentationOp(OpKind.BRIGHTNESS, {"factor_range": settings.brightness_range}, seed=settings.seed + 1),
        AugmentationOp(
            OpKind.COLOR,
            {"gamma_range": settings.gamma_range, "contrast_range": settings.contrast_range},
            seed=settings.seed + 2,
        ),
    )
    return PipelinePlan(
        primary_channel=arm.primary_channel,
        ops=all_ops[: arm.n_aug_ops],
        inject_other_channel=arm.inject_other_channel,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: Path
    split_policy: SplitPolicy
    arm_name: str
    backbone: BackboneSpec
    train: TrainConfig
    output_dir: Path
    experiment_name: str = "experiment"
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    alpha: float = 0.05

    @property
    def experiment_dir(self) -> Path:
        return self.output_dir / self.experiment_name

    def to_dict(self) -> dict:
        return {
            "manifest_path": str(self.manifest_path),
            "split_policy": self.split_policy.to_dict(),
            "arm_name": self.arm_name,
            "backbone": self.backbone.to_dict(),
            "train": self.train.to_dict(),
            "output_dir": str(self.output_dir),
            "experiment_name": self.experiment_name,
            "augment": self.augment.to_dict(),
            "alpha": self.alpha,
        }


def load_eval_samples(
    records: Sequence[CellRecord],
    channel: str,
    working_size: int,
    loader: ImageLoader = read_gray_png,
) -> tuple[list[AugmentedSample], list[str]]:
    """Primary-channel originals for validation/test, plus the access log of
    image paths actually read."""
    samples = []
    touched = []
    for rec in records:
        path = rec.channel_path(channel)
        touched.append(str(path))
        samples.append(
            AugmentedSample(rec.cell_id, resize_to_working(loader(path), working_size), rec.label, Origin.ORIGINAL)
        )
    return samples, touched


@dataclass
class ArmData:
    arm: ExperimentArm
    plan: PipelinePlan
    split: DatasetSplit
    samples: ArmSamples
    eval_image_paths: tuple[str, ...]
    n_excluded_no_dapi: int


def prepare_arm_data(
    manifest: Manifest,
    split: DatasetSplit,
    arm: ExperimentArm,
    settings: AugmentSettings,
    working_size: int,
    loader: ImageLoader = read_gray_png,
) -> ArmData:
    """Expand the training set and build primary-channel-only eval sets.

    Records without a DAPI image are dropped from DAPI-using arms (their
    count is reported); arms that never touch DAPI keep them.
    """
    by_id = manifest.by_id()

    def select(ids: Sequence[str]) -> list[CellRecord]:
        records = [by_id[i] for i in ids]
        if arm.uses_dapi:
            records = [r for r in records if r.has_dapi]
        return records

    train_records = select(split.train)
    val_records = select(split.val)
    test_records = select(split.test)
    n_excluded = (len(split.train) + len(split.val) + len(split.test)) - (
        len(train_records) + len(val_records) + len(test_records)
    )
    if not train_records or not val_records or not test_records:
        raise ExperimentError(
            f"arm {arm.name}: empty train/val/test after DAPI-availability filtering"
        )

    plan = build_plan(arm, settings)
    train_samples = expand_training_set(
        train_records, plan, working_size=working_size, loader=loader, base_seed=settings.seed
    )
    val_samples, val_paths = load_eval_samples(val_records, arm.primary_channel, working_size, loader)
    test_samples, test_paths = load_eval_samples(test_records, arm.primary_channel, working_size, loader)

    return ArmData(
        arm=arm,
        plan=plan,
        split=split,
        samples=ArmSamples(tuple(train_samples), tuple(val_samples), tuple(test_samples)),
        eval_image_paths=tuple(sorted(set(val_paths + test_paths))),
        n_excluded_no_dapi=n_excluded,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_arm(
    config: ExperimentConfig,
    loader: ImageLoader = read_gray_png,
    jobs: int = 1,
    manifest: Manifest | None = None,
    split: DatasetSplit | None = None,
) -> tuple[list[RunRecord], AggregateReport]:
    """Split, expand, train across seeds, and evaluate one arm end to end.

    Artifacts land in ``<output_dir>/<experiment>/<arm>/``: per-seed run
    records and checkpoints, the aggregate, per-seed F1 values, and a run
    manifest logging every resolved choice (op composition, exclusions, the
    eval-phase image access log).
    """
    if manifest is None:
        manifest = load_manifest(config.manifest_path)
    if split is None:
        split = make_split(manifest, config.split_policy)
    arm = get_arm(config.arm_name)
    data = prepare_arm_data(manifest, split, arm, config.augment, config.backbone.input_size, loader)

    arm_dir = config.experiment_dir / arm.name
    records, aggregate = train_multi_seed(
        data.samples, config.train, config.backbone, out_dir=arm_dir, jobs=jobs
    )

    counts = split_report(split, manifest).counts

    def rel(path: str) -> str:
        try:
            return str(Path(path).relative_to(manifest.image_root))
        except ValueError:
            return path

    run_manifest = {
        "version": __version__,
        "experiment": config.experiment_name,
        "arm": arm.to_dict(),
        "plan": data.plan.to_dict(),
        "multiplier": data.plan.multiplier,
        "split_counts": counts,
        "split_seed": split.seed,
        "n_excluded_no_dapi": data.n_excluded_no_dapi,
        "n_train_samples": len(data.samples.train),
        "backbone": config.backbone.to_dict(),
        "backbone_parameters": build_model(config.backbone, seed=0).count_parameters(),
        "train_config": config.train.to_dict(),
        "eval_image_paths": sorted(rel(p) for p in data.eval_image_paths),
    }
    _write_json(arm_dir / "run_manifest.json", run_manifest)
    _write_json(arm_dir / "aggregate.json", aggregate.to_dict())
    f1_lines = ["seed,f1"] + [f"{seed},{f1!r}" for seed, f1 in sorted(aggregate.per_seed_f1.items())]
    (arm_dir / "f1_by_seed.csv").write_text("\n".join(f1_lines) + "\n", encoding="utf-8")
    return records, aggregate


def _metrics_as_pairs(agg: AggregateReport) -> dict:
    return {m: agg.mean_std(m) for m in ("accuracy", "precision", "recall", "f1")}


@dataclass
class AblationReport:
    rows: list  # [(arm_name, AggregateReport)]

    def to_markdown(self) -> str:
        table_rows = [(name, _metrics_as_pairs(agg)) for name, agg in self.rows]
        return metrics_table_markdown(table_rows, bold_best=True)

    def to_csv(self) -> str:
        lines = ["arm,accuracy_mean,accuracy_std,precision_mean,precision_std,"
                 "recall_mean,recall_std,f1_mean,f1_std,complete"]
        for name, agg in self.rows:
            cells = [name]
            for metric in ("accuracy", "precision", "recall", "f1"):
                mean, std = agg.mean_std(metric)
                cells.extend([repr(mean), repr(std)])
            cells.append(str(agg.complete).lower())
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def f1_vectors_csv(self) -> str:
        lines = ["arm,seed,f1"]
        for name, agg in self.rows:
            for seed, f1 in sorted(agg.per_seed_f1.items()):
                lines.append(f"{name},{seed},{f1!r}")
        return "\n".join(lines) + "\n"


def run_ablation(
    config: ExperimentConfig,
    arm_names: Sequence[str],
    loader: ImageLoader = read_gray_png,
    jobs: int = 1,
) -> AblationReport:
    """Run several arms on one shared manifest/split and emit the ablation table."""
    if not arm_names:
        raise ExperimentError("arm list must be non-empty")
    for name in arm_names:
        get_arm(name)
    manifest = load_manifest(config.manifest_path)
    split = make_split(manifest, config.split_policy)

    rows = []
    for name in arm_names:
        arm_config = replace(config, arm_name=name)
        _, aggregate = run_arm(arm_config, loader=loader, jobs=jobs, manifest=manifest, split=split)
        rows.append((name, aggregate))

    report = AblationReport(rows=rows)
    exp_dir = config.experiment_dir
    exp_dir.mkdir(parents=True, exist_ok=True)
    (exp_dir / "ablation.md").write_text(report.to_markdown(), encoding="utf-8")
    (exp_dir / "ablation.csv").write_text(report.to_csv(), encoding="utf-8")
    (exp_dir / "f1_vectors.csv").write_text(report.f1_vectors_csv(), encoding="utf-8")
    return report


@dataclass
class ComparisonReport:
    rows: list  # [(backbone_name, AggregateReport)]

    def to_markdown(self) -> str:
        table_rows = [(name, _metrics_as_pairs(agg)) for name, agg in self.rows]
        return metrics_table_markdown(table_rows, bold_best=True)


def run_backbone_comparison(
    config: ExperimentConfig,
    backbone_names: Sequence[str],
    loader: ImageLoader = read_gray_png,
    jobs: int = 1,
) -> ComparisonReport:
    """Run the configured arm once per backbone preset and tabulate results."""
    if not backbone_names:
        raise ExperimentError("backbone list must be non-empty")
    specs = {name: get_backbone_spec(name) for name in backbone_names}

    manifest = load_manifest(config.manifest_path)
    split = make_split(manifest, config.split_policy)
    rows = []
    for name in backbone_names:
        backbone_config = replace(config, backbone=specs[name],
                                  experiment_name=f"{config.experiment_name}/backbone_{name}")
        _, aggregate = run_arm(backbone_config, loader=loader, jobs=jobs, manifest=manifest, split=split)
        rows.append((name, aggregate))

    report = ComparisonReport(rows=rows)
    exp_dir = config.experiment_dir
    exp_dir.mkdir(parents=True, exist_ok=True)
    (exp_dir / "comparison.md").write_text(report.to_markdown(), encoding="utf-8")
    return report


def regenerate_reports(results_dir: str | Path) -> list[Path]:
    """Rebuild ablation/comparison tables from persisted aggregates."""
    results_dir = Path(results_dir)
    written = []
    for exp_dir in sorted({p.parent.parent for p in results_dir.rglob("aggregate.json")}):
        rows = []
        for agg_path in sorted(exp_dir.glob("*/aggregate.json")):
            payload = json.loads(agg_path.read_text(encoding="utf-8"))
            agg = AggregateReport(
                metrics=payload["metrics"],
                n_seeds=payload["n_seeds"],
                complete=payload["complete"],
                per_seed_f1={int(k): v for k, v in payload["per_seed_f1"].items()},
                errors=payload["errors"],
            )
            rows.append((agg_path.parent.name, agg))
        if not rows:
            continue
        report = AblationReport(rows=rows)
        (exp_dir / "ablation.md").write_text(report.to_markdown(), encoding="utf-8")
        (exp_dir / "ablation.csv").write_text(report.to_csv(), encoding="utf-8")
        (exp_dir / "f1_vectors.csv").write_text(report.f1_vectors_csv(), encoding="utf-8")
        written.extend([exp_dir / "ablation.md", exp_dir / "ablation.csv", exp_dir / "f1_vectors.csv"])
    return written
