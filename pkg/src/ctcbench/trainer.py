"""Seeded training with AdamW, best-checkpoint selection by validation F1,
and the multi-seed protocol.

A run is fully determined by its seed: parameter initialization and the
per-epoch data-order permutations derive from it through independent numpy
substreams, so repeating a run reproduces the metric series bitwise. The
checkpoint reported on test is always the one with the highest validation
macro-F1 (earliest epoch on ties), and test metrics are computed exactly
once, from that checkpoint.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ctcbench.augment import AugmentedSample
from ctcbench.archive import WeightArchive
from ctcbench.manifest import Label
from ctcbench.metrics import Averaging, MetricsReport, compute_metrics, confusion
from ctcbench.model import (
    BackboneSpec,
    build_model,
    cross_entropy_torch,
    load_from_archive,
    state_to_archive,
)

LABEL_TO_INT = {Label.LEUKO: 0, Label.CTC: 1}
INT_TO_LABEL = {v: k for k, v in LABEL_TO_INT.items()}

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class TrainerError(RuntimeError):
    pass


class TrainingDivergedError(TrainerError):
    def __init__(self, epoch: int, batch_index: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. The optimizer is fixed to AdamW and model
    selection to validation F1; presets bundle documented defaults."""

    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    preset: str = "desk"
    freeze_backbone: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainerError(f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}")
        if self.learning_rate <= 0:
            raise TrainerError(f"learning_rate must be > 0, got {self.learning_rate}")
        if len(self.seeds) < 1:
            raise TrainerError("at least one seed is required")

    @classmethod
    def desk_preset(cls, **overrides) -> "TrainConfig":
        """Desk-scale defaults for from-scratch mini backbones."""
        base = dict(epochs=10, batch_size=16, learning_rate=1e-3, weight_decay=0.01, preset="desk")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper_preset(cls, **overrides) -> "TrainConfig":
        """The published configuration: learning rate 1e-7 (sensible with
        pretrained weights), batch 32; epoch count was never stated and
        defaults to 100 with best-epoch selection."""
        base = dict(epochs=100, batch_size=32, learning_rate=1e-7, weight_decay=0.01, preset="paper")
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "seeds": list(self.seeds),
            "preset": self.preset,
            "freeze_backbone": self.freeze_backbone,
        }


@dataclass(frozen=True)
class Normalization:
    mean: float
    std: float

    @classmethod
    def from_samples(cls, samples: Sequence[AugmentedSample]) -> "Normalization":
        stacked = np.stack([s.image for s in samples]).astype(np.float64) / 255.0
        return cls(mean=float(stacked.mean()), std=float(max(stacked.std(), 1e-6)))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val: MetricsReport

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val": self.val.to_dict()}


@dataclass
class RunRecord:
    seed: int
    epochs: list[EpochStats]
    best_epoch: int
    best_val_f1: float
    normalization: Normalization
    checkpoint_path: str | None = None
    test_metrics: MetricsReport | None = None
    best_archive: WeightArchive | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "epochs": [e.to_dict() for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
            "normalization": self.normalization.to_dict(),
            "checkpoint_path": self.checkpoint_path,
            "test_metrics": self.test_metrics.to_dict() if self.test_metrics else None,
        }

    def series_csv(self) -> str:
        lines = ["epoch,train_loss,val_accuracy,val_precision,val_recall,val_f1"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.train_loss!r},{e.val.accuracy!r},{e.val.precision!r},"
                f"{e.val.recall!r},{e.val.f1!r}"
            )
        return "\n".join(lines) + "\n"


def _to_arrays(samples: Sequence[AugmentedSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.image for s in samples]).astype(np.float32) / 255.0
    y = np.array([LABEL_TO_INT[s.label] for s in samples], dtype=np.int64)
    return x, y


def _to_batch_tensor(x: np.ndarray, norm: Normalization) -> torch.Tensor:
    normed = (x - norm.mean) / norm.std
    # Grayscale replicated to 3 channels to keep 3-channel stems usable.
    return torch.from_numpy(normed).unsqueeze(1).repeat(1, 3, 1, 1)


def evaluate(model: torch.nn.Module, samples: Sequence[AugmentedSample], norm: Normalization,
             batch_size: int = 64, averaging: Averaging = Averaging.MACRO) -> tuple[MetricsReport, list[Label]]:
    """Eval-mode metrics of the model on the given samples."""
    x, y = _to_arrays(samples)
    model.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            batch = _to_batch_tensor(x[start : start + batch_size], norm)
            logits = model(batch)
            preds.extend(int(i) for i in logits.argmax(dim=1))
    pred_labels = [INT_TO_LABEL[p] for p in preds]
    truth_labels = [INT_TO_LABEL[int(t)] for t in y]
    return compute_metrics(confusion(pred_labels, truth_labels), averaging), pred_labels


def train_one(
    model: torch.nn.Module,
    train_samples: Sequence[AugmentedSample],
    val_samples: Sequence[AugmentedSample],
    config: TrainConfig,
    seed: int,
    test_samples: Sequence[AugmentedSample] | None = None,
    out_dir: str | Path | None = None,
) -> RunRecord:
    """One seeded training run.

    Validation samples must already be primary-channel originals; the arm
    definition owns that guarantee. If ``test_samples`` is given, the best
    checkpoint is evaluated on them once at the end.
    """
    if not train_samples or not val_samples:
        raise TrainerError("train and validation sample lists must be non-empty")
    norm = Normalization.from_samples(train_samples)
    x_train, y_train = _to_arrays(train_samples)

    if config.freeze_backbone:
        for name, param in model.named_parameters():
            param.requires_grad = name.startswith("fc.")
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=config.learning_rate, weight_decay=config.weight_decay)

    epochs: list[EpochStats] = []
    best_epoch = -1
    best_f1 = -1.0
    best_archive: WeightArchive | None = None

    n = len(x_train)
    for epoch in range(config.epochs):
        perm_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, epoch)))
        order = perm_rng.permutation(n)
        model.train()
        losses = []
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            batch = _to_batch_tensor(x_train[idx], norm)
            labels = torch.from_numpy(y_train[idx])
            optimizer.zero_grad()
            loss = cross_entropy_torch(model(batch), labels)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_index)
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        val_report, _ = evaluate(model, val_samples, norm)
        epochs.append(EpochStats(epoch=epoch, train_loss=float(np.mean(losses)), val=val_report))
        if val_report.f1 > best_f1:  # strict: earliest epoch wins ties
            best_f1 = val_report.f1
            best_epoch = epoch
            best_archive = state_to_archive(model)

    record = RunRecord(
        seed=seed,
        epochs=epochs,
        best_epoch=best_epoch,
        best_val_f1=best_f1,
        normalization=norm,
        best_archive=best_archive,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint.wa"
        best_archive.save(ckpt)
        # Relative to the record's own directory, so reruns at different
        # roots produce byte-identical records.
        record.checkpoint_path = ckpt.name

    if test_samples is not None:
        load_from_archive(model, best_archive)
        record.test_metrics, _ = evaluate(model, test_samples, norm)

    if out_dir is not None:
        (out_dir / "record.json").write_text(
            json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out_dir / "series.csv").write_text(record.series_csv(), encoding="utf-8")

    return record


@dataclass(frozen=True)
class ArmSamples:
    train: tuple[AugmentedSample, ...]
    val: tuple[AugmentedSample, ...]
    test: tuple[AugmentedSample, ...]


@dataclass
class AggregateReport:
    """Per-metric mean and sample standard deviation over seeds."""

    metrics: dict  # {metric: {"mean": float, "std": float}}
    n_seeds: int
    complete: bool
    per_seed_f1: dict  # {seed: f1}
    errors: dict = field(default_factory=dict)  # {seed: message}

    def mean_std(self, metric: str) -> tuple[float, float]:
        m = self.metrics[metric]
        return m["mean"], m["std"]

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "n_seeds": self.n_seeds,
            "complete": self.complete,
            "per_seed_f1": {str(k): v for k, v in self.per_seed_f1.items()},
            "errors": {str(k): v for k, v in self.errors.items()},
        }


def aggregate_runs(records: Sequence[RunRecord], errors: dict | None = None) -> AggregateReport:
    errors = dict(errors or {})
    metrics = {}
    reports = [r.test_metrics for r in records if r.test_metrics is not None]
    for name in ("accuracy", "precision", "recall", "f1"):
        values = np.array([getattr(rep, name) for rep in reports], dtype=float)
        if len(values) == 0:
            metrics[name] = {"mean": float("nan"), "std": float("nan")}
        else:
            std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            metrics[name] = {"mean": float(values.mean()), "std": std}
    return AggregateReport(
        metrics=metrics,
        n_seeds=len(records) + len(errors),
        complete=not errors,
        per_seed_f1={r.seed: r.test_metrics.f1 for r in records if r.test_metrics is not None},
        errors=errors,
    )


def train_multi_seed(
    arm_samples: ArmSamples,
    config: TrainConfig,
    backbone_spec: BackboneSpec,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> tuple[list[RunRecord], AggregateReport]:
    """Run one training per configured seed and aggregate test metrics.

    Runs share no mutable state (fresh model per seed, substream RNGs), so
    the aggregate is identical for any ``jobs`` level. Per-run failures are
    collected and mark the aggregate incomplete instead of aborting the rest.
    """

    def run(seed: int) -> RunRecord:
        model = build_model(backbone_spec, seed=seed)
        seed_dir = Path(out_dir) / f"seed_{seed}" if out_dir is not None else None
        return train_one(model, arm_samples.train, arm_samples.val, config, seed,
                         test_samples=arm_samples.test, out_dir=seed_dir)

    records: dict[int, RunRecord] = {}
    errors: dict[int, str] = {}
    if jobs <= 1:
        for seed in config.seeds:
            try:
                records[seed] = run(seed)
            except Exception as exc:  # noqa: BLE001 - per-run isolation is the contract
                errors[seed] = f"{type(exc).__name__}: {exc}"
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {seed: pool.submit(run, seed) for seed in config.seeds}
            for seed, future in futures.items():
                try:
                    records[seed] = future.result()
                except Exception as exc:  # noqa: BLE001
                    errors[seed] = f"{type(exc).__name__}: {exc}"

    ordered = [records[s] for s in config.seeds if s in records]
    return ordered, aggregate_runs(ordered, errors)
