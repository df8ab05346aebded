"""Train/validation/test splitting under the provenance rules.

Two hard constraints drive every split: patient-derived tumor cells may only
ever appear in the test set, and spiked-in cell-line cells may never appear
there. Leukocytes are unrestricted; their test share is drawn uniformly at
random from the full leukocyte pool under the policy seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from ctcbench.manifest import Label, Manifest, Provenance


class SplitError(ValueError):
    """Raised when a split request cannot be satisfied."""


class SplitMode(str, Enum):
    EXACT_COUNTS = "EXACT_COUNTS"
    FRACTIONS = "FRACTIONS"


@dataclass(frozen=True)
class SplitPolicy:
    """How to carve a manifest into train/val/test.

    EXACT_COUNTS takes literal per-class validation counts and a leukocyte
    test count. FRACTIONS applies ``val_fraction`` per class to the train+val
    pool and ``leuko_test_fraction`` to the full leukocyte pool; fractional
    counts round to the nearest integer (halves away from zero) so that e.g.
    10% of a 68-record pool yields 7.
    """

    mode: SplitMode
    seed: int = 0
    val_ctc: int | None = None
    val_leuko: int | None = None
    test_leuko: int | None = None
    val_fraction: float | None = None
    leuko_test_fraction: float = 0.15

    def __post_init__(self):
        if self.mode is SplitMode.EXACT_COUNTS:
            for name in ("val_ctc", "val_leuko", "test_leuko"):
                value = getattr(self, name)
                if value is None or value < 0:
                    raise SplitError(f"EXACT_COUNTS policy needs non-negative {name}, got {value}")
        else:
            if self.val_fraction is None or not 0.0 < self.val_fraction < 1.0:
                raise SplitError(f"FRACTIONS policy needs val_fraction in (0,1), got {self.val_fraction}")
            if not 0.0 < self.leuko_test_fraction < 1.0:
                raise SplitError(
                    f"leuko_test_fraction must be in (0,1), got {self.leuko_test_fraction}"
                )

    def to_dict(self) -> dict:
        d = {"mode": self.mode.value, "seed": self.seed}
        if self.mode is SplitMode.EXACT_COUNTS:
            d.update(val_ctc=self.val_ctc, val_leuko=self.val_leuko, test_leuko=self.test_leuko)
        else:
            d.update(val_fraction=self.val_fraction, leuko_test_fraction=self.leuko_test_fraction)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPolicy":
        return cls(mode=SplitMode(d["mode"]), **{k: v for k, v in d.items() if k != "mode"})


def paper_split_policy(seed: int = 0) -> SplitPolicy:
    """The published table's exact counts: 50/29 validation, 56 leukocytes in test."""
    return SplitPolicy(SplitMode.EXACT_COUNTS, seed=seed, val_ctc=50, val_leuko=29, test_leuko=56)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    policy: SplitPolicy

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        total = sum(len(s) for s in sets)
        if len(sets[0] | sets[1] | sets[2]) != total:
            raise SplitError("train/val/test id lists overlap")

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "policy": self.policy.to_dict(),
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        d = json.loads(text)
        return cls(
            train=tuple(d["train"]),
            val=tuple(d["val"]),
            test=tuple(d["test"]),
            seed=d["seed"],
            policy=SplitPolicy.from_dict(d["policy"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSplit":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _pick(rng: np.random.Generator, pool: list[str], n: int, what: str) -> list[str]:
    if n > len(pool):
        raise SplitError(f"requested {n} {what} but only {len(pool)} eligible")
    if n == 0:
        return []
    ordered = sorted(pool)
    idx = rng.choice(len(ordered), size=n, replace=False)
    return [ordered[i] for i in idx]


def make_split(manifest: Manifest, policy: SplitPolicy) -> DatasetSplit:
    """Assign every eligible record to train, val, or test.

    Patient CTCs all go to test; spiked CTCs feed train/val; leukocytes are
    drawn into test first, then validation, remainder to train. Selection
    within each pool is a uniform seeded draw over id-sorted candidates, so
    identical (manifest, policy) inputs reproduce the split exactly.
    """
    spiked = [r.cell_id for r in manifest.records if r.label is Label.CTC and r.provenance is Provenance.SPIKED]
    patient_ctc = [r.cell_id for r in manifest.records if r.label is Label.CTC and r.provenance is Provenance.PATIENT]
    leuko = [r.cell_id for r in manifest.records if r.label is Label.LEUKO]

    if not spiked and not patient_ctc:
        raise SplitError("manifest has no CTC records")
    if not leuko:
        raise SplitError("manifest has no LEUKO records")
    if not patient_ctc:
        raise SplitError("empty CTC test pool: manifest has no PATIENT-provenance CTC records")

    if policy.mode is SplitMode.EXACT_COUNTS:
        n_test_leuko = policy.test_leuko
        n_val_ctc = policy.val_ctc
        n_val_leuko = policy.val_leuko
    else:
        n_test_leuko = _round_half_up(policy.leuko_test_fraction * len(leuko))
        n_val_ctc = _round_half_up(policy.val_fraction * len(spiked))
        n_val_leuko = _round_half_up(policy.val_fraction * (len(leuko) - n_test_leuko))

    rng = np.random.default_rng(policy.seed)
    test_leuko = _pick(rng, leuko, n_test_leuko, "test leukocytes")
    remaining_leuko = sorted(set(leuko) - set(test_leuko))
    val_ctc = _pick(rng, spiked, n_val_ctc, "validation CTCs (spiked pool)")
    val_leuko = _pick(rng, remaining_leuko, n_val_leuko, "validation leukocytes")

    train_ctc = sorted(set(spiked) - set(val_ctc))
    train_leuko = sorted(set(remaining_leuko) - set(val_leuko))

    return DatasetSplit(
        train=tuple(sorted(train_ctc + train_leuko)),
        val=tuple(sorted(val_ctc + val_leuko)),
        test=tuple(sorted(patient_ctc + test_leuko)),
        seed=policy.seed,
        policy=policy,
    )


@dataclass(frozen=True)
class SplitReport:
    """Per-split, per-class record counts in the published table's shape."""

    counts: dict  # {"train"/"val"/"test"/"total": {"CTC": n, "LEUKO": n}}

    def row(self, name: str) -> tuple[int, int]:
        c = self.counts[name]
        return c["CTC"], c["LEUKO"]

    def to_markdown(self, augment_multiplier: int | None = None) -> str:
        lines = ["|  | CTC | LEUKO |", "| --- | --- | --- |"]
        lines.append("| Train | {0} | {1} |".format(*self.row("train")))
        if augment_multiplier is not None:
            tr = self.row("train")
            lines.append(
                f"| Augmented Train | {tr[0] * augment_multiplier} | {tr[1] * augment_multiplier} |"
            )
        lines.append("| Validation | {0} | {1} |".format(*self.row("val")))
        lines.append("| Test | {0} | {1} |".format(*self.row("test")))
        lines.append("| TOTAL | {0} | {1} |".format(*self.row("total")))
        return "\n".join(lines) + "\n"


def split_report(split: DatasetSplit, manifest: Manifest) -> SplitReport:
    """Count records per split and class; errors on ids unknown to the manifest."""
    by_id = manifest.by_id()
    counts = {}
    for name, ids in (("train", split.train), ("val", split.val), ("test", split.test)):
        per_class = {"CTC": 0, "LEUKO": 0}
        for cell_id in ids:
            if cell_id not in by_id:
                raise SplitError(f"split references unknown cell_id {cell_id!r}")
            per_class[by_id[cell_id].label.value] += 1
        counts[name] = per_class
    counts["total"] = {
        cls: sum(counts[part][cls] for part in ("train", "val", "test")) for cls in ("CTC", "LEUKO")
    }
    return SplitReport(counts=counts)
