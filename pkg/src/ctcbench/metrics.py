"""Confusion-matrix-derived metrics.

The positive class is CTC. Zero-denominator precision/recall are defined as
0 and flagged in the report. MACRO averaging (unweighted class means) is the
default; POSITIVE_CLASS reports the CTC-side values, where F1 is exactly the
harmonic mean of precision and recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from ctcbench.manifest import Label


class MetricsError(ValueError):
    pass


class Averaging(str, Enum):
    MACRO = "MACRO"
    POSITIVE_CLASS = "POSITIVE_CLASS"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise MetricsError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    averaging: Averaging
    per_class: dict = field(default_factory=dict)
    zero_division_notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "averaging": self.averaging.value,
            "per_class": self.per_class,
            "zero_division_notes": list(self.zero_division_notes),
        }


def confusion(predictions: Sequence[Label], truths: Sequence[Label]) -> ConfusionMatrix:
    """Tally a confusion matrix with CTC as the positive class."""
    if len(predictions) != len(truths):
        raise MetricsError(f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths")
    tp = fp = tn = fn = 0
    for pred, truth in zip(predictions, truths):
        pred, truth = Label(pred), Label(truth)
        if truth is Label.CTC:
            if pred is Label.CTC:
                tp += 1
            else:
                fn += 1
        else:
            if pred is Label.CTC:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def _safe_div(num: float, den: float, notes: list, what: str) -> float:
    if den == 0:
        notes.append(f"{what} undefined (0/0), reported as 0")
        return 0.0
    return num / den


def compute_metrics(cm: ConfusionMatrix, averaging: Averaging = Averaging.MACRO) -> MetricsReport:
    """Accuracy, precision, recall, F1 from a confusion matrix."""
    if cm.total == 0:
        raise MetricsError("cannot compute metrics of an empty confusion matrix")
    notes: list[str] = []
    accuracy = (cm.tp + cm.tn) / cm.total

    # Per-class view: LEUKO plays the positive role in its own row.
    ctc_precision = _safe_div(cm.tp, cm.tp + cm.fp, notes, "CTC precision")
    ctc_recall = _safe_div(cm.tp, cm.tp + cm.fn, notes, "CTC recall")
    leuko_precision = _safe_div(cm.tn, cm.tn + cm.fn, notes, "LEUKO precision")
    leuko_recall = _safe_div(cm.tn, cm.tn + cm.fp, notes, "LEUKO recall")

    def f1_of(p: float, r: float, what: str) -> float:
        return _safe_div(2.0 * p * r, p + r, notes, what)

    ctc_f1 = f1_of(ctc_precision, ctc_recall, "CTC F1")
    leuko_f1 = f1_of(leuko_precision, leuko_recall, "LEUKO F1")

    per_class = {
        "CTC": {"precision": ctc_precision, "recall": ctc_recall, "f1": ctc_f1},
        "LEUKO": {"precision": leuko_precision, "recall": leuko_recall, "f1": leuko_f1},
    }

    if averaging is Averaging.MACRO:
        precision = (ctc_precision + leuko_precision) / 2.0
        recall = (ctc_recall + leuko_recall) / 2.0
        f1 = (ctc_f1 + leuko_f1) / 2.0
    else:
        precision, recall, f1 = ctc_precision, ctc_recall, ctc_f1

    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        averaging=averaging,
        per_class=per_class,
        zero_division_notes=tuple(notes),
    )


METRIC_NAMES = ("accuracy", "precision", "recall", "f1")
_COLUMN_TITLES = {"accuracy": "Accuracy", "precision": "Precision", "recall": "Recall", "f1": "F1-score"}


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


def metrics_table_markdown(rows: Sequence[tuple[str, dict]], bold_best: bool = False) -> str:
    """Render rows of {metric: (mean, std)} in the published tables' shape.

    With ``bold_best`` the best mean per metric column is bolded.
    """
    best = {}
    if bold_best and rows:
        for m in METRIC_NAMES:
            best[m] = max(stats[m][0] for _, stats in rows)
    lines = ["|  | " + " | ".join(_COLUMN_TITLES[m] for m in METRIC_NAMES) + " |"]
    lines.append("| --- | --- | --- | --- | --- |")
    for name, stats in rows:
        cells = []
        for m in METRIC_NAMES:
            mean, std = stats[m]
            cell = format_mean_std(mean, std)
            if bold_best and mean == best[m]:
                cell = f"**{cell}**"
            cells.append(cell)
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
