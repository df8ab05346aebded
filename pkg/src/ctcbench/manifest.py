"""Cell records and manifest loading.

A manifest is a CSV with header ``cell_id,label,provenance,bf_path,dapi_path,source_tag``
listing one physical cell per row. Image paths are relative to the directory
containing the CSV; ``dapi_path`` may be empty (such records are excluded from
experiment arms that need the DAPI channel).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from ctcbench.pngio import read_gray_png

SCHEMA_VERSION = 1
CSV_HEADER = ["cell_id", "label", "provenance", "bf_path", "dapi_path", "source_tag"]


class Label(str, Enum):
    CTC = "CTC"
    LEUKO = "LEUKO"


class Provenance(str, Enum):
    SPIKED = "SPIKED"
    PATIENT = "PATIENT"
    HEALTHY = "HEALTHY"


# Which provenances a record of each class may carry.
_ALLOWED_PROVENANCE = {
    Label.CTC: {Provenance.SPIKED, Provenance.PATIENT},
    Label.LEUKO: {Provenance.PATIENT, Provenance.HEALTHY},
}


class ManifestError(ValueError):
    """Raised when a manifest file or record violates the schema."""


@dataclass(frozen=True)
class CellRecord:
    """One physical cell: identity, class label, provenance, and channel images."""

    cell_id: str
    label: Label
    provenance: Provenance
    bf_path: Path
    dapi_path: Path | None = None
    source_tag: str = ""

    def __post_init__(self):
        if not self.cell_id:
            raise ManifestError("cell_id must be non-empty")
        if self.provenance not in _ALLOWED_PROVENANCE[self.label]:
            raise ManifestError(
                f"record {self.cell_id!r}: label {self.label.value} does not admit "
                f"provenance {self.provenance.value}"
            )

    @property
    def has_dapi(self) -> bool:
        return self.dapi_path is not None

    def channel_path(self, channel: str) -> Path:
        """Return the image path for channel 'BF' or 'DAPI' (KeyError style on miss)."""
        if channel == "BF":
            return self.bf_path
        if channel == "DAPI":
            if self.dapi_path is None:
                raise ManifestError(f"record {self.cell_id!r} has no DAPI image")
            return self.dapi_path
        raise ValueError(f"unknown channel {channel!r}")


@dataclass(frozen=True)
class Manifest:
    """A validated collection of cell records rooted at ``image_root``."""

    records: tuple[CellRecord, ...]
    image_root: Path
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.cell_id in seen:
                raise ManifestError(f"duplicate cell_id {rec.cell_id!r}")
            seen.add(rec.cell_id)

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> dict[str, CellRecord]:
        return {rec.cell_id: rec for rec in self.records}

    def count(self, label: Label, provenance: Provenance | None = None) -> int:
        return sum(
            1
            for rec in self.records
            if rec.label is label and (provenance is None or rec.provenance is provenance)
        )


def load_manifest(path: str | Path, check_images: bool = True) -> Manifest:
    """Load and validate a manifest CSV.

    Image paths in the CSV are resolved against the CSV's directory. With
    ``check_images`` every referenced file must exist and decode as a PNG.
    Raises ManifestError naming the offending row on any schema violation.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    image_root = path.parent

    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}")
        if header != CSV_HEADER:
            raise ManifestError(
                f"{path}: bad header {','.join(header)!r}, expected {','.join(CSV_HEADER)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell for cell in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ManifestError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            cell_id, label_s, prov_s, bf_rel, dapi_rel, source_tag = row
            try:
                label = Label(label_s)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: unknown label {label_s!r}")
            try:
                provenance = Provenance(prov_s)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: unknown provenance {prov_s!r}")
            if not bf_rel:
                raise ManifestError(f"{path}:{lineno}: bf_path is required")
            try:
                rec = CellRecord(
                    cell_id=cell_id,
                    label=label,
                    provenance=provenance,
                    bf_path=image_root / bf_rel,
                    dapi_path=(image_root / dapi_rel) if dapi_rel else None,
                    source_tag=source_tag,
                )
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}")
            records.append(rec)

    manifest = Manifest(records=tuple(records), image_root=image_root)
    if check_images:
        _check_images(manifest)
    return manifest


def _check_images(manifest: Manifest) -> None:
    for rec in manifest.records:
        paths = [rec.bf_path] + ([rec.dapi_path] if rec.dapi_path else [])
        for p in paths:
            if not p.is_file():
                raise ManifestError(f"record {rec.cell_id!r}: image not found: {p}")
            try:
                read_gray_png(p)
            except Exception as exc:
                raise ManifestError(f"record {rec.cell_id!r}: cannot decode {p}: {exc}")


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest CSV with image paths relative to the CSV's directory."""
    path = Path(path)
    root = path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in manifest.records:
            writer.writerow(
                [
                    rec.cell_id,
                    rec.label.value,
                    rec.provenance.value,
                    rec.bf_path.relative_to(root).as_posix(),
                    rec.dapi_path.relative_to(root).as_posix() if rec.dapi_path else "",
                    rec.source_tag,
                ]
            )
