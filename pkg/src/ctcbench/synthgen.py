"""Synthetic single-cell image pairs with a planted, tunable class signal.

Each record renders as a bright-field image (dark disk on a bright
background, sinusoidal internal texture) and a DAPI image (bright nucleus
disk on a dark background). Tumor-class cells differ from leukocytes in
disk radius and texture frequency; the radius gap scales linearly with
``bf_signal_strength``, so a simple radius threshold is a Bayes-optimal
oracle. The nucleus radius correlates with the class label with strength
``dapi_informativeness``. Per-record substreams are derived from the master
seed, so generation is bit-reproducible and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ctcbench.manifest import CellRecord, Label, Manifest, Provenance, load_manifest, save_manifest
from ctcbench.pngio import write_gray_png

# Geometry constants, as fractions of image size. At full signal strength the
# clipped radius distributions of the two classes are disjoint by construction:
# gap 2*RADIUS_GAP*RADIUS_BASE = 0.072 > 2*2.5*RADIUS_JITTER = 0.05.
RADIUS_BASE = 0.16
RADIUS_GAP = 0.225
RADIUS_JITTER = 0.01
TEXTURE_FREQ_BASE = 5.0
TEXTURE_FREQ_GAP = 0.3
NUCLEUS_BASE = 0.10
NUCLEUS_GAP = 0.02
BF_BACKGROUND = 0.82
BF_CELL_LEVEL = 0.45
BF_TEXTURE_AMP = 0.12
DAPI_BACKGROUND = 0.06
DAPI_NUCLEUS_LEVEL = 0.85


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    """Counts and signal knobs for one generated dataset."""

    n_spiked_ctc: int
    n_patient_ctc: int
    n_leuko: int
    image_size: int = 148
    bf_signal_strength: float = 1.0
    dapi_informativeness: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_spiked_ctc, self.n_patient_ctc, self.n_leuko) < 0:
            raise SynthError("record counts must be non-negative")
        if self.image_size < 32:
            raise SynthError(f"image_size must be >= 32, got {self.image_size}")
        if not 0.0 <= self.bf_signal_strength <= 1.0:
            raise SynthError(f"bf_signal_strength must be in [0,1], got {self.bf_signal_strength}")
        if not 0.0 <= self.dapi_informativeness <= 1.0:
            raise SynthError(f"dapi_informativeness must be in [0,1], got {self.dapi_informativeness}")
        if self.noise_sigma < 0:
            raise SynthError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def total(self) -> int:
        return self.n_spiked_ctc + self.n_patient_ctc + self.n_leuko


def _record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _disk_coverage(size: int, cx: float, cy: float, radius: float) -> np.ndarray:
    """Antialiased disk membership in [0,1] via a 1-pixel soft edge."""
    yy, xx = np.mgrid[0:size, 0:size]
    dist = np.hypot(yy - cy, xx - cx)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def render_pair(spec: SynthSpec, index: int, is_ctc: bool) -> tuple[np.ndarray, np.ndarray]:
    """Render the (BF, DAPI) uint8 image pair for record ``index``.

    All stochastic draws come from a per-record substream in a fixed order,
    so the same (seed, index) renders identically regardless of how many
    records surround it, and the latent radius noise is shared across
    signal-strength settings.
    """
    rng = _record_rng(spec.seed, index)
    size = spec.image_size
    sign = 1.0 if is_ctc else -1.0

    z_radius = float(np.clip(rng.standard_normal(), -2.5, 2.5))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    angle = rng.uniform(0.0, np.pi)
    z_nucleus = float(np.clip(rng.standard_normal(), -2.5, 2.5))
    jitter = rng.uniform(-0.03, 0.03, size=2)
    bf_noise = rng.standard_normal((size, size))
    dapi_noise = rng.standard_normal((size, size))

    cy = (size - 1) / 2.0 + jitter[0] * size
    cx = (size - 1) / 2.0 + jitter[1] * size

    radius = size * (RADIUS_BASE * (1.0 + RADIUS_GAP * spec.bf_signal_strength * sign) + RADIUS_JITTER * z_radius)
    radius = max(radius, 2.0)
    coverage = _disk_coverage(size, cx, cy, radius)

    yy, xx = np.mgrid[0:size, 0:size]
    freq = TEXTURE_FREQ_BASE * (1.0 + TEXTURE_FREQ_GAP * spec.bf_signal_strength * sign)
    axis = (yy - cy) * np.cos(angle) + (xx - cx) * np.sin(angle)
    texture = np.sin(2.0 * np.pi * freq * axis / (2.0 * radius) + phase)
    cell = BF_CELL_LEVEL + BF_TEXTURE_AMP * texture
    bf = BF_BACKGROUND * (1.0 - coverage) + cell * coverage
    bf = bf + spec.noise_sigma * bf_noise

    latent = spec.dapi_informativeness * sign + np.sqrt(1.0 - spec.dapi_informativeness**2) * z_nucleus
    nucleus_radius = max(size * (NUCLEUS_BASE + NUCLEUS_GAP * latent), 2.0)
    nucleus = _disk_coverage(size, cx, cy, nucleus_radius)
    dapi = DAPI_BACKGROUND + (DAPI_NUCLEUS_LEVEL - DAPI_BACKGROUND) * nucleus
    dapi = dapi + spec.noise_sigma * dapi_noise

    return _quantize(bf), _quantize(dapi)


def _record_plan(spec: SynthSpec):
    """Yield (index, cell_id, label, provenance) in generation order."""
    index = 0
    for i in range(spec.n_spiked_ctc):
        yield index, f"spiked_{i:04d}", Label.CTC, Provenance.SPIKED
        index += 1
    for i in range(spec.n_patient_ctc):
        yield index, f"patient_{i:04d}", Label.CTC, Provenance.PATIENT
        index += 1
    for i in range(spec.n_leuko):
        yield index, f"leuko_{i:04d}", Label.LEUKO, Provenance.HEALTHY
        index += 1


def generate_dataset(spec: SynthSpec, out_dir: str | Path) -> Manifest:
    """Render all image pairs under ``out_dir`` and return the validated manifest.

    Layout: ``<out_dir>/images/<cell_id>_BF.png`` and ``_DAPI.png`` plus
    ``<out_dir>/manifest.csv``. Output bytes are a pure function of ``spec``.
    """
    if spec.total == 0:
        raise SynthError("spec requests zero records")
    out_dir = Path(out_dir)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)

    records = []
    for index, cell_id, label, provenance in _record_plan(spec):
        bf, dapi = render_pair(spec, index, is_ctc=label is Label.CTC)
        bf_path = images / f"{cell_id}_BF.png"
        dapi_path = images / f"{cell_id}_DAPI.png"
        write_gray_png(bf_path, bf)
        write_gray_png(dapi_path, dapi)
        records.append(
            CellRecord(
                cell_id=cell_id,
                label=label,
                provenance=provenance,
                bf_path=bf_path,
                dapi_path=dapi_path,
                source_tag="synthetic",
            )
        )

    manifest = Manifest(records=tuple(records), image_root=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return load_manifest(out_dir / "manifest.csv")
