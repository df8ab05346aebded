"""Seeded image augmentation and training-set expansion.

Three op families are supported: GEOMETRIC (rotation with reflect padding
plus horizontal/vertical flips), BRIGHTNESS (multiplicative factor), and
COLOR (gamma plus contrast; on single-channel images this degenerates to a
tone adjustment). Expansion emits, per record, the original image, one
augmented copy per op, and optionally the untransformed other-channel image,
in that fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ctcbench.manifest import CellRecord, Label, ManifestError
from ctcbench.pngio import read_gray_png, write_gray_png


class AugmentError(ValueError):
    pass


class OpKind(str, Enum):
    GEOMETRIC = "GEOMETRIC"
    BRIGHTNESS = "BRIGHTNESS"
    COLOR = "COLOR"


class Origin(str, Enum):
    ORIGINAL = "ORIGINAL"
    AUG_GEOMETRIC = "AUG_GEOMETRIC"
    AUG_BRIGHTNESS = "AUG_BRIGHTNESS"
    AUG_COLOR = "AUG_COLOR"
    OTHER_CHANNEL = "OTHER_CHANNEL"


_ORIGIN_FOR_KIND = {
    OpKind.GEOMETRIC: Origin.AUG_GEOMETRIC,
    OpKind.BRIGHTNESS: Origin.AUG_BRIGHTNESS,
    OpKind.COLOR: Origin.AUG_COLOR,
}

# Documented parameter bounds per op kind: {param: (low, high, default_range)}.
_PARAM_BOUNDS = {
    OpKind.GEOMETRIC: {
        "rotation_degrees": (-360.0, 360.0, (-180.0, 180.0)),
        "hflip_prob": (0.0, 1.0, 0.5),
        "vflip_prob": (0.0, 1.0, 0.5),
    },
    OpKind.BRIGHTNESS: {
        "factor_range": (0.05, 3.0, (0.7, 1.3)),
    },
    OpKind.COLOR: {
        "gamma_range": (0.1, 10.0, (0.8, 1.25)),
        "contrast_range": (0.05, 3.0, (0.8, 1.2)),
    },
}


def _validate_range(name: str, value, lo: float, hi: float) -> tuple[float, float]:
    try:
        a, b = float(value[0]), float(value[1])
    except (TypeError, IndexError):
        raise AugmentError(f"{name} must be a (low, high) pair, got {value!r}")
    if not (lo <= a <= b <= hi):
        raise AugmentError(f"{name}=({a}, {b}) outside documented bounds [{lo}, {hi}] or empty")
    return a, b


@dataclass(frozen=True)
class AugmentationOp:
    """One seeded augmentation op; ``params`` override the documented defaults."""

    kind: OpKind
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        bounds = _PARAM_BOUNDS[self.kind]
        unknown = set(self.params) - set(bounds)
        if unknown:
            raise AugmentError(f"{self.kind.value}: unknown params {sorted(unknown)}")
        resolved = {}
        for name, (lo, hi, default) in bounds.items():
            value = self.params.get(name, default)
            if isinstance(default, tuple):
                resolved[name] = _validate_range(name, value, lo, hi)
            else:
                value = float(value)
                if not lo <= value <= hi:
                    raise AugmentError(f"{name}={value} outside [{lo}, {hi}]")
                resolved[name] = value
        object.__setattr__(self, "params", resolved)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "seed": self.seed, "params": dict(self.params)}


@dataclass(frozen=True)
class PipelinePlan:
    """Expansion recipe for one experiment arm."""

    primary_channel: str  # "BF" or "DAPI"
    ops: tuple[AugmentationOp, ...]
    inject_other_channel: bool

    def __post_init__(self):
        if self.primary_channel not in ("BF", "DAPI"):
            raise AugmentError(f"primary_channel must be BF or DAPI, got {self.primary_channel!r}")
        if len(self.ops) > 3:
            raise AugmentError(f"at most 3 ops per plan, got {len(self.ops)}")

    @property
    def other_channel(self) -> str:
        return "DAPI" if self.primary_channel == "BF" else "BF"

    @property
    def multiplier(self) -> int:
        return 1 + len(self.ops) + int(self.inject_other_channel)

    def to_dict(self) -> dict:
        return {
            "primary_channel": self.primary_channel,
            "ops": [op.to_dict() for op in self.ops],
            "inject_other_channel": self.inject_other_channel,
        }


@dataclass(frozen=True)
class AugmentedSample:
    parent_cell_id: str
    image: np.ndarray  # (H, W) uint8
    label: Label
    origin: Origin


def _mirror_coords(coords: np.ndarray, n: int) -> np.ndarray:
    """Fold continuous coordinates into [0, n-1] by mirroring about pixel centers."""
    if n == 1:
        return np.zeros_like(coords)
    period = 2.0 * (n - 1)
    m = np.mod(coords, period)
    return np.where(m > n - 1, period - m, m)


def _bilinear(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = image.shape
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    img = image.astype(np.float64)
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bottom = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def rotate_image(image: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate about the image center, bilinear, reflect padding.

    Multiples of 90 degrees take an exact array-rotation path so the pixel
    multiset is preserved exactly.
    """
    if angle_degrees % 90.0 == 0.0:
        return np.ascontiguousarray(np.rot90(image, k=int(angle_degrees // 90) % 4))
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    t = np.deg2rad(angle_degrees)
    dy, dx = yy - cy, xx - cx
    src_y = _mirror_coords(np.cos(t) * dy + np.sin(t) * dx + cy, h)
    src_x = _mirror_coords(-np.sin(t) * dy + np.cos(t) * dx + cx, w)
    out = _bilinear(image, src_y, src_x)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _apply_geometric(image: np.ndarray, params: dict, rng: np.random.Generator) -> np.ndarray:
    lo, hi = params["rotation_degrees"]
    angle = float(rng.uniform(lo, hi)) if hi > lo else lo
    out = rotate_image(image, angle)
    if rng.random() < params["hflip_prob"]:
        out = out[:, ::-1]
    if rng.random() < params["vflip_prob"]:
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def _apply_brightness(image: np.ndarray, params: dict, rng: np.random.Generator) -> np.ndarray:
    lo, hi = params["factor_range"]
    factor = float(rng.uniform(lo, hi)) if hi > lo else lo
    return np.clip(np.rint(image.astype(np.float64) * factor), 0, 255).astype(np.uint8)


def _apply_color(image: np.ndarray, params: dict, rng: np.random.Generator) -> np.ndarray:
    glo, ghi = params["gamma_range"]
    clo, chi = params["contrast_range"]
    gamma = float(rng.uniform(glo, ghi)) if ghi > glo else glo
    contrast = float(rng.uniform(clo, chi)) if chi > clo else clo
    x = image.astype(np.float64) / 255.0
    y = 0.5 + contrast * (np.power(x, gamma) - 0.5)
    return np.clip(np.rint(y * 255.0), 0, 255).astype(np.uint8)


_APPLIERS = {
    OpKind.GEOMETRIC: _apply_geometric,
    OpKind.BRIGHTNESS: _apply_brightness,
    OpKind.COLOR: _apply_color,
}


def apply_op(image: np.ndarray, op: AugmentationOp, draw_seed: int) -> np.ndarray:
    """Apply one op; deterministic given (image, op, draw_seed)."""
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.size == 0:
        raise AugmentError(f"expected non-empty 2-D image, got shape {arr.shape}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=op.seed, spawn_key=(draw_seed,)))
    return _APPLIERS[op.kind](arr.astype(np.uint8), op.params, rng)


def resize_to_working(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to size x size; exact no-op when already that shape."""
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.size == 0:
        raise AugmentError(f"expected non-empty 2-D image, got shape {arr.shape}")
    if size < 1:
        raise AugmentError(f"size must be >= 1, got {size}")
    if arr.shape == (size, size):
        return arr.astype(np.uint8).copy()
    h, w = arr.shape
    ys = np.clip((np.arange(size) + 0.5) * h / size - 0.5, 0, h - 1)
    xs = np.clip((np.arange(size) + 0.5) * w / size - 0.5, 0, w - 1)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    out = _bilinear(arr.astype(np.uint8), grid_y, grid_x)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


ImageLoader = Callable[[Path], np.ndarray]


def expand_training_set(
    records: Sequence[CellRecord],
    plan: PipelinePlan,
    working_size: int = 148,
    loader: ImageLoader = read_gray_png,
    base_seed: int = 0,
) -> list[AugmentedSample]:
    """Expand records into training samples per the plan.

    Per record: 1 original + one augmented copy per op + the other-channel
    image if injection is on, so len(out) == len(records) * plan.multiplier.
    Order is records order, then origin order. Draw seeds derive from
    (base_seed, record index), so the sequence is reproducible and
    independent of execution order.
    """
    samples: list[AugmentedSample] = []
    for index, rec in enumerate(records):
        primary = resize_to_working(loader(rec.channel_path(plan.primary_channel)), working_size)
        samples.append(AugmentedSample(rec.cell_id, primary, rec.label, Origin.ORIGINAL))
        draw_seed = base_seed * 1_000_003 + index
        for op in plan.ops:
            augmented = apply_op(primary, op, draw_seed)
            samples.append(AugmentedSample(rec.cell_id, augmented, rec.label, _ORIGIN_FOR_KIND[op.kind]))
        if plan.inject_other_channel:
            if plan.other_channel == "DAPI" and not rec.has_dapi:
                raise ManifestError(
                    f"record {rec.cell_id!r}: channel injection requested but no DAPI image"
                )
            other = resize_to_working(loader(rec.channel_path(plan.other_channel)), working_size)
            samples.append(AugmentedSample(rec.cell_id, other, rec.label, Origin.OTHER_CHANNEL))
    return samples


def materialize_samples(samples: Sequence[AugmentedSample], out_dir: str | Path, channel: str) -> list[Path]:
    """Write samples as PNGs: originals keep the channel suffix, augmented
    copies get _augN, injected other-channel images get _<CH>INJ."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    other = "DAPI" if channel == "BF" else "BF"
    paths = []
    aug_counter: dict[str, int] = {}
    for sample in samples:
        if sample.origin is Origin.ORIGINAL:
            name = f"{sample.parent_cell_id}_{channel}.png"
        elif sample.origin is Origin.OTHER_CHANNEL:
            name = f"{sample.parent_cell_id}_{other}INJ.png"
        else:
            k = aug_counter.get(sample.parent_cell_id, 0) + 1
            aug_counter[sample.parent_cell_id] = k
            name = f"{sample.parent_cell_id}_{channel}_aug{k}.png"
        path = out_dir / name
        write_gray_png(path, sample.image)
        paths.append(path)
    return paths
