"""Declarative experiment configuration (TOML).

Every key has a documented default; unknown sections or keys are rejected
with their location. The fully resolved configuration is persisted next to
the results of every run so any output is reproducible from it alone.

Schema (all sections optional unless a command needs them):

    [experiment]  name, output_dir
    [manifest]    path
    [split]       mode ("exact_counts"|"fractions"), seed, val_ctc,
                  val_leuko, test_leuko, val_fraction, leuko_test_fraction
    [arm]         name (AUG1, AUG2, BF_WO_DAPI, BF_W_DAPI_NO_AUG,
                  BF_W_DAPI, DAPI_WO_BF, DAPI_W_BF)
    [augment]     rotation_degrees [lo,hi], hflip_prob, vflip_prob,
                  brightness_range, gamma_range, contrast_range, seed
    [backbone]    preset, or family/stage_depths/base_width/input_size
    [train]       preset ("desk"|"paper"), epochs, batch_size,
                  learning_rate, weight_decay, seeds, freeze_backbone
    [stats]       alpha
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ctcbench.experiments import ARMS, AugmentSettings, ExperimentConfig
from ctcbench.model import BackboneFamily, BackboneSpec, get_backbone_spec
from ctcbench.splitting import SplitMode, SplitPolicy
from ctcbench.trainer import DEFAULT_SEEDS, TrainConfig

RESULTS_DIR_ENV = "CTCBENCH_RESULTS_DIR"

_KNOWN_KEYS = {
    "experiment": {"name", "output_dir"},
    "manifest": {"path"},
    "split": {"mode", "seed", "val_ctc", "val_leuko", "test_leuko", "val_fraction", "leuko_test_fraction"},
    "arm": {"name"},
    "augment": {"rotation_degrees", "hflip_prob", "vflip_prob", "brightness_range",
                "gamma_range", "contrast_range", "seed"},
    "backbone": {"preset", "family", "stage_depths", "base_width", "input_size", "num_classes"},
    "train": {"preset", "epochs", "batch_size", "learning_rate", "weight_decay", "seeds", "freeze_backbone"},
    "stats": {"alpha"},
}


class ConfigError(ValueError):
    pass


def _check_keys(raw: dict, path: str) -> None:
    for section, content in raw.items():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        for key in content:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"{path}: [{section}] unknown key {key!r}")


def _split_policy(section: dict, path: str) -> SplitPolicy:
    mode_name = section.get("mode", "exact_counts").upper()
    try:
        mode = SplitMode(mode_name)
    except ValueError:
        raise ConfigError(f"{path}: [split] mode must be exact_counts or fractions, got {mode_name!r}")
    kwargs = {"mode": mode, "seed": int(section.get("seed", 0))}
    if mode is SplitMode.EXACT_COUNTS:
        kwargs.update(
            val_ctc=int(section.get("val_ctc", 50)),
            val_leuko=int(section.get("val_leuko", 29)),
            test_leuko=int(section.get("test_leuko", 56)),
        )
    else:
        kwargs.update(
            val_fraction=float(section.get("val_fraction", 0.1)),
            leuko_test_fraction=float(section.get("leuko_test_fraction", 0.15)),
        )
    return SplitPolicy(**kwargs)


def _augment_settings(section: dict) -> AugmentSettings:
    defaults = AugmentSettings()

    def pair(key, default):
        value = section.get(key, default)
        return (float(value[0]), float(value[1]))

    return AugmentSettings(
        rotation_degrees=pair("rotation_degrees", defaults.rotation_degrees),
        hflip_prob=float(section.get("hflip_prob", defaults.hflip_prob)),
        vflip_prob=float(section.get("vflip_prob", defaults.vflip_prob)),
        brightness_range=pair("brightness_range", defaults.brightness_range),
        gamma_range=pair("gamma_range", defaults.gamma_range),
        contrast_range=pair("contrast_range", defaults.contrast_range),
        seed=int(section.get("seed", defaults.seed)),
    )


def _backbone_spec(section: dict, path: str) -> BackboneSpec:
    if "preset" in section:
        extra = set(section) - {"preset"}
        if extra:
            raise ConfigError(f"{path}: [backbone] preset excludes keys {sorted(extra)}")
        return get_backbone_spec(section["preset"])
    if "family" not in section:
        return get_backbone_spec("mini")
    try:
        family = BackboneFamily(section["family"])
    except ValueError:
        raise ConfigError(f"{path}: [backbone] unknown family {section['family']!r}")
    return BackboneSpec(
        family=family,
        stage_depths=tuple(int(d) for d in section.get("stage_depths", (1, 1))),
        base_width=int(section.get("base_width", 8)),
        input_size=int(section.get("input_size", 64)),
        num_classes=int(section.get("num_classes", 2)),
    )


def _train_config(section: dict, path: str) -> TrainConfig:
    preset = section.get("preset", "desk")
    if preset not in ("desk", "paper"):
        raise ConfigError(f"{path}: [train] preset must be desk or paper, got {preset!r}")
    base = TrainConfig.desk_preset() if preset == "desk" else TrainConfig.paper_preset()
    return TrainConfig(
        epochs=int(section.get("epochs", base.epochs)),
        batch_size=int(section.get("batch_size", base.batch_size)),
        learning_rate=float(section.get("learning_rate", base.learning_rate)),
        weight_decay=float(section.get("weight_decay", base.weight_decay)),
        seeds=tuple(int(s) for s in section.get("seeds", DEFAULT_SEEDS)),
        preset=preset,
        freeze_backbone=bool(section.get("freeze_backbone", False)),
    )


def load_config(
    path: str | Path,
    arm_override: str | None = None,
    seeds_override: tuple[int, ...] | None = None,
) -> ExperimentConfig:
    """Parse, validate, and resolve a TOML experiment configuration."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}")
    _check_keys(raw, str(path))

    manifest_section = raw.get("manifest", {})
    if "path" not in manifest_section:
        raise ConfigError(f"{path}: [manifest] path is required")
    manifest_path = Path(manifest_section["path"])
    if not manifest_path.is_absolute():
        manifest_path = path.parent / manifest_path

    arm_name = arm_override or raw.get("arm", {}).get("name", "BF_W_DAPI")
    if arm_name not in ARMS:
        raise ConfigError(f"{path}: [arm] unknown name {arm_name!r}; choose from {sorted(ARMS)}")

    train = _train_config(raw.get("train", {}), str(path))
    if seeds_override is not None:
        train = dataclasses.replace(train, seeds=seeds_override)

    experiment_section = raw.get("experiment", {})
    output_dir = os.environ.get(RESULTS_DIR_ENV) or experiment_section.get("output_dir", "results")
    output_dir = Path(output_dir)
    if not output_dir.is_absolute():
        output_dir = path.parent / output_dir

    alpha = float(raw.get("stats", {}).get("alpha", 0.05))
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"{path}: [stats] alpha must be in (0,1), got {alpha}")

    return ExperimentConfig(
        manifest_path=manifest_path,
        split_policy=_split_policy(raw.get("split", {}), str(path)),
        arm_name=arm_name,
        backbone=_backbone_spec(raw.get("backbone", {}), str(path)),
        train=train,
        output_dir=output_dir,
        experiment_name=experiment_section.get("name", "experiment"),
        augment=_augment_settings(raw.get("augment", {})),
        alpha=alpha,
    )


def persist_resolved(config: ExperimentConfig) -> Path:
    """Write the fully resolved configuration next to the experiment outputs."""
    target = config.experiment_dir / "config.resolved.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target
