"""Residual CNN backbones behind a uniform interface.

Three families are implemented: RESNET_BASIC (two 3x3 convs per block, the
classic 34-layer layout at depths [3,4,6,3]), RESNET_BOTTLENECK (1x1-3x3-1x1
blocks with 4x expansion, the 50-layer layout at the same depths), and
MINI_RESNET (a small-stem, two-stage variant for desk-scale experiments).
The full-size families use batch normalization as in the canonical layouts;
MINI_RESNET uses group normalization, which behaves identically in train and
eval mode and stays reliable at the tiny batch sizes desk runs use.
DenseNet-121 and EfficientNet-B4 exist as named registry slots that accept
an externally registered builder but have no in-tree implementation.

Parameter initialization is driven by a numpy generator so identical seeds
give identical parameters regardless of torch's global RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
import torch
from torch import nn

from ctcbench.archive import WeightArchive


class ModelError(ValueError):
    pass


class UnknownBackboneError(ModelError):
    pass


class BackboneUnavailableError(ModelError):
    """The backbone name is a known slot but no builder is registered."""


class BackboneFamily(str, Enum):
    RESNET_BASIC = "RESNET_BASIC"
    RESNET_BOTTLENECK = "RESNET_BOTTLENECK"
    MINI_RESNET = "MINI_RESNET"


@dataclass(frozen=True)
class BackboneSpec:
    family: BackboneFamily
    stage_depths: tuple[int, ...]
    base_width: int
    input_size: int
    num_classes: int = 2
    preset_name: str | None = None

    def __post_init__(self):
        if not self.stage_depths or any(d < 1 for d in self.stage_depths):
            raise ModelError(f"stage_depths must be >= 1 each, got {self.stage_depths}")
        if self.base_width < 1:
            raise ModelError(f"base_width must be >= 1, got {self.base_width}")
        if self.input_size < 8:
            raise ModelError(f"input_size must be >= 8, got {self.input_size}")

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "stage_depths": list(self.stage_depths),
            "base_width": self.base_width,
            "input_size": self.input_size,
            "num_classes": self.num_classes,
            "preset_name": self.preset_name,
        }


def _make_norm(family: BackboneFamily, channels: int) -> nn.Module:
    if family is BackboneFamily.MINI_RESNET:
        return nn.GroupNorm(min(4, channels), channels)
    return nn.BatchNorm2d(channels)


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1,
                 family: BackboneFamily = BackboneFamily.RESNET_BASIC):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = _make_norm(family, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = _make_norm(family, out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                _make_norm(family, out_ch),
            )

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class BottleneckBlock(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1,
                 family: BackboneFamily = BackboneFamily.RESNET_BOTTLENECK):
        super().__init__()
        width = out_ch
        self.conv1 = nn.Conv2d(in_ch, width, 1, bias=False)
        self.bn1 = _make_norm(family, width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = _make_norm(family, width)
        self.conv3 = nn.Conv2d(width, width * self.expansion, 1, bias=False)
        self.bn3 = _make_norm(family, width * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_ch != width * self.expansion:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, width * self.expansion, 1, stride=stride, bias=False),
                _make_norm(family, width * self.expansion),
            )

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + self.shortcut(x))


class ResidualNet(nn.Module):
    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        block = BottleneckBlock if spec.family is BackboneFamily.RESNET_BOTTLENECK else BasicBlock

        if spec.family is BackboneFamily.MINI_RESNET:
            self.stem = nn.Sequential(
                nn.Conv2d(3, spec.base_width, 3, stride=1, padding=1, bias=False),
                _make_norm(spec.family, spec.base_width),
                nn.ReLU(inplace=True),
            )
        else:
            self.stem = nn.Sequential(
                nn.Conv2d(3, spec.base_width, 7, stride=2, padding=3, bias=False),
                _make_norm(spec.family, spec.base_width),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(3, stride=2, padding=1),
            )

        stages = []
        in_ch = spec.base_width
        for i, depth in enumerate(spec.stage_depths):
            width = spec.base_width * (2**i)
            stride = 1 if i == 0 else 2
            blocks = []
            for j in range(depth):
                blocks.append(block(in_ch, width, stride=stride if j == 0 else 1, family=spec.family))
                in_ch = width * block.expansion
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(in_ch, spec.num_classes)

    def forward(self, x):
        out = self.stem(x)
        out = self.stages(out)
        out = self.pool(out)
        return self.fc(torch.flatten(out, 1))

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_parameters(model: nn.Module, seed: int) -> None:
    """Seeded He-style initialization, deterministic across processes.

    Conv weights ~ N(0, 2/fan_in); normalization weight 1, bias 0; final
    linear ~ N(0, 0.01). Tensors are filled in module order from one numpy
    stream, so equal seeds give bitwise-equal parameters.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                std = math.sqrt(2.0 / fan_in)
                w = rng.normal(0.0, std, size=tuple(module.weight.shape))
                module.weight.copy_(torch.from_numpy(w).to(module.weight.dtype))
            elif isinstance(module, (nn.BatchNorm2d, nn.GroupNorm)):
                module.weight.fill_(1.0)
                module.bias.fill_(0.0)
                if isinstance(module, nn.BatchNorm2d):
                    module.running_mean.fill_(0.0)
                    module.running_var.fill_(1.0)
            elif isinstance(module, nn.Linear):
                w = rng.normal(0.0, 0.01, size=tuple(module.weight.shape))
                module.weight.copy_(torch.from_numpy(w).to(module.weight.dtype))
                module.bias.fill_(0.0)


def load_from_archive(model: nn.Module, archive: WeightArchive) -> None:
    """Copy archive tensors into the model, erroring on the first mismatch."""
    state = model.state_dict()
    for name, tensor in state.items():
        if not torch.is_floating_point(tensor) and "running" not in name:
            continue
        if name not in archive:
            raise ModelError(f"archive missing tensor {name!r}")
        arr = archive.get(name)
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ModelError(
                f"archive tensor {name!r} has shape {tuple(arr.shape)}, model expects {tuple(tensor.shape)}"
            )
    missing_ok = {k for k in state if k.endswith("num_batches_tracked")}
    new_state = {}
    for name, tensor in state.items():
        if name in archive:
            new_state[name] = torch.from_numpy(archive.get(name).copy()).to(tensor.dtype)
        elif name in missing_ok:
            new_state[name] = tensor
        else:
            raise ModelError(f"archive missing tensor {name!r}")
    model.load_state_dict(new_state)


def state_to_archive(model: nn.Module) -> WeightArchive:
    archive = WeightArchive()
    for name, tensor in model.state_dict().items():
        if name.endswith("num_batches_tracked"):
            continue
        archive.add(name, tensor.detach().cpu().numpy())
    return archive


def build_model(spec: BackboneSpec, seed: int = 0, archive: WeightArchive | None = None) -> ResidualNet:
    """Construct a backbone; weights come from the archive when given,
    otherwise from the seeded initializer."""
    model = ResidualNet(spec)
    if archive is not None:
        load_from_archive(model, archive)
    else:
        init_parameters(model, seed)
    return model


def forward(model: nn.Module, batch: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass on an (N, H, W, 3) normalized float batch.

    Returns (N, num_classes) float64 logits; rejects non-finite input.
    """
    arr = np.asarray(batch)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ModelError(f"expected (N, H, W, 3) batch, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ModelError("batch contains non-finite values")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(
                next(model.parameters()).dtype
            )
            logits = model(x)
    finally:
        if was_training:
            model.train()
    return logits.detach().cpu().numpy().astype(np.float64)


# --------------------------------------------------------------------------
# Cross-entropy loss
# --------------------------------------------------------------------------

def cross_entropy_with_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch plus its gradient w.r.t. logits.

    Stabilized with log-sum-exp; gradient is (softmax - one_hot) / N.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ModelError(f"shape mismatch: logits {z.shape}, labels {y.shape}")
    if y.min(initial=0) < 0 or y.max(initial=0) >= z.shape[1]:
        raise ModelError("labels out of range")
    zmax = z.max(axis=1, keepdims=True)
    log_norm = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    log_softmax = z - log_norm
    n = z.shape[0]
    loss = -log_softmax[np.arange(n), y].mean()
    grad = np.exp(log_softmax)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


def cross_entropy_torch(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Same loss on torch tensors, differentiable (used by the trainer)."""
    log_softmax = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    return -log_softmax[torch.arange(logits.shape[0]), labels].mean()


# --------------------------------------------------------------------------
# Preset registry
# --------------------------------------------------------------------------

_PRESETS: dict[str, BackboneSpec] = {
    "mini": BackboneSpec(BackboneFamily.MINI_RESNET, (1, 1), 8, 64, 2, "mini"),
    "mini-wide": BackboneSpec(BackboneFamily.MINI_RESNET, (1, 1), 16, 64, 2, "mini-wide"),
    "resnet34-like": BackboneSpec(BackboneFamily.RESNET_BASIC, (3, 4, 6, 3), 64, 148, 2, "resnet34-like"),
    "resnet50-like": BackboneSpec(BackboneFamily.RESNET_BOTTLENECK, (3, 4, 6, 3), 64, 148, 2, "resnet50-like"),
}

# Named slots for backbones the comparison interface recognizes but that have
# no in-tree implementation; register a builder to enable them.
_UNIMPLEMENTED_SLOTS = ("densenet121", "efficientnet-b4")
_EXTERNAL_BUILDERS: dict[str, Callable[[], nn.Module]] = {}


def register_backbone(name: str, builder: Callable[[], nn.Module]) -> None:
    _EXTERNAL_BUILDERS[name] = builder


def available_backbones() -> list[str]:
    return sorted(set(_PRESETS) | set(_EXTERNAL_BUILDERS))


def get_backbone_spec(name: str) -> BackboneSpec:
    """Resolve a preset name; unknown names and empty slots raise distinct errors."""
    if name in _PRESETS:
        return _PRESETS[name]
    if name in _EXTERNAL_BUILDERS:
        raise ModelError(f"backbone {name!r} is externally built; use build_registered_backbone")
    if name in _UNIMPLEMENTED_SLOTS:
        raise BackboneUnavailableError(
            f"backbone {name!r} is a registry slot with no implementation; register a builder first"
        )
    raise UnknownBackboneError(f"unknown backbone {name!r}; available: {available_backbones()}")


def build_registered_backbone(name: str) -> nn.Module:
    if name not in _EXTERNAL_BUILDERS:
        raise UnknownBackboneError(f"no registered builder for {name!r}")
    return _EXTERNAL_BUILDERS[name]()
