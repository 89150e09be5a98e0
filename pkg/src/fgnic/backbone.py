"""Staged classifier backbones: a desk-scale residual network plus the
adapter that splits any supported classifier into feature-extractor stages
and a fully connected head, with strict weight freezing.

The split keeps references to the original modules, so recomposing
stages + pool + head reproduces the unsplit classifier's logits bit for bit.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError, ShapeMismatchError
from .utils import count_trainable, image_to_tensor, parameter_hash

# stage widths; the last width is the pooled feature length D
ARCH_PRESETS = {
    "desk": (16, 32, 64, 128),
    "resnet18_style": (64, 128, 256, 512),
    "resnet50_style": (256, 512, 1024, 2048),
}


def _group_norm(channels):
    # per-sample normalization: deterministic, no running stats, and it keeps
    # activations in range when fusion blocks add offsets between stages
    return nn.GroupNorm(min(8, channels), channels)


class ResidualBlock(nn.Module):
    """conv-norm-relu-conv-norm with an additive shortcut (1x1 projection on
    reshape)."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm1 = _group_norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = _group_norm(cout)
        self.shortcut = (
            nn.Conv2d(cin, cout, 1, stride=stride) if (cin != cout or stride != 1) else nn.Identity()
        )
        self.relu = nn.ReLU()

    def forward(self, x):
        y = self.norm2(self.conv2(self.relu(self.norm1(self.conv1(x)))))
        return self.relu(y + self.shortcut(x))


class DeskBackbone(nn.Module):
    """Small norm-free residual classifier trained from scratch at desk scale.

    Structure: stem conv, four residual stages (strides 1, 2, 2, 2), global
    average pooling, one linear head. `feature_units()` names the boundaries
    at which the extractor may be split.
    """

    def __init__(self, num_classes: int, widths=ARCH_PRESETS["desk"], in_channels: int = 3):
        super().__init__()
        if len(widths) != 4:
            raise ConfigurationError(f"widths must list four stage widths, got {widths}")
        self.widths = tuple(int(w) for w in widths)
        self.num_classes = int(num_classes)
        self.stem = nn.Sequential(nn.Conv2d(in_channels, widths[0], 3, padding=1),
                                  _group_norm(widths[0]), nn.ReLU())
        self.stage1 = ResidualBlock(widths[0], widths[0], stride=1)
        self.stage2 = ResidualBlock(widths[0], widths[1], stride=2)
        self.stage3 = ResidualBlock(widths[1], widths[2], stride=2)
        self.stage4 = ResidualBlock(widths[2], widths[3], stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(widths[3], num_classes)

    def feature_units(self):
        return {
            "stem": self.stem,
            "stage1": self.stage1,
            "stage2": self.stage2,
            "stage3": self.stage3,
            "stage4": self.stage4,
        }

    def forward(self, x):
        x = self.stage4(self.stage3(self.stage2(self.stage1(self.stem(x)))))
        return self.head(torch.flatten(self.pool(x), 1))

    def config(self) -> dict:
        return {"widths": list(self.widths), "num_classes": self.num_classes}


DEFAULT_BOUNDARIES = ("stage1", "stage2", "stage3", "stage4")


@dataclass
class StageShape:
    height: int
    width: int
    channels: int


class ClassifierSplit(nn.Module):
    """A classifier partitioned into feature-extractor segments and a head.

    The segments reuse the source model's modules, so running them in order,
    pooling, and applying the head is the same computation as the original
    forward pass.
    """

    def __init__(self, stages, pool, head, boundaries):
        super().__init__()
        self.stages = nn.ModuleList(stages)
        self.pool = pool
        self.head = head
        self.boundaries = tuple(boundaries)

    def forward_features(self, x, upto=None):
        last = len(self.stages) - 1 if upto is None else int(upto)
        if not 0 <= last < len(self.stages):
            raise ConfigurationError(f"stage index {upto} out of range [0, {len(self.stages) - 1}]")
        for stage in self.stages[: last + 1]:
            x = stage(x)
        return x

    def feature_vector(self, x):
        return torch.flatten(self.pool(self.forward_features(x)), 1)

    def classify(self, x):
        return self.head(self.feature_vector(x))

    forward = classify

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    def stage_shapes(self, input_hw, in_channels: int = 3):
        """Trace per-stage output shapes for a given input size."""
        h, w = input_hw
        x = torch.zeros(1, in_channels, h, w)
        shapes = []
        with torch.no_grad():
            for stage in self.stages:
                x = stage(x)
                shapes.append(StageShape(int(x.shape[2]), int(x.shape[3]), int(x.shape[1])))
        return shapes

    @property
    def is_frozen(self) -> bool:
        return all(not p.requires_grad for p in self.parameters())

    def parameter_hash(self) -> str:
        return parameter_hash(self)


def split_classifier(model: nn.Module, stage_boundaries=None) -> ClassifierSplit:
    """Partition a classifier into stage segments ending at named units.

    `stage_boundaries` are names from the model's `feature_units()`; each
    segment collects the units up to and including its boundary. Boundaries
    must appear in network order and end at the final unit. Anything else --
    an unknown name, or a path inside a unit such as "stage2.conv1" -- is a
    configuration error.
    """
    for attr in ("feature_units", "pool", "head"):
        if not hasattr(model, attr):
            raise ConfigurationError(f"model lacks {attr!r}; cannot locate the extractor/head boundary")
    units = model.feature_units()
    names = list(units)
    boundaries = list(stage_boundaries) if stage_boundaries is not None else [n for n in DEFAULT_BOUNDARIES if n in names]
    unknown = [b for b in boundaries if b not in names]
    if unknown:
        raise ConfigurationError(f"invalid stage boundaries {unknown}: must be whole units from {names}")
    order = [names.index(b) for b in boundaries]
    if order != sorted(order) or len(set(order)) != len(order):
        raise ConfigurationError(f"stage boundaries must be unique and in network order, got {boundaries}")
    if order[-1] != len(names) - 1:
        raise ConfigurationError(f"the final boundary must be {names[-1]!r} so no extractor unit is dropped")
    segments, start = [], 0
    for idx in order:
        chunk = [units[n] for n in names[start: idx + 1]]
        segments.append(chunk[0] if len(chunk) == 1 else nn.Sequential(*chunk))
        start = idx + 1
    return ClassifierSplit(segments, model.pool, model.head, boundaries)


def extract_stage_features(split: ClassifierSplit, image: np.ndarray, upto: int) -> np.ndarray:
    """Activation after stage `upto` for a single image, as H x W x C."""
    x = image_to_tensor(image)[None]
    with torch.no_grad():
        feats = split.forward_features(x, upto=upto)
    return np.transpose(feats[0].numpy(), (1, 2, 0))


def freeze(split: ClassifierSplit) -> ClassifierSplit:
    """Mark every parameter of the split as non-trainable."""
    for p in split.parameters():
        p.requires_grad_(False)
    assert count_trainable(split) == 0
    return split


def save_backbone(model: DeskBackbone, path, *, seed=None, dataset_hash=None,
                  boundaries=DEFAULT_BOUNDARIES, extra=None) -> dict:
    manifest = {
        "arch": model.config(),
        "stage_boundaries": list(boundaries),
        "seed": seed,
        "dataset_hash": dataset_hash,
        "parameter_hash": parameter_hash(model),
    }
    if extra:
        manifest.update(extra)
    torch.save({"kind": "backbone", "manifest": manifest, "state_dict": model.state_dict()}, path)
    return manifest


def load_backbone(path):
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "backbone":
        raise ConfigurationError(f"{path} is not a backbone checkpoint")
    cfg = payload["manifest"]["arch"]
    model = DeskBackbone(cfg["num_classes"], widths=tuple(cfg["widths"]))
    model.load_state_dict(payload["state_dict"])
    if parameter_hash(model) != payload["manifest"]["parameter_hash"]:
        raise ShapeMismatchError(f"parameter hash mismatch loading {path}")
    return model, payload["manifest"]
