"""Fidelity-guided manipulation of a frozen feature extractor.

The assembled model restores the noisy input with a frozen denoiser, derives
a fidelity map (ground truth, a frozen estimator, or a jointly trained one),
and injects it into the extractor three ways: per-stage spatial fusion
(multiply, trainable conv block, add), channel fusion on the pooled feature
vector, and channel concatenation back to the original feature length. An
optional gate blends the manipulated features with the untouched ones.

Only the fusion blocks, the gate, and (in end-to-end mode) the estimator are
trainable; backbone and denoiser weights never move.
"""

import hashlib
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .backbone import ClassifierSplit
from .errors import ConfigurationError, FreezeViolationError, InputError, ShapeMismatchError
from .fidelity import (FIDELITY_METRICS, RESIZE_METHODS, fidelity_feature_batch,
                       oracle_fidelity_batch, resize_fidelity_batch)
from .utils import count_trainable, derive_seed, image_to_tensor, parameter_hash

FIDELITY_SOURCES = ("oracle", "estimator", "end_to_end")


@dataclass(frozen=True)
class FusionConfig:
    """Ablation switchboard for the fusion pipeline.

    stages_with_spatial_fusion: stage indices receiving spatial fusion, or
    None for every stage. pass_through disables all fusion and reproduces the
    pretrained classifier on the restored input exactly.
    """

    stages_with_spatial_fusion: tuple = None
    fidelity_metric: str = "l1"
    downsample_method: str = "average_pool"
    use_ensemble: bool = False
    pass_through: bool = False

    def __post_init__(self):
        if self.fidelity_metric not in FIDELITY_METRICS:
            raise ConfigurationError(f"fidelity_metric must be one of {FIDELITY_METRICS}")
        if self.downsample_method not in RESIZE_METHODS:
            raise ConfigurationError(f"downsample_method must be one of {RESIZE_METHODS}")
        if self.stages_with_spatial_fusion is not None:
            object.__setattr__(self, "stages_with_spatial_fusion",
                               tuple(int(s) for s in self.stages_with_spatial_fusion))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["stages_with_spatial_fusion"] is not None:
            d["stages_with_spatial_fusion"] = list(d["stages_with_spatial_fusion"])
        return d


# The trainable blocks start as near-identity transforms. A plain random
# init puts the manipulated features far outside what the frozen head was
# trained on, and the closest attractor is then "mute every feature and
# predict the class prior": the channel gains get driven to zero within a few
# steps and the ReLU multiply path can never recover (its input, the fidelity
# feature, barely varies across samples). Starting neutral keeps the initial
# forward close to the pretrained computation, and training only has to learn
# the fidelity-driven corrections.


class SpatialFusionBlock(nn.Module):
    """Channel-preserving 3x3 conv + ReLU sitting between the two spatial
    fusion operations (multiply before, add after). Starts as a delta kernel
    (plus a little noise), i.e. close to passing its input through."""

    def __init__(self, channels: int, noise: float = 0.02):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        with torch.no_grad():
            nn.init.dirac_(self.conv.weight)
            self.conv.weight.add_(noise * torch.randn_like(self.conv.weight))
            nn.init.zeros_(self.conv.bias)
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.conv(x))


class ChannelFusionBlock(nn.Module):
    """FC + ReLU transform of the fidelity feature before channel-wise
    multiply. Starts as a gain of ~1 (tiny weights, unit bias)."""

    def __init__(self, dim: int, noise: float = 0.01):
        super().__init__()
        self.fc = nn.Linear(dim, dim)
        with torch.no_grad():
            nn.init.uniform_(self.fc.weight, -noise, noise)
            nn.init.ones_(self.fc.bias)
        self.relu = nn.ReLU()

    def forward(self, v):
        return self.relu(self.fc(v))


class ConcatBlock(nn.Module):
    """FC + ReLU mapping concat(features, fidelity feature) back to length D.
    Starts as the projection onto the feature half of the concatenation."""

    def __init__(self, dim: int, noise: float = 0.01):
        super().__init__()
        self.fc = nn.Linear(2 * dim, dim)
        with torch.no_grad():
            nn.init.uniform_(self.fc.weight, -noise, noise)
            self.fc.weight[:, :dim].add_(torch.eye(dim))
            nn.init.zeros_(self.fc.bias)
        self.relu = nn.ReLU()

    def forward(self, v):
        return self.relu(self.fc(v))


class EnsembleGate(nn.Module):
    """Elementwise convex blend of original and manipulated feature vectors.

    The raw weight vector w is squashed to g = sigmoid(w) in (0, 1); w starts
    at zero so both branches contribute equally at init.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(dim))

    def gate(self) -> torch.Tensor:
        return torch.sigmoid(self.weight)


def spatial_fuse(features: torch.Tensor, fmap: torch.Tensor, block: SpatialFusionBlock,
                 method: str = "average_pool") -> torch.Tensor:
    """block(features * F) + F, with F the map resized to the feature grid
    and broadcast across channels. Shapes: (B, C, H, W) x (B, 1, h, w)."""
    fm = resize_fidelity_batch(fmap, int(features.shape[2]), int(features.shape[3]), method)
    return block(features * fm) + fm


def channel_fuse(feat_vec: torch.Tensor, fmap: torch.Tensor, block: ChannelFusionBlock,
                 method: str = "average_pool") -> torch.Tensor:
    """feat_vec * block(fidelity feature), the fidelity feature being the
    flattened map resampled to length D."""
    fvec = fidelity_feature_batch(fmap, int(feat_vec.shape[1]), method)
    return feat_vec * block(fvec)


def channel_concat(feat_vec: torch.Tensor, fvec: torch.Tensor, block: ConcatBlock) -> torch.Tensor:
    """block(concat(feat_vec, fvec)); output keeps the original length D."""
    if feat_vec.shape != fvec.shape:
        raise ShapeMismatchError(f"feature {tuple(feat_vec.shape)} and fidelity {tuple(fvec.shape)} lengths differ")
    return block(torch.cat([feat_vec, fvec], dim=1))


def ensemble_combine(orig: torch.Tensor, manipulated: torch.Tensor, gate: EnsembleGate) -> torch.Tensor:
    """g * orig + (1 - g) * manipulated, elementwise with g in (0, 1)."""
    if orig.shape != manipulated.shape:
        raise ShapeMismatchError(f"branch shapes differ: {tuple(orig.shape)} vs {tuple(manipulated.shape)}")
    g = gate.gate()
    return g * orig + (1.0 - g) * manipulated


class FGNICModel(nn.Module):
    """Frozen classifier + frozen denoiser + trainable fidelity fusion.

    `fidelity_source` picks where the map comes from at forward time:
    "oracle" (requires the clean image alongside the noisy one), "estimator"
    (frozen estimator network), or "end_to_end" (estimator trained jointly
    with the blocks). Assembly freezes the backbone and denoiser in place.
    """

    def __init__(self, split: ClassifierSplit, denoiser, fidelity_source: str = "oracle",
                 estimator=None, config: FusionConfig = None, input_hw=(32, 32), init_seed=None):
        super().__init__()
        if fidelity_source not in FIDELITY_SOURCES:
            raise ConfigurationError(f"fidelity_source must be one of {FIDELITY_SOURCES}")
        if fidelity_source in ("estimator", "end_to_end") and estimator is None:
            raise ConfigurationError(f"fidelity_source {fidelity_source!r} requires an estimator")
        config = config or FusionConfig()

        self.split = split
        self.denoiser = denoiser
        self.estimator = estimator
        self.fidelity_source = fidelity_source
        self.config = config
        self.input_hw = tuple(int(v) for v in input_hw)

        for p in self.split.parameters():
            p.requires_grad_(False)
        for p in self.denoiser.parameters():
            p.requires_grad_(False)
        if self.estimator is not None:
            trainable_est = fidelity_source == "end_to_end" and not config.pass_through
            for p in self.estimator.parameters():
                p.requires_grad_(trainable_est)

        shapes = split.stage_shapes(self.input_hw)
        n_stages = len(shapes)
        stages = config.stages_with_spatial_fusion
        if stages is None:
            stages = tuple(range(n_stages))
        bad = [s for s in stages if not 0 <= s < n_stages]
        if bad:
            raise ConfigurationError(f"fusion stage indices {bad} out of range [0, {n_stages - 1}]")
        self.fusion_stages = tuple(sorted(set(stages)))
        self.stage_channels = tuple(s.channels for s in shapes)

        if init_seed is not None:
            torch.manual_seed(derive_seed(init_seed, 51))
        if config.pass_through:
            self.spatial_blocks = nn.ModuleDict()
            self.channel_block = None
            self.concat_block = None
            self.ensemble = None
        else:
            D = split.feature_dim
            self.spatial_blocks = nn.ModuleDict(
                {str(s): SpatialFusionBlock(self.stage_channels[s]) for s in self.fusion_stages})
            self.channel_block = ChannelFusionBlock(D)
            self.concat_block = ConcatBlock(D)
            self.ensemble = EnsembleGate(D) if config.use_ensemble else None

    @property
    def feature_dim(self) -> int:
        return self.split.feature_dim

    def describe(self) -> dict:
        return {
            "fidelity_source": self.fidelity_source,
            "config": self.config.to_dict(),
            "fusion_stages": list(self.fusion_stages),
            "stage_channels": list(self.stage_channels),
            "feature_dim": self.feature_dim,
            "input_hw": list(self.input_hw),
        }

    # -- freeze bookkeeping ------------------------------------------------

    def frozen_modules(self) -> dict:
        frozen = {"split": self.split, "denoiser": self.denoiser}
        if self.estimator is not None and self.fidelity_source != "end_to_end":
            frozen["estimator"] = self.estimator
        return frozen

    def frozen_parameter_hash(self) -> str:
        h = hashlib.sha256()
        for name, module in sorted(self.frozen_modules().items()):
            h.update(name.encode())
            h.update(parameter_hash(module).encode())
        return h.hexdigest()

    def verify_frozen(self):
        for name, module in self.frozen_modules().items():
            for pname, p in module.named_parameters():
                if p.requires_grad:
                    raise FreezeViolationError(f"{name}.{pname} is trainable but must be frozen")

    def trainable_parameters(self):
        return (p for p in self.parameters() if p.requires_grad)

    # -- forward -----------------------------------------------------------

    def _fidelity_map(self, restored, clean):
        if self.fidelity_source == "oracle":
            if clean is None:
                raise InputError("oracle fidelity requires the clean image attached to the sample")
            with torch.no_grad():
                return oracle_fidelity_batch(clean, restored, self.config.fidelity_metric)
        if self.fidelity_source == "estimator":
            with torch.no_grad():
                return self.estimator(restored)
        return self.estimator(restored)  # end_to_end keeps the graph

    def forward(self, noisy: torch.Tensor, clean: torch.Tensor = None,
                fmap_override: torch.Tensor = None) -> torch.Tensor:
        with torch.no_grad():
            restored = self.denoiser.restore_tensor(noisy)
        if self.config.pass_through:
            return self.split.classify(restored)
        fmap = fmap_override if fmap_override is not None else self._fidelity_map(restored, clean)
        method = self.config.downsample_method

        x = restored
        for i, stage in enumerate(self.split.stages):
            x = stage(x)
            if i in self.fusion_stages:
                x = spatial_fuse(x, fmap, self.spatial_blocks[str(i)], method)
        feat = torch.flatten(self.split.pool(x), 1)

        v = channel_fuse(feat, fmap, self.channel_block, method)
        fvec = fidelity_feature_batch(fmap, self.feature_dim, method)
        v = channel_concat(v, fvec, self.concat_block)

        if self.ensemble is not None:
            with torch.no_grad():
                orig = self.split.feature_vector(restored)
            v = ensemble_combine(orig, v, self.ensemble)
        return self.split.head(v)

    # -- persistence ---------------------------------------------------

    def save(self, path, seed=None):
        torch.save({
            "kind": "fgnic",
            "seed": seed,
            "fusion": self.describe(),
            "hashes": {
                "frozen": self.frozen_parameter_hash(),
                "backbone": parameter_hash(self.split),
                "denoiser": parameter_hash(self.denoiser),
                "model": parameter_hash(self),
            },
            "model": self,
        }, path)


def load_fgnic(path) -> FGNICModel:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != "fgnic":
        raise ConfigurationError(f"{path} is not an assembled fgnic checkpoint")
    model = payload["model"]
    if parameter_hash(model) != payload["hashes"]["model"]:
        raise ShapeMismatchError(f"parameter hash mismatch loading {path}")
    model.eval()
    return model


def fgnic_forward(model: FGNICModel, noisy: np.ndarray, clean: np.ndarray = None) -> np.ndarray:
    """Single-image forward pass: H x W x C arrays in, length-K logits out."""
    x = image_to_tensor(noisy)[None]
    c = image_to_tensor(clean)[None] if clean is not None else None
    with torch.no_grad():
        logits = model(x, clean=c)
    return logits[0].numpy().astype(np.float64)


def count_trainable_params(model: nn.Module) -> int:
    """Exact count of parameters that would receive gradients."""
    return count_trainable(model)
