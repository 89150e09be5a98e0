"""Per-pixel fidelity maps and their geometry utilities.

A fidelity map scores how faithful each pixel of a restored image is to the
clean original: 1 means perfectly faithful, 0 maximally corrupted. The
default metric is one minus the channel-averaged absolute difference; an RMS
and a per-pixel cosine variant are provided for ablations.

The numpy functions are the data-side API; the *_batch functions are the
torch equivalents used inside models, backed by the same resampling ops so
both paths agree.
"""

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeMismatchError
from .imaging import validate_image

FIDELITY_METRICS = ("l1", "l2", "cosine")
RESIZE_METHODS = ("average_pool", "bilinear", "nearest")


def oracle_fidelity_batch(clean: torch.Tensor, restored: torch.Tensor, metric: str = "l1") -> torch.Tensor:
    """Fidelity maps for a batch: (B, C, H, W) pairs -> (B, 1, H, W) in [0, 1]."""
    if clean.shape != restored.shape:
        raise ShapeMismatchError(f"clean {tuple(clean.shape)} and restored {tuple(restored.shape)} differ in shape")
    if metric == "l1":
        fmap = 1.0 - (restored - clean).abs().mean(dim=1, keepdim=True)
    elif metric == "l2":
        fmap = 1.0 - ((restored - clean) ** 2).mean(dim=1, keepdim=True).sqrt()
    elif metric == "cosine":
        dot = (clean * restored).sum(dim=1, keepdim=True)
        na = clean.norm(dim=1, keepdim=True)
        nb = restored.norm(dim=1, keepdim=True)
        denom = na * nb
        fmap = torch.where(denom > 0, dot / torch.where(denom > 0, denom, torch.ones_like(denom)),
                           torch.zeros_like(dot))
        fmap = torch.where((na == 0) & (nb == 0), torch.ones_like(fmap), fmap)
    else:
        raise ConfigurationError(f"unknown fidelity metric {metric!r}, expected one of {FIDELITY_METRICS}")
    return fmap.clamp(0.0, 1.0)


def oracle_fidelity(clean: np.ndarray, restored: np.ndarray, metric: str = "l1") -> np.ndarray:
    """Ground-truth fidelity map of a restored image against its clean original.

    l1:     F(i,j) = 1 - mean_c |restored - clean|
    l2:     F(i,j) = 1 - sqrt(mean_c (restored - clean)^2)
    cosine: cosine similarity of the per-pixel channel vectors, with F = 1
            when both vectors are zero and F = 0 when exactly one is zero.

    All variants return an H x W map clamped to [0, 1]; identical inputs give
    the all-ones map.
    """
    clean = validate_image(clean, "clean")
    restored = validate_image(restored, "restored")
    if clean.shape != restored.shape:
        raise ShapeMismatchError(f"clean {clean.shape} and restored {restored.shape} differ in shape")
    a = torch.from_numpy(np.transpose(clean.astype(np.float64), (2, 0, 1)))[None]
    b = torch.from_numpy(np.transpose(restored.astype(np.float64), (2, 0, 1)))[None]
    return oracle_fidelity_batch(a, b, metric)[0, 0].numpy()


def resize_fidelity_batch(fmap: torch.Tensor, H_s: int, W_s: int, method: str = "average_pool") -> torch.Tensor:
    """(B, 1, H, W) maps -> (B, 1, H_s, W_s)."""
    if H_s < 1 or W_s < 1:
        raise ConfigurationError(f"target size must be >= 1, got {H_s} x {W_s}")
    if method == "average_pool":
        return F.adaptive_avg_pool2d(fmap, (H_s, W_s))
    if method == "bilinear":
        return F.interpolate(fmap, size=(H_s, W_s), mode="bilinear", align_corners=False)
    if method == "nearest":
        return F.interpolate(fmap, size=(H_s, W_s), mode="nearest")
    raise ConfigurationError(f"unknown resize method {method!r}, expected one of {RESIZE_METHODS}")


def fidelity_feature_batch(fmap: torch.Tensor, D: int, method: str = "average_pool") -> torch.Tensor:
    """Row-major flatten of (B, 1, H, W) maps resampled to (B, D) vectors."""
    if D < 1:
        raise ConfigurationError(f"D must be >= 1, got {D}")
    flat = fmap.reshape(fmap.shape[0], 1, -1)
    if method == "average_pool":
        return F.adaptive_avg_pool1d(flat, D)[:, 0, :]
    if method == "bilinear":
        return F.interpolate(flat, size=D, mode="linear", align_corners=False)[:, 0, :]
    if method == "nearest":
        return F.interpolate(flat, size=D, mode="nearest")[:, 0, :]
    raise ConfigurationError(f"unknown resize method {method!r}, expected one of {RESIZE_METHODS}")


def _check_map(map_values: np.ndarray) -> np.ndarray:
    arr = np.asarray(map_values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"fidelity map must be H x W, got shape {arr.shape}")
    return arr


def resize_fidelity(map_values: np.ndarray, H_s: int, W_s: int, method: str = "average_pool") -> np.ndarray:
    """Resize an H x W map to H_s x W_s.

    average_pool partitions the source into near-equal rectangular bins and
    averages them (adaptive average pooling); bilinear and nearest are the
    usual interpolations. Output values stay within [0, 1] for [0, 1] inputs.
    """
    arr = _check_map(map_values)
    t = torch.from_numpy(arr)[None, None]
    return resize_fidelity_batch(t, H_s, W_s, method)[0, 0].numpy()


def flatten_downsample(map_values: np.ndarray, D: int, method: str = "average_pool") -> np.ndarray:
    """Row-major flatten of a fidelity map followed by 1-D resampling to length D.

    average_pool averages near-equal contiguous segments; D = H*W reproduces
    the flatten exactly.
    """
    arr = _check_map(map_values)
    t = torch.from_numpy(arr)[None, None]
    return fidelity_feature_batch(t, D, method)[0].numpy()
