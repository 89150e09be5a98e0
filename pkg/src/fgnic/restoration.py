"""Residual denoiser and learned fidelity-map estimator.

The denoiser predicts the noise and subtracts it (restored = input - predicted,
clamped to [0, 1]); its final layer is zero-initialized so an untrained model
is exactly the identity restoration. The estimator maps a restored image to a
per-pixel fidelity map through a sigmoid-bounded head.

Both train blind: each sample draws its own sigma every epoch.
"""

import os
from dataclasses import asdict

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError, ShapeMismatchError
from .fidelity import oracle_fidelity_batch
from .imaging import ArrayDataset, validate_image
from .training import (ExperimentRun, TrainConfig, _check_finite, degrade_batch,
                       make_optimizer)
from .utils import derive_seed, image_to_tensor, images_to_batch, parameter_hash, torch_generator


def _conv_stack(depth, width, in_channels, out_channels):
    if depth < 2:
        raise ConfigurationError(f"depth must be >= 2 conv layers, got {depth}")
    layers = [nn.Conv2d(in_channels, width, 3, padding=1), nn.ReLU()]
    for _ in range(depth - 2):
        layers += [nn.Conv2d(width, width, 3, padding=1), nn.ReLU()]
    layers.append(nn.Conv2d(width, out_channels, 3, padding=1))
    return nn.Sequential(*layers)


class ResidualDenoiser(nn.Module):
    """Fully convolutional noise predictor; depth counts conv layers."""

    def __init__(self, depth: int = 8, width: int = 32, channels: int = 3):
        super().__init__()
        self.depth, self.width, self.channels = int(depth), int(width), int(channels)
        self.body = _conv_stack(depth, width, channels, channels)
        nn.init.zeros_(self.body[-1].weight)
        nn.init.zeros_(self.body[-1].bias)

    def forward(self, x):
        return self.body(x)

    def restore_tensor(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.body(x)).clamp(0.0, 1.0)

    def config(self) -> dict:
        return {"depth": self.depth, "width": self.width, "channels": self.channels}


class FidelityEstimator(nn.Module):
    """Convolutional fidelity-map regressor with a sigmoid-bounded output."""

    def __init__(self, depth: int = 8, width: int = 32, channels: int = 3):
        super().__init__()
        self.depth, self.width, self.channels = int(depth), int(width), int(channels)
        self.body = _conv_stack(depth, width, channels, 1)

    def forward(self, x):
        return torch.sigmoid(self.body(x))

    def config(self) -> dict:
        return {"depth": self.depth, "width": self.width, "channels": self.channels}


def restore(model: ResidualDenoiser, noisy: np.ndarray) -> np.ndarray:
    """Run the denoiser on one H x W x C image."""
    noisy = validate_image(noisy, "noisy")
    if noisy.shape[2] != model.channels:
        raise ShapeMismatchError(f"model expects {model.channels} channels, image has {noisy.shape[2]}")
    with torch.no_grad():
        out = model.restore_tensor(image_to_tensor(noisy)[None])
    return np.transpose(out[0].numpy().astype(np.float64), (1, 2, 0))


def estimate_fidelity(model: FidelityEstimator, restored: np.ndarray) -> np.ndarray:
    """Estimated H x W fidelity map of a restored image."""
    restored = validate_image(restored, "restored")
    if restored.shape[2] != model.channels:
        raise ShapeMismatchError(f"model expects {model.channels} channels, image has {restored.shape[2]}")
    with torch.no_grad():
        out = model(image_to_tensor(restored)[None])
    return out[0, 0].numpy().astype(np.float64)


def _regression_loop(model, images: torch.Tensor, cfg: TrainConfig, run: ExperimentRun,
                     batch_loss, seed_tag: int):
    opt = make_optimizer(cfg, model.parameters())
    gen = torch_generator(derive_seed(cfg.seed, seed_tag))
    n = len(images)
    for epoch in range(cfg.epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        total, seen = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            sel = perm[s: s + cfg.batch_size]
            opt.zero_grad()
            loss = batch_loss(images[sel], gen)
            loss.backward()
            opt.step()
            _check_finite(loss.item(), f"{run.run_id} epoch {epoch}")
            total += loss.item() * len(sel)
            seen += len(sel)
        run.metrics.append({"epoch": epoch, "train_loss": total / seen})
    model.eval()


def train_denoiser(dataset: ArrayDataset, noise_range, cfg: TrainConfig, *,
                   depth: int = 8, width: int = 32, out_dir: str = None):
    """Blind-train a residual denoiser; sigma ~ U[noise_range] per sample.

    The loss is the MSE between the predicted residual and the true residual
    (noisy minus clean). Returns (model, ExperimentRun).
    """
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    lo, hi = float(noise_range[0]), float(noise_range[1])
    if lo < 0 or hi < lo:
        raise ConfigurationError(f"invalid noise range [{lo}, {hi}]")
    torch.manual_seed(derive_seed(cfg.seed, 31))
    model = ResidualDenoiser(depth=depth, width=width, channels=dataset.image_shape[2])
    images = images_to_batch(dataset.images)
    run = ExperimentRun(run_id=f"denoiser-seed{cfg.seed}",
                        config={"depth": depth, "width": width, "noise_range": [lo, hi], **asdict(cfg)},
                        seed=cfg.seed)

    def batch_loss(clean, gen):
        sigmas = lo + (hi - lo) * torch.rand(len(clean), generator=gen)
        noisy = degrade_batch(clean, sigmas, gen)
        return ((model(noisy) - (noisy - clean)) ** 2).mean()

    _regression_loop(model, images, cfg, run, batch_loss, seed_tag=32)
    run.hashes["model"] = parameter_hash(model)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_denoiser(model, os.path.join(out_dir, "model.pt"), seed=cfg.seed)
        run.checkpoints["model"] = "model.pt"
        run.save(out_dir)
    return model, run


def train_fidelity_estimator(dataset: ArrayDataset, denoiser: ResidualDenoiser, cfg: TrainConfig, *,
                             depth: int = 8, width: int = 32, metric: str = "l1", out_dir: str = None):
    """Train the fidelity estimator against ground-truth maps of the denoiser's
    own restorations; same blind sigma sampling as the denoiser."""
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    if cfg.noise_sampling != "continuous_range":
        raise ConfigurationError("estimator training expects a continuous noise range")
    lo, hi = cfg.noise_values
    torch.manual_seed(derive_seed(cfg.seed, 41))
    model = FidelityEstimator(depth=depth, width=width, channels=dataset.image_shape[2])
    images = images_to_batch(dataset.images)
    run = ExperimentRun(run_id=f"fidelity-estimator-seed{cfg.seed}",
                        config={"depth": depth, "width": width, "metric": metric, **asdict(cfg)},
                        seed=cfg.seed)

    def batch_loss(clean, gen):
        sigmas = lo + (hi - lo) * torch.rand(len(clean), generator=gen)
        noisy = degrade_batch(clean, sigmas, gen)
        with torch.no_grad():
            restored = denoiser.restore_tensor(noisy)
            target = oracle_fidelity_batch(clean, restored, metric)
        return ((model(restored) - target) ** 2).mean()

    _regression_loop(model, images, cfg, run, batch_loss, seed_tag=42)
    run.hashes["model"] = parameter_hash(model)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_estimator(model, os.path.join(out_dir, "model.pt"), seed=cfg.seed)
        run.checkpoints["model"] = "model.pt"
        run.save(out_dir)
    return model, run


def save_denoiser(model: ResidualDenoiser, path, seed=None):
    torch.save({"kind": "denoiser", "config": model.config(), "seed": seed,
                "parameter_hash": parameter_hash(model), "state_dict": model.state_dict()}, path)


def load_denoiser(path) -> ResidualDenoiser:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "denoiser":
        raise ConfigurationError(f"{path} is not a denoiser checkpoint")
    model = ResidualDenoiser(**payload["config"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def save_estimator(model: FidelityEstimator, path, seed=None):
    torch.save({"kind": "fidelity_estimator", "config": model.config(), "seed": seed,
                "parameter_hash": parameter_hash(model), "state_dict": model.state_dict()}, path)


def load_estimator(path) -> FidelityEstimator:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "fidelity_estimator":
        raise ConfigurationError(f"{path} is not a fidelity estimator checkpoint")
    model = FidelityEstimator(**payload["config"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
