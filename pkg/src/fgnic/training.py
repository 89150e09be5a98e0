"""Training harness: shared config/run types, the baseline matrix, and the
fusion-block trainer for fidelity-guided models.

Every trainer is deterministic under (config, seed): weight init comes from a
seed derived at entry, and all shuffling and noise synthesis runs through
explicit generators. Training images are re-degraded with fresh noise every
epoch rather than fixed once.
"""

import copy
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import ARCH_PRESETS, DeskBackbone
from .errors import ConfigurationError, FreezeViolationError, TrainingDivergedError
from .imaging import ArrayDataset
from .utils import derive_seed, images_to_batch, parameter_hash, torch_generator

OPTIMIZERS = ("adaptive", "sgd_momentum")
NOISE_SAMPLING = ("continuous_range", "discrete_set")
BASELINE_KINDS = ("clean", "retrain_noisy", "retrain_restored")

# the discrete retraining mixture: clean plus five noise levels
DEFAULT_NOISE_SET = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by every trainer.

    noise_sampling picks how per-sample sigmas are drawn from noise_values:
    "continuous_range" treats (lo, hi) as a uniform interval, "discrete_set"
    draws uniformly from the listed values. Classifier trainers use
    cross-entropy, regressors mean squared error; this is not configurable.
    """

    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adaptive"
    seed: int = 0
    noise_sampling: str = "continuous_range"
    noise_values: tuple = (0.0, 0.5)
    val_fraction: float = 0.1
    translate_px: int = 0  # random-shift augmentation (classifier trainers only)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.translate_px < 0:
            raise ConfigurationError(f"translate_px must be >= 0, got {self.translate_px}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.noise_sampling not in NOISE_SAMPLING:
            raise ConfigurationError(f"noise_sampling must be one of {NOISE_SAMPLING}, got {self.noise_sampling!r}")
        vals = tuple(float(v) for v in self.noise_values)
        if not vals or any(v < 0 or not np.isfinite(v) for v in vals):
            raise ConfigurationError(f"noise_values must be non-negative and finite, got {self.noise_values}")
        if self.noise_sampling == "continuous_range" and len(vals) != 2:
            raise ConfigurationError("continuous_range expects noise_values = (sigma_min, sigma_max)")
        if self.noise_sampling == "continuous_range" and vals[0] > vals[1]:
            raise ConfigurationError(f"sigma_min must not exceed sigma_max, got {vals}")
        object.__setattr__(self, "noise_values", vals)
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class ExperimentRun:
    """Record of one training run: config snapshot, metric log, checkpoints."""

    run_id: str
    config: dict
    seed: int
    checkpoints: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    hashes: dict = field(default_factory=dict)

    def save(self, out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            json.dump(self.config, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(os.path.join(out_dir, "metrics.jsonl"), "w") as f:
            for rec in self.metrics:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(os.path.join(out_dir, "run.json"), "w") as f:
            json.dump({"run_id": self.run_id, "seed": self.seed,
                       "checkpoints": self.checkpoints, "hashes": self.hashes},
                      f, indent=2, sort_keys=True)
            f.write("\n")
        return out_dir

    @classmethod
    def load(cls, out_dir: str) -> "ExperimentRun":
        with open(os.path.join(out_dir, "run.json")) as f:
            meta = json.load(f)
        with open(os.path.join(out_dir, "config.json")) as f:
            config = json.load(f)
        metrics = []
        with open(os.path.join(out_dir, "metrics.jsonl")) as f:
            for line in f:
                metrics.append(json.loads(line))
        return cls(meta["run_id"], config, meta["seed"], meta["checkpoints"], metrics, meta["hashes"])


# ---------------------------------------------------------------------------
# loop plumbing shared by every trainer


def make_optimizer(cfg: TrainConfig, params):
    params = list(params)
    if not params:
        raise ConfigurationError("no trainable parameters to optimize")
    if cfg.optimizer == "adaptive":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.9)


def sample_sigmas(cfg: TrainConfig, n: int, generator: torch.Generator) -> torch.Tensor:
    if cfg.noise_sampling == "continuous_range":
        lo, hi = cfg.noise_values
        return lo + (hi - lo) * torch.rand(n, generator=generator)
    vals = torch.tensor(cfg.noise_values, dtype=torch.float32)
    idx = torch.randint(len(vals), (n,), generator=generator)
    return vals[idx]


def degrade_batch(x: torch.Tensor, sigmas: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Torch-side AWGN for training loops: clamp(x + sigma * N(0, 1))."""
    noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
    return (x + sigmas.view(-1, 1, 1, 1) * noise).clamp(0.0, 1.0)


def translate_batch(x: torch.Tensor, max_px: int, generator: torch.Generator) -> torch.Tensor:
    """Per-sample random circular shift of up to max_px pixels on both axes."""
    if max_px <= 0:
        return x
    shifts = torch.randint(-max_px, max_px + 1, (len(x), 2), generator=generator)
    out = torch.empty_like(x)
    for i in range(len(x)):
        out[i] = torch.roll(x[i], (int(shifts[i, 0]), int(shifts[i, 1])), dims=(1, 2))
    return out


def stratified_split(labels: np.ndarray, fraction: float, seed: int):
    """Deterministic per-class split into (train_idx, val_idx)."""
    if fraction <= 0:
        return np.arange(len(labels)), np.array([], dtype=np.int64)
    rng = np.random.default_rng(derive_seed(seed, 917))
    train_parts, val_parts = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        k = max(1, int(round(fraction * len(idx))))
        val_parts.append(idx[:k])
        train_parts.append(idx[k:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(val_parts))


def _check_finite(loss_value: float, context: str):
    if not np.isfinite(loss_value):
        raise TrainingDivergedError(f"non-finite loss ({loss_value}) during {context}")


def _batched_logits(forward, images: torch.Tensor, batch_size: int, **kw) -> torch.Tensor:
    outs = []
    with torch.no_grad():
        for s in range(0, len(images), batch_size):
            kwb = {k: (v[s: s + batch_size] if torch.is_tensor(v) else v) for k, v in kw.items()}
            outs.append(forward(images[s: s + batch_size], **kwb))
    return torch.cat(outs)


def _accuracy(logits: torch.Tensor, labels: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == labels).double().mean())


# ---------------------------------------------------------------------------
# baseline matrix


def train_baseline(kind: str, dataset: ArrayDataset, cfg: TrainConfig, *, denoiser=None,
                   arch: str = "desk", out_dir: str = None):
    """Train a full classifier for one cell of the baseline matrix.

    clean            - train on clean images only
    retrain_noisy    - per-sample sigma drawn from cfg each epoch
    retrain_restored - same degradation, then passed through the denoiser

    Returns (model, ExperimentRun). The whole network is trainable in every
    baseline kind.
    """
    if kind not in BASELINE_KINDS:
        raise ConfigurationError(f"kind must be one of {BASELINE_KINDS}, got {kind!r}")
    if kind == "retrain_restored" and denoiser is None:
        raise ConfigurationError("retrain_restored requires a trained denoiser")
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")

    torch.manual_seed(derive_seed(cfg.seed, 11))
    model = DeskBackbone(dataset.num_classes, widths=ARCH_PRESETS[arch])
    opt = make_optimizer(cfg, model.parameters())

    train_idx, val_idx = stratified_split(dataset.labels, cfg.val_fraction, cfg.seed)
    images = images_to_batch(dataset.images)
    labels = torch.from_numpy(dataset.labels)

    def degraded_view(x: torch.Tensor, generator: torch.Generator, augment: bool) -> torch.Tensor:
        if augment:
            x = translate_batch(x, cfg.translate_px, generator)
        if kind == "clean":
            return x
        noisy = degrade_batch(x, sample_sigmas(cfg, len(x), generator), generator)
        if kind == "retrain_restored":
            with torch.no_grad():
                noisy = denoiser.restore_tensor(noisy)
        return noisy

    run = ExperimentRun(run_id=f"baseline-{kind}-seed{cfg.seed}",
                        config={"kind": kind, "arch": arch, **asdict(cfg)}, seed=cfg.seed)
    best_acc, best_state = -1.0, None
    data_gen = torch_generator(derive_seed(cfg.seed, 12))
    for epoch in range(cfg.epochs):
        model.train()
        perm = torch.randperm(len(train_idx), generator=data_gen)
        order = torch.from_numpy(train_idx)[perm]
        total_loss, total_hits, seen = 0.0, 0, 0
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s: s + cfg.batch_size]
            x = degraded_view(images[sel], data_gen, augment=True)
            y = labels[sel]
            opt.zero_grad()
            logits = model(x)
            loss = F.cross_entropy(logits, y)
            loss.backward()
            opt.step()
            _check_finite(loss.item(), f"baseline {kind} epoch {epoch}")
            total_loss += loss.item() * len(sel)
            total_hits += int((logits.argmax(dim=1) == y).sum())
            seen += len(sel)
        model.eval()
        record = {"epoch": epoch, "train_loss": total_loss / seen, "train_acc": total_hits / seen}
        if len(val_idx):
            vgen = torch_generator(derive_seed(cfg.seed, 13, epoch))
            vx = degraded_view(images[torch.from_numpy(val_idx)], vgen, augment=False)
            record["val_acc"] = _accuracy(_batched_logits(model, vx, cfg.batch_size), labels[torch.from_numpy(val_idx)])
            if record["val_acc"] > best_acc:
                best_acc = record["val_acc"]
                best_state = copy.deepcopy(model.state_dict())
        run.metrics.append(record)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    run.hashes["model"] = parameter_hash(model)
    if out_dir:
        from .backbone import save_backbone

        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "model.pt")
        save_backbone(model, ckpt, seed=cfg.seed, dataset_hash=dataset.content_hash())
        run.checkpoints["model"] = "model.pt"
        run.save(out_dir)
    return model, run


# ---------------------------------------------------------------------------
# fusion-block trainer


def train_fgnic(model, dataset: ArrayDataset, cfg: TrainConfig, out_dir: str = None) -> ExperimentRun:
    """Train the fusion blocks (and gate / estimator where configured) of an
    assembled fidelity-guided model on freshly degraded images.

    Refuses to start if the backbone or denoiser is trainable, and verifies
    after the run that their parameter hashes did not move.
    """
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    model.verify_frozen()
    frozen_before = model.frozen_parameter_hash()

    torch.manual_seed(derive_seed(cfg.seed, 21))
    opt = make_optimizer(cfg, model.trainable_parameters())

    train_idx, val_idx = stratified_split(dataset.labels, cfg.val_fraction, cfg.seed)
    images = images_to_batch(dataset.images)
    labels = torch.from_numpy(dataset.labels)

    run = ExperimentRun(run_id=f"fgnic-{model.fidelity_source}-seed{cfg.seed}",
                        config={"fusion": model.describe(), **asdict(cfg)}, seed=cfg.seed)
    best_acc, best_state = -1.0, None
    data_gen = torch_generator(derive_seed(cfg.seed, 22))
    needs_clean = model.fidelity_source == "oracle"
    for epoch in range(cfg.epochs):
        model.train()
        perm = torch.randperm(len(train_idx), generator=data_gen)
        order = torch.from_numpy(train_idx)[perm]
        total_loss, total_hits, seen = 0.0, 0, 0
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s: s + cfg.batch_size]
            clean = images[sel]
            noisy = degrade_batch(clean, sample_sigmas(cfg, len(sel), data_gen), data_gen)
            y = labels[sel]
            opt.zero_grad()
            logits = model(noisy, clean=clean if needs_clean else None)
            loss = F.cross_entropy(logits, y)
            loss.backward()
            opt.step()
            _check_finite(loss.item(), f"fgnic epoch {epoch}")
            total_loss += loss.item() * len(sel)
            total_hits += int((logits.argmax(dim=1) == y).sum())
            seen += len(sel)
        model.eval()
        record = {"epoch": epoch, "train_loss": total_loss / seen, "train_acc": total_hits / seen}
        if len(val_idx):
            vgen = torch_generator(derive_seed(cfg.seed, 23, epoch))
            vclean = images[torch.from_numpy(val_idx)]
            vnoisy = degrade_batch(vclean, sample_sigmas(cfg, len(vclean), vgen), vgen)
            vlogits = _batched_logits(model, vnoisy, cfg.batch_size,
                                      clean=vclean if needs_clean else None)
            record["val_acc"] = _accuracy(vlogits, labels[torch.from_numpy(val_idx)])
            if record["val_acc"] > best_acc:
                best_acc = record["val_acc"]
                best_state = copy.deepcopy(model.state_dict())
        run.metrics.append(record)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    frozen_after = model.frozen_parameter_hash()
    if frozen_after != frozen_before:
        raise FreezeViolationError("frozen parameter hash changed during fgnic training")
    run.hashes["frozen"] = frozen_after
    run.hashes["model"] = parameter_hash(model)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        model.save(os.path.join(out_dir, "model.pt"), seed=cfg.seed)
        run.checkpoints["model"] = "model.pt"
        run.save(out_dir)
    return run
