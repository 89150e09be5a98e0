"""Small shared helpers: seeding, parameter hashing, numpy/torch conversion."""

import hashlib

import numpy as np
import torch


def derive_seed(*parts) -> int:
    """Derive a stable 63-bit integer seed from a tuple of integers.

    Uses numpy's SeedSequence so the derivation is documented, stable across
    platforms, and statistically independent for different part tuples.
    """
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def torch_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def image_to_tensor(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """H x W x C float array in [0,1] -> (C, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.transpose(image, (2, 0, 1)))).to(dtype)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(C, H, W) tensor -> H x W x C float64 array."""
    return np.transpose(t.detach().cpu().to(torch.float64).numpy(), (1, 2, 0))


def images_to_batch(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(N, H, W, C) array -> (N, C, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.transpose(images, (0, 3, 1, 2)))).to(dtype)


def parameter_hash(module: torch.nn.Module) -> str:
    """SHA-256 over every named parameter and buffer of a module.

    The digest covers names, shapes, dtypes, and raw bytes, with entries
    sorted by name, so it is invariant to iteration order and sensitive to
    any single-bit change in a weight.
    """
    h = hashlib.sha256()
    entries = list(module.named_parameters())
    entries += list(module.named_buffers())
    for name, t in sorted(entries, key=lambda kv: kv[0]):
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(str(t.dtype).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def count_trainable(module: torch.nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def bytes_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
