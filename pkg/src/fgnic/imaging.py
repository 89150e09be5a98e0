"""Image representation and additive-Gaussian degradation synthesis.

Images are H x W x C float arrays with values in [0, 1]. Degradations are
described declaratively (DegradationSpec), materialized into per-pixel
standard-deviation maps (NoiseField), and applied with an explicit seed so
every noisy image is reproducible.

Also hosts the file-level interfaces: directory-per-class dataset trees and
degraded-set export with a manifest recording the spec and per-image seeds.
"""

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigurationError, ShapeMismatchError

DEGRADATION_KINDS = ("uniform", "linear1d", "radial2d")
LINEAR_AXES = ("rows", "cols")


def validate_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the H x W x C layout and the [0, 1] value range."""
    arr = np.asarray(image)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeMismatchError(f"{name} must be H x W x C with positive dims, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeMismatchError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ShapeMismatchError(f"{name} values must lie in [0, 1], got range [{arr.min()}, {arr.max()}]")
    return arr


@dataclass(frozen=True)
class DegradationSpec:
    """Declarative description of an AWGN degradation.

    kind:
        "uniform"  - one sigma everywhere
        "linear1d" - sigma ramps linearly from sigma_lo to sigma_hi along
                     `axis` ("rows" or "cols")
        "radial2d" - sigma grows linearly with Euclidean distance from
                     `center` (a (row, col) pair, or "random" to draw the
                     center from `seed`), reaching sigma_hi at the farthest
                     image corner
    """

    kind: str
    sigma: float = 0.0
    sigma_lo: float = 0.0
    sigma_hi: float = 0.0
    axis: str = "rows"
    center: object = "random"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEGRADATION_KINDS:
            raise ConfigurationError(f"unknown degradation kind {self.kind!r}, expected one of {DEGRADATION_KINDS}")
        for attr in ("sigma", "sigma_lo", "sigma_hi"):
            v = getattr(self, attr)
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"{attr} must be finite and >= 0, got {v}")
        if self.kind in ("linear1d", "radial2d") and self.sigma_lo > self.sigma_hi:
            raise ConfigurationError(f"sigma_lo ({self.sigma_lo}) must not exceed sigma_hi ({self.sigma_hi})")
        if self.kind == "linear1d" and self.axis not in LINEAR_AXES:
            raise ConfigurationError(f"axis must be one of {LINEAR_AXES}, got {self.axis!r}")
        if self.kind == "radial2d" and self.center != "random":
            c = self.center
            if not (isinstance(c, (tuple, list)) and len(c) == 2):
                raise ConfigurationError(f"center must be (row, col) or 'random', got {c!r}")

    def label(self) -> str:
        """Stable column label used in accuracy tables and reports."""
        if self.kind == "uniform":
            return f"uniform:{self.sigma:g}"
        rng = f"{self.sigma_lo:g}-{self.sigma_hi:g}"
        if self.kind == "linear1d":
            return f"1d-{self.axis}:{rng}"
        return f"2d:{rng}"

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["center"], (tuple, list)):
            d["center"] = list(d["center"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        d = dict(d)
        if isinstance(d.get("center"), list):
            d["center"] = tuple(d["center"])
        known = {"kind", "sigma", "sigma_lo", "sigma_hi", "axis", "center", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown degradation keys: {sorted(unknown)}")
        return cls(**d)

    def reseeded(self, seed: int) -> "DegradationSpec":
        return DegradationSpec(**{**self.to_dict(), "seed": int(seed)})


@dataclass
class NoiseField:
    """Materialized per-pixel noise standard deviations (H x W, >= 0)."""

    sigma_map: np.ndarray

    def __post_init__(self):
        self.sigma_map = np.asarray(self.sigma_map, dtype=np.float64)
        if self.sigma_map.ndim != 2:
            raise ShapeMismatchError(f"sigma_map must be H x W, got shape {self.sigma_map.shape}")
        if (self.sigma_map < 0).any() or not np.isfinite(self.sigma_map).all():
            raise ConfigurationError("sigma_map must be finite and non-negative")

    @property
    def shape(self):
        return self.sigma_map.shape


def make_noise_field(spec: DegradationSpec, H: int, W: int) -> NoiseField:
    """Materialize a DegradationSpec on an H x W pixel grid.

    uniform  -> constant sigma.
    linear1d -> row r (or column c) gets sigma_lo + (sigma_hi - sigma_lo) * r/(H-1);
                a single row/column degenerates to sigma_lo.
    radial2d -> pixel p gets sigma_lo + (sigma_hi - sigma_lo) * d(p, center)/d_max,
                with d the Euclidean pixel distance and d_max the distance from
                the center to the farthest image corner, so sigma_hi is attained
                exactly at that corner.
    """
    if H < 1 or W < 1:
        raise ConfigurationError(f"H and W must be >= 1, got {H} x {W}")
    if spec.kind == "uniform":
        return NoiseField(np.full((H, W), float(spec.sigma)))

    lo, hi = float(spec.sigma_lo), float(spec.sigma_hi)
    if spec.kind == "linear1d":
        n = H if spec.axis == "rows" else W
        ramp = np.full(n, lo) if n == 1 else lo + (hi - lo) * np.arange(n) / (n - 1)
        if spec.axis == "rows":
            return NoiseField(np.repeat(ramp[:, None], W, axis=1))
        return NoiseField(np.repeat(ramp[None, :], H, axis=0))

    # radial2d
    if spec.center == "random":
        rng = np.random.default_rng(spec.seed)
        cr, cc = int(rng.integers(0, H)), int(rng.integers(0, W))
    else:
        cr, cc = int(spec.center[0]), int(spec.center[1])
    rows = np.arange(H)[:, None] - cr
    cols = np.arange(W)[None, :] - cc
    dist = np.sqrt(rows.astype(np.float64) ** 2 + cols.astype(np.float64) ** 2)
    corners = [(0, 0), (0, W - 1), (H - 1, 0), (H - 1, W - 1)]
    d_max = max(np.hypot(r - cr, c - cc) for r, c in corners)
    if d_max == 0:  # 1x1 image
        return NoiseField(np.full((H, W), lo))
    return NoiseField(lo + (hi - lo) * dist / d_max)


def sample_noise(field: NoiseField, channels: int, seed: int) -> np.ndarray:
    """Draw the raw (pre-clamp) AWGN residual for a noise field.

    Independent per pixel and channel: n(i,j,c) ~ Normal(0, sigma_map(i,j)^2).
    Deterministic for a given seed.
    """
    H, W = field.shape
    rng = np.random.default_rng(seed)
    return rng.normal(size=(H, W, channels)) * field.sigma_map[:, :, None]


def degrade(image: np.ndarray, field: NoiseField, seed: int) -> np.ndarray:
    """Add per-pixel Gaussian noise and clamp back to [0, 1]."""
    image = validate_image(image)
    if image.shape[:2] != field.shape:
        raise ShapeMismatchError(f"noise field {field.shape} does not match image {image.shape[:2]}")
    noisy = image + sample_noise(field, image.shape[2], seed)
    return np.clip(noisy, 0.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; +inf when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def gamma_correct(map_values: np.ndarray, gamma: float) -> np.ndarray:
    """Elementwise v**gamma on a [0, 1] map (used to brighten map exports)."""
    if gamma <= 0:
        raise ConfigurationError(f"gamma must be > 0, got {gamma}")
    arr = np.asarray(map_values, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 1:
        raise ShapeMismatchError("gamma_correct expects values in [0, 1]")
    return arr ** gamma


# ---------------------------------------------------------------------------
# dataset trees and degraded-set export


@dataclass
class ArrayDataset:
    """In-memory image classification dataset.

    images: (N, H, W, C) float32 in [0, 1]
    labels: (N,) int64
    class_names: one name per label value, sorted order defines the labels
    """

    images: np.ndarray
    labels: np.ndarray
    class_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ShapeMismatchError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ShapeMismatchError("images and labels disagree in length")
        self.class_names = tuple(self.class_names)

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices) -> "ArrayDataset":
        idx = np.asarray(indices)
        return ArrayDataset(self.images[idx], self.labels[idx], self.class_names)

    def content_hash(self) -> str:
        from .utils import bytes_hash

        return bytes_hash(self.images.tobytes() + self.labels.tobytes() + repr(self.class_names).encode())


def save_image(path: str, image: np.ndarray) -> None:
    """Write a [0, 1] float image as an 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(path, format="PNG")


def load_image(path: str) -> np.ndarray:
    """Decode an image file to an H x W x C float64 array in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def load_image_tree(root: str) -> ArrayDataset:
    """Load a directory-per-class image tree.

    Class directories are sorted by name to assign label indices; files inside
    each class are sorted as well, so the dataset order is reproducible.
    """
    classes = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not classes:
        raise ConfigurationError(f"no class directories found under {root}")
    images, labels = [], []
    for li, cname in enumerate(classes):
        cdir = os.path.join(root, cname)
        for fname in sorted(os.listdir(cdir)):
            fpath = os.path.join(cdir, fname)
            if not os.path.isfile(fpath):
                continue
            images.append(load_image(fpath))
            labels.append(li)
    if not images:
        raise ConfigurationError(f"no images found under {root}")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"images under {root} have mixed shapes: {sorted(shapes)}")
    return ArrayDataset(np.stack(images), np.array(labels), tuple(classes))


def save_image_tree(dataset: ArrayDataset, root: str) -> None:
    """Write a dataset as a directory-per-class PNG tree."""
    os.makedirs(root, exist_ok=True)
    names = dataset.class_names or tuple(f"class_{k}" for k in range(dataset.num_classes))
    counters = {}
    for img, lab in zip(dataset.images, dataset.labels):
        cname = names[int(lab)]
        cdir = os.path.join(root, cname)
        os.makedirs(cdir, exist_ok=True)
        k = counters.get(cname, 0)
        counters[cname] = k + 1
        save_image(os.path.join(cdir, f"{k:05d}.png"), img)


def export_degraded_tree(src_root: str, spec: DegradationSpec, seed: int, out_root: str) -> dict:
    """Degrade every image of a class tree into a mirrored tree.

    Each image gets its own seed derived from (seed, image index) and the
    manifest records the spec plus the per-image seeds, so the export can be
    reproduced bit for bit.
    """
    from .utils import derive_seed

    classes = sorted(d for d in os.listdir(src_root) if os.path.isdir(os.path.join(src_root, d)))
    if not classes:
        raise ConfigurationError(f"no class directories found under {src_root}")
    os.makedirs(out_root, exist_ok=True)
    records = []
    index = 0
    for cname in classes:
        os.makedirs(os.path.join(out_root, cname), exist_ok=True)
        for fname in sorted(os.listdir(os.path.join(src_root, cname))):
            src = os.path.join(src_root, cname, fname)
            if not os.path.isfile(src):
                continue
            image = load_image(src)
            img_seed = derive_seed(seed, index)
            fld_spec = spec if spec.kind != "radial2d" or spec.center != "random" else spec.reseeded(img_seed)
            fld = make_noise_field(fld_spec, image.shape[0], image.shape[1])
            save_image(os.path.join(out_root, cname, fname), degrade(image, fld, img_seed))
            records.append({"path": f"{cname}/{fname}", "seed": img_seed})
            index += 1
    manifest = {"spec": spec.to_dict(), "base_seed": int(seed), "images": records}
    with open(os.path.join(out_root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
