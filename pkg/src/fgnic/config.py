"""Declarative experiment configuration.

One YAML document drives the CLI: dataset location (an image tree or a
synthetic-generation recipe), network hyperparameters, checkpoint paths,
training settings, the evaluation degradation grid, and report options.
"""

import yaml

from .errors import ConfigurationError
from .imaging import DegradationSpec, load_image_tree
from .synthetic import make_synthetic_dataset
from .training import TrainConfig
from .fusion import FusionConfig


def load_config(path) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"config root must be a mapping, got {type(cfg).__name__}")
    return cfg


def train_config_from(cfg: dict, seed: int) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if "noise_values" in section:
        section["noise_values"] = tuple(section["noise_values"])
    section["seed"] = seed
    try:
        return TrainConfig(**section)
    except TypeError as e:
        raise ConfigurationError(f"bad train section: {e}") from None


def fusion_config_from(cfg: dict) -> FusionConfig:
    section = dict(cfg.get("fusion", {}))
    section.pop("fidelity_source", None)
    section.pop("checkpoint", None)
    if section.get("stages_with_spatial_fusion") is not None:
        section["stages_with_spatial_fusion"] = tuple(section["stages_with_spatial_fusion"])
    try:
        return FusionConfig(**section)
    except TypeError as e:
        raise ConfigurationError(f"bad fusion section: {e}") from None


def degradation_specs_from(entries) -> list:
    if not entries:
        raise ConfigurationError("no degradation specs configured")
    return [DegradationSpec.from_dict(d) for d in entries]


def resolve_datasets(cfg: dict):
    """Produce (train, test) datasets from the config's dataset section.

    Either image trees (`root` / `test_root`) or a synthetic recipe with a
    test_fraction carved off the tail (classes stay balanced because labels
    cycle round-robin).
    """
    section = cfg.get("dataset", {})
    if "root" in section:
        train = load_image_tree(section["root"])
        test = load_image_tree(section["test_root"]) if "test_root" in section else None
        return train, test
    if "synthetic" in section:
        recipe = dict(section["synthetic"])
        test_fraction = float(recipe.pop("test_fraction", 0.0))
        data = make_synthetic_dataset(**recipe)
        if test_fraction <= 0:
            return data, None
        n_test = int(round(test_fraction * len(data)))
        if not 0 < n_test < len(data):
            raise ConfigurationError(f"test_fraction {test_fraction} leaves no train or test samples")
        return data.subset(range(len(data) - n_test)), data.subset(range(len(data) - n_test, len(data)))
    raise ConfigurationError("dataset section needs either 'root' or 'synthetic'")
