"""Fidelity-guided noisy-image classification toolkit.

Synthesizes additive-Gaussian degradations (uniform and spatially varying),
computes or estimates per-pixel restoration fidelity maps, fuses them into a
frozen pretrained classifier through small trainable blocks, and runs the
baseline/ablation experiment grid with deterministic reports and figures.
"""

from .errors import (AccountingError, ConfigurationError, FGNICError, FreezeViolationError,
                     InputError, ShapeMismatchError, TrainingDivergedError)
from .imaging import (ArrayDataset, DegradationSpec, NoiseField, degrade, export_degraded_tree,
                      gamma_correct, load_image, load_image_tree, make_noise_field, psnr,
                      sample_noise, save_image, save_image_tree)
from .fidelity import (FIDELITY_METRICS, RESIZE_METHODS, flatten_downsample, oracle_fidelity,
                       resize_fidelity)
from .synthetic import make_synthetic_dataset
from .restoration import (FidelityEstimator, ResidualDenoiser, estimate_fidelity, load_denoiser,
                          load_estimator, restore, train_denoiser, train_fidelity_estimator)
from .backbone import (ARCH_PRESETS, ClassifierSplit, DeskBackbone, extract_stage_features,
                       freeze, load_backbone, save_backbone, split_classifier)
from .fusion import (ChannelFusionBlock, ConcatBlock, EnsembleGate, FGNICModel, FusionConfig,
                     SpatialFusionBlock, channel_concat, channel_fuse, count_trainable_params,
                     ensemble_combine, fgnic_forward, load_fgnic, spatial_fuse)
from .training import (DEFAULT_NOISE_SET, ExperimentRun, TrainConfig, train_baseline, train_fgnic)
from .evaluation import (AccuracyRow, AccuracyTable, Cell, CostReport, count_macs,
                         degradation_columns, emit_report, evaluate, fgnic_cost_report)

__version__ = "0.1.0"
