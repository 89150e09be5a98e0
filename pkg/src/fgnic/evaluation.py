"""Accuracy sweeps over degradation grids, analytic cost accounting, and
deterministic report emission (JSON canonical, CSV, markdown).

Evaluation noise is seeded per (run seed, degradation cell, image index), so
every method sees the same degraded pixels in the same cell and comparisons
are paired. Rows can also be ingested from published numbers ("replay") to
exercise the report schema without claiming reproduction.
"""

import csv
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .errors import AccountingError, ConfigurationError
from .fusion import FGNICModel
from .imaging import ArrayDataset, DegradationSpec, degrade, make_noise_field
from .utils import bytes_hash, derive_seed, images_to_batch

EVAL_CONDITIONS = ("noisy", "restored")
REPORT_FORMATS = ("json", "csv", "markdown")


@dataclass
class Cell:
    accuracy: float          # percent, in [0, 100]
    n: int = 0               # sample count (0 for replayed cells)
    seed: object = None      # evaluation seed, or "replay"

    def to_dict(self):
        return asdict(self)


@dataclass
class AccuracyRow:
    method: str
    condition: str
    cells: dict = field(default_factory=dict)  # column label -> Cell

    def to_dict(self):
        return {"method": self.method, "condition": self.condition,
                "cells": {k: self.cells[k].to_dict() for k in sorted(self.cells)}}


@dataclass
class AccuracyTable:
    """Methods x degradation grid of top-1 accuracies."""

    columns: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def add_row(self, row: AccuracyRow):
        for label in row.cells:
            if label not in self.columns:
                raise ConfigurationError(f"cell column {label!r} not in table columns {self.columns}")
        self.rows.append(row)

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r.method, r.condition))

    def get(self, method: str, condition: str, column: str) -> Cell:
        for row in self.rows:
            if row.method == method and row.condition == condition:
                return row.cells[column]
        raise KeyError(f"no row ({method!r}, {condition!r})")

    def to_dict(self):
        return {"columns": list(self.columns), "rows": [r.to_dict() for r in self.sorted_rows()]}

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyTable":
        rows = []
        for r in d["rows"]:
            cells = {k: Cell(**v) for k, v in r["cells"].items()}
            rows.append(AccuracyRow(r["method"], r["condition"], cells))
        return cls(columns=list(d["columns"]), rows=rows)

    @classmethod
    def replay(cls, columns, cells_by_row: dict) -> "AccuracyTable":
        """Build a table from published accuracy numbers.

        cells_by_row maps (method, condition) -> {column: accuracy}; the cells
        are marked seed="replay" with n=0 since no samples were evaluated.
        """
        table = cls(columns=list(columns))
        for (method, condition), cells in cells_by_row.items():
            row = AccuracyRow(method, condition,
                              {col: Cell(float(acc), n=0, seed="replay") for col, acc in cells.items()})
            table.add_row(row)
        return table

    def with_uniform_macro_average(self, label: str = "uniform:macro_avg") -> "AccuracyTable":
        """Append the macro average over the uniform-sigma columns (the mean
        of per-level accuracies, not a pooled-sample average)."""
        uniform = [c for c in self.columns if c.startswith("uniform:") and c != label]
        out = AccuracyTable(columns=list(self.columns) + [label])
        for row in self.rows:
            cells = dict(row.cells)
            present = [cells[c] for c in uniform if c in cells]
            if present:
                cells[label] = Cell(float(np.mean([c.accuracy for c in present])),
                                    n=sum(c.n for c in present), seed=present[0].seed)
            out.add_row(AccuracyRow(row.method, row.condition, cells))
        return out


def degradation_columns(specs) -> list:
    """Canonical column order: uniform by ascending sigma, then 1-D ramps,
    then 2-D radial specs."""
    kind_rank = {"uniform": 0, "linear1d": 1, "radial2d": 2}
    ordered = sorted(specs, key=lambda s: (kind_rank[s.kind], s.sigma, s.sigma_lo, s.sigma_hi, s.label()))
    labels = [s.label() for s in ordered]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"duplicate degradation labels in {labels}")
    return labels


def _cell_key(label: str) -> int:
    return int(bytes_hash(label.encode())[:8], 16)


def _degraded_batch(dataset: ArrayDataset, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Deterministic per-image degradation for one evaluation cell."""
    H, W = dataset.image_shape[:2]
    key = _cell_key(spec.label())
    shared_field = None
    if not (spec.kind == "radial2d" and spec.center == "random"):
        shared_field = make_noise_field(spec, H, W)
    out = np.empty_like(dataset.images, dtype=np.float64)
    for idx in range(len(dataset)):
        img_seed = derive_seed(seed, key, idx)
        fld = shared_field if shared_field is not None else make_noise_field(spec.reseeded(img_seed), H, W)
        out[idx] = degrade(dataset.images[idx].astype(np.float64), fld, img_seed)
    return out.astype(np.float32)


def evaluate(model, dataset: ArrayDataset, degradations, condition: str, seed: int, *,
             denoiser=None, method: str = None, batch_size: int = 64) -> AccuracyRow:
    """Top-1 accuracy of one model across a degradation grid.

    Plain classifiers see either the degraded images ("noisy") or the
    denoiser's output ("restored"). Fidelity-guided models always take the
    degraded image and restore internally; `condition` then only labels the
    row (defaulting to single/ensemble).
    """
    if len(dataset) == 0:
        raise ConfigurationError("test set is empty")
    is_fgnic = isinstance(model, FGNICModel)
    if not is_fgnic and condition not in EVAL_CONDITIONS:
        raise ConfigurationError(f"condition must be one of {EVAL_CONDITIONS}, got {condition!r}")
    if not is_fgnic and condition == "restored" and denoiser is None:
        raise ConfigurationError("condition='restored' requires a denoiser")
    if method is None:
        method = type(model).__name__
    if condition is None and is_fgnic:
        condition = "ensemble" if model.config.use_ensemble else "single"

    labels_t = torch.from_numpy(dataset.labels)
    clean_t = images_to_batch(dataset.images)
    cells = {}
    for spec in degradations:
        degraded = images_to_batch(_degraded_batch(dataset, spec, seed))
        hits = 0
        with torch.no_grad():
            for s in range(0, len(degraded), batch_size):
                x = degraded[s: s + batch_size]
                if is_fgnic:
                    c = clean_t[s: s + batch_size] if model.fidelity_source == "oracle" else None
                    logits = model(x, clean=c)
                else:
                    if condition == "restored":
                        x = denoiser.restore_tensor(x)
                    logits = model(x)
                hits += int((logits.argmax(dim=1) == labels_t[s: s + batch_size]).sum())
        cells[spec.label()] = Cell(accuracy=100.0 * hits / len(dataset), n=len(dataset), seed=int(seed))
    return AccuracyRow(method=method, condition=condition, cells=cells)


# ---------------------------------------------------------------------------
# analytic cost accounting

# activations, pooling, and normalization are excluded from MAC totals
_ZERO_MAC_TYPES = (
    nn.ReLU, nn.Sigmoid, nn.Tanh, nn.Flatten, nn.Identity, nn.Dropout,
    nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveAvgPool2d, nn.AdaptiveMaxPool2d,
    nn.AdaptiveAvgPool1d, nn.MaxPool1d, nn.AvgPool1d, nn.GroupNorm,
)


def count_macs(network: nn.Module, input_shape) -> int:
    """Multiply-accumulate count of one forward pass at the given input shape.

    conv: k_h * k_w * C_in/groups * C_out * H_out * W_out
    fc:   in_features * out_features (per output position)
    Activations and pooling cost zero; any other executed leaf layer raises
    an accounting error naming it.
    """
    totals = []
    problems = []

    def hook(module, args, output, name):
        if isinstance(module, nn.Conv2d):
            kh, kw = module.kernel_size
            cin = module.in_channels // module.groups
            _, cout, hout, wout = output.shape
            totals.append(kh * kw * cin * cout * hout * wout)
        elif isinstance(module, nn.Linear):
            positions = output.numel() // module.out_features
            totals.append(module.in_features * module.out_features * positions)
        elif isinstance(module, _ZERO_MAC_TYPES):
            pass
        else:
            problems.append(f"{name or '<root>'} ({type(module).__name__})")

    handles = []
    for name, module in network.named_modules():
        if len(list(module.children())) == 0 and not isinstance(module, (nn.ModuleList, nn.ModuleDict)):
            handles.append(module.register_forward_hook(
                lambda m, a, o, _n=name: hook(m, a, o, _n)))
    try:
        with torch.no_grad():
            network(torch.zeros((1, *input_shape)))
    finally:
        for h in handles:
            h.remove()
    if problems:
        raise AccountingError("cannot count MACs for layer(s): " + ", ".join(sorted(set(problems))))
    return int(sum(totals))


@dataclass
class CostEntry:
    name: str
    macs: int
    trainable_params: int
    input_shape: list

    def to_dict(self):
        return asdict(self)


@dataclass
class CostReport:
    """Per-network MACs (input-size dependent) and trainable parameter counts."""

    entries: list = field(default_factory=list)

    def add(self, name: str, network: nn.Module, input_shape):
        from .fusion import count_trainable_params

        self.entries.append(CostEntry(name, count_macs(network, input_shape),
                                      count_trainable_params(network), list(input_shape)))

    def to_dict(self):
        return {"entries": [e.to_dict() for e in sorted(self.entries, key=lambda e: e.name)]}

    @classmethod
    def from_dict(cls, d):
        return cls(entries=[CostEntry(**e) for e in d["entries"]])


def fgnic_cost_report(model: FGNICModel) -> CostReport:
    """Cost table of an assembled model, one entry per component network.

    The ensemble gate performs only elementwise work (no MAC entries), but its
    parameters are still reported under "fusion_gate".
    """
    from .fusion import count_trainable_params

    H, W = model.input_hw
    report = CostReport()
    report.add("denoiser", model.denoiser.body, (model.denoiser.channels, H, W))
    if model.estimator is not None:
        report.add("fidelity_estimator", model.estimator.body, (model.estimator.channels, H, W))
    backbone = nn.Sequential(*model.split.stages, model.split.pool, nn.Flatten(), model.split.head)
    report.add("backbone", backbone, (3, H, W))
    shapes = model.split.stage_shapes((H, W))
    for s in model.fusion_stages:
        shp = shapes[s]
        report.add(f"fusion_spatial_stage{s}", model.spatial_blocks[str(s)],
                   (shp.channels, shp.height, shp.width))
    if model.channel_block is not None:
        report.add("fusion_channel", model.channel_block, (model.feature_dim,))
        report.add("fusion_concat", model.concat_block, (2 * model.feature_dim,))
    if model.ensemble is not None:
        report.entries.append(CostEntry("fusion_gate", 0, count_trainable_params(model.ensemble),
                                        [model.feature_dim]))
    return report


# ---------------------------------------------------------------------------
# report emission


def _fmt_acc(v: float) -> str:
    return f"{v:.2f}"


def emit_report(table, format: str = "json") -> str:
    """Serialize an AccuracyTable or CostReport deterministically.

    JSON is the canonical round-trippable form; CSV and markdown mirror the
    methods x degradation layout with ascending-sigma columns first.
    """
    if format not in REPORT_FORMATS:
        raise ConfigurationError(f"format must be one of {REPORT_FORMATS}, got {format!r}")
    if isinstance(table, AccuracyTable):
        return _emit_accuracy(table, format)
    if isinstance(table, CostReport):
        return _emit_cost(table, format)
    raise ConfigurationError(f"cannot emit report for {type(table).__name__}")


def _emit_accuracy(table: AccuracyTable, format: str) -> str:
    if format == "json":
        return json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n"
    rows = table.sorted_rows()
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "condition", *table.columns])
        for row in rows:
            writer.writerow([row.method, row.condition] +
                            [_fmt_acc(row.cells[c].accuracy) if c in row.cells else "" for c in table.columns])
        return buf.getvalue()
    header = "| Method | Setup | " + " | ".join(table.columns) + " |"
    sep = "|---" * (2 + len(table.columns)) + "|"
    lines = [header, sep]
    for row in rows:
        cells = [_fmt_acc(row.cells[c].accuracy) if c in row.cells else "" for c in table.columns]
        lines.append("| " + " | ".join([row.method, row.condition, *cells]) + " |")
    return "\n".join(lines) + "\n"


def _emit_cost(report: CostReport, format: str) -> str:
    entries = sorted(report.entries, key=lambda e: e.name)
    if format == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["network", "macs", "trainable_params", "input_shape"])
        for e in entries:
            writer.writerow([e.name, e.macs, e.trainable_params, "x".join(map(str, e.input_shape))])
        return buf.getvalue()
    lines = ["| Network | MACs | Trainable params | Input |", "|---|---|---|---|"]
    for e in entries:
        lines.append(f"| {e.name} | {e.macs} | {e.trainable_params} | {'x'.join(map(str, e.input_shape))} |")
    return "\n".join(lines) + "\n"
