"""Command-line entry point.

Subcommands cover the full experiment lifecycle: dataset synthesis, degraded
exports, the four trainers, evaluation sweeps, report emission (delimited
files plus rendered figures), and qualitative visualization panels.

Every command takes --config/--seed/--out; --seed overrides the config seed
so a whole run is reproducible from the command line alone.
"""

import argparse
import os
import sys

from . import config as cfgmod
from .backbone import ARCH_PRESETS, load_backbone, save_backbone, split_classifier
from .errors import ConfigurationError, FGNICError
from .evaluation import AccuracyTable, degradation_columns, emit_report, evaluate, fgnic_cost_report
from .fusion import FGNICModel, load_fgnic
from .imaging import export_degraded_tree, save_image_tree
from .restoration import load_denoiser, load_estimator, train_denoiser, train_fidelity_estimator
from .synthetic import make_synthetic_dataset
from .training import train_baseline, train_fgnic


def _common(parser):
    parser.add_argument("--config", required=True, help="experiment config file (YAML)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="fgnic",
                                     description="fidelity-guided noisy-image classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        _common(p)
    return parser


def _setup(args):
    cfg = cfgmod.load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    os.makedirs(args.out, exist_ok=True)
    return cfg, seed


def _load_denoiser_from(cfg, key="denoiser"):
    path = cfg.get(key, {}).get("checkpoint")
    if not path:
        raise ConfigurationError(f"config is missing {key}.checkpoint")
    return load_denoiser(path)


def cmd_make_dataset(args):
    """Render the synthetic dataset to a directory-per-class tree."""
    cfg, seed = _setup(args)
    recipe = dict(cfg.get("dataset", {}).get("synthetic", {}))
    recipe.pop("test_fraction", None)
    recipe.setdefault("seed", seed)
    data = make_synthetic_dataset(**recipe)
    save_image_tree(data, args.out)
    print(f"wrote {len(data)} images ({data.num_classes} classes) to {args.out}")


def cmd_degrade(args):
    """Export a degraded copy of an image tree plus its manifest."""
    cfg, seed = _setup(args)
    section = cfg.get("degrade", {})
    root = cfg.get("dataset", {}).get("root")
    if not root:
        raise ConfigurationError("degrade needs dataset.root (an image tree)")
    spec = cfgmod.degradation_specs_from([section.get("spec", {})])[0]
    manifest = export_degraded_tree(root, spec, seed, args.out)
    print(f"degraded {len(manifest['images'])} images under {args.out} (spec {spec.label()})")


def cmd_train_backbone(args):
    """Pretrain the desk classifier on clean images."""
    cfg, seed = _setup(args)
    train, _ = cfgmod.resolve_datasets(cfg)
    tc = cfgmod.train_config_from(cfg, seed)
    arch = cfg.get("backbone", {}).get("arch", "desk")
    if arch not in ARCH_PRESETS:
        raise ConfigurationError(f"unknown backbone arch {arch!r}, expected one of {sorted(ARCH_PRESETS)}")
    model, run = train_baseline("clean", train, tc, arch=arch, out_dir=args.out)
    print(f"backbone trained: final val_acc={run.metrics[-1].get('val_acc'):.4f} -> {args.out}")


def cmd_train_denoiser(args):
    """Blind-train the residual denoiser."""
    cfg, seed = _setup(args)
    train, _ = cfgmod.resolve_datasets(cfg)
    tc = cfgmod.train_config_from(cfg, seed)
    section = cfg.get("denoiser", {})
    noise_range = section.get("noise_range", [0.0, 0.5])
    model, run = train_denoiser(train, noise_range, tc,
                                depth=section.get("depth", 8), width=section.get("width", 32),
                                out_dir=args.out)
    print(f"denoiser trained: final loss={run.metrics[-1]['train_loss']:.6f} -> {args.out}")


def cmd_train_fidelity(args):
    """Train the fidelity-map estimator against the denoiser's restorations."""
    cfg, seed = _setup(args)
    train, _ = cfgmod.resolve_datasets(cfg)
    tc = cfgmod.train_config_from(cfg, seed)
    denoiser = _load_denoiser_from(cfg)
    section = cfg.get("estimator", {})
    model, run = train_fidelity_estimator(train, denoiser, tc,
                                          depth=section.get("depth", 8), width=section.get("width", 32),
                                          out_dir=args.out)
    print(f"fidelity estimator trained: final loss={run.metrics[-1]['train_loss']:.6f} -> {args.out}")


def cmd_train_baseline(args):
    """Train one cell of the baseline matrix (clean / retrain on noisy / on restored)."""
    cfg, seed = _setup(args)
    train, _ = cfgmod.resolve_datasets(cfg)
    tc = cfgmod.train_config_from(cfg, seed)
    kind = cfg.get("baseline", {}).get("kind", "retrain_noisy")
    denoiser = _load_denoiser_from(cfg) if kind == "retrain_restored" else None
    arch = cfg.get("backbone", {}).get("arch", "desk")
    model, run = train_baseline(kind, train, tc, denoiser=denoiser, arch=arch, out_dir=args.out)
    print(f"baseline {kind} trained: final val_acc={run.metrics[-1].get('val_acc'):.4f} -> {args.out}")


def _assemble_from_config(cfg, seed, train_hw):
    bpath = cfg.get("backbone", {}).get("checkpoint")
    if not bpath:
        raise ConfigurationError("config is missing backbone.checkpoint")
    backbone, manifest = load_backbone(bpath)
    boundaries = cfg.get("backbone", {}).get("stage_boundaries") or manifest.get("stage_boundaries")
    split = split_classifier(backbone, boundaries)
    denoiser = _load_denoiser_from(cfg)
    source = cfg.get("fusion", {}).get("fidelity_source", "oracle")
    estimator = None
    if source in ("estimator", "end_to_end"):
        epath = cfg.get("estimator", {}).get("checkpoint")
        if not epath:
            raise ConfigurationError(f"fidelity_source {source!r} needs estimator.checkpoint")
        estimator = load_estimator(epath)
    fusion_cfg = cfgmod.fusion_config_from(cfg)
    return FGNICModel(split, denoiser, source, estimator=estimator, config=fusion_cfg,
                      input_hw=train_hw, init_seed=seed)


def cmd_train_fgnic(args):
    """Assemble the fidelity-guided model and train its fusion blocks."""
    cfg, seed = _setup(args)
    train, _ = cfgmod.resolve_datasets(cfg)
    tc = cfgmod.train_config_from(cfg, seed)
    model = _assemble_from_config(cfg, seed, train.image_shape[:2])
    run = train_fgnic(model, train, tc, out_dir=args.out)
    print(f"fgnic ({model.fidelity_source}) trained: final val_acc={run.metrics[-1].get('val_acc'):.4f} -> {args.out}")


def cmd_eval(args):
    """Accuracy sweep of the configured models over the degradation grid."""
    cfg, seed = _setup(args)
    _, test = cfgmod.resolve_datasets(cfg)
    if test is None:
        raise ConfigurationError("eval needs a test set (dataset.test_root or synthetic test_fraction)")
    section = cfg.get("eval", {})
    specs = cfgmod.degradation_specs_from(section.get("degradations", []))
    table = AccuracyTable(columns=degradation_columns(specs))
    denoiser = _load_denoiser_from(cfg) if cfg.get("denoiser", {}).get("checkpoint") else None
    for entry in section.get("models", []):
        kind = entry.get("kind", "backbone")
        if kind == "backbone":
            model, _ = load_backbone(entry["checkpoint"])
        elif kind == "fgnic":
            model = load_fgnic(entry["checkpoint"])
        else:
            raise ConfigurationError(f"unknown eval model kind {kind!r}")
        row = evaluate(model, test, specs, entry.get("condition", "noisy"), seed,
                       denoiser=denoiser, method=entry.get("name", kind))
        table.add_row(row)
        print(f"evaluated {row.method}/{row.condition}: " +
              ", ".join(f"{c}={row.cells[c].accuracy:.2f}" for c in table.columns))
    out_path = os.path.join(args.out, "table.json")
    with open(out_path, "w") as f:
        f.write(emit_report(table, "json"))
    print(f"wrote {out_path}")


def cmd_report(args):
    """Emit delimited reports and render the accuracy figure for a table."""
    cfg, seed = _setup(args)
    section = cfg.get("report", {})
    table_path = section.get("table")
    if not table_path:
        raise ConfigurationError("report needs report.table (a table JSON, e.g. from eval)")
    import json

    with open(table_path) as f:
        table = AccuracyTable.from_dict(json.load(f))
    if section.get("macro_average", False):
        table = table.with_uniform_macro_average()
    formats = section.get("formats", ["json", "csv", "markdown"])
    ext = {"json": "json", "csv": "csv", "markdown": "md"}
    for fmt in formats:
        path = os.path.join(args.out, f"table.{ext[fmt]}")
        with open(path, "w") as f:
            f.write(emit_report(table, fmt))
        print(f"wrote {path}")
    from .figures import save_accuracy_curves

    fig_path = save_accuracy_curves(table, os.path.join(args.out, "accuracy_vs_sigma.png"))
    print(f"wrote {fig_path}")


def cmd_viz(args):
    """Render degraded-image grids with gamma-corrected fidelity maps."""
    cfg, seed = _setup(args)
    train, test = cfgmod.resolve_datasets(cfg)
    data = test if test is not None else train
    section = cfg.get("viz", {})
    specs = cfgmod.degradation_specs_from(section.get("degradations", [
        {"kind": "uniform", "sigma": 0.3},
        {"kind": "linear1d", "sigma_lo": 0.0, "sigma_hi": 0.5, "axis": "rows"},
        {"kind": "radial2d", "sigma_lo": 0.0, "sigma_hi": 0.5},
    ]))
    denoiser = _load_denoiser_from(cfg) if cfg.get("denoiser", {}).get("checkpoint") else None
    index = int(section.get("image_index", 0))
    gamma = float(section.get("gamma", 0.5))
    clean = data.images[index].astype(float)
    from .figures import save_degradation_panel, save_fidelity_map_image
    from .fidelity import oracle_fidelity
    from .imaging import degrade, make_noise_field
    from .restoration import restore

    panel = save_degradation_panel(clean, specs, os.path.join(args.out, "panel.png"),
                                   denoiser=denoiser, gamma=gamma, seed=seed)
    print(f"wrote {panel}")
    for spec in specs:
        field = make_noise_field(spec, clean.shape[0], clean.shape[1])
        noisy = degrade(clean, field, seed)
        shown = restore(denoiser, noisy) if denoiser is not None else noisy
        fmap = oracle_fidelity(clean, shown, "l1")
        path = save_fidelity_map_image(fmap, os.path.join(args.out, f"fidelity_{spec.label().replace(':', '_')}.png"),
                                       gamma=gamma)
        print(f"wrote {path}")


def cmd_cost(args):
    """Analytic MAC/parameter table for an assembled fgnic checkpoint."""
    cfg, seed = _setup(args)
    path = cfg.get("fusion", {}).get("checkpoint")
    if not path:
        raise ConfigurationError("cost needs fusion.checkpoint (an assembled fgnic model)")
    report = fgnic_cost_report(load_fgnic(path))
    for fmt, ext in (("json", "json"), ("csv", "csv"), ("markdown", "md")):
        out_path = os.path.join(args.out, f"cost.{ext}")
        with open(out_path, "w") as f:
            f.write(emit_report(report, fmt))
        print(f"wrote {out_path}")


COMMANDS = {
    "make-dataset": cmd_make_dataset,
    "degrade": cmd_degrade,
    "train-backbone": cmd_train_backbone,
    "train-denoiser": cmd_train_denoiser,
    "train-fidelity": cmd_train_fidelity,
    "train-baseline": cmd_train_baseline,
    "train-fgnic": cmd_train_fgnic,
    "eval": cmd_eval,
    "report": cmd_report,
    "viz": cmd_viz,
    "cost": cmd_cost,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except FGNICError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
