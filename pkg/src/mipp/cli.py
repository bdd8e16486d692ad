"""Command-line front end: ``mipp <verb> [flags]``.

Exit codes: 0 on success, 1 on a data/config error, 2 when
``--fail-on-collapse`` is set and a pruned layer lost every unit.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DATA_ROOT_ENV, DatasetError, load_dataset
from .engine import ConfigError, ShapeError
from .experiments import BASELINES, ExperimentSpec, desk_probe_config, desk_train_config, run_experiment, sweep_schedule
from .formats import FormatError, load_activations, load_checkpoint, read_masks, save_activations, save_checkpoint, write_masks
from .models import apply_masks, build_model, capture_activations, masks_from_model, train_classifier
from .pipeline import COLLAPSE_METHODS, MippConfig, feature_select, mipp
from .probe import ProbeConfig

EXIT_OK, EXIT_ERROR, EXIT_COLLAPSE = 0, 1, 2
log = logging.getLogger("mipp")


def _probe_cfg(args) -> ProbeConfig:
    if args.full_probes:
        return ProbeConfig(repeats=args.repeats)
    return desk_probe_config(repeats=args.repeats)


def _mipp_cfg(args, x=None) -> MippConfig:
    return MippConfig(
        confidence=args.x if x is None else x,
        steps=getattr(args, "schedule_steps", 20),
        collapse=args.collapse_fn,
        probe_cfg=_probe_cfg(args),
        capture_samples=args.samples,
        seed=args.seed,
    )


def _dataset(args):
    return load_dataset(args.dataset, seed=args.seed, root=args.data_root)


def _model(args, data):
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    model = build_model(args.model, args.seed)
    if args.epochs:
        model, _ = train_classifier(model, data, args.epochs, desk_train_config(args.seed))
    return model


def _capture(args, model, data):
    n = min(args.samples, len(data.x_train))
    return capture_activations(model, data.x_train, n, seed=args.seed)


def _echo(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# -- verbs ----------------------------------------------------------------


def cmd_train(args) -> int:
    data = _dataset(args)
    model = build_model(args.model, args.seed)
    model, trace = train_classifier(model, data, args.epochs, desk_train_config(args.seed))
    save_checkpoint(model, args.out)
    _echo({"checkpoint": str(args.out), "test_accuracy": model.accuracy(data.x_test, data.y_test), "epochs": len(trace)})
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = _mipp_cfg(args)
    if args.activations:
        capture = load_activations(args.activations)
    else:
        data = _dataset(args)
        capture = _capture(args, _model(args, data), data)
    report = mipp(capture, cfg)
    write_masks(args.out, report, args.model, _config_echo(cfg))
    _echo({"masks": str(args.out), "global_pr": report.global_pr, "per_layer_pr": report.per_layer_pr, "collapsed": report.collapse_report.collapsed})
    return _collapse_exit(args, report.collapse_report.collapsed)


def cmd_retrain(args) -> int:
    data = _dataset(args)
    model = load_checkpoint(args.checkpoint)
    if args.masks:
        model = apply_masks(model, read_masks(args.masks))
    before = model.accuracy(data.x_test, data.y_test)
    model, _ = train_classifier(model, data, args.epochs, desk_train_config(args.seed))
    if args.out:
        save_checkpoint(model, args.out)
    _echo({"acc_pruned": before, "acc_retrained": model.accuracy(data.x_test, data.y_test)})
    return EXIT_OK


def _spec(args, xs=None) -> ExperimentSpec:
    return ExperimentSpec(
        model_id=args.model,
        dataset_id=args.dataset,
        pretrained=args.epochs > 0,
        mipp=_mipp_cfg(args, x=args.x),
        baselines=tuple(args.baselines),
        train_epochs=args.epochs,
        retrain_epochs=args.retrain_epochs,
        seeds=tuple(args.seeds or [args.seed]),
        out_dir=str(args.out),
        xs=xs,
        duplicate=args.duplicate,
        data_root=args.data_root,
        workers=args.workers,
    )


def cmd_run(args) -> int:
    records = run_experiment(_spec(args))
    _echo({"out": str(args.out), "rows": len(records)})
    return _collapse_exit(args, any(r.collapsed for r in records if r.method == "mipp"))


def cmd_sweep(args) -> int:
    records = sweep_schedule(_spec(args))
    _echo({"out": str(args.out), "rows": len(records)})
    return _collapse_exit(args, any(r.collapsed for r in records if r.method == "mipp"))


def cmd_feature_select(args) -> int:
    cfg = _mipp_cfg(args)
    if args.activations:
        capture = load_activations(args.activations)
        masks = read_masks(args.masks) if args.masks else []
    else:
        data = _dataset(args)
        model = _model(args, data)
        capture = _capture(args, model, data)
        masks = read_masks(args.masks) if args.masks else masks_from_model(model)
    sel = feature_select(capture, masks, cfg)
    doc = {"kept": sel.kept, "dropped": sel.dropped, "n_features": capture.inputs.shape[1]}
    Path(args.out).write_text(json.dumps(doc) + "\n")
    _echo({"features": str(args.out), "kept": len(sel.kept), "dropped": len(sel.dropped)})
    return EXIT_OK


def cmd_export_activations(args) -> int:
    data = _dataset(args)
    capture = _capture(args, _model(args, data), data)
    save_activations(capture, args.out)
    _echo({"activations": str(args.out), "samples": capture.sample_count, "layers": len(capture.layers)})
    return EXIT_OK


def cmd_import_masks(args) -> int:
    model = apply_masks(load_checkpoint(args.checkpoint), read_masks(args.masks))
    save_checkpoint(model, args.out)
    kept = [int(np.sum(m.keep)) for m in masks_from_model(model)]
    _echo({"checkpoint": str(args.out), "kept_per_layer": kept})
    return EXIT_OK


def _collapse_exit(args, collapsed: bool) -> int:
    if collapsed and args.fail_on_collapse:
        print("layer collapse detected", file=sys.stderr)
        return EXIT_COLLAPSE
    return EXIT_OK


def _config_echo(cfg: MippConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg), default=str))


# -- parser ---------------------------------------------------------------


def _add_data(p, model=True):
    if model:
        p.add_argument("--model", default="dense-digits", help="zoo id or dense:<sizes>")
    p.add_argument("--dataset", default="digits8x8", help="mnist | digits8x8 | synthetic:<recipe>")
    p.add_argument("--data-root", default=None, help=f"MNIST directory (default: ${DATA_ROOT_ENV})")
    p.add_argument("--seed", type=int, default=0)


def _add_mipp(p):
    p.add_argument("--x", type=float, default=0.9, help="keep confidence threshold in [0.5, 1)")
    p.add_argument("--collapse-fn", choices=COLLAPSE_METHODS, default="l1")
    p.add_argument("--repeats", type=int, default=3, help="probe replicas per node test")
    p.add_argument("--samples", type=int, default=2048, help="activation rows to capture")
    p.add_argument("--full-probes", action="store_true", help="2x256 probes with 1500/150 iterations")
    p.add_argument("--fail-on-collapse", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mipp", description="Mutual-information preserving structured pruning.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a zoo model and save a checkpoint")
    _add_data(p)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("prune", cmd_prune, "run MIPP and write masks JSON"),
        ("feature-select", cmd_feature_select, "select input features against the pruned first layer"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_data(p)
        _add_mipp(p)
        p.add_argument("--checkpoint", help="model checkpoint; otherwise --model is trained for --epochs")
        p.add_argument("--activations", help="prune a saved activation dump instead of a model")
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--out", required=True)
        if name == "feature-select":
            p.add_argument("--masks", help="masks JSON from prune (default: the model's own masks)")
        p.set_defaults(func=func)

    p = sub.add_parser("retrain", help="apply masks and retrain a checkpoint")
    _add_data(p, model=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--masks")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_retrain)

    for name, func, helptext in (
        ("run", cmd_run, "train, prune and retrain at one confidence, with baselines"),
        ("sweep", cmd_sweep, "run over the whole confidence schedule"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_data(p)
        _add_mipp(p)
        p.add_argument("--seeds", type=int, nargs="+", help="overrides --seed")
        p.add_argument("--schedule-steps", type=int, default=20)
        p.add_argument("--epochs", type=int, default=20, help="pre-training epochs (0 = untrained)")
        p.add_argument("--retrain-epochs", type=int, default=20)
        p.add_argument("--baselines", nargs="*", choices=BASELINES, default=list(BASELINES))
        p.add_argument("--duplicate", action="store_true", help="double every hidden node after training")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)

    p = sub.add_parser("export-activations", help="capture activations to a MIPPACT1 file")
    _add_data(p)
    p.add_argument("--checkpoint")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--samples", type=int, default=2048)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_activations)

    p = sub.add_parser("import-masks", help="apply a masks JSON to a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_masks)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, FormatError, ConfigError, ShapeError, KeyError, FileNotFoundError) as exc:
        print(f"mipp {args.verb}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
