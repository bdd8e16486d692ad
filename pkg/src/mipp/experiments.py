"""Train, prune, retrain runs and confidence-schedule sweeps.

Every run writes plain files so plots never parse logs:

``results.csv``
    seed, x, method, global_pr, per_layer_pr (``;`` separated),
    acc_pre, acc_pruned, acc_retrained, collapsed. No wall-clock, so a
    rerun with the same spec is byte-identical.
``timings.csv``
    seed, x, method, wall_seconds.
``masks.json``
    one entry per (seed, x, method) with the mask document of
    :func:`mipp.formats.masks_to_json`.
``config.json``
    echo of the spec.
``collapse_histogram.csv`` (sweeps only)
    method, bin_lo, bin_hi, runs, collapsed; 5% sparsity bins.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset
from .engine import ConfigError, SgdConfig
from .formats import masks_to_json
from .models import (
    ToyModel,
    apply_masks,
    build_model,
    capture_activations,
    duplicate_hidden_nodes,
    train_classifier,
)
from .pipeline import MippConfig, baseline_l1_magnitude, baseline_random, build_report, mipp
from .probe import ProbeConfig

log = logging.getLogger(__name__)

BASELINES = ("random", "l1")
RESULT_COLUMNS = [
    "seed",
    "x",
    "method",
    "global_pr",
    "per_layer_pr",
    "acc_pre",
    "acc_pruned",
    "acc_retrained",
    "collapsed",
]
HISTOGRAM_BIN = 0.05


def desk_train_config(seed: int = 0) -> SgdConfig:
    """Classifier SGD used across the desk-scale experiments."""
    return SgdConfig(learning_rate=0.05, momentum=0.9, weight_decay=1e-4, batch_size=32, seed=seed)


def desk_probe_config(**overrides) -> ProbeConfig:
    """Small probes that keep one MIPP pass on the zoo models to a few seconds.

    The full-size defaults (2x256 hidden, 1500/150 iterations) are what
    ``ProbeConfig()`` gives; they are roughly 100x slower here. Short
    refits under-fit a bit, which drops somewhat more nodes at a given x.
    """
    base = dict(hidden=(16, 16), initial_iters=150, refit_iters=20, ordering_iters=35, repeats=3)
    base.update(overrides)
    return ProbeConfig(**base)


@dataclass
class ExperimentSpec:
    model_id: str
    dataset_id: str
    pretrained: bool = True
    mipp: MippConfig = field(default_factory=lambda: MippConfig(probe_cfg=desk_probe_config()))
    baselines: tuple[str, ...] = BASELINES
    train_epochs: int = 20
    retrain_epochs: int = 20
    seeds: tuple[int, ...] = (0,)
    out_dir: str | None = None
    # confidence values to prune at; None means just mipp.confidence
    xs: tuple[float, ...] | None = None
    # double every hidden node after training (redundancy construction)
    duplicate: bool = False
    data_root: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.baselines = tuple(self.baselines)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}; choose from {BASELINES}")
        if self.train_epochs < 0 or self.retrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for x in self.confidences():
            if not 0.5 <= x < 1:
                raise ConfigError(f"confidence {x} outside [0.5, 1)")

    def confidences(self) -> list[float]:
        return [float(x) for x in self.xs] if self.xs is not None else [self.mipp.confidence]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunRecord:
    seed: int
    x: float
    method: str
    global_pr: float
    per_layer_pr: list[float]
    acc_pre: float
    acc_pruned: float
    acc_retrained: float
    collapsed: bool
    wall_seconds: float = 0.0

    def __post_init__(self):
        for name in ("acc_pre", "acc_pruned", "acc_retrained"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def csv_row(self) -> list[str]:
        return [
            str(self.seed),
            repr(self.x),
            self.method,
            repr(self.global_pr),
            ";".join(repr(p) for p in self.per_layer_pr),
            repr(self.acc_pre),
            repr(self.acc_pruned),
            repr(self.acc_retrained),
            str(int(self.collapsed)),
        ]


def prepare_model(spec: ExperimentSpec, seed: int, data: Dataset | None = None) -> tuple[ToyModel, Dataset]:
    """Build (and unless ``pretrained`` is off, train) the model for one seed."""
    data = data or load_dataset(spec.dataset_id, seed=seed, root=spec.data_root)
    model = build_model(spec.model_id, seed)
    if spec.pretrained and spec.train_epochs:
        model, _ = train_classifier(model, data, spec.train_epochs, desk_train_config(seed))
    if spec.duplicate:
        model = duplicate_hidden_nodes(model)
    return model, data


def _evaluate(model, masks, data, epochs, seed) -> tuple[float, float]:
    pruned = apply_masks(model, masks)
    acc_pruned = pruned.accuracy(data.x_test, data.y_test)
    retrained, _ = train_classifier(pruned, data, epochs, desk_train_config(seed))
    return acc_pruned, retrained.accuracy(data.x_test, data.y_test)


def run_seed(spec: ExperimentSpec, seed: int) -> tuple[list[RunRecord], list[dict]]:
    """All confidence points and methods for one seed."""
    model, data = prepare_model(spec, seed)
    acc_pre = model.accuracy(data.x_test, data.y_test)
    n = min(spec.mipp.capture_samples, len(data.x_train))
    capture = capture_activations(model, data.x_train, n, seed=seed)
    records, docs = [], []
    for x in spec.confidences():
        cfg = dataclasses.replace(spec.mipp, confidence=x, seed=seed)
        t0 = time.perf_counter()
        report = mipp(capture, cfg)
        pr_time = time.perf_counter() - t0
        runs = [("mipp", report, pr_time)]
        for name in spec.baselines:
            t0 = time.perf_counter()
            if name == "random":
                masks = baseline_random(model, report.global_pr, seed)
            else:
                masks = baseline_l1_magnitude(model, report.global_pr)
            runs.append((name, build_report(masks), time.perf_counter() - t0))
        for method, rep, elapsed in runs:
            t0 = time.perf_counter()
            acc_pruned, acc_retrained = _evaluate(model, rep.masks, data, spec.retrain_epochs, seed)
            records.append(
                RunRecord(
                    seed,
                    x,
                    method,
                    float(rep.global_pr),
                    [float(p) for p in rep.per_layer_pr],
                    acc_pre,
                    acc_pruned,
                    acc_retrained,
                    rep.collapse_report.collapsed,
                    elapsed + time.perf_counter() - t0,
                )
            )
            doc = masks_to_json(rep, spec.model_id, {"x": x, "method": method})
            docs.append({"seed": seed, "x": x, "method": method, **doc})
        log.info("seed %d x %.6g: mipp pr %.3f", seed, x, report.global_pr)
    return records, docs


def _check_out_dir(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output dir {out} is not writable")
    return out


def write_results(records: list[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())


def write_timings(records: list[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "x", "method", "wall_seconds"])
        for r in records:
            w.writerow([r.seed, repr(r.x), r.method, f"{r.wall_seconds:.3f}"])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_experiment(spec: ExperimentSpec) -> list[RunRecord]:
    """Train, prune and retrain every (seed, x, method); write files if ``out_dir`` is set.

    Seeds fan out over ``spec.workers`` processes; results are merged back
    in (seed, x, method) order so the output does not depend on scheduling.
    """
    out = _check_out_dir(spec.out_dir) if spec.out_dir else None
    if spec.workers > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            parts = list(pool.map(run_seed, [spec] * len(spec.seeds), spec.seeds))
    else:
        parts = [run_seed(spec, s) for s in spec.seeds]
    records = [r for recs, _ in parts for r in recs]
    docs = [d for _, ds in parts for d in ds]
    if out is not None:
        write_results(records, out / "results.csv")
        write_timings(records, out / "timings.csv")
        (out / "masks.json").write_text(json.dumps(docs, indent=1) + "\n")
        (out / "config.json").write_text(json.dumps(spec.to_dict(), indent=2, default=str) + "\n")
    return records


def collapse_histogram(records: list[RunRecord], bin_width: float = HISTOGRAM_BIN) -> list[dict]:
    """Runs and collapsed runs per method in sparsity bins of ``bin_width``."""
    n_bins = int(round(1 / bin_width))
    rows = []
    for method in dict.fromkeys(r.method for r in records):
        runs = np.zeros(n_bins, dtype=int)
        collapsed = np.zeros(n_bins, dtype=int)
        for r in records:
            if r.method != method:
                continue
            b = min(int(r.global_pr / bin_width + 1e-9), n_bins - 1)
            runs[b] += 1
            collapsed[b] += r.collapsed
        for b in range(n_bins):
            rows.append(
                {
                    "method": method,
                    "bin_lo": round(b * bin_width, 10),
                    "bin_hi": round((b + 1) * bin_width, 10),
                    "runs": int(runs[b]),
                    "collapsed": int(collapsed[b]),
                }
            )
    return rows


def sweep_schedule(spec: ExperimentSpec) -> list[RunRecord]:
    """Run the experiment at every point of the confidence schedule."""
    sweep = dataclasses.replace(spec, xs=tuple(spec.mipp.schedule()))
    records = run_experiment(sweep)
    if spec.out_dir:
        rows = collapse_histogram(records)
        with open(Path(spec.out_dir) / "collapse_histogram.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "bin_lo", "bin_hi", "runs", "collapsed"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return records


def pr_inversions(records: list[RunRecord], method: str = "mipp") -> dict[int, int]:
    """Per seed, how many schedule steps realized a lower PR than the step before."""
    out = {}
    for seed in sorted({r.seed for r in records}):
        prs = [r.global_pr for r in records if r.seed == seed and r.method == method]
        out[seed] = int(sum(b < a for a, b in zip(prs, prs[1:])))
    return out
