"""Whole-network pruning sweep, filter collapse, schedules and baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .engine import ConfigError, ShapeError
from .models import ActivationCapture, CollapseReport, PruneMask, ToyModel, detect_layer_collapse
from .probe import ProbeConfig
from .terc import LayerPairJob, TercResult, terc_layer

log = logging.getLogger(__name__)

COLLAPSE_METHODS = ("l1", "l2", "mean", "std")


def collapse_filters(act: np.ndarray, method: str = "l1") -> np.ndarray:
    """Reduce samples x filters x H x W maps to one scalar per filter."""
    if method not in COLLAPSE_METHODS:
        raise ConfigError(f"unknown collapse method {method!r}; choose from {COLLAPSE_METHODS}")
    act = np.asarray(act, dtype=np.float64)
    if act.ndim != 4 or act.shape[2] < 1 or act.shape[3] < 1:
        raise ShapeError(f"expected samples x filters x H x W, got {act.shape}")
    a = np.abs(act)
    if method == "l1":
        out = a.sum(axis=(2, 3))
    elif method == "l2":
        out = np.sqrt(np.square(act).sum(axis=(2, 3)))
    elif method == "mean":
        out = a.mean(axis=(2, 3))
    else:
        # spread of |o| around the filter map's own mean |o|
        out = a.std(axis=(2, 3))
    return out.astype(np.float32)


def confidence_schedule(x0: float = 0.5, r: float = 0.5, steps: int = 20) -> list[float]:
    """x_n = x_0 + sum_{i=1..n} (1 - x_{i-1}) * r, for n = 0 .. steps-1."""
    xs = [float(x0)]
    acc = float(x0)
    for _ in range(1, steps):
        acc += (1.0 - xs[-1]) * r
        xs.append(acc)
    return xs


@dataclass
class MippConfig:
    confidence: float = 0.9
    x0: float = 0.5
    r: float = 0.5
    steps: int = 20
    collapse: str = "l1"
    probe_cfg: ProbeConfig = field(default_factory=ProbeConfig)
    capture_samples: int = 2048
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.confidence < 1:
            raise ConfigError("confidence must lie in [0.5, 1)")
        if not 0 < self.r < 1:
            raise ConfigError("r must lie in (0, 1)")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.collapse not in COLLAPSE_METHODS:
            raise ConfigError(f"unknown collapse method {self.collapse!r}")

    def schedule(self) -> list[float]:
        return confidence_schedule(self.x0, self.r, self.steps)


@dataclass
class LayerDiagnostics:
    layer_index: int
    upstream_cols: int
    downstream_cols: int
    result: TercResult


@dataclass
class MippReport:
    masks: list[PruneMask]
    per_layer_pr: list[float]
    normalized_pr: list[float]
    global_pr: float
    collapse_report: CollapseReport
    diagnostics: list[LayerDiagnostics] = field(default_factory=list)

    @property
    def kept(self) -> list[list[int]]:
        return [np.flatnonzero(m.keep).tolist() for m in self.masks]


def summarize_masks(masks: list[PruneMask]) -> tuple[list[float], list[float], float]:
    """Per-layer PR, PR divided by its layer average, and width-weighted global PR."""
    per_layer = [m.n_dropped / m.keep.size for m in masks]
    total = sum(m.keep.size for m in masks)
    global_pr = sum(m.n_dropped for m in masks) / total if total else 0.0
    mean_pr = float(np.mean(per_layer)) if per_layer else 0.0
    normalized = [p / mean_pr for p in per_layer] if mean_pr > 0 else [1.0] * len(per_layer)
    return per_layer, normalized, global_pr


def build_report(masks: list[PruneMask], diagnostics=()) -> MippReport:
    masks = sorted(masks, key=lambda m: m.layer_index)
    per_layer, normalized, global_pr = summarize_masks(masks)
    return MippReport(masks, per_layer, normalized, global_pr, detect_layer_collapse(masks), list(diagnostics))


def layer_matrix(act: np.ndarray, method: str) -> np.ndarray:
    """Samples x units view of a captured layer, collapsing conv maps."""
    return collapse_filters(act, method) if act.ndim == 4 else np.asarray(act).reshape(act.shape[0], -1)


def mipp(capture: ActivationCapture, cfg: MippConfig) -> MippReport:
    """Prune hidden layers from the output back to the input.

    The job for hidden layer l predicts the already-pruned layer l+1 (the
    model output for the last hidden layer, which is never pruned).
    """
    hidden = [layer_matrix(h, cfg.collapse) for h in capture.hidden]
    target = layer_matrix(capture.output, cfg.collapse)
    masks, diags = [], []
    for layer in range(len(hidden) - 1, -1, -1):
        upstream = hidden[layer]
        if upstream.shape[0] != target.shape[0]:
            raise RuntimeError(f"capture bug: layer {layer} has {upstream.shape[0]} rows, target {target.shape[0]}")
        job = LayerPairJob(upstream, target, cfg.confidence, cfg.probe_cfg, seed=cfg.seed * 1000 + layer)
        res = terc_layer(job)
        keep = np.zeros(upstream.shape[1], dtype=np.uint8)
        keep[res.kept] = 1
        masks.append(PruneMask(layer, keep))
        diags.append(LayerDiagnostics(layer, upstream.shape[1], target.shape[1], res))
        log.info("layer %d: kept %d/%d (target width %d)", layer, len(res.kept), upstream.shape[1], target.shape[1])
        target = upstream[:, res.kept]
    return build_report(masks, diags[::-1])


@dataclass
class FeatureSelection:
    kept: list[int]
    dropped: list[int]
    result: TercResult


def feature_select(capture: ActivationCapture, masks: list[PruneMask], cfg: MippConfig) -> FeatureSelection:
    """Keep input features that transfer entropy to the pruned first layer."""
    first = layer_matrix(capture.hidden[0], cfg.collapse)
    keep0 = next((m.keep for m in masks if m.layer_index == 0), np.ones(first.shape[1], dtype=np.uint8))
    target = first[:, np.flatnonzero(keep0)]
    job = LayerPairJob(capture.inputs, target, cfg.confidence, cfg.probe_cfg, seed=cfg.seed * 1000 + 999)
    res = terc_layer(job)
    return FeatureSelection(res.kept, res.dropped, res)


# -- baselines ------------------------------------------------------------


def _masks_from_drops(model: ToyModel, drops: list[tuple[int, int]]) -> list[PruneMask]:
    keeps = [np.ones(w, dtype=np.uint8) for w in model.layer_widths()]
    for layer, unit in drops:
        keeps[layer][unit] = 0
    return [PruneMask(k, keep) for k, keep in enumerate(keeps)]


def _all_units(model: ToyModel) -> list[tuple[int, int]]:
    return [(k, u) for k, w in enumerate(model.layer_widths()) for u in range(w)]


def baseline_l1_magnitude(model: ToyModel, global_pr: float) -> list[PruneMask]:
    """Global top-k by L1 norm of each unit's incoming weights."""
    if not 0 <= global_pr < 1:
        raise ConfigError("global_pr must lie in [0, 1)")
    units = _all_units(model)
    scores = []
    for k, u in units:
        W = model.hidden_layer(k).params[0]
        scores.append(float(np.abs(W[u], dtype=np.float64).sum()))
    n_drop = int(np.floor(global_pr * len(units)))
    # lexsort: score first, then (layer, unit) order as tie-break
    order = np.lexsort((np.arange(len(units)), np.asarray(scores)))
    return _masks_from_drops(model, [units[i] for i in order[:n_drop]])


def baseline_random(model: ToyModel, global_pr: float, seed: int = 0) -> list[PruneMask]:
    if not 0 <= global_pr < 1:
        raise ConfigError("global_pr must lie in [0, 1)")
    units = _all_units(model)
    n_drop = int(np.floor(global_pr * len(units)))
    pick = np.random.default_rng(seed).choice(len(units), n_drop, replace=False)
    return _masks_from_drops(model, [units[i] for i in sorted(pick)])
