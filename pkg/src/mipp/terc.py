"""Transfer entropy redundancy criterion over one pair of adjacent layers.

Nodes are visited least-informative first. Each visit masks the node on top
of every node already dropped, refits the probes briefly, and keeps the node
only when we are more than ``x`` confident that the loss went up, i.e. that
the node transfers entropy the rest of the layer cannot replace.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .engine import ShapeError, make_mlp, train_regressor
from .probe import Folds, ProbeConfig, ProbeEnsemble, keep_confidence, replica_folds

log = logging.getLogger(__name__)


@dataclass
class LayerPairJob:
    upstream: np.ndarray
    downstream: np.ndarray
    confidence: float
    probe_cfg: ProbeConfig = field(default_factory=ProbeConfig)
    seed: int = 0

    def __post_init__(self):
        self.upstream = np.asarray(self.upstream)
        self.downstream = np.asarray(self.downstream)
        if self.downstream.ndim == 1:
            self.downstream = self.downstream[:, None]
        if self.upstream.shape[0] != self.downstream.shape[0]:
            raise ShapeError("upstream and downstream row counts differ")
        if self.downstream.shape[1] < 1:
            raise ShapeError("downstream needs at least one column")
        if not 0.5 <= self.confidence < 1:
            raise ValueError("confidence must lie in [0.5, 1)")


@dataclass
class NodeDecision:
    delta_mean: float
    delta_std: float
    confidence: float
    decision: str  # "keep", "drop", "drop-constant", "keep-floor"

    @property
    def kept(self) -> bool:
        return self.decision.startswith("keep")


@dataclass
class TercResult:
    kept: list[int]
    dropped: list[int]
    per_node: dict[int, NodeDecision]
    visit_order: list[int]
    degenerate_target: bool = False


def mi_order(X: np.ndarray, Y: np.ndarray, cfg: ProbeConfig, folds: Folds | None = None) -> list[int]:
    """Visit order: highest single-node probe loss (least informative) first.

    Each node gets one short probe fit on its own column, all with the same
    seed so equal columns give equal losses; ties go to the lower index.
    """
    folds = folds or Folds.split(X, Y, cfg)
    n = folds.n_inputs
    null = folds.null_loss()
    losses = np.empty(n)
    sgd = cfg.sgd.with_seed(cfg.seed)
    for i in range(n):
        if folds.constant_inputs[i]:
            losses[i] = null
            continue
        net = make_mlp(1, folds.n_outputs, cfg.hidden, seed=cfg.seed)
        train_regressor(net, folds.x_train[:, i : i + 1], folds.y_train, cfg.ordering_iters, sgd, loss=folds.loss)
        losses[i] = net.loss(folds.x_eval[:, i : i + 1], folds.y_eval, folds.loss)
    # stable sort on negated loss keeps ascending index among ties
    return [int(i) for i in np.argsort(-losses, kind="stable")]


def terc_layer(job: LayerPairJob) -> TercResult:
    cfg = job.probe_cfg
    X, Y = job.upstream, job.downstream
    n = X.shape[1]
    folds = Folds.split(X, Y, cfg)
    all_nodes = list(range(n))

    if folds.y_train.std(axis=0).max(initial=0) == 0:
        warnings.warn("downstream activations are constant; keeping the highest-variance node", RuntimeWarning)
        best = int(np.argmax(np.asarray(X, dtype=np.float64).var(axis=0)))
        per_node = {i: NodeDecision(0.0, 0.0, 0.0, "keep-floor" if i == best else "drop") for i in all_nodes}
        return TercResult([best], [i for i in all_nodes if i != best], per_node, all_nodes, degenerate_target=True)

    order = mi_order(X, Y, cfg, folds)
    per_node: dict[int, NodeDecision] = {}
    dropped: list[int] = []
    constant = set(np.flatnonzero(folds.constant_inputs).tolist())

    if len(constant) == n:
        per_node = {i: NodeDecision(0.0, 0.0, 0.0, "drop-constant") for i in all_nodes}
        per_node[0] = NodeDecision(0.0, 0.0, 0.0, "keep-floor")
        return TercResult([0], all_nodes[1:], per_node, order)

    ens = ProbeEnsemble(replica_folds(X, Y, cfg), cfg, seed=job.seed).fit()
    iters = cfg.refit_budget(folds.n_outputs)
    for i in order:
        if i in constant:
            dropped.append(i)
            per_node[i] = NodeDecision(0.0, 0.0, 0.0, "drop-constant")
            continue
        live = set(all_nodes) - constant - set(dropped)
        if live == {i}:
            per_node[i] = NodeDecision(float("nan"), float("nan"), float("nan"), "keep-floor")
            continue
        nets, delta = ens.refit(dropped + [i], iters)
        conf = keep_confidence(delta)
        if conf > job.confidence:
            per_node[i] = NodeDecision(delta.mean, delta.std, conf, "keep")
        else:
            dropped.append(i)
            ens.commit(nets, dropped)
            per_node[i] = NodeDecision(delta.mean, delta.std, conf, "drop")
        log.debug("node %d: delta %.4g +- %.4g conf %.4f -> %s", i, delta.mean, delta.std, conf, per_node[i].decision)

    kept = sorted(set(all_nodes) - set(dropped))
    return TercResult(kept, sorted(dropped), per_node, order)
