"""Mutual information as reduction in prediction loss.

The MI between upstream activations X and a downstream target Y is taken as
the loss of the best constant predictor minus the loss of a probe trained to
predict Y from X, both measured on a held-out fold. Repeating the fit with
independent probe seeds gives a spread, and from it a confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .engine import (
    ConfigError,
    InsufficientSamplesError,
    Network,
    Optimizer,
    SgdConfig,
    ShapeError,
    make_mlp,
    train_regressor,
)

MIN_EVAL_ROWS = 10
_NORMAL = NormalDist()


class DegenerateDropError(ValueError):
    """Raised when every input column would be masked; use the null loss."""


def _default_probe_sgd() -> SgdConfig:
    return SgdConfig(learning_rate=1e-3, momentum=0.9, weight_decay=0.0, batch_size=256, optimizer="adam")


@dataclass
class ProbeConfig:
    repeats: int = 3
    initial_iters: int = 1500
    refit_iters: int = 150
    ordering_iters: int = 35
    hidden: tuple[int, ...] = (256, 256)
    # refit budget once the target is this wide
    wide_threshold: int = 256
    wide_refit_iters: int = 20
    eval_fraction: float = 0.2
    fold_seed: int = 0
    seed: int = 0
    # loss that a masked refit is compared against: "sequential" or "full"
    reference: str = "sequential"
    # "per-replica" draws a fresh train/eval split for every replica
    split: str = "per-replica"
    sgd: SgdConfig = field(default_factory=_default_probe_sgd)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("repeats", "initial_iters", "refit_iters", "ordering_iters", "wide_refit_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.repeats < 2:
            raise ConfigError("repeats must be >= 2 to form a confidence")
        if self.reference not in ("sequential", "full"):
            raise ConfigError(f"unknown reference {self.reference!r}")
        if self.split not in ("per-replica", "shared"):
            raise ConfigError(f"unknown split {self.split!r}")
        if not 0 < self.eval_fraction < 1:
            raise ConfigError("eval_fraction must lie in (0, 1)")

    def refit_budget(self, target_width: int) -> int:
        return self.wide_refit_iters if target_width >= self.wide_threshold else self.refit_iters


def null_loss(Y: np.ndarray) -> float:
    """MSE of predicting every column by its mean: the mean column variance."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    return float(Y.var(axis=0).mean())


@dataclass
class MiEstimate:
    repeats: list[float]
    null_loss: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.repeats))

    @property
    def std(self) -> float:
        return float(np.std(self.repeats, ddof=1)) if len(self.repeats) > 1 else 0.0

    @property
    def raw_mi(self) -> float:
        return self.null_loss - self.mean

    @property
    def mi_value(self) -> float:
        """Estimated MI, floored at zero."""
        return max(self.raw_mi, 0.0)


@dataclass
class LossDelta:
    """Per-replica (masked refit loss - baseline loss)."""

    repeats: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.repeats))

    @property
    def std(self) -> float:
        return float(np.std(self.repeats, ddof=1)) if len(self.repeats) > 1 else 0.0


def keep_confidence(delta: LossDelta) -> float:
    """One-sided normal confidence that the mean delta is above zero."""
    r = len(delta.repeats)
    if r < 2:
        raise ConfigError("need at least two repeats")
    mean, std = delta.mean, delta.std
    if std == 0 or not np.isfinite(std):
        return 1.0 if mean > 0 else 0.0
    return _NORMAL.cdf(mean / (std / np.sqrt(r)))


# -- data preparation -----------------------------------------------------


@dataclass
class Folds:
    """Train/eval split with z-scored inputs (and targets, for MSE).

    Zero-variance columns become all-zero, which is also what masking a
    column means: it is pinned to its mean.
    """

    x_train: np.ndarray
    x_eval: np.ndarray
    y_train: np.ndarray
    y_eval: np.ndarray
    loss: str
    constant_inputs: np.ndarray

    @classmethod
    def split(cls, X, Y, cfg: ProbeConfig, loss: str = "mse", fold_seed: int | None = None) -> "Folds":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(Y)
        if X.shape[0] != Y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
        n = X.shape[0]
        n_eval = int(round(n * cfg.eval_fraction))
        if n_eval < MIN_EVAL_ROWS:
            raise InsufficientSamplesError(f"only {n_eval} evaluation rows; need {MIN_EVAL_ROWS}")
        order = np.random.default_rng(cfg.fold_seed if fold_seed is None else fold_seed).permutation(n)
        ev, tr = np.sort(order[:n_eval]), np.sort(order[n_eval:])
        xs, constant = _zscore(X, tr)
        if loss == "mse":
            Y = np.asarray(Y, dtype=np.float64)
            if Y.ndim == 1:
                Y = Y[:, None]
            ys, _ = _zscore(Y, tr)
        elif loss == "ce":
            ys = Y.astype(np.int64).ravel()
        else:
            raise ConfigError(f"unknown loss {loss!r}")
        f32 = np.float32
        y_dtype = f32 if loss == "mse" else np.int64
        return cls(
            xs[tr].astype(f32), xs[ev].astype(f32), ys[tr].astype(y_dtype), ys[ev].astype(y_dtype), loss, constant
        )

    @property
    def n_inputs(self) -> int:
        return self.x_train.shape[1]

    @property
    def n_outputs(self) -> int:
        if self.loss == "mse":
            return self.y_train.shape[1]
        return int(max(self.y_train.max(), self.y_eval.max()) + 1)

    def null_loss(self) -> float:
        if self.loss == "mse":
            mu = self.y_train.astype(np.float64).mean(axis=0)
            return float(np.mean((self.y_eval - mu) ** 2))
        k = self.n_outputs
        counts = np.bincount(self.y_train, minlength=k).astype(np.float64) + 1e-3
        logp = np.log(counts / counts.sum())
        return float(-logp[self.y_eval].mean())


def _zscore(A: np.ndarray, rows: np.ndarray):
    mu = A[rows].mean(axis=0)
    sd = A[rows].std(axis=0)
    constant = sd <= 1e-8 * np.maximum(1.0, np.abs(mu))
    out = (A - mu) / np.where(constant, 1.0, sd)
    out[:, constant] = 0.0
    return out, constant


def _masked(x: np.ndarray, drop) -> np.ndarray:
    if not len(drop):
        return x
    x = x.copy()
    x[:, list(drop)] = 0
    return x


# -- probe ensembles ------------------------------------------------------


class ProbeEnsemble:
    """R independently seeded probes, each on its own train/eval split.

    Giving every replica its own split (``cfg.split == "per-replica"``) puts
    eval-sampling noise into the spread of the deltas, not just init noise.

    ``baseline`` holds each replica's eval loss after the initial fit on all
    inputs. :meth:`refit` continues training copies of the current replicas
    with some inputs masked and reports loss changes against ``reference``;
    :meth:`commit` adopts such copies. With ``cfg.reference == "sequential"``
    the reference follows the committed replicas (consecutive sets);
    with ``"full"`` it stays at the full-input baseline.
    """

    def __init__(self, folds: list[Folds], cfg: ProbeConfig, seed: int | None = None):
        if len(folds) != cfg.repeats:
            raise ConfigError(f"need one fold per replica ({cfg.repeats}), got {len(folds)}")
        self.replica_folds = folds
        self.folds = folds[0]
        self.sequential = cfg.reference == "sequential"
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.nets: list[Network] = []
        self.optimizers: list[Optimizer] = []
        self.baseline: list[float] = []
        self.reference: list[float] = []
        self.dropped: list[int] = []
        self._calls = 0

    def _sgd(self, replica: int, salt: int) -> SgdConfig:
        seed = int(np.random.SeedSequence([self.seed, replica, salt]).generate_state(1)[0])
        return self.cfg.sgd.with_seed(seed)

    def eval_loss(self, net: Network, replica: int, drop=()) -> float:
        f = self.replica_folds[replica]
        return net.loss(_masked(f.x_eval, drop), f.y_eval, f.loss)

    def null_loss(self) -> float:
        return float(np.mean([f.null_loss() for f in self.replica_folds]))

    def fit(self) -> "ProbeEnsemble":
        self.nets, self.optimizers, self.baseline = [], [], []
        for r, f in enumerate(self.replica_folds):
            sgd = self._sgd(r, 0)
            net = make_mlp(f.n_inputs, f.n_outputs, self.cfg.hidden, seed=sgd.seed)
            opt = Optimizer(net, sgd)
            train_regressor(net, f.x_train, f.y_train, self.cfg.initial_iters, sgd, loss=f.loss, optimizer=opt)
            self.nets.append(net)
            self.optimizers.append(opt)
            self.baseline.append(self.eval_loss(net, r))
        self.reference = list(self.baseline)
        return self

    def refit(self, drop, iters: int) -> tuple[list[tuple[Network, Optimizer, float]], LossDelta]:
        drop = sorted(set(int(i) for i in drop))
        if len(drop) >= self.folds.n_inputs:
            raise DegenerateDropError("cannot mask every input column")
        self._calls += 1
        fitted, deltas = [], []
        for r, (base, base_opt) in enumerate(zip(self.nets, self.optimizers)):
            f = self.replica_folds[r]
            net = base.copy()
            opt = base_opt.clone(net)
            sgd = self._sgd(r, self._calls)
            train_regressor(net, _masked(f.x_train, drop), f.y_train, iters, sgd, loss=f.loss, optimizer=opt)
            loss = self.eval_loss(net, r, drop)
            fitted.append((net, opt, loss))
            deltas.append(loss - self.reference[r])
        return fitted, LossDelta(deltas)

    def commit(self, fitted: list[tuple[Network, Optimizer, float]], drop) -> None:
        self.nets = [net for net, _, _ in fitted]
        self.optimizers = [opt for _, opt, _ in fitted]
        if self.sequential:
            self.reference = [loss for _, _, loss in fitted]
        self.dropped = sorted(set(int(i) for i in drop))


def estimate_mi(X, Y, cfg: ProbeConfig, loss: str = "mse") -> MiEstimate:
    """Predictive-loss MI estimate from R independently trained probes.

    With ``loss="ce"`` Y holds integer class ids and the result is in nats.
    """
    X = np.asarray(X)
    if X.ndim == 2 and X.shape[1] == 0:
        folds = Folds.split(np.zeros((X.shape[0], 1)), Y, cfg, loss)
        nl = folds.null_loss()
        return MiEstimate([nl] * cfg.repeats, nl)
    ens = fit_probes(X, Y, cfg, loss)
    return MiEstimate(list(ens.baseline), ens.null_loss())


def replica_folds(X, Y, cfg: ProbeConfig, loss: str = "mse") -> list[Folds]:
    """One split per replica, or a single shared split, per ``cfg.split``."""
    if cfg.split == "shared":
        return [Folds.split(X, Y, cfg, loss)] * cfg.repeats
    return [Folds.split(X, Y, cfg, loss, fold_seed=cfg.fold_seed + r) for r in range(cfg.repeats)]


def fit_probes(X, Y, cfg: ProbeConfig, loss: str = "mse", seed: int | None = None) -> ProbeEnsemble:
    return ProbeEnsemble(replica_folds(X, Y, cfg, loss), cfg, seed).fit()


def masked_refit_delta(probes: ProbeEnsemble, drop_set, iters: int | None = None) -> LossDelta:
    """Mask ``drop_set``, refit every replica, and return loss increases.

    Positive deltas mean the masked inputs carried information the probes
    could not recover from the rest.
    """
    if iters is None:
        iters = probes.cfg.refit_budget(probes.folds.n_outputs)
    _, delta = probes.refit(drop_set, iters)
    return delta
