import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mipp.engine import ConfigError, InsufficientSamplesError, SgdConfig
from mipp.experiments import desk_probe_config
from mipp.probe import (
    DegenerateDropError,
    Folds,
    LossDelta,
    MiEstimate,
    ProbeConfig,
    estimate_mi,
    fit_probes,
    keep_confidence,
    masked_refit_delta,
    null_loss,
    replica_folds,
)

FAST = desk_probe_config()
# toy probes: refits long enough to re-route a masked duplicate
TOY = desk_probe_config(refit_iters=60, sgd=SgdConfig(3e-3, 0.9, 0.0, 256, optimizer="adam"))


def test_null_loss_examples():
    assert null_loss(np.full((10, 3), 2.5)) == 0.0
    assert null_loss(np.array([[0.0], [2.0]])) == pytest.approx(1.0)
    Y = np.random.default_rng(0).normal(size=(2048, 4))
    assert null_loss(Y) == pytest.approx(1.0, abs=0.05)


def test_probe_config_invariants():
    for bad in ({"repeats": 1}, {"initial_iters": 0}, {"reference": "x"}, {"split": "x"}, {"eval_fraction": 1.0}):
        with pytest.raises(ConfigError):
            ProbeConfig(**bad)
    cfg = ProbeConfig()
    assert (cfg.repeats, cfg.initial_iters, cfg.refit_iters, cfg.ordering_iters, cfg.hidden) == (3, 1500, 150, 35, (256, 256))
    assert cfg.refit_budget(255) == 150 and cfg.refit_budget(256) == 20


def test_keep_confidence_examples():
    assert keep_confidence(LossDelta([1.0, 1.0, 1.0])) == 1.0
    assert keep_confidence(LossDelta([0.0, 0.0, 0.0])) == 0.0
    assert keep_confidence(LossDelta([-0.3, 0.0, 0.3])) == pytest.approx(0.5)
    assert keep_confidence(LossDelta([0.9, 1.0, 1.1])) == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(ConfigError):
        keep_confidence(LossDelta([1.0]))


@given(
    mean=st.floats(1e-3, 10),
    spread=st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    k=st.floats(1.1, 5),
)
def test_keep_confidence_monotone(mean, spread, k):
    noise = np.asarray(spread) - np.mean(spread)
    assume(noise.std() > 1e-3)
    base = keep_confidence(LossDelta(list(mean + noise)))
    assert 0.0 <= base <= 1.0
    assert keep_confidence(LossDelta(list(k * mean + noise))) >= base
    assert keep_confidence(LossDelta(list(mean + k * noise))) <= base


def test_mi_estimate_fields():
    est = MiEstimate([0.2, 0.4, 0.3], 1.0)
    assert est.mean == pytest.approx(0.3) and est.std == pytest.approx(0.1)
    assert est.mi_value == pytest.approx(0.7)
    assert MiEstimate([1.2, 1.1], 1.0).mi_value == 0.0


def test_copy_target_high_mi():
    X = np.random.default_rng(0).normal(size=(1500, 3))
    est = estimate_mi(X, X.copy(), desk_probe_config(initial_iters=600))
    assert est.mi_value > 0.9 * est.null_loss
    assert len(est.repeats) == 3 and est.std >= 0


def test_independent_target_low_mi():
    rng = np.random.default_rng(1)
    est = estimate_mi(rng.normal(size=(1500, 3)), rng.normal(size=(1500, 2)), FAST)
    assert est.mi_value < 0.05 * est.null_loss


def test_empty_inputs_zero_mi():
    est = estimate_mi(np.zeros((100, 0)), np.random.default_rng(0).normal(size=(100, 2)), FAST)
    assert est.mi_value == 0.0


def test_too_few_eval_rows():
    with pytest.raises(InsufficientSamplesError):
        estimate_mi(np.ones((40, 2)), np.ones((40, 1)), FAST)


def test_folds_standardize_with_train_stats():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(5, 3, 500), np.full(500, 7.0)])
    f = Folds.split(X, X[:, :1], FAST)
    assert f.x_train[:, 0].mean() == pytest.approx(0, abs=1e-5)
    assert f.x_train[:, 0].std() == pytest.approx(1, abs=1e-3)
    assert f.constant_inputs.tolist() == [False, True]
    assert np.all(f.x_train[:, 1] == 0) and np.all(f.x_eval[:, 1] == 0)
    assert len(f.x_eval) == 100


def test_replica_folds_split_modes():
    X = np.random.default_rng(0).normal(size=(200, 2))
    per = replica_folds(X, X, FAST)
    assert not np.array_equal(per[0].x_eval, per[1].x_eval)
    shared = replica_folds(X, X, desk_probe_config(split="shared"))
    assert all(f is shared[0] for f in shared)


@pytest.fixture(scope="module")
def dup_probes():
    rng = np.random.default_rng(0)
    A, N = rng.normal(size=(1024, 1)), rng.normal(size=(1024, 1))
    Y = np.hstack([np.tanh(A), A**2])
    return fit_probes(np.hstack([A, A, N]), Y, TOY)


def test_empty_drop_does_not_hurt(dup_probes):
    delta = masked_refit_delta(dup_probes, [])
    assert delta.mean <= 2 * delta.std / np.sqrt(3) + 1e-6


def test_duplicate_drop_indistinguishable(dup_probes):
    delta = masked_refit_delta(dup_probes, [0])
    assert abs(delta.mean) < 2 * delta.std


def test_single_informative_column_loss():
    rng = np.random.default_rng(2)
    A, N = rng.normal(size=(1500, 1)), rng.normal(size=(1500, 1))
    Y = np.tanh(2 * A) + 0.1 * rng.normal(size=(1500, 1))
    probes = fit_probes(np.hstack([A, N]), Y, desk_probe_config(initial_iters=400))
    delta = masked_refit_delta(probes, [0])
    expected = probes.null_loss() - np.mean(probes.baseline)
    assert delta.mean == pytest.approx(expected, rel=0.15)


def test_drop_everything_is_degenerate(dup_probes):
    with pytest.raises(DegenerateDropError):
        masked_refit_delta(dup_probes, [0, 1, 2])


def test_probe_fit_deterministic():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(300, 3)), rng.normal(size=(300, 1))
    a, b = fit_probes(X, Y, FAST, seed=9), fit_probes(X, Y, FAST, seed=9)
    assert a.baseline == b.baseline
    assert masked_refit_delta(a, [1]).repeats == masked_refit_delta(b, [1]).repeats


def test_mi_monotone_in_nested_sets():
    cfg = desk_probe_config(hidden=(8, 8), initial_iters=200)
    ok = 0
    trials = 20
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(600, 4))
        Y = np.column_stack([X[:, 0] * X[:, 1], np.sin(X[:, 2])]) + 0.1 * rng.normal(size=(600, 2))
        small = estimate_mi(X[:, :2], Y, cfg)
        big = estimate_mi(X, Y, cfg)
        pooled = np.sqrt((small.std**2 + big.std**2) / 2)
        ok += big.mi_value >= small.mi_value - 2 * pooled
    assert ok >= 0.95 * trials
