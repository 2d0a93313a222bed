import json
import logging
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from llp_lab.bagging import LabeledDataset, bag_support_sample, drifting_stream, logistic_task
from llp_lab.core import Bag, ConfigError, SyntheticDistribution
from llp_lab.llp_train.bag_losses import (
    EASYLLP,
    GENERALUPM,
    LLP_LOSSES,
    PM,
    CrossEntropy,
    easyllp_loss,
    easyllp_objective,
    generalupm_loss,
    generalupm_objective,
    objective,
    pm_loss,
    pm_objective,
)
from llp_lab.llp_train.loops import (
    LR_GRID,
    SweepError,
    TrainConfig,
    TrainResult,
    TrainState,
    lr_sweep,
    train_batch,
    train_online,
)
from llp_lab.llp_train.models import LINEAR, MLP, Model


def logit(q):
    return math.log(q / (1 - q))


def entropy(q):
    return -q * math.log(q) - (1 - q) * math.log(1 - q)


def split(data, n_train):
    return data.take(np.arange(n_train)), data.take(np.arange(n_train, len(data)))


def fd_check(model, X, B, k, alphas, name, base, p=0.4, h=1e-5):
    def value(params):
        logits = model.logits(X, params).reshape(B, k)
        return objective(name, logits, alphas, p, base)[0].mean()

    logits, cache = model.forward(X)
    _, g = objective(name, logits.reshape(B, k), alphas, p, base)
    analytic = model.backward(cache, g.ravel())
    numeric = np.empty_like(analytic)
    for i in range(model.size):
        e = np.zeros(model.size)
        e[i] = h
        numeric[i] = (value(model.params + e) - value(model.params - e)) / (2 * h)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


@pytest.mark.parametrize("name", LLP_LOSSES)
@pytest.mark.parametrize("kind", [LINEAR, MLP])
@pytest.mark.parametrize("smoothing", [0.0, 0.1])
def test_gradients_match_finite_differences(name, kind, smoothing):
    rng = np.random.default_rng([7, LLP_LOSSES.index(name), smoothing > 0, kind == MLP])
    B, k, d = 3, 4, 3
    base = CrossEntropy(smoothing)
    worst = 0.0
    for _ in range(20):
        model = Model.init(kind, d, rng, width=5)
        model.params += rng.normal(0.0, 0.5, model.size)
        X = rng.normal(size=(B * k, d))
        alphas = rng.integers(0, k + 1, B) / k
        worst = max(worst, fd_check(model, X, B, k, alphas, name, base))
    assert worst <= 1e-5


def test_pm_examples():
    base = CrossEntropy(0.0)
    a = np.array([[0.3, -1.2, 2.0]])
    for y in (0, 1):
        v, _ = pm_objective(a[:, :1], [y], base)
        assert v[0] == pytest.approx(base.on_logit(a[0, 0], y), abs=1e-12)
    q = 0.3
    v, _ = pm_objective(np.full((1, 5), logit(q)), [q], base)
    assert v[0] == pytest.approx(entropy(q), abs=1e-12)


def test_easyllp_examples():
    base = CrossEntropy(0.1)
    a = np.array([[0.7], [-0.4]])
    v, _ = easyllp_objective(a, [1.0, 0.0], 0.3, base)
    assert np.allclose(v, [base.on_logit(0.7, 1), base.on_logit(-0.4, 0)], atol=1e-14)
    p = 0.35
    a4 = np.array([[0.2, -0.5, 1.1, 0.0]])
    v, _ = easyllp_objective(a4, [p], p, base)
    expect = np.mean(p * base.on_logit(a4, 1) + (1 - p) * base.on_logit(a4, 0))
    assert v[0] == pytest.approx(expect, abs=1e-14)


class ZeroF2(CrossEntropy):
    def f2(self, a):
        return np.zeros_like(np.asarray(a, dtype=float))

    def df2(self, a):
        return np.zeros_like(np.asarray(a, dtype=float))


def test_generalupm_zero_f2_gives_leave_one_out_f1():
    base = ZeroF2()
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 3))
    f1 = base.f1(a)
    loo = np.array([np.delete(f1, b, axis=0).mean() for b in range(4)])
    v1, _ = generalupm_objective(a, [0.0, 1.0, 0.5, 0.2], 0.4, base)
    v2, _ = generalupm_objective(a, [1.0, 0.0, 0.1, 0.9], 0.4, base)
    assert np.allclose(v1, loo, atol=1e-14) and np.array_equal(v1, v2)


def test_generalupm_two_identical_bags():
    base = CrossEntropy(0.1)
    row = np.array([0.3, -0.8, 1.5])
    a = np.vstack([row, row])
    p = 0.4
    v, _ = generalupm_objective(a, [0.7, 0.7], p, base)
    own = np.mean(base.f1(row) + p * base.f2(row))
    assert np.allclose(v, own, atol=1e-14)


def test_generalupm_needs_two_bags():
    with pytest.raises(ConfigError):
        generalupm_objective(np.zeros((1, 4)), [0.5], 0.5, CrossEntropy())


def test_stop_grad_changes_gradient_only():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5, 4))
    alphas = rng.integers(0, 5, 5) / 4
    v1, g1 = generalupm_objective(a, alphas, 0.5, CrossEntropy(), False)
    v2, g2 = generalupm_objective(a, alphas, 0.5, CrossEntropy(), True)
    assert np.array_equal(v1, v2) and not np.allclose(g1, g2)


def test_bag_level_wrappers_agree_with_objectives():
    rng = np.random.default_rng(2)
    model = Model.init(LINEAR, 3, rng)
    bags = [Bag(rng.normal(size=(4, 3)), float(rng.integers(0, 5)) / 4) for _ in range(3)]
    base = CrossEntropy(0.1)
    v, g = pm_loss(model, bags[0], base)
    assert v == pytest.approx(pm_objective(model.logits(bags[0].members)[None, :], [bags[0].aggregate], base)[0][0])
    assert g.shape == (4,)
    v, _ = easyllp_loss(model, bags[0], 0.5, base)
    assert np.isfinite(v)
    vals, g = generalupm_loss(model, bags, 0.5, base)
    assert vals.shape == (3,) and g.shape == (4,)


def frozen_setup():
    dist = SyntheticDistribution([[0.0], [1.0], [2.0]], [0.3, 0.5, 0.2], [0.1, 0.5, 0.85])
    a = np.array([-1.2, 0.1, 1.4])
    base = CrossEntropy(0.0)
    exact = dist.expect(base.f1(a) + dist.eta * base.f2(a))
    p = dist.expect(dist.eta)
    return dist, a, base, exact, p


def batch_means(name, dist, a, base, p, k, batches, B, seed):
    rng = np.random.default_rng(seed)
    out = np.empty(batches)
    for t in range(batches):
        idx, labels = bag_support_sample(dist, k, B, rng)
        out[t] = objective(name, a[idx], labels.mean(axis=1), p, base)[0].mean()
    return out


@pytest.mark.parametrize("name,k", [(GENERALUPM, 1), (GENERALUPM, 8), (EASYLLP, 8)])
def test_frozen_model_losses_are_unbiased(name, k):
    dist, a, base, exact, p = frozen_setup()
    for seed in (0, 1):
        m = batch_means(name, dist, a, base, p, k, 4000, 16, seed)
        se = m.std(ddof=1) / math.sqrt(m.size)
        if abs(m.mean() - exact) <= 3 * se:
            break
    assert abs(m.mean() - exact) <= 3 * se


def test_easyllp_variance_grows_with_k():
    # the growth is about k p (1 - p) E[f2]^2, so use logits far from zero mean
    dist, _, base, _, p = frozen_setup()
    a = np.array([0.8, 1.5, 2.5])
    var = {}
    for k in (4, 64):
        rng = np.random.default_rng(k)
        idx, labels = bag_support_sample(dist, k, 20000, rng)
        var[k] = easyllp_objective(a[idx], labels.mean(axis=1), p, base)[0].var()
    assert var[64] / var[4] >= 4


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(bag_size=4, batch_examples=4)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(llp_loss="mean")
    assert TrainConfig(bag_size=16).bags_per_batch == 256


def small_task(seed=0):
    return split(logistic_task(3000, 4, seed), 2400)


def test_zero_learning_rate_keeps_parameters():
    tr, te = small_task()
    cfg = TrainConfig(bag_size=4, epochs=3, learning_rate=0.0, batch_examples=64)
    res = train_batch(tr, cfg, te)
    init = Model.init(LINEAR, 4, np.random.default_rng([cfg.seed, 0])).params
    assert np.array_equal(res.state.params, init)
    assert len({r["log_loss"] for r in res.history}) == 1


@pytest.mark.parametrize("name", LLP_LOSSES)
def test_same_seed_same_history_and_exact_resume(name):
    tr, te = small_task()
    cfg = TrainConfig(llp_loss=name, bag_size=8, epochs=4, learning_rate=1e-2, batch_examples=128, seed=3)
    full = train_batch(tr, cfg, te)
    again = train_batch(tr, cfg, te)
    assert json.dumps(full.state.to_dict()) == json.dumps(again.state.to_dict())
    half = train_batch(tr, TrainConfig(**{**cfg.__dict__, "epochs": 2}), te)
    saved = TrainState.from_dict(json.loads(json.dumps(half.state.to_dict())))
    resumed = train_batch(tr, cfg, te, state=saved)
    assert np.array_equal(resumed.state.params, full.state.params)
    assert resumed.history == full.history
    assert full.best_step in range(1, 5)


def test_k1_matches_supervised_oracle():
    tr, te = split(logistic_task(12000, 2, 0, weight_scale=6.0), 10000)
    base = CrossEntropy(0.1)
    X = np.c_[tr.features, np.ones(len(tr))]

    def risk(w):
        a = X @ w
        return base.on_logit(a, tr.labels).mean(), X.T @ (base.df1(a) + tr.labels * base.df2(a)) / len(tr)

    w = minimize(risk, np.zeros(3), jac=True, method="BFGS").x
    q = 1 / (1 + np.exp(-(np.c_[te.features, np.ones(len(te))] @ w)))
    ref = -np.mean(te.labels * np.log(q) + (1 - te.labels) * np.log(1 - q))
    for name in (GENERALUPM, EASYLLP):
        cfg = TrainConfig(llp_loss=name, bag_size=1, epochs=10, learning_rate=1e-2, batch_examples=64)
        assert abs(train_batch(tr, cfg, te).history[-1]["log_loss"] - ref) <= 0.02


def test_online_evaluates_before_updating():
    stream = logistic_task(4096, 4, 1)
    first = set()
    for name in LLP_LOSSES:
        res = train_online(stream, TrainConfig(llp_loss=name, bag_size=8, batch_examples=128), chunk_size=1024)
        first.add((res.history[0]["log_loss"], res.history[0]["auc"]))
        assert len(res.history) == 4
    assert len(first) == 1


def test_online_chunk_p_within_binomial_noise():
    rng = np.random.default_rng(4)
    n, p = 8 * 4096, 0.3
    stream = LabeledDataset(rng.normal(size=(n, 3)), (rng.random(n) < p).astype(int))
    res = train_online(stream, TrainConfig(bag_size=8, smoothing=0.0), chunk_size=4096)
    se = math.sqrt(p * (1 - p) / 4096)
    assert all(abs(r["p_hat"] - p) <= 3 * se for r in res.history)


def test_online_skips_short_chunk(caplog):
    stream = logistic_task(1027, 3, 0)
    with caplog.at_level(logging.WARNING):
        res = train_online(stream, TrainConfig(bag_size=8, batch_examples=64), chunk_size=512)
    assert [r["step"] for r in res.history] == [0, 1]
    assert "skipped" in caplog.text


def test_online_chunk_p_beats_global_p_on_drift():
    wins = 0
    for s in range(5):
        stream = drifting_stream(16 * 4096, 5, s)
        cfg = TrainConfig(bag_size=8, smoothing=0.0, learning_rate=1e-2, batch_examples=256, seed=s)
        local = train_online(stream, cfg, chunk_size=4096, p_mode="chunk").best_log_loss
        fixed = train_online(stream, cfg, chunk_size=4096, p_mode="global").best_log_loss
        wins += local < fixed
    assert wins == 5


def test_lr_grid_endpoints_and_spacing():
    assert LR_GRID.size == 16
    assert LR_GRID[0] == pytest.approx(1e-7, rel=1e-12) and LR_GRID[-1] == pytest.approx(1e-1, rel=1e-12)
    ratios = LR_GRID[1:] / LR_GRID[:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)


def test_single_point_grid_and_all_diverged():
    tr, te = small_task()
    cfg = TrainConfig(llp_loss=PM, bag_size=4, epochs=1, batch_examples=64)
    assert lr_sweep(tr, cfg, te, grid=[3e-3]).best_lr == 3e-3

    def boom(c):
        state = TrainState(np.zeros(5), {}, diverged=True, history=[{"step": 1, "log_loss": float("nan")}])
        return TrainResult(state, float("nan"), None)

    with pytest.raises(SweepError):
        lr_sweep(tr, cfg, te, grid=[1e-3, 1e-2], runner=boom)


def test_sweep_on_convex_task_picks_interior_lr():
    tr, te = split(logistic_task(6000, 1, 0), 5000)
    cfg = TrainConfig(llp_loss=PM, bag_size=1, epochs=2, smoothing=0.0, batch_examples=8)
    res = lr_sweep(tr, cfg, te)
    assert LR_GRID[0] < res.best_lr < LR_GRID[-1]
