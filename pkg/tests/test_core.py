import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llp_lab.core import (
    Bag,
    BaggedDataset,
    ConfigError,
    DomainError,
    Example,
    FiniteHypothesisClass,
    Hypothesis,
    SyntheticDistribution,
    cap_count_prediction,
    decompose_binary,
    decompose_total,
    instance_loss,
    multiclass_brier,
    multiclass_cross_entropy,
    multiclass_from_binary,
)


def textbook(name, h, y):
    if name == "square":
        return (y - h) ** 2
    if name == "log":
        return -y * math.log(h) - (1 - y) * math.log(1 - h)
    return h - y * math.log(h)


def test_decompose_binary_reference_points():
    sq = decompose_binary("square")
    assert sq.f1(0.5) == 0.25 and sq.f2(0.5) == 0.0
    lg = decompose_binary("log")
    assert lg.f1(0.5) == pytest.approx(math.log(2), abs=1e-15)
    assert lg.f2(0.5) == pytest.approx(0.0, abs=1e-15)
    po = decompose_binary("poisson")
    assert po.f1(1.0) == 1.0 and po.f2(1.0) == 0.0


def test_unknown_loss_name_is_config_error():
    with pytest.raises(ConfigError):
        decompose_binary("hinge")
    with pytest.raises(ConfigError):
        decompose_total("log", 4)


def test_instance_loss_examples():
    assert instance_loss(decompose_binary("square"), 0.3, 1) == pytest.approx(0.49, abs=1e-15)
    assert instance_loss(decompose_binary("log"), 0.5, 0) == pytest.approx(math.log(2), abs=1e-15)
    po = decompose_binary("poisson", y_max=3)
    assert instance_loss(po, 2.0, 3) == pytest.approx(2.0 - 3.0 * math.log(2.0), abs=1e-14)
    assert instance_loss(po, 2.0, 3) == pytest.approx(-0.0794415, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["square", "log", "poisson"]), st.floats(1e-4, 1 - 1e-4), st.integers(0, 1))
def test_instance_loss_matches_textbook(name, h, y):
    loss = decompose_binary(name)
    assert instance_loss(loss, h, y) == pytest.approx(textbook(name, h, y), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name", ["square", "log", "poisson"])
def test_derivatives_match_central_differences(name):
    loss = decompose_binary(name)
    grid = np.linspace(0.02, 0.98, 50)
    step = 1e-6
    for f, df in ((loss.f1, loss.df1), (loss.f2, loss.df2)):
        fd = (f(grid + step) - f(grid - step)) / (2 * step)
        an = df(grid)
        err = np.abs(fd - an) / np.maximum(np.abs(an), 1.0)
        assert err.max() <= 1e-5


def test_log_loss_pole_is_domain_error_unless_clamped():
    lg = decompose_binary("log")
    with pytest.raises(DomainError):
        instance_loss(lg, 1.0, 1)
    with pytest.raises(DomainError):
        instance_loss(lg, 0.0, 0)
    clamped = decompose_binary("log", clamp=True)
    assert instance_loss(clamped, 1.0, 1) == pytest.approx(-math.log(1 - 1e-7), rel=1e-9)
    assert math.isfinite(instance_loss(clamped, 1.0, 0))


def test_label_outside_range_rejected():
    with pytest.raises(ConfigError):
        instance_loss(decompose_binary("square"), 0.5, 2)


def test_total_square_drops_label_square_term():
    loss = decompose_total("square", 4)
    h, y = 1.7, 3
    assert instance_loss(loss, h, y) == pytest.approx((y - h) ** 2 - y ** 2, abs=1e-12)
    assert loss.is_affine_total


def test_cap_count_prediction():
    out = cap_count_prediction([-1.0, 0.5, 9.0], 3.0)
    assert out[0] > 0 and out[1] == 0.5 and out[2] == 3.0


def test_example_label_range():
    Example(np.zeros(2), 1)
    with pytest.raises(ConfigError):
        Example(np.zeros(2), 2)


def test_bag_invariants():
    b = Bag(np.zeros((4, 1)), 0.75)
    assert b.k == 4 and not b.is_histogram
    h = Bag(np.zeros((4, 1)), [0.25, 0.75])
    assert h.is_histogram
    with pytest.raises(ConfigError):
        Bag(np.zeros((4, 1)), [0.3, 0.7])  # not multiples of 1/4
    with pytest.raises(ConfigError):
        Bag(np.zeros((4, 1)), [0.25, 0.5])  # does not sum to 1
    with pytest.raises(ConfigError):
        Bag(np.zeros((4, 1)), 1.5)
    Bag(np.zeros((2, 1)), 2.5, num_classes=4)


def test_bagged_dataset_equal_splits():
    ok = BaggedDataset(np.zeros(6), 2, indices=np.zeros((6, 2), int), split_tags=[0, 1, 2, 0, 1, 2])
    assert ok.m == 2 and len(ok.split("S2")) == 2
    with pytest.raises(ConfigError):
        BaggedDataset(np.zeros(4), 2, indices=np.zeros((4, 2), int), split_tags=[0, 1, 2, 0])


def test_multiclass_components_reproduce_loss():
    rng = np.random.default_rng(0)
    pred = rng.dirichlet(np.ones(3), size=20)
    labels = rng.integers(0, 3, size=20)
    for mloss in (multiclass_cross_entropy(3), multiclass_brier(3)):
        comps = mloss.components(pred)
        onehot = np.eye(3)[labels]
        assert np.array_equal(mloss(pred, labels), (onehot * comps).sum(axis=1))
    xent = multiclass_cross_entropy(3)(pred, labels)
    assert np.allclose(xent, -np.log(pred[np.arange(20), labels]), rtol=0, atol=1e-15)


def test_multiclass_from_binary_view():
    sq = decompose_binary("square")
    m = multiclass_from_binary(sq)
    h = np.array([0.2, 0.7])
    comps = m.components(np.stack([1 - h, h], axis=1))
    assert np.allclose(comps[:, 0], h ** 2) and np.allclose(comps[:, 1], (1 - h) ** 2)


def test_hypothesis_validation():
    Hypothesis([0.0, 1.0], "a")
    with pytest.raises(ConfigError):
        Hypothesis([0.5, 1.2], "a")
    Hypothesis([[0.5, 0.5], [0.2, 0.8]], "s", kind="simplex")
    with pytest.raises(ConfigError):
        Hypothesis([[0.5, 0.6]], "s", kind="simplex")
    with pytest.raises(ConfigError):
        FiniteHypothesisClass([])
    with pytest.raises(ConfigError):
        FiniteHypothesisClass([Hypothesis([0.5], "a"), Hypothesis([0.4], "a")])


def test_synthetic_distribution_validation_and_p():
    dist = SyntheticDistribution([[0.0], [1.0]], [0.25, 0.75], [0.2, 0.6])
    assert dist.p == pytest.approx(0.25 * 0.2 + 0.75 * 0.6, abs=1e-15)
    with pytest.raises(ConfigError):
        SyntheticDistribution([[0.0], [1.0]], [0.5, 0.6], [0.2, 0.6])
    with pytest.raises(ConfigError):
        SyntheticDistribution([[0.0]], [1.0], [[0.5, 0.6]])
    mc = SyntheticDistribution([[0.0], [1.0]], [0.5, 0.5], [[0.2, 0.8], [0.6, 0.4]])
    assert mc.num_classes == 2
    assert np.allclose(mc.class_marginal, [0.4, 0.6])
