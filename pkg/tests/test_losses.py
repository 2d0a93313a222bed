import math

import numpy as np
import pytest

from llp_lab.core import ConfigError, DomainError, decompose_binary, instance_loss
from llp_lab.losses import LogitModel, extended_loss, sandwich_scan, sigmoid, smooth_label_loss


def entropy(q):
    return -q * math.log(q) - (1 - q) * math.log(1 - q)


def kl(p, q):
    return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))


def test_extended_loss_examples():
    sq, lg = decompose_binary("square"), decompose_binary("log")
    assert extended_loss(sq, 0.4, 0.4) == pytest.approx(0.24, abs=1e-15)
    assert extended_loss(lg, 0.3, 0.3) == pytest.approx(entropy(0.3), abs=1e-14)
    assert extended_loss(lg, 0.3, 0.3) == pytest.approx(0.6109, abs=1e-4)
    gap = extended_loss(lg, 0.2, 0.5) - extended_loss(lg, 0.5, 0.5)
    assert gap == pytest.approx(kl(0.5, 0.2), abs=1e-14)


def test_extended_loss_rejects_second_argument_out_of_range():
    with pytest.raises(ConfigError):
        extended_loss(decompose_binary("log"), 0.5, 1.2)
    with pytest.raises(DomainError):
        extended_loss(decompose_binary("log"), 0.0, 0.5)


@pytest.mark.parametrize("name", ["square", "log"])
def test_extended_loss_equals_instance_loss_on_labels(name):
    loss = decompose_binary(name)
    h = np.linspace(0.01, 0.99, 37)
    for y in (0, 1):
        assert np.array_equal(extended_loss(loss, h, np.full_like(h, y)), instance_loss(loss, h, y))


def test_log_loss_gap_is_nonnegative_kl():
    lg = decompose_binary("log")
    pts = np.linspace(0.01, 0.99, 50)
    a, b = np.meshgrid(pts, pts, indexing="ij")
    gap = extended_loss(lg, a, b) - extended_loss(lg, b, b)
    off = ~np.eye(50, dtype=bool)
    assert np.all(gap[off] > 0)
    assert np.allclose(np.diag(gap), 0.0, atol=1e-15)


def test_smooth_label_loss():
    lg = decompose_binary("log")
    for h, y in ((0.3, 0), (0.8, 1)):
        assert smooth_label_loss(lg, h, y, 0.0) == instance_loss(lg, h, y)
    for y in (0, 1):
        assert smooth_label_loss(lg, 0.5, y, 0.1) == pytest.approx(math.log(2), abs=1e-15)
    expect = -0.95 * math.log(0.8) - 0.05 * math.log(0.2)
    assert smooth_label_loss(lg, 0.8, 1, 0.1) == pytest.approx(expect, abs=1e-14)
    with pytest.raises(ConfigError):
        smooth_label_loss(lg, 0.8, 1, 1.0)


def test_sandwich_square_f2_ratio_is_constant_half():
    rep = sandwich_scan(decompose_binary("square"))
    r2 = rep.ratios[2][np.isfinite(rep.ratios[2])]
    assert r2.size == 101 * 101 - 101
    assert np.max(np.abs(r2 - 0.5)) <= 1e-12
    assert rep.implied_constants(2) == pytest.approx((0.5, 0.5), abs=1e-12)
    # f1 ratio is 2 / (a + b)^2, so its minimum over a, b < 1 stays above 1/2
    c1, _ = rep.implied_constants(1)
    a, b = rep.grid[:, 0], rep.grid[:, 1]
    ok = np.isfinite(rep.ratios[1])
    assert np.allclose(rep.ratios[1][ok], 2.0 / (a[ok] + b[ok]) ** 2, rtol=1e-9)
    assert c1 > 0.5


def test_sandwich_log_loss_lower_constant_shrinks_with_logit_bound():
    lg = decompose_binary("log")
    lows = [sandwich_scan(lg, logit_bound=B, count=41).implied_constants(2)[0] for B in (1, 2, 4, 8, 12)]
    assert all(x > 0 for x in lows)
    assert all(b < a for a, b in zip(lows, lows[1:]))
    assert lows[-1] < 1e-3


def test_sandwich_identical_pairs_all_skipped():
    rep = sandwich_scan(decompose_binary("square"), logit_bound=0.0, count=5)
    assert np.all(np.isnan(rep.ratios[1])) and np.all(np.isnan(rep.ratios[2]))
    assert rep.skipped[1].shape == (25, 2) and rep.skipped[2].shape == (25, 2)


def test_logit_model():
    m = LogitModel([1.0, -2.0], 0.5)
    x = np.array([[0.3, 0.1], [1.0, 2.0]])
    assert np.allclose(m.predict(x), 1 / (1 + np.exp(-(x @ [1.0, -2.0] + 0.5))))
    assert np.all((m.predict(x * 1000) >= 0) & (m.predict(x * 1000) <= 1))
    with pytest.raises(ConfigError):
        LogitModel([np.inf], 0.0)
    assert sigmoid(0.0) == 0.5
