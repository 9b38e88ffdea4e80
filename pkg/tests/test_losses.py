import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmfusion import losses as L
from mmfusion.tensor import ConfigError, Tensor

from gradcheck import numeric_grad, rel_error

mpmath.mp.dps = 50


def mp_loss(x: float, z: int, q: float) -> float:
    """-q z log s(x) - (1 - z) log(1 - s(x)) at 50 significant digits."""
    x = mpmath.mpf(x)
    s = 1 / (1 + mpmath.exp(-x))
    return float(-q * z * mpmath.log(s) - (1 - z) * mpmath.log(1 - s))


GRID = np.arange(-20, 20.0001, 0.5)


@pytest.mark.parametrize("q", [1, 5, 7, 10, 30])
@pytest.mark.parametrize("z", [0, 1])
def test_matches_high_precision_reference(z, q):
    ours = L.elementwise_loss(GRID, np.full_like(GRID, z), q)
    ref = np.array([mp_loss(x, z, q) for x in GRID])
    assert np.max(np.abs(ours - ref)) < 1e-9


def test_worked_values():
    assert L.elementwise_loss(0.0, 1, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert L.elementwise_loss(0.0, 1, 30) == pytest.approx(30 * math.log(2), abs=1e-12)
    assert L.elementwise_loss(2.0, 1, 5) == pytest.approx(0.634640, abs=5e-7)
    assert L.elementwise_loss(2.0, 1, 5) == pytest.approx(mp_loss(2.0, 1, 5), abs=1e-12)


def test_q_one_is_plain_sigmoid_cross_entropy():
    x = np.linspace(-30, 30, 241)
    for z in (0, 1):
        ref = np.array([float(mpmath.log(1 + mpmath.exp(-xi)) if z else mpmath.log(1 + mpmath.exp(xi))) for xi in x])
        assert np.max(np.abs(L.elementwise_loss(x, np.full_like(x, z), 1.0) - ref)) < 1e-9


@pytest.mark.parametrize("q", [1, 5, 30])
def test_both_algebraic_forms_agree(q):
    for z in (0, 1):
        assert L.loss_form_equivalence_check(GRID, z, q) < 1e-9


def test_negative_targets_ignore_q():
    a = L.elementwise_loss(GRID, np.zeros_like(GRID), 1.0)
    for q in (5, 7, 30):
        assert np.array_equal(L.elementwise_loss(GRID, np.zeros_like(GRID), q), a)
        assert np.array_equal(L.naive_form(GRID, np.zeros_like(GRID), q), L.naive_form(GRID, np.zeros_like(GRID), 1.0))


def test_confident_positive_costs_nothing():
    for q in (1, 5, 30):
        assert L.elementwise_loss(20.0, 1, q) < 1e-7 * q


def test_equivalence_check_rejects_unrepresentable_grid():
    with pytest.raises(ValueError):
        L.loss_form_equivalence_check([25.0], 1, 1.0)


def test_stable_at_extreme_logits():
    x = np.array([-1e4, 1e4])
    for z in (0, 1):
        out = L.elementwise_loss(x, np.full(2, z), 30.0)
        assert np.all(np.isfinite(out))
    loss = L.weighted_sigmoid_ce(Tensor(np.array([[-1e4, 1e4]], np.float32)), [[1, 0]], 30.0)
    assert np.isfinite(loss.item())


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.sampled_from([0, 1]), st.floats(0.01, 100))
def test_non_negative_and_monotone_in_q(x, z, q):
    lo = L.elementwise_loss(x, z, q)
    hi = L.elementwise_loss(x, z, q * 1.5)
    assert lo >= 0
    if z == 1:
        assert hi > lo or lo == 0
    else:
        assert hi == lo


def test_reduction_is_mean_over_batch_sum_over_classes():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3))
    z = (rng.random((4, 3)) < 0.4).astype(float)
    per = L.elementwise_loss(x, z, 5.0)
    assert L.weighted_sigmoid_ce(Tensor(x), z, 5.0).item() == pytest.approx(per.sum() / 4, rel=1e-12)
    assert L.weighted_sigmoid_ce(Tensor(x), z, 5.0, "sum").item() == pytest.approx(per.sum(), rel=1e-12)


def test_gradient_matches_finite_differences():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        x = 4 * rng.standard_normal((3, 5))
        z = (rng.random((3, 5)) < 0.5).astype(float)
        q = float(rng.uniform(0.2, 30))
        t = Tensor(x.copy(), requires_grad=True)
        L.weighted_sigmoid_ce(t, z, q).backward()
        num = numeric_grad(lambda: L.weighted_sigmoid_ce(Tensor(x), z, q).item(), x)
        assert rel_error(t.grad, num) < 1e-4


def test_closed_form_gradient():
    x = np.linspace(-8, 8, 33)
    for z in (0, 1):
        for q in (1, 5, 30):
            s = 1 / (1 + np.exp(-x))
            assert np.allclose(L.elementwise_grad(x, np.full_like(x, z), q), (1 - z) * s - q * z * (1 - s))


def test_invalid_inputs():
    with pytest.raises(ConfigError):
        L.weighted_sigmoid_ce(Tensor(np.zeros((1, 2))), [[0, 1]], q=0)
    with pytest.raises(L.TargetError):
        L.weighted_sigmoid_ce(Tensor(np.zeros((1, 2))), [[0, 0.5]])
    with pytest.raises(L.TargetError):
        L.weighted_sigmoid_ce(Tensor(np.zeros((1, 2))), [[0, 1, 1]])
