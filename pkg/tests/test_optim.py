"""AdamW behaviour: descent, moments, convergence on a quadratic."""

import numpy as np
import pytest

from heightbins.errors import NumericError
from heightbins.optim import AdamW, OptimizerState
from heightbins.tensor import Tape, Tensor, mul, sub, tsum


def quadratic_loss(w, target, scale):
    d = sub(w, target)
    return tsum(mul(scale, mul(d, d)))


def test_zero_grad_zero_decay_leaves_params_unchanged():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW([("w", w)], lr=0.1)
    w.grad = np.zeros(2)
    before = w.data.copy()
    opt.step()
    np.testing.assert_array_equal(w.data, before)


def test_none_grad_is_skipped():
    w = Tensor(np.array([3.0]), requires_grad=True)
    opt = AdamW([("w", w)], lr=0.1, weight_decay=0.5)
    opt.step()
    assert w.data[0] == 3.0
    assert opt.state.step_count == 1


def test_single_step_descends():
    # f(w) = w^2 at w=1, lr=0.1: |w| must decrease
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([("w", w)], lr=0.1)
    with Tape() as tape:
        loss = tsum(mul(w, w))
    tape.backward(loss)
    opt.step()
    assert abs(w.data[0]) < 1.0


def test_quadratic_reaches_tiny_gradient_in_200_steps():
    # 2-parameter quadratic with distinct curvatures; damped momentum
    w = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    target = Tensor(np.array([1.0, 2.0]))
    scale = Tensor(np.array([2.0, 0.5]))
    opt = AdamW([("w", w)], lr=0.2, betas=(0.5, 0.999))
    for _ in range(200):
        opt.zero_grad()
        with Tape() as tape:
            loss = quadratic_loss(w, target, scale)
        tape.backward(loss)
        opt.step()
    grad_at_end = 2.0 * scale.data * (w.data - target.data)
    assert np.max(np.abs(grad_at_end)) < 1e-6


def test_decoupled_weight_decay_shrinks_without_gradient_signal():
    # zero loss gradient but nonzero decay: w decays toward 0 geometrically
    w = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([("w", w)], lr=0.1, weight_decay=0.5)
    w.grad = np.zeros(1)
    opt.step()
    # update = lr * wd * w = 0.1*0.5*2 = 0.1
    assert w.data[0] == pytest.approx(1.9)


def test_bias_correction_first_step_magnitude():
    # first step of Adam moves by ~lr regardless of gradient scale
    for gscale in (1e-3, 1.0, 1e3):
        w = Tensor(np.array([0.0]), requires_grad=True)
        opt = AdamW([("w", w)], lr=0.25)
        w.grad = np.array([gscale])
        opt.step()
        assert w.data[0] == pytest.approx(-0.25, rel=1e-4)


def test_nonfinite_gradient_names_parameter():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([("layer.weight", w)], lr=0.1)
    w.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="layer.weight"):
        opt.step()


def test_step_count_strictly_increases_and_moments_match_shapes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    opt = AdamW([("a", a), ("b", b)], lr=0.1)
    assert isinstance(opt.state, OptimizerState)
    assert opt.state.m["a"].shape == (2, 3) and opt.state.v["b"].shape == (4,)
    counts = []
    for _ in range(3):
        a.grad = np.ones((2, 3))
        b.grad = np.ones(4)
        opt.step()
        counts.append(opt.state.step_count)
    assert counts == [1, 2, 3]
