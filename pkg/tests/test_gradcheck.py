"""Tests for the finite-difference checker itself, including a negative control."""

import numpy as np
import pytest

from fvig.gradcheck import grad_check
from fvig.tensor import Tensor, softmax_lastdim
from fvig.train import cross_entropy


def test_square_function():
    report = grad_check(lambda t: (t * t).sum(), np.array([3.0]))
    assert report.max_rel_error < 1e-8
    assert report.passed


def test_softmax_cross_entropy_composite():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 6))
    labels = rng.integers(0, 6, size=4)
    report = grad_check(lambda t: cross_entropy(t, labels), logits, h=1e-6, tol=1e-6)
    assert report.passed, report


def test_deliberately_wrong_backward_is_reported():
    def broken_square(t: Tensor) -> Tensor:
        def rule(g, pending):
            from fvig.tensor import _send

            _send(pending, t, g * 3.0 * t.data)  # wrong: derivative of x^2 is 2x

        return Tensor._result(t.data * t.data, (t,), rule).sum()

    report = grad_check(broken_square, np.array([2.0, -1.5]), tol=1e-4)
    assert not report.passed
    assert report.max_rel_error > 0.1
    assert report.worst_index in (0, 1)
    # the report names the analytic and numeric values at the worst index
    assert report.analytic_at_worst != pytest.approx(report.numeric_at_worst, rel=0.01)


def test_indices_restrict_probes():
    report = grad_check(lambda t: (t * t).sum(), np.arange(10.0), indices=[2, 7])
    assert report.num_checked == 2


def test_zero_gradient_function_passes():
    # f ignores x entirely: analytic and numeric gradients are both zero
    report = grad_check(lambda t: (t * 0.0).sum() + 5.0, np.array([1.0, 2.0]))
    assert report.passed


def test_bad_step_size():
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), np.zeros(2), h=0.0)


def test_softmax_rows_used_as_loss():
    rng = np.random.default_rng(1)
    w = Tensor(rng.normal(size=(2, 5)))
    report = grad_check(lambda t: (softmax_lastdim(t) * w).sum(), rng.normal(size=(2, 5)), tol=1e-6)
    assert report.passed
