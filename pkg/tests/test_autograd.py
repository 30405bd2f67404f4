import numpy as np
import pytest

from app.autograd import ops
from app.autograd.gradcheck import DENOMINATOR_FLOOR, OP_CHECKS, grad_check, relative_error
from app.autograd.tensor import Parameter, Tape, Tensor, backward, no_tape
from app.utils.exceptions import AutogradError


def test_tape_records_only_when_grad_is_needed():
    a = Tensor(np.ones((1, 1, 1, 2, 2)))
    b = Tensor(np.ones((1, 1, 1, 2, 2)))
    with Tape() as tape:
        ops.add(a, b)
    assert len(tape) == 0
    a.requires_grad = True
    with Tape() as tape:
        ops.add(a, b)
    assert len(tape) == 1


def test_no_tape_suspends_recording():
    p = Parameter("p", np.ones((1, 1, 1, 1, 1)))
    with Tape() as tape:
        with no_tape():
            ops.relu(p)
    assert len(tape) == 0


def test_backward_accumulates_over_shared_inputs():
    p = Parameter("p", np.array([[1.0, -2.0]]))
    w = Parameter("w", np.eye(2))
    b = Parameter("b", np.zeros(2))
    with Tape() as tape:
        y = ops.linear(p, w, b)
        loss = ops.add(ops.sum_all(y), ops.sum_all(p))
    backward(tape, loss)
    np.testing.assert_allclose(p.grad, [[2.0, 2.0]])
    np.testing.assert_allclose(b.grad, [1.0, 1.0])


def test_backward_needs_scalar():
    p = Parameter("p", np.ones((2, 2)))
    with Tape() as tape:
        y = ops.relu(p)
    with pytest.raises(AutogradError):
        backward(tape, y)


def test_gradients_sum_across_backward_calls():
    p = Parameter("p", np.array([3.0]))
    for _ in range(2):
        with Tape() as tape:
            loss = ops.sum_all(p)
        backward(tape, loss)
    np.testing.assert_allclose(p.grad, [2.0])
    p.zero_grad()
    assert p.grad is None


def test_relative_error_is_scale_free():
    a = np.array([1.0, 2.0])
    assert relative_error(a, a) == 0.0
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert relative_error(a * 1e6, (a + [0, 1e-3]) * 1e6) == pytest.approx(relative_error(a, a + [0, 1e-3]))


def test_relative_error_takes_the_worst_entry():
    analytic = np.array([100.0, 1.0])
    numeric = np.array([100.0, 1.01])
    # the norm of the whole leaf hides the bad entry, the entry-wise maximum does not
    assert relative_error(analytic, numeric, elementwise=False) < 1e-3
    assert relative_error(analytic, numeric) == pytest.approx(0.01 / 1.01)


def test_relative_error_floors_tiny_denominators():
    analytic = np.array([1.0, 0.0])
    numeric = np.array([1.0, 1e-9])
    assert relative_error(analytic, numeric) == pytest.approx(1e-9 / DENOMINATOR_FLOOR)


@pytest.mark.parametrize("op_id", list(OP_CHECKS))
def test_finite_difference_check_passes(op_id):
    report = grad_check(op_id, seed=1)
    assert report.probes > 0
    assert report.passed, f"{op_id}: {report.max_rel_error:.3e}"


def test_unknown_op_rejected():
    with pytest.raises(ValueError):
        grad_check("conv9d")


def test_reports_say_how_errors_were_measured():
    report = grad_check("add")
    assert report.elementwise
    assert report.max_rel_error <= 1e-6
