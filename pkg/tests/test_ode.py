import math

import numpy as np
import pytest

from strode import autodiff as ad
from strode.autodiff import DiffValue
from strode.nn import ConstrainedMLP
from strode.ode import DivergenceError, IVPSpec, euler_solve, ode_solve_segment


def solve(rhs, y0, t0, t1, step=0.1, trajectory=False):
    return euler_solve(IVPSpec(rhs, DiffValue(np.atleast_2d(y0)), t0, t1, step), trajectory=trajectory)


def test_constant_flow():
    y, _ = solve(lambda y, t: y * 0.0, [[2.5, -1.0]], 0.3, 7.9)
    assert y.data.tolist() == [[2.5, -1.0]]


def test_exponential_recurrence():
    # closed form of the Euler recurrence: (1 + h)^n
    y, _ = solve(lambda y, t: y, [[1.0]], 0.0, 1.0)
    assert y.data.item() == pytest.approx(1.1 ** 10, abs=1e-12)
    assert 1.1 ** 10 == pytest.approx(2.5937424601, abs=1e-10)


def test_time_dependent_rhs_hand_sum():
    y, _ = solve(lambda y, t: DiffValue(np.full((1, 1), float(DiffValue.lift(t).data))), [[0.0]], 0.0, 1.0)
    assert y.data.item() == pytest.approx(0.1 * sum(0.1 * k for k in range(10)), abs=1e-12)
    assert y.data.item() == pytest.approx(0.45, abs=1e-12)


def test_partial_last_step_lands_on_end():
    _, path = solve(lambda y, t: y * 0.0 + 1.0, [[0.0]], 0.0, 0.25, trajectory=True)
    assert [round(t, 12) for t, _ in path] == [0.0, 0.1, 0.2, 0.25]
    assert path[-1][1].data.item() == pytest.approx(0.25, abs=1e-15)


def test_first_order_convergence():
    errs = []
    for h in [0.1, 0.05, 0.025]:
        y, _ = solve(lambda y, t: y, [[1.0]], 0.0, 1.0, step=h)
        errs.append(abs(y.data.item() - math.e))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(1.9 <= r <= 2.1 for r in ratios), ratios


def test_gradient_identity_for_zero_flow():
    y0 = ad.parameter(np.array([[1.0, 2.0, 3.0]]))
    y, _ = euler_solve(IVPSpec(lambda y, t: y * 0.0, y0, 0.0, 1.0))
    for k in range(3):
        y0.grad = None
        y[0, k].sum().backward()
        expected = np.zeros((1, 3))
        expected[0, k] = 1.0
        np.testing.assert_array_equal(y0.grad, expected)


def test_gradient_matches_product_of_step_matrices():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3)) * 0.5
    y0 = ad.parameter(rng.normal(size=(1, 3)))
    y, _ = euler_solve(IVPSpec(lambda y, t: y @ a.T, y0, 0.0, 1.0, 0.1))
    jac = np.linalg.matrix_power(np.eye(3) + 0.1 * a, 10)
    for k in range(3):
        y[0, k].sum().backward()
        np.testing.assert_allclose(y0.grad[0], jac[k], atol=1e-10)


def test_time_reversal():
    c = np.array([[0.7, -1.3]])
    y, _ = solve(lambda y, t: DiffValue(c), [[1.0, 2.0]], 1.0, 3.7)
    back, _ = solve(lambda y, t: DiffValue(-c), y.data, 1.0, 3.7)
    np.testing.assert_allclose(back.data, [[1.0, 2.0]], atol=1e-12)


def test_divergence_reports_step():
    with pytest.raises(DivergenceError) as info:
        solve(lambda y, t: y * 1e300, [[1.0]], 0.0, 1.0)
    assert info.value.step_index == 1


def test_per_row_intervals_match_scalar_solves():
    rng = np.random.default_rng(1)
    net = ConstrainedMLP([3, 8, 2], "tanh", rng=rng)
    h0 = rng.normal(size=(3, 2))
    starts = np.array([[0.0], [0.2], [1.0]])
    ends = np.array([[0.35], [0.2], [1.61]])
    batched = ode_solve_segment(net, h0, DiffValue(starts), DiffValue(ends), 0.1).data
    for r in range(3):
        single = ode_solve_segment(net, h0[r:r + 1], float(starts[r, 0]), float(ends[r, 0]), 0.1).data
        np.testing.assert_allclose(batched[r:r + 1], single, atol=1e-14)


def test_segment_empty_interval_and_zero_field():
    rng = np.random.default_rng(2)
    net = ConstrainedMLP([3, 8, 2], "tanh", rng=rng)
    h0 = rng.normal(size=(1, 2))
    assert np.array_equal(ode_solve_segment(net, h0, 0.4, 0.4).data, h0)
    for p in net.parameters():
        p.data[:] = 0.0
    assert np.array_equal(ode_solve_segment(net, h0, 0.0, 3.3).data, h0)


def test_segment_order_one_convergence():
    rng = np.random.default_rng(3)
    net = ConstrainedMLP([3, 8, 2], "tanh", rng=rng)
    h0 = rng.normal(size=(1, 2))
    ref = ode_solve_segment(net, h0, 0.0, 1.0, 0.001).data
    e1 = np.abs(ode_solve_segment(net, h0, 0.0, 1.0, 0.1).data - ref).max()
    e2 = np.abs(ode_solve_segment(net, h0, 0.0, 1.0, 0.05).data - ref).max()
    assert 1.7 <= e1 / e2 <= 2.3


def test_gradient_through_end_time_vs_finite_difference():
    rng = np.random.default_rng(4)
    net = ConstrainedMLP([3, 8, 2], "tanh", rng=rng)
    h0 = rng.normal(size=(2, 2))
    end = ad.parameter(np.array([[0.37], [0.81]]))
    ode_solve_segment(net, h0, 0.0, end).sum().backward()
    h = 1e-6
    for r in range(2):
        up, down = end.data.copy(), end.data.copy()
        up[r] += h
        down[r] -= h
        fd = (ode_solve_segment(net, h0, 0.0, up).data.sum() - ode_solve_segment(net, h0, 0.0, down).data.sum())
        assert end.grad[r, 0] == pytest.approx(fd / (2 * h), rel=1e-6)


def test_rejects_reversed_interval():
    with pytest.raises(ValueError):
        solve(lambda y, t: y, [[1.0]], 1.0, 0.5)
    with pytest.raises(ValueError):
        IVPSpec(lambda y, t: y, DiffValue([[1.0]]), 0.0, 1.0, step=0.0)
