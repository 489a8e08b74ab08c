import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference
from mfldp import (
    HypothesisError,
    InputError,
    InteractionFlow,
    MultiPoly,
    RadialInteraction,
    eval_confining,
    eval_interaction,
    eval_interaction_flow,
    validate_hypotheses,
)


def random_poly(rng, d, degree=4, n_terms=8):
    terms = []
    for _ in range(n_terms):
        total = rng.integers(0, degree + 1)
        e = rng.multinomial(total, np.full(d, 1.0 / d))
        terms.append((rng.normal(), e.tolist()))
    return MultiPoly.from_terms(terms, d)


def test_quadratic_value_gradient_hessian():
    v = MultiPoly.from_terms([(0.5, [2])])
    val, grad, hess = eval_confining(v, 2.0)
    assert val == 2.0
    np.testing.assert_array_equal(grad, [2.0])
    np.testing.assert_array_equal(hess, [[1.0]])


def test_double_well_critical_point():
    v = MultiPoly.from_terms([(0.25, [4]), (-0.5, [2])])
    val, grad, hess = eval_confining(v, 1.0)
    assert val == -0.25
    np.testing.assert_array_equal(grad, [0.0])
    np.testing.assert_array_equal(hess, [[2.0]])


def test_canonical_terms_merge_and_sort():
    p = MultiPoly.from_terms([(1.0, [0, 2]), (2.0, [1, 0]), (1.0, [0, 2]), (0.0, [3, 0])])
    q = MultiPoly.from_terms([(2.0, [1, 0]), (2.0, [0, 2])])
    assert p == q
    assert p.to_terms() == [(2.0, [1, 0]), (2.0, [0, 2])]


def test_dimension_mismatch():
    v = MultiPoly.from_terms([(1.0, [2, 0])])
    with pytest.raises(InputError):
        eval_confining(v, [1.0, 2.0, 3.0])
    with pytest.raises(InputError):
        MultiPoly.from_terms([(1.0, [2]), (1.0, [1, 1])])


def test_algebra():
    x = MultiPoly.variable(0, 2)
    y = MultiPoly.variable(1, 2)
    p = (x + y) ** 2 - x * x - y * y
    assert p == 2 * x * y
    assert p.degree == 2
    np.testing.assert_allclose(p.value([1.5, -2.0]), -6.0)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_hessian_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    v = random_poly(rng, 2)
    for x in rng.uniform(-2, 2, size=(100, 2)):
        g = v.gradient(x)
        g_fd = central_difference(lambda z: float(v.value(z)), x)
        assert np.max(np.abs(g - g_fd)) <= 1e-6 * (1 + np.max(np.abs(g)))
        h = v.hessian(x)
        h_fd = np.stack([central_difference(lambda z, k=k: float(v.gradient(z)[k]), x) for k in range(2)])
        assert np.max(np.abs(h - h_fd)) <= 1e-6 * (1 + np.max(np.abs(h)))


def test_hessians_bitwise_symmetric():
    rng = np.random.default_rng(7)
    v = random_poly(rng, 3)
    fi = RadialInteraction((0.3, -0.2, 0.5))
    xs = rng.uniform(-2, 2, size=(50, 3))
    for h in (v.hessian(xs), fi.hessian(xs)):
        assert np.array_equal(h, np.swapaxes(h, -1, -2))


def test_interaction_examples():
    val, grad, _ = eval_interaction(RadialInteraction((1.0,)), [1.0, 1.0])
    assert val == 2.0
    np.testing.assert_array_equal(grad, [2.0, 2.0])
    val, grad, _ = eval_interaction(RadialInteraction((0.0, 1.0)), [1.0, 0.0])
    assert val == 1.0
    np.testing.assert_array_equal(grad, [4.0, 0.0])


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4).filter(lambda c: c[-1] > 0.01),
       st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_interaction_force_vanishes_at_origin(coeffs, d):
    fi = RadialInteraction(tuple(coeffs))
    val, grad, _ = eval_interaction(fi, np.zeros(d))
    assert val == 0.0
    assert np.all(grad == 0.0)


def test_interaction_matches_finite_differences():
    rng = np.random.default_rng(3)
    fi = RadialInteraction((0.4, -0.3, 0.2))
    for x in rng.uniform(-2, 2, size=(100, 2)):
        g_fd = central_difference(lambda z: float(fi.value(z)), x)
        assert np.max(np.abs(fi.gradient(x) - g_fd)) <= 1e-6 * (1 + np.max(np.abs(g_fd)))
        h_fd = np.stack([central_difference(lambda z, k=k: float(fi.gradient(z)[k]), x) for k in range(2)])
        assert np.max(np.abs(fi.hessian(x) - h_fd)) <= 1e-6 * (1 + np.max(np.abs(h_fd)))


@given(st.floats(0, 2 * math.pi), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=50, deadline=None)
def test_interaction_rotation_invariant(theta, a, b):
    fi = RadialInteraction((0.5, -0.1, 0.3))
    q = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    x = np.array([a, b])
    assert abs(float(fi.value(q @ x)) - float(fi.value(x))) <= 1e-12 * (1 + abs(float(fi.value(x))))


def test_interaction_polynomial_form_agrees():
    fi = RadialInteraction((0.5, -0.1, 0.3))
    p = fi.as_multipoly(2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 2))
    np.testing.assert_allclose(p.value(x), fi.value(x), rtol=1e-12, atol=1e-12)


def test_mean_field_kernel_matches_pairwise_sum():
    rng = np.random.default_rng(11)
    fi = RadialInteraction((0.5, -0.2, 0.3))
    kernel = fi.kernel(2)
    ys = rng.normal(size=(300, 2))
    xs = rng.normal(size=(40, 2))
    direct = fi.gradient(xs[:, None] - ys[None]).mean(axis=1)
    np.testing.assert_allclose(kernel.mean_force(xs, ys), direct, rtol=1e-10, atol=1e-12)


def test_nonpositive_leading_coefficient_rejected():
    with pytest.raises(HypothesisError) as err:
        RadialInteraction((-1.0,))
    assert err.value.hypothesis == "F3"
    with pytest.raises(HypothesisError):
        RadialInteraction(())


def test_battery_flow():
    a = InteractionFlow.battery(MultiPoly.from_terms([(0.5, [2])]))
    np.testing.assert_array_equal(eval_interaction_flow(a, 3.0, 1.0), [2.0])
    rng = np.random.default_rng(1)
    for x in rng.normal(size=(20, 1)):
        assert np.all(eval_interaction_flow(a, x, x) == 0.0)


def test_general_flow_antisymmetry_check():
    x = MultiPoly.variable(0, 2)
    y = MultiPoly.variable(1, 2)
    with pytest.raises(InputError):
        InteractionFlow.general(x * y)
    aa = 0.5 * x * x - x * y + 0.25 * x**4 - x * y**3
    flow = InteractionFlow.general(aa)
    rng = np.random.default_rng(5)
    for p, q in rng.uniform(-2, 2, size=(30, 2)):
        fd = (aa.value([p + 1e-5, q]) - aa.value([p - 1e-5, q])) / 2e-5
        got = eval_interaction_flow(flow, p, q)[0]
        assert abs(got - fd) <= 1e-7 * (1 + abs(fd))
        np.testing.assert_allclose(got, -eval_interaction_flow(flow, q, p)[0], atol=1e-12)


def test_general_flow_jacobians():
    x = MultiPoly.variable(0, 2)
    y = MultiPoly.variable(1, 2)
    flow = InteractionFlow.general(0.5 * x * x - x * y + 0.25 * x**4 - x * y**3)
    jx, jy = flow.jacobians(np.array([0.7]), np.array([-0.4]))
    fx = (flow([0.7 + 1e-6], [-0.4]) - flow([0.7 - 1e-6], [-0.4])) / 2e-6
    fy = (flow([0.7], [-0.4 + 1e-6]) - flow([0.7], [-0.4 - 1e-6])) / 2e-6
    np.testing.assert_allclose(jx[0], fx, rtol=1e-7)
    np.testing.assert_allclose(jy[0], fy, rtol=1e-7)


def test_validate_convex_quadratic():
    rep = validate_hypotheses(MultiPoly.from_terms([(0.5, [2])]), RadialInteraction((1.0,)))
    assert rep.v2_ok and rep.f3_ok and rep.antisymmetry_ok and rep.all_ok


@pytest.mark.parametrize("radius", [1.0, 10.0, 100.0])
def test_validate_concave_fails_everywhere(radius):
    rep = validate_hypotheses(MultiPoly.from_terms([(-1.0, [2])]), [1.0], check_radius=radius)
    assert not rep.v2_ok


def test_validate_reports_rejected_interaction():
    rep = validate_hypotheses(MultiPoly.from_terms([(0.5, [2])]), [-1.0])
    assert not rep.f3_ok
    assert not rep.all_ok


def test_validate_double_well_convex_at_infinity():
    r2 = MultiPoly.from_terms([(1.0, [2, 0]), (1.0, [0, 2])])
    v = 0.25 * r2 * r2 + MultiPoly.from_terms([(-0.5, [2, 0]), (0.1, [1, 1])])
    assert validate_hypotheses(v, [1.0]).v2_ok


def test_separately_quartic_not_convex_at_infinity():
    # x^4 + y^4 is flat across the axes, so -x^2/2 wins there at every radius
    v = MultiPoly.from_terms([(0.25, [4, 0]), (-0.5, [2, 0]), (0.25, [0, 4])])
    assert not validate_hypotheses(v, [1.0]).v2_ok
