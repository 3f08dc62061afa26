from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from volcontract.errors import ContractError, ConvergenceError
from volcontract.monitor import fd_jacobian
from volcontract.steppers import (
    SolverConfig,
    det_identity_check,
    euler_step,
    implicit_rk_step,
    is_symplectic,
    make_stepper,
    step_map,
    symplecticity_defect,
)
from volcontract.systems import System, builtin, linear
from volcontract.tableaus import make_tableau, tableau_names, tableau_registry

finite = st.floats(-3, 3, allow_nan=False)


def test_euler_linear_det():
    out = euler_step(linear([[-1, 2], [0, -1]]), [1.0, 1.0], 0.5)
    assert out.det == pytest.approx(0.25, abs=1e-15)


def test_euler_near_elliptic_violates():
    out = euler_step(builtin("near-elliptic", (0.01,)), [1.0, 0.0], 0.1)
    assert out.det == pytest.approx(1.009, abs=1e-14)
    assert out.det > 1


@pytest.mark.parametrize("method", ["euler"] + list(tableau_names()))
def test_zero_field_is_identity(method):
    zero = linear(np.zeros((2, 2)), "zero")
    out = make_stepper(method, zero)([0.3, -0.4], 0.7)
    np.testing.assert_array_equal(out.x_next, [0.3, -0.4])
    np.testing.assert_array_equal(out.jacobian, np.eye(2))
    assert out.newton_iters == 0


def test_midpoint_linear_cayley():
    F = np.array([[-0.3, 1.2], [-0.8, 0.1]])
    h = 0.05
    out = implicit_rk_step(tableau_registry("midpoint"), linear(F), [1.0, 2.0], h)
    cayley = np.linalg.solve(np.eye(2) - h * F / 2, np.eye(2) + h * F / 2)
    np.testing.assert_allclose(out.jacobian, cayley, atol=1e-14)


def test_gauss2_rotation_area_preserving():
    out = implicit_rk_step(tableau_registry("gauss2"), builtin("rotation"), [0.4, 1.1], 0.3)
    assert abs(out.det - 1.0) <= 1e-12


def test_step_rejects_bad_input():
    with pytest.raises(ValueError):
        euler_step(builtin("pendulum"), [0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        implicit_rk_step(tableau_registry("midpoint"), builtin("pendulum"), [0.0, 0.0, 0.0], 0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_newton_failure_reports_residual():
    # x' = x^2 from x=10 with h=1: the midpoint stage equation has no real root
    blowup = System(1, lambda x: x * x, lambda x: 2.0 * x[..., None], "blowup")
    with pytest.raises(ConvergenceError) as info:
        implicit_rk_step(tableau_registry("midpoint"), blowup, [10.0], 1.0, SolverConfig(max_iters=20))
    assert info.value.residual is not None and info.value.residual > 0


def test_symplecticity_examples():
    assert is_symplectic(tableau_registry("midpoint"))
    assert is_symplectic(tableau_registry("gauss2"), tol=1e-14)
    heun = tableau_registry("heun")
    assert not is_symplectic(heun)
    assert symplecticity_defect(heun)[0, 0] == pytest.approx(0.25)


def test_det_identity_pendulum():
    sys = builtin("pendulum", (0.1,))
    tab = tableau_registry("midpoint")
    out = implicit_rk_step(tab, sys, [1.0, 1.0], 0.1)
    assert det_identity_check(tab, out, sys, 0.1) <= 1e-10


def test_det_identity_refuses_nonsymplectic():
    sys = builtin("pendulum")
    tab = tableau_registry("euler")
    out = implicit_rk_step(tab, sys, [1.0, 1.0], 0.1)
    with pytest.raises(ContractError):
        det_identity_check(tab, out, sys, 0.1)
    with pytest.raises(ContractError):
        det_identity_check(tableau_registry("midpoint"), out, builtin("lorenz"), 0.1)


def test_det_identity_traceless_reduces_to_one():
    sys = builtin("rotation")
    tab = tableau_registry("gauss2")
    out = implicit_rk_step(tab, sys, [0.2, 0.9], 0.4)
    assert det_identity_check(tab, out, sys, 0.4) <= 1e-12
    assert abs(out.det - 1) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (2, 2), elements=finite), st.floats(1e-6, 1.0))
def test_euler_2d_determinant_law(F, h):
    out = euler_step(linear(F), [0.0, 0.0], h)
    expected = 1 + h * np.trace(F) + h * h * np.linalg.det(F)
    assert abs(out.det - expected) <= 1e-13


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 2), elements=finite), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_midpoint_contraction_linear(G, shrink, hfrac):
    F = G - (np.trace(G) / 2 + shrink) * np.eye(2)  # tr F = -2 shrink <= 0
    d = np.linalg.det(F)
    h_max = 1.0 / np.sqrt(-d) if d < 0 else 10.0
    h = max(hfrac * h_max * 0.999, 1e-8)
    out = implicit_rk_step(tableau_registry("midpoint"), linear(F), [0.0, 0.0], h)
    assert abs(out.det) <= 1 + 1e-12
    if shrink == 0.0:
        assert abs(out.det - 1) <= 1e-12


@pytest.mark.parametrize("method", ["euler", "midpoint", "gauss2", "rk3", "rk4", "heun"])
@pytest.mark.parametrize("name", ["pendulum", "lorenz", "near-elliptic", "rotation"])
def test_propagated_jacobian_matches_fd(method, name):
    sys = builtin(name)
    stepper = make_stepper(method, sys)
    rng = np.random.default_rng(3)
    h = 0.05
    for x in rng.uniform(-2, 2, (20, sys.dim)):
        out = stepper(x, h)
        fd = fd_jacobian(step_map(stepper, h), x)
        scale = max(1.0, np.abs(out.jacobian).max())
        assert np.abs(out.jacobian - fd).max() <= 1e-5 * scale


@pytest.mark.parametrize("name", ["midpoint", "gauss2"])
@pytest.mark.parametrize("level", [0.0, -1e-6, -1e-3, -1.0])
def test_registry_h_star_respected(name, level):
    tab = tableau_registry(name)
    rng = np.random.default_rng(17)
    L = 2.0
    h = 0.99 * tab.h_star / L
    for _ in range(50):
        G = rng.standard_normal((2, 2))
        G -= np.trace(G) / 2 * np.eye(2)
        G *= (0.9 * L - abs(level) / 2) / np.linalg.norm(G, 2)
        F = G + level / 2 * np.eye(2)
        for hh in (h, h / 3, h / 30):
            out = implicit_rk_step(tab, linear(F), [0.0, 0.0], hh)
            assert abs(out.det) <= 1 + 1e-10


def _varying_damping_pendulum(omega, level, amp):
    def f(x):
        q, v = x[..., 0], x[..., 1]
        return np.stack([v, -omega ** 2 * np.sin(q) + level * (1 + amp * np.cos(q)) * v], axis=-1)

    return System(2, f, None, "varying-damping")


def test_negative_weight_symplectic_tableau_can_expand():
    # found by randomized search over a12 with b = (3/2, -1/2), a_ii = b_i/2
    b1, b2 = Fraction(3, 2), Fraction(-1, 2)
    a12 = Fraction(-7, 6)
    a21 = (b1 * b2 - b1 * a12) / b2
    tab = make_tableau([[b1 / 2, a12], [a21, b2 / 2]], [b1, b2], name="negative-b2")
    assert is_symplectic(tab, tol=0.0)
    sys = _varying_damping_pendulum(1.9, -5.0, 0.94)
    x, h = np.array([0.1, -0.085]), 0.09

    out = implicit_rk_step(tab, sys, x, h)
    assert det_identity_check(tab, out, sys, h) <= 1e-10
    fd = fd_jacobian(step_map(lambda y, hh: implicit_rk_step(tab, sys, y, hh), h), x)
    assert np.linalg.det(fd) == pytest.approx(3.2622941252, rel=1e-6)
    assert out.det > 3.0
    # same field and step with positive weights contracts
    assert abs(implicit_rk_step(tableau_registry("gauss2"), sys, x, h).det) < 1.0
