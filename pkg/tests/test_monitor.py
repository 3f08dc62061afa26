import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from volcontract.errors import ContractError
from volcontract.monitor import (
    FAMILIES,
    RunAborted,
    compliance_scan,
    fd_jacobian,
    field_family,
    random_linear_field,
    ratio_profile,
    run,
    trajectory_csv,
)
from volcontract.splitting import lorenz_exact_stepper
from volcontract.steppers import StepOutcome, make_stepper, step_map
from volcontract.systems import System, builtin, divergence, eval_jacobian, linear


def exact_linear_stepper(F):
    F = np.asarray(F, dtype=float)

    def step(x, h):
        A = expm(h * F)
        return StepOutcome(A @ x, A, (), (), ())

    return step


def test_lorenz_exact_cumulative():
    rec = run(lorenz_exact_stepper((10, 28, 8 / 3), 2), [1.0, 1.0, 1.0], 0.01, 100)
    assert rec.n_steps == 100
    assert rec.cum_logdet[-1] == pytest.approx(-41 / 3, abs=1e-9)


def test_zero_field_logdet_zero():
    zero = linear(np.zeros((2, 2)), "zero")
    for method in ("euler", "midpoint", "rk4"):
        rec = run(make_stepper(method, zero), [1.0, 2.0], 0.1, 5, zero)
        np.testing.assert_array_equal(rec.step_logdet, 0.0)
        assert ratio_profile(rec).empty


def test_euler_near_elliptic_violation():
    sys = builtin("near-elliptic", (0.01,))
    rec = run(make_stepper("euler", sys), [1.0, 0.0], 0.1, 3, sys)
    assert np.all(rec.step_logdet > 0)
    assert rec.step_logdet[0] == pytest.approx(np.log(1.009), abs=1e-14)
    assert rec.violations == 3


def test_run_rejects_zero_steps():
    with pytest.raises(ValueError):
        run(make_stepper("euler", builtin("rotation")), [1.0, 0.0], 0.1, 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_aborts_with_partial_record():
    blowup = System(2, lambda x: x * x, lambda x: 2.0 * x[..., :, None] * np.eye(2), "blowup")
    with pytest.raises(RunAborted) as info:
        run(make_stepper("midpoint", blowup), [0.1, 0.0], 1.0, 200)
    record = info.value.record
    assert 0 < record.n_steps < 200
    assert record.states.shape == (record.n_steps + 1, 2)
    assert isinstance(info.value.cause, ContractError)


def test_fd_jacobian_linear_map():
    B = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0], [4.0, 0.0, -1.0]])
    np.testing.assert_allclose(fd_jacobian(lambda x: B @ x, np.array([0.3, -1.0, 2.0])), B, atol=1e-10)


def test_fd_jacobian_matches_midpoint_pendulum():
    sys = builtin("pendulum", (0.1,))
    stepper = make_stepper("midpoint", sys)
    x = np.array([1.0, 0.5])
    out = stepper(x, 0.1)
    fd = fd_jacobian(step_map(stepper, 0.1), x)
    assert np.abs(out.jacobian - fd).max() <= 1e-5 * np.abs(fd).max()


def test_fd_jacobian_rejects_zero_eps():
    with pytest.raises(ValueError):
        fd_jacobian(lambda x: x, np.ones(2), eps=0.0)


def test_midpoint_ratio_near_one():
    F = np.array([[-0.5e-3, 1.0], [-1.0, -0.5e-3]])
    sys = linear(F)
    rec = run(make_stepper("midpoint", sys), [1.0, 0.0], 0.01, 50, sys)
    prof = ratio_profile(rec)
    assert prof.count == 50
    assert prof.max_deviation <= 1e-4


def test_volume_preserving_profile_empty():
    sys = builtin("rotation")
    rec = run(make_stepper("gauss2", sys), [1.0, 0.0], 0.1, 10, sys)
    assert ratio_profile(rec).empty


def test_euler_diagonal_ratio_finite_but_off():
    sys = linear(np.diag([-1.0, -2.0]))
    rec = run(make_stepper("euler", sys), [1.0, 1.0], 0.1, 10, sys)
    prof = ratio_profile(rec)
    assert np.isfinite(prof.max) and not prof.empty
    # log((0.9)(0.8)) / (-0.3)
    assert prof.mean == pytest.approx(np.log(0.72) / -0.3, abs=1e-12)
    assert prof.max_deviation > 1e-2


def test_midpoint_ratio_deviation_shrinks_with_trace():
    # the whole field shrinks with its trace; at fixed det F the deviation
    # levels off near h^2 det F / 4 instead
    devs = []
    for tr in (-1e-1, -1e-2, -1e-3):
        F = tr * np.array([[0.5, 20.0], [-20.0, 0.5]])
        sys = linear(F)
        rec = run(make_stepper("midpoint", sys), [1.0, 0.0], 0.05, 20, sys)
        devs.append(ratio_profile(rec).max_deviation)
    assert devs[0] > devs[1] > devs[2]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-1.0, 0.0))
def test_exact_flow_logdet_equals_divergence_integral(seed, level):
    rng = np.random.default_rng(seed)
    F = random_linear_field(rng, 3, 5.0, level)
    sys = linear(F)
    rec = run(exact_linear_stepper(F), rng.uniform(-1, 1, 3), 0.05, 10, sys)
    np.testing.assert_allclose(rec.step_logdet, rec.div_integral, atol=1e-12)


def test_lorenz_exact_logdet_equals_divergence_integral():
    sys = builtin("lorenz")
    rec = run(lorenz_exact_stepper((10, 28, 8 / 3), 2), [1.0, 1.0, 1.0], 0.01, 50, sys)
    np.testing.assert_allclose(rec.cum_logdet, np.cumsum(rec.div_integral), atol=1e-10)


def test_csv_layout_and_determinism():
    sys = builtin("pendulum", (0.1,))
    recs = [run(make_stepper("midpoint", sys), [1.0, 0.0], 0.1, 4, sys) for _ in range(2)]
    text = trajectory_csv(recs[0])
    assert text == recs[1].to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "t,x1,x2,step_logdet,cum_logdet,div_integral,ratio"
    assert len(lines) == 6
    assert lines[1].split(",")[-1] == ""
    buf = io.StringIO()
    trajectory_csv(recs[0], buf)
    assert buf.getvalue() == text
    row = [float(v) for v in lines[-1].split(",")]
    assert row[0] == pytest.approx(0.4)
    assert row[4] == recs[0].cum_logdet[-1]


def test_random_linear_field_constraints():
    rng = np.random.default_rng(8)
    for level in (0.0, -1e-6, -1.0):
        for bias in (0.0, 0.5, 1.0):
            F = random_linear_field(rng, 2, 10.0, level, bias)
            assert np.trace(F) == pytest.approx(level, abs=1e-12)
            assert np.linalg.norm(F, 2) < 10.0
    with pytest.raises(ContractError):
        random_linear_field(rng, 2, 1.0, -5.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_family_divergence_bounded(family):
    rng = np.random.default_rng(0)
    for level in (0.0, -1e-3, -1.0):
        sys, states = field_family(family, rng, 10.0, level)
        for x in states:
            assert divergence(sys, x) <= 0.0
            assert np.linalg.norm(eval_jacobian(sys, x), 2) < 10.0


def test_unknown_family():
    with pytest.raises(ContractError):
        field_family("cubic", np.random.default_rng(0), 1.0, 0.0)


def test_compliance_deterministic_and_table():
    grid = np.geomspace(1e-3, 1.0, 7)
    args = ("midpoint", "linear2d", 10.0, grid, [0.0, -1e-6, -1.0], 3)
    a = compliance_scan(*args, seed=4)
    b = compliance_scan(*args, seed=4)
    assert a.table() == b.table()
    assert a.verdict
    lines = a.table().splitlines()
    assert lines[0].startswith("# method=midpoint family=linear2d")
    assert lines[1].split("\t") == ["trace_level", "h_star", "violating_cells", "worst_det"]
    assert len(lines) == 6
    assert lines[-1] == "verdict=contractive"


def test_compliance_euler_collapses():
    grid = np.geomspace(1e-7, 1.0, 29)
    rep = compliance_scan("euler", "near-elliptic", 10.0, grid, [-1e-6, -1.0], 4, seed=0)
    assert not rep.verdict
    assert rep.h_star[-1e-6] <= 1e-4
    assert rep.h_star[-1.0] > rep.h_star[-1e-6]


def test_compliance_rejects_positive_level():
    with pytest.raises(ContractError):
        compliance_scan("midpoint", "linear2d", 1.0, [0.1], [0.1], 1)
