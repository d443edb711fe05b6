import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import constant_linear_spec
from normbounds.bounds import (LipschitzEnvelope, auxiliary_solve, bernoulli_blowup_time,
                               bernoulli_closed_form, bounds_csv, constant_coefficients,
                               envelope_from_polynomial, linear_bound, linear_l_from_energy,
                               stability_report, verify_comparison)
from normbounds.errors import UnsupportedError, ValidationError
from normbounds.integrator import Trajectory, integrate_ivp
from normbounds.linear_analysis import Normalization, compute_fundamental
from normbounds.system_model import PolynomialTerm, PolynomialVectorField, vdp_preset

ID = Normalization.IDENTITY
CUBIC = LipschitzEnvelope(((1.0, 3.0),))


def test_envelope_benchmark_cubic():
    L = envelope_from_polynomial(vdp_preset(alpha2=0.1).nonlinear)
    assert L.exponents.tolist() == [3.0]
    assert L(0.0, 2.0) == pytest.approx(0.8)


def test_envelope_empty_for_zero_field():
    L = envelope_from_polynomial(PolynomialVectorField(2))
    assert L.is_empty and L(1.0, 3.0) == 0


def test_envelope_merges_equal_degrees_and_dominates():
    f = PolynomialVectorField(2, (PolynomialTerm(0, 1.0, (1, 1)), PolynomialTerm(1, -1.0, (2, 0))))
    L = envelope_from_polynomial(f)
    assert len(L.terms) == 1 and L.terms[0][0].offset == 2.0 and L.terms[0][1] == 2.0
    # oracle: 10^4 random states, no violation of ||f(x)|| <= 2 ||x||^2
    rng = np.random.default_rng(7)
    xs = rng.normal(size=(10_000, 2)) * rng.exponential(3.0, size=(10_000, 1))
    vals = np.linalg.norm(np.stack([xs[:, 0] * xs[:, 1], -xs[:, 0] ** 2], axis=1), axis=1)
    assert np.all(vals <= L(0.0, np.linalg.norm(xs, axis=1)) + 1e-12)


def test_envelope_rejects_sub_linear_exponent():
    with pytest.raises(ValidationError):
        LipschitzEnvelope(((1.0, 0.5),))


def test_energy_lipschitz_constant():
    spec = vdp_preset(alpha2=0.1)
    assert linear_l_from_energy(spec, [0.0, 0.0]) == 0.0
    assert linear_l_from_energy(spec, [1.0, 0.0]) == pytest.approx(0.4)
    assert linear_l_from_energy(spec, [0.0, 1.0]) == pytest.approx(0.1)
    with pytest.raises(UnsupportedError):
        linear_l_from_energy(constant_linear_spec(-np.eye(3)), [1.0, 0.0, 0.0])


def test_linear_bound_exact_for_decoupled_decay():
    fd = compute_fundamental(constant_linear_spec(-np.eye(2)), ID, 5.0)
    b = linear_bound(fd, 0.0, None, [1.0, 0.0])
    np.testing.assert_allclose(b.values, np.exp(-fd.times), rtol=1e-7)
    actual = integrate_ivp(lambda t, x: -x, 0.0, [1.0, 0.0], 5.0)
    rep = verify_comparison(actual, b)
    assert rep.passed and abs(rep.max_violation) < 1e-8


def test_linear_bound_with_constant_kl():
    fd = compute_fundamental(constant_linear_spec(-np.eye(2)), ID, 5.0)
    b = linear_bound(fd, 0.3, None, [0.6, 0.8])  # k = 1 so k l = 0.3
    np.testing.assert_allclose(b.values, np.exp(-0.7 * fd.times), rtol=1e-7)


def test_linear_bound_forced_part_closed_form():
    # X' = -X + 1 from 0: 1 - exp(-t); trapezoid on a fine grid
    fd = constant_coefficients(-1.0, 1.0, 5.0, dt=0.001)
    from normbounds.linear_analysis import fundamental_from_matrices
    w = np.exp(-fd.times)[:, None, None] * np.eye(1)
    fd = fundamental_from_matrices(fd.times, w, np.zeros(len(fd.times)), ID)
    b = linear_bound(fd, 0.0, 1.0, [0.0])
    np.testing.assert_allclose(b.values, 1 - np.exp(-fd.times), atol=1e-6)


def test_auxiliary_zero_solution_and_forced_linear():
    fd = constant_coefficients(-1.0, 1.0, 10.0)
    assert np.all(auxiliary_solve(fd, CUBIC, None, 0.0).values == 0.0)
    run = auxiliary_solve(fd, LipschitzEnvelope(), 1.0, 0.0)
    np.testing.assert_allclose(run.values, 1 - np.exp(-fd.times), atol=1e-8)


def test_auxiliary_matches_bernoulli():
    fd = constant_coefficients(-1.0, 1.0, 10.0)
    run = auxiliary_solve(fd, CUBIC, None, 0.5)
    exact = bernoulli_closed_form(-1.0, 1.0, 1.0, 3.0, 0.5, fd.times)
    np.testing.assert_allclose(run.values, exact, rtol=1e-6)


def test_auxiliary_reverse_tracks_unstable_equilibrium():
    fd = constant_coefficients(-1.0, 1.0, 10.0)
    run = auxiliary_solve(fd, CUBIC, None, 1.0, reverse=True)
    np.testing.assert_allclose(run.values, 1.0, atol=1e-9)


def test_auxiliary_escape_is_flagged():
    fd = constant_coefficients(-1.0, 1.0, 10.0)
    run = auxiliary_solve(fd, CUBIC, None, 1.1)
    assert run.escaped and np.isinf(run.values[-1])
    assert run.escape_time == pytest.approx(bernoulli_blowup_time(-1, 1, 1, 3, 1.1), rel=1e-2)


def test_bernoulli_closed_form_cases():
    t = np.linspace(0, 3, 7)
    np.testing.assert_allclose(bernoulli_closed_form(-0.5, 1.0, 0.0, 3.0, 2.0, t), 2 * np.exp(-0.5 * t))
    np.testing.assert_allclose(bernoulli_closed_form(-1.0, 1.0, 1.0, 3.0, 1.0, t), 1.0)
    # oracle: scipy DOP853 at tight tolerance
    ref = solve_ivp(lambda s, x: -x + x ** 3, (0, 1), [0.5], method="DOP853", rtol=1e-13, atol=1e-15)
    assert bernoulli_closed_form(-1.0, 1.0, 1.0, 3.0, 0.5, 1.0) == pytest.approx(ref.y[0, -1], abs=1e-8)
    with pytest.raises(UnsupportedError):
        bernoulli_closed_form(-1.0, 1.0, 1.0, 1.0, 0.5, 1.0)
    assert bernoulli_blowup_time(-1.0, 1.0, 1.0, 3.0, 0.9) is None
    assert np.isinf(bernoulli_closed_form(-1.0, 1.0, 1.0, 3.0, 1.1, 5.0))


def test_verify_comparison_zero_actual_and_grid_mismatch():
    fd = constant_coefficients(-1.0, 1.0, 1.0)
    bound = auxiliary_solve(fd, CUBIC, None, 0.2)
    zero = Trajectory(fd.times, np.zeros((len(fd.times), 2)))
    assert verify_comparison(zero, bound).passed
    with pytest.raises(ValidationError):
        verify_comparison(Trajectory(fd.times[:50] * 1.5, np.zeros((50, 2))), bound)


def test_verify_comparison_detects_violation_and_excursion():
    fd = constant_coefficients(-1.0, 1.0, 1.0)
    bound = auxiliary_solve(fd, LipschitzEnvelope(((1.0, 3.0),), region_radius=0.5), None, 0.2)
    states = np.zeros((len(fd.times), 1))
    states[60] = 0.9
    rep = verify_comparison(Trajectory(fd.times, states), bound)
    assert not rep.passed and rep.first_violation_time == pytest.approx(0.6)
    assert rep.excursion_time == pytest.approx(0.6)


def test_fig22_bounds_dominate(fig22):
    x0 = np.array([0.3, 0.0])
    actual = integrate_ivp(fig22.spec.rhs_function(), 0.0, x0, 100.0)
    X0 = np.linalg.norm(np.linalg.solve(fig22.fd.W0, x0))
    assert verify_comparison(actual, auxiliary_solve(fig22.fd, fig22.L, fig22.F, X0)).passed
    l = linear_l_from_energy(fig22.spec, x0)
    assert verify_comparison(actual, linear_bound(fig22.fd, l, fig22.F, x0)).passed


def test_single_linear_term_matches_linear_bound():
    spec = vdp_preset(a1=0.5, a2=0.5, r1=math.pi, r2=7.0, a=0.01, omega2=2 * math.pi)
    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, 20.0)
    x0 = [0.3, 0.1]
    X0 = np.linalg.norm(np.linalg.solve(fd.W0, x0))
    aux = auxiliary_solve(fd, LipschitzEnvelope.linear(0.02), spec.forcing_norm(), X0)
    lin = linear_bound(fd, 0.02, spec.forcing_norm(), x0)
    # the closed form uses exact sigma_max, the ODE the finite-difference p
    np.testing.assert_allclose(aux.values, lin.values, rtol=2e-2)


def test_stability_report_diagonal_cases():
    good = stability_report(compute_fundamental(constant_linear_spec(np.diag([-1.0, -2.0])), ID, 20.0), 0.0)
    assert good.corollary1 and good.corollary2 and good.corollary3
    assert good.chi_hat == pytest.approx(-1.0, abs=2e-2)
    assert good.chi_hat == good.chi_bar_max + good.chi_star
    assert good.corollary4_applicable and good.forced_bound == 0.0
    bad = stability_report(compute_fundamental(constant_linear_spec(np.diag([1.0, -2.0])), ID, 20.0), 0.0)
    assert not (bad.corollary1 or bad.corollary2 or bad.corollary3)
    assert bad.chi_hat == pytest.approx(1.0, abs=2e-2)
    assert "not applicable" in bad.summary()


def test_stability_report_sign_agrees_with_auxiliary_decay():
    fd = compute_fundamental(vdp_preset(), Normalization.FROZEN_REFERENCE, 200.0)
    rep = stability_report(fd, 0.05)
    assert rep.chi_hat == pytest.approx(-0.1 + rep.chi_star, abs=1e-3)
    run = auxiliary_solve(fd, LipschitzEnvelope.linear(0.05), None, 1.0)
    assert (run.final < 1.0) == (rep.chi_hat < 0)
    assert rep.chi_hat > 0  # k l ~ 0.1 cancels the decay rate exactly; small excess wins


def test_bounds_csv_header():
    text = bounds_csv([0.0, 1.0], actual=[1.0, 0.5], nonlinear=[1.0, 0.7])
    assert text.splitlines()[0] == "# t [time],actual_norm [state],nonlinear_bound [state]"
