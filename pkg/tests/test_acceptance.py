"""Acceptance criteria, one test per criterion.

Each check prints a single ``criterion N: PASS|FAIL ...`` line (collected into
the pytest terminal summary as well).  Run standalone with
``python3 tests/test_acceptance.py``.
"""

import math

import numpy as np
import pytest

from normbounds import attractor as at
from normbounds.bounds import (LipschitzEnvelope, auxiliary_solve, bernoulli_blowup_time,
                               bernoulli_closed_form, constant_coefficients,
                               envelope_from_polynomial, linear_bound, linear_l_from_energy,
                               stability_report, verify_comparison)
from normbounds.integrator import IntegratorConfig, integrate_ivp
from normbounds.linear_analysis import (Normalization, compute_fundamental, liouville_residual,
                                        reconstruction_residual)
from normbounds.pipeline import FIGURES, figure_spec
from normbounds.system_model import (MatrixFunctionSpec, PolynomialVectorField,
                                     QuasiPeriodicScalar, SystemSpec, ZERO, vdp_preset)

RESULTS = {}


def record(n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return passed


def _bisection_oracle(f, a, b, tol=1e-14):
    fa = f(a)
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = f(m)
        if fa * fm <= 0:
            b = m
        else:
            a, fa = m, fm
        if b - a < tol:
            break
    return 0.5 * (a + b)


def _constant_spec(diag):
    n = len(diag)
    entries = tuple(tuple(QuasiPeriodicScalar(float(diag[i]) if i == j else 0.0)
                          for j in range(n)) for i in range(n))
    return SystemSpec(MatrixFunctionSpec(entries), PolynomialVectorField(n, ()), (ZERO,) * n)


# -- 1 -------------------------------------------------------------------------

def check_1():
    frozen = compute_fundamental(figure_spec("fig1"), Normalization.FROZEN_REFERENCE, 200.0)
    err_frozen = float(np.max(np.abs(frozen.p + 0.1)))
    parts = [f"frozen max|p+0.1| = {err_frozen:.2e} (tol 1e-4)"]
    ok = err_frozen <= 1e-4
    for name in ("fig1", "fig2.1"):
        ident = compute_fundamental(figure_spec(name), Normalization.IDENTITY, 200.0)
        gap = abs(ident.p_bar[-1] + 0.1)
        parts.append(f"{name} identity |p_bar(200)+0.1| = {gap:.4f} (tol 0.02)")
        ok &= gap <= 0.02
    return ok, "; ".join(parts)


# -- 2, 3 ----------------------------------------------------------------------

def _dominance(name, rng):
    spec = figure_spec(name)
    x_ref = np.array(FIGURES[name][1]["x0"])
    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, 100.0)
    L = envelope_from_polynomial(spec.nonlinear)
    F = spec.forcing_norm()
    X_hat = float(np.linalg.norm(np.linalg.solve(fd.W0, x_ref)))
    ell = at.map_to_ellipsoid(fd, X_hat)
    worst = -math.inf
    escapes = 0
    for x0 in ell.sample(rng, 20):
        actual = integrate_ivp(spec.rhs_function(), 0.0, x0, 100.0,
                               IntegratorConfig(grid_step=fd.dt), on_escape="stop")
        lin = linear_bound(fd, linear_l_from_energy(spec, x0), F, x0)
        nl = auxiliary_solve(fd, L, F, float(np.linalg.norm(np.linalg.solve(fd.W0, x0))))
        escapes += nl.escaped
        for bound in (lin, nl):
            n = min(len(actual.times), len(bound.values))
            excess = actual.norms()[:n] - bound.values[:n]
            worst = max(worst, float(np.max(excess / (1 + np.abs(bound.values[:n])))))
    return worst, escapes


def check_2():
    rng = np.random.default_rng(20240601)
    parts, ok = [], True
    for name in ("fig2.1", "fig2.2"):
        worst, escapes = _dominance(name, rng)
        parts.append(f"{name} max (|x|-bound)/(1+bound) = {worst:.2e}, nonlinear escapes {escapes}")
        ok &= worst <= 1e-6
    return ok, "; ".join(parts) + " (tol 1e-6)"


def check_3():
    spec = figure_spec("fig2.1")
    x0 = np.array(FIGURES["fig2.1"][1]["x0"])
    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, 100.0)
    lin = linear_bound(fd, linear_l_from_energy(spec, x0), spec.forcing_norm(), x0)
    nl = auxiliary_solve(fd, envelope_from_polynomial(spec.nonlinear), spec.forcing_norm(),
                         float(np.linalg.norm(np.linalg.solve(fd.W0, x0))))
    below = nl.values < lin.values
    if not below.any():
        return False, "nonlinear bound never drops below the linear bound"
    i = int(np.argmax(below))
    tc = float(fd.times[i])
    after = bool(np.all(below[i:]))
    before = bool(np.all(nl.values[:i] >= lin.values[:i]))
    ok = tc > 0 and after and before
    return ok, f"crossover t_c = {tc:.4g}, below after: {after}, above before: {before}"


# -- 4 -------------------------------------------------------------------------

def check_4():
    fd = constant_coefficients(-1.0, 1.0, 10.0)
    L = LipschitzEnvelope(((1.0, 3.0),))
    worst = 0.0
    for X0 in (0.3, 0.5, 0.9):
        run = auxiliary_solve(fd, L, None, X0)
        exact = bernoulli_closed_form(-1.0, 1.0, 1.0, 3.0, X0, fd.times)
        worst = max(worst, float(np.max(np.abs(run.values / exact - 1))))
    run = auxiliary_solve(fd, L, None, 1.1)
    t_exact = bernoulli_blowup_time(-1.0, 1.0, 1.0, 3.0, 1.1)
    both = run.escaped and t_exact is not None
    t_err = abs(run.escape_time / t_exact - 1) if both else math.inf
    ok = worst <= 1e-6 and both and t_err <= 0.01
    return ok, (f"max rel err {worst:.2e} (tol 1e-6); blow-up at X0=1.1: numeric "
                f"{run.escape_time if run.escaped else None}, exact {t_exact}, rel diff {t_err:.2e}")


# -- 5 -------------------------------------------------------------------------

def check_5():
    fr = at.FrozenCoefficients(-1.0, 1.0, ((1.0, 3.0),), 0.1, "supremum")
    rs = at.find_roots(fr)
    q = lambda x: -x + x ** 3 + 0.1
    oracle = [_bisection_oracle(q, 0.0, 0.5), _bisection_oracle(q, 0.5, 2.0)]
    ok = list(rs.classifications) == [at.STABLE, at.UNSTABLE]
    err = max(abs(a - b) for a, b in zip(rs.roots, oracle)) if len(rs) == 2 else math.inf
    single = at.find_roots(at.FrozenCoefficients(-1.0, 1.0, ((1.0, 3.0),), 0.0, "supremum"))
    err1 = abs(single.roots[0] - 1.0) if len(single) == 1 else math.inf
    ok = ok and err <= 1e-8 and err1 <= 1e-8 and list(single.classifications) == [at.UNSTABLE]
    return ok, (f"roots {[round(r, 10) for r in rs.roots]} {list(rs.classifications)}, "
                f"oracle err {err:.1e}; single root {single.roots} "
                f"{list(single.classifications)}, err {err1:.1e} (tol 1e-8)")


# -- 6 -------------------------------------------------------------------------

def check_6():
    spec = figure_spec("fig3.2")
    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, 200.0)
    L, F = envelope_from_polynomial(spec.nonlinear), spec.forcing_norm()
    runs = [auxiliary_solve(fd, L, F, 0.1 * i) for i in range(1, 11)]
    worst = -math.inf
    for lo, hi in zip(runs, runs[1:]):
        n = min(len(lo.values), len(hi.values))
        a, b = lo.values[:n], hi.values[:n]
        finite = np.isfinite(a) & np.isfinite(b)
        if np.any(np.isfinite(b) & ~np.isfinite(a)):
            worst = math.inf
        if finite.any():
            worst = max(worst, float(np.max(a[finite] - b[finite])))
    escaped = sum(r.escaped for r in runs)
    return worst <= 1e-9, f"max (lower - upper) = {worst:.2e} (tol 1e-9), {escaped} of 10 escape"


# -- 7 -------------------------------------------------------------------------

def _nesting(name):
    spec = figure_spec(name)
    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, 200.0)
    L, F = envelope_from_polynomial(spec.nonlinear), spec.forcing_norm()
    forced = spec.forcing_bound() > 0
    criterion = "bounded" if forced else "decays"

    analytic, label = None, None
    for method in ("sup", "avg"):
        frozen = at.freeze_sup(fd, L, F) if method == "sup" else at.freeze_avg(fd, L, F)
        roots = at.find_roots(frozen)
        mus = [0.0] * len(roots)
        if method == "avg":
            mus = [at.estimate_mu(fd, L, F, d, stable=k == at.STABLE).mu
                   for d, k in zip(roots.roots, roots.classifications)]
        report = at.classify_report(roots, frozen, max(mus) if mus else 0.0)
        if report.finite and report.boundary_radius is not None:
            analytic, label = report.boundary_radius, f"{method}/{report.theorem}"
            break

    def ok(x):
        return at._aux_outcome(fd, L, F, x, None, criterion, None)[0]
    hi = 2e-3
    while ok(hi):
        hi *= 2
    split = at.splitting_value_search(fd, L, F, hi / 2, hi, criterion=criterion)

    rows = []
    for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        a = at.map_to_ellipsoid(fd, analytic).intercept(e) if analytic is not None else math.nan
        s = at.map_to_ellipsoid(fd, split).intercept(e)
        p = at.direct_basin_probe(spec, e, 100.0, 1e3, criterion, s_lo=1e-3, s_hi=20.0)
        rows.append((a, s, p))
    return label, split, rows


def check_7():
    parts, ok = [], True
    for name in ("fig3.1", "fig3.2"):
        label, split, rows = _nesting(name)
        for axis, (a, s, p) in zip(("e1", "e2"), rows):
            nested = a <= s <= p
            ok &= nested
            parts.append(f"{name} {axis} [{label}] {a:.4f} <= {s:.4f} <= {p:.4f} "
                         f"(gaps {s - a:.4f}, {p - s:.4f})")
    return ok, "; ".join(parts)


# -- 8 -------------------------------------------------------------------------

def _mu(name):
    spec = figure_spec(name)
    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, 200.0)
    L, F = envelope_from_polynomial(spec.nonlinear), spec.forcing_norm()
    roots = at.find_roots(at.freeze_avg(fd, L, F))
    if not len(roots):
        return math.nan, "averaged equation has no roots"
    ests = [at.estimate_mu(fd, L, F, d, stable=k == at.STABLE)
            for d, k in zip(roots.roots, roots.classifications)]
    best = max(ests, key=lambda e: e.mu)
    return best.mu, f"roots {[round(r, 5) for r in roots.roots]}, reliable {best.reliable}"


def check_8():
    mu0, note0 = _mu("fig3.2")
    mu5, note5 = _mu("fig3.3")
    in0 = 0.085 / 3 <= mu0 <= 0.085 * 3
    in5 = 0.183 / 3 <= mu5 <= 0.183 * 3
    ordered = mu5 > mu0
    ok = bool(in0 and in5 and ordered)
    return ok, (f"mu(a=0) = {mu0:.4g} [{note0}] target 0.085 within x3: {in0}; "
                f"mu(a=0.05) = {mu5:.4g} [{note5}] target 0.183 within x3: {in5}; "
                f"increasing: {ordered}")


# -- 9 -------------------------------------------------------------------------

def check_9():
    cfg = IntegratorConfig(grid_step=0.001)
    parts, ok = [], True
    runs = [("fig1", 200.0), ("fig2.1", 100.0), ("fig2.2", 100.0), ("fig3.1", 200.0),
            ("fig3.2", 200.0), ("fig3.3", 200.0)]
    for name, t_end in runs:
        spec = figure_spec(name)
        for norm in Normalization:
            fd = compute_fundamental(spec, norm, t_end, cfg)
            ksig = float(np.max(np.abs(fd.k * fd.sigma_min / fd.sigma_max - 1)))
            rec = reconstruction_residual(fd)
            liou = liouville_residual(fd, spec)
            good = ksig <= 1e-12 and rec <= 1e-3 and liou <= 1e-4
            ok &= good
            if not good or norm is Normalization.FROZEN_REFERENCE:
                parts.append(f"{name}/{norm.value}: k*smin {ksig:.0e}, recon {rec:.1e}, "
                             f"liouville {liou:.1e}")
    return ok, "; ".join(parts) + " (tol 1e-12, 1e-3, 1e-4; dt = 0.001)"


# -- 10 ------------------------------------------------------------------------

def check_10():
    parts, ok = [], True
    for diag, expect_pass, chi in (((-1.0, -2.0), True, -1.0), ((1.0, -2.0), False, 1.0)):
        fd = compute_fundamental(_constant_spec(diag), Normalization.FROZEN_REFERENCE, 100.0)
        rep = stability_report(fd, 0.0)
        flags = (rep.corollary1, rep.corollary2, rep.corollary3)
        good = all(f == expect_pass for f in flags) and abs(rep.chi_hat - chi) <= 0.02
        ok &= good
        parts.append(f"diag{diag}: corollaries {flags}, chi_hat {rep.chi_hat:.4f}")
    return ok, "; ".join(parts) + " (chi_hat tol 0.02)"


CHECKS = {1: check_1, 2: check_2, 3: check_3, 4: check_4, 5: check_5,
          6: check_6, 7: check_7, 8: check_8, 9: check_9, 10: check_10}


@pytest.mark.parametrize("n", list(CHECKS), ids=[f"criterion_{n}" for n in CHECKS])
def test_acceptance(n):
    passed, detail = CHECKS[n]()
    assert record(n, passed, detail), RESULTS[n]


if __name__ == "__main__":
    for n, check in CHECKS.items():
        record(n, *check())
