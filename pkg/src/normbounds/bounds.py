"""Norm bounds from the scalar comparison equation.

Solutions of x' = A(t) x + f(t, x) + F(t) satisfy ||x(t)|| <= X(t), where

    X' = p(t) X + k(t) L(t, X) + k(t) ||F(t)||,   X(t0) = ||W^-1(t0) x0||,

with p, k taken from :class:`~normbounds.linear_analysis.FundamentalData`
and L a Lipschitz envelope of f.  A linear envelope l(t) X makes the
equation explicitly solvable; see :func:`linear_bound`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UnsupportedError, ValidationError
from .integrator import IntegratorConfig, Trajectory, integrate_ivp
from .linear_analysis import (FundamentalData, cumulative_trapezoid, estimate_max_lyapunov,
                              spectral_floor, write_csv)
from .system_model import PolynomialVectorField, QuasiPeriodicScalar, SystemSpec, _HarmonicTable


@dataclass(frozen=True)
class LipschitzEnvelope:
    """L(t, X) = sum_j c_j(t) X^e_j with c_j >= 0 and e_j >= 1.

    A single exponent-1 term is the classical linear bound l(t) X.
    """

    terms: tuple[tuple[QuasiPeriodicScalar, float], ...] = ()
    region_radius: float = math.inf

    def __post_init__(self):
        terms = []
        for c, e in self.terms:
            if not isinstance(c, QuasiPeriodicScalar):
                c = QuasiPeriodicScalar(float(c))
            e = float(e)
            if not e >= 1.0:
                raise ValidationError(f"envelope exponent {e} < 1 is not Lipschitz at X = 0")
            terms.append((c, e))
        object.__setattr__(self, "terms", tuple(terms))
        if not self.region_radius > 0:
            raise ValidationError("region radius must be positive")

    @classmethod
    def linear(cls, l, region_radius: float = math.inf) -> "LipschitzEnvelope":
        return cls(((l, 1.0),), region_radius)

    @property
    def is_linear(self) -> bool:
        return len(self.terms) == 1 and self.terms[0][1] == 1.0

    @property
    def is_empty(self) -> bool:
        return all(c.is_zero for c, _ in self.terms)

    @property
    def exponents(self) -> np.ndarray:
        return np.array([e for _, e in self.terms])

    def coefficient_table(self):
        return _HarmonicTable([c for c, _ in self.terms])

    def __call__(self, t, X):
        return sum(np.asarray(c(t)) * np.asarray(X, dtype=float) ** e for c, e in self.terms)


def envelope_from_polynomial(f: PolynomialVectorField) -> LipschitzEnvelope:
    """Global envelope |c| X^d per term, merged by degree.

    Uses ||f||_2 <= ||f||_1 and |x_m|^k <= ||x||_2^k.  Time-varying
    coefficients enter through their uniform bound.
    """
    by_degree: dict[int, float] = {}
    for term in f.terms:
        c = term.coefficient
        mag = abs(c.offset) if not c.terms else c.bound()
        by_degree[term.degree] = by_degree.get(term.degree, 0.0) + mag
    terms = tuple((QuasiPeriodicScalar(c), float(d)) for d, c in sorted(by_degree.items()) if c > 0)
    return LipschitzEnvelope(terms)


def _benchmark_parameters(spec: SystemSpec):
    """(omega0^2, alpha2) when the system has the 2-D oscillator structure, else None."""
    if spec.dimension != 2:
        return None
    (a00, a01), (a10, _) = spec.linear.entries
    if not (a00.is_zero and a01.is_constant and a01.constant_part() == 1.0):
        return None
    w2 = -a10.constant_part()
    if not w2 > 0:
        return None
    terms = spec.nonlinear.terms
    if len(terms) > 1:
        return None
    if not terms:
        return w2, 0.0
    t = terms[0]
    if t.component != 1 or t.exponents != (0, 3) or not t.coefficient.is_constant:
        return None
    return w2, -t.coefficient.constant_part()


def linear_l_from_energy(spec: SystemSpec, x0) -> float:
    """Lipschitz constant |alpha2| (sup |x2|)^2 for the cubic-damped oscillator.

    sup |x2| is bounded by the level of the energy (x2^2 + omega0^2 x1^2) / 2
    of the frozen, linear, unforced model, which does not increase.
    """
    params = _benchmark_parameters(spec)
    if params is None:
        raise UnsupportedError("energy-based Lipschitz constant needs the 2-D oscillator family")
    w2, alpha2 = params
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2,):
        raise DimensionError("x0 must be a 2-vector")
    return abs(alpha2) * (x0[1] ** 2 + w2 * x0[0] ** 2)


@dataclass(frozen=True)
class BoundTrajectory:
    """Bound values on the fundamental-data grid; +inf after an escape."""

    times: np.ndarray
    values: np.ndarray
    kind: str
    X0: float
    escaped: bool = False
    escape_time: float | None = None
    region_radius: float = math.inf

    @property
    def final(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class GridCoefficients:
    """Minimal stand-in for FundamentalData carrying only p and k.

    ``p_model`` and ``k_model`` optionally hold the exact quasi-periodic
    forms the samples came from; frozen suprema then use their analytic bounds.
    """

    times: np.ndarray
    p: np.ndarray
    k: np.ndarray
    p_model: QuasiPeriodicScalar | None = None
    k_model: QuasiPeriodicScalar | None = None

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def constant_coefficients(p: float, k: float, t_end: float, dt: float = 0.01,
                          t0: float = 0.0) -> GridCoefficients:
    n = int(round((t_end - t0) / dt))
    times = t0 + dt * np.arange(n + 1)
    return GridCoefficients(times, np.full(n + 1, float(p)), np.full(n + 1, float(k)))


def forcing_on_grid(forcing_norm, times) -> np.ndarray:
    if forcing_norm is None:
        return np.zeros(len(times))
    if callable(forcing_norm):
        return np.asarray(forcing_norm(np.asarray(times)), dtype=float) * np.ones(len(times))
    arr = np.asarray(forcing_norm, dtype=float)
    if arr.ndim == 0:
        return np.full(len(times), float(arr))
    if arr.shape != (len(times),):
        raise DimensionError("forcing norm samples do not match the grid")
    return arr


def _interpolator(times, values):
    """Linear interpolation on a uniform grid, cheap for scalar t."""
    t0 = float(times[0])
    h = float(times[1] - times[0])
    last = len(times) - 2
    v = np.asarray(values, dtype=float)
    dv = np.append(np.diff(v), 0.0)

    def at(t):
        s = (t - t0) / h
        i = int(s)
        if i > last:
            i = last
        elif i < 0:
            i = 0
        return v[i] + (s - i) * dv[i]

    return at


def linear_bound(fd: FundamentalData, l: LipschitzEnvelope | QuasiPeriodicScalar | float,
                 forcing_norm, x0) -> BoundTrajectory:
    """||x_h|| + ||x_nh|| with trapezoidal quadrature on the grid.

    ||x_h|| = ||W(t)|| ||W^-1(t0) x0|| exp(int k l),
    ||x_nh|| = int theta(t, s) k(s) ||F(s)|| ds,
    theta(t, s) = exp(int_s^t (p + k l)).
    """
    if isinstance(l, LipschitzEnvelope):
        if not (l.is_linear or l.is_empty):
            raise ValidationError("linear_bound needs a linear envelope")
        region = l.region_radius
        l = l.terms[0][0] if l.terms else QuasiPeriodicScalar()
    else:
        region = math.inf
        if not isinstance(l, QuasiPeriodicScalar):
            l = QuasiPeriodicScalar(float(l))
    times = fd.times
    x0 = np.asarray(x0, dtype=float)
    w0 = fd.W[0]
    if np.linalg.cond(w0) > 1e14:
        raise ValidationError("W(t0) is degenerate")
    X0 = float(np.linalg.norm(np.linalg.solve(w0, x0)))
    kl = fd.k * np.asarray(l(times)) * np.ones(len(times))
    homogeneous = fd.sigma_max / fd.sigma_max[0] * X0 * np.exp(cumulative_trapezoid(kl, times))

    g = fd.k * forcing_on_grid(forcing_norm, times)
    growth = np.diff(cumulative_trapezoid(fd.p + kl, times))
    decay = np.exp(growth)
    h = np.diff(times)
    forced = np.zeros(len(times))
    acc = 0.0
    for i in range(len(times) - 1):
        acc = decay[i] * acc + 0.5 * h[i] * (decay[i] * g[i] + g[i + 1])
        forced[i + 1] = acc
    return BoundTrajectory(times, homogeneous + forced, "linear", X0, region_radius=region)


def auxiliary_solve(fd, L: LipschitzEnvelope, forcing_norm, X0: float,
                    cfg: IntegratorConfig | None = None, t_end: float | None = None,
                    reverse: bool = False) -> BoundTrajectory:
    """Integrate X' = p X + k L(t, X) + k ||F|| on the grid of ``fd``.

    p and k are linearly interpolated between samples; every step ends on a
    grid node so each step sees smooth coefficients.  An escape past the
    configured radius is recorded, not raised.  ``reverse=True`` integrates
    backward from ``t_end`` to t0 (X0 is then the terminal value), which turns
    unstable equilibria into attracting ones.
    """
    cfg = cfg or IntegratorConfig()
    if X0 < 0:
        raise ValidationError("X0 must be non-negative")
    times = np.asarray(fd.times)
    if t_end is not None:
        times = times[times <= t_end + 1e-9 * max(1.0, abs(t_end))]
    n = len(times)
    dt = float(times[1] - times[0])
    p_at = _interpolator(times, fd.p[:n])
    k_at = _interpolator(times, fd.k[:n])
    if forcing_norm is None:
        f_at = None
    elif callable(forcing_norm):
        f_at = forcing_norm
    else:
        f_at = _interpolator(times, forcing_on_grid(forcing_norm, fd.times)[:n])

    exps = L.exponents
    table = L.coefficient_table()
    if len(exps) and np.any(np.array([table(t) for t in times[:: max(1, n // 200)]]) < 0):
        raise ValidationError("envelope coefficients must be non-negative")
    const_coef = table(times[0]) if table.constant else None
    nterms = len(exps)

    def rhs(t, x):
        X = x[0]
        val = p_at(t) * X
        if nterms:
            c = const_coef if const_coef is not None else table(t)
            ax = abs(X)
            nl = 0.0
            for j in range(nterms):
                nl += c[j] * ax ** exps[j]
            val += k_at(t) * nl
        if f_at is not None:
            val += k_at(t) * f_at(t)
        return np.array([val])

    t_first, t_last = float(times[0]), float(times[-1])
    run_cfg = cfg.replace(grid_step=dt)
    if reverse:
        traj = integrate_ivp(lambda s, x: -rhs(t_last - s, x), 0.0, [X0], t_last - t_first,
                             run_cfg, on_escape="stop", grid_aligned=True)
        values = np.full(n, math.inf)
        m = len(traj.times)
        values[n - m:] = traj.states[::-1, 0]
        esc = None if traj.escape_time is None else t_last - traj.escape_time
        return BoundTrajectory(times, values, "nonlinear", float(X0), traj.escaped, esc,
                               L.region_radius)

    traj = integrate_ivp(rhs, t_first, [X0], t_last, run_cfg, on_escape="stop",
                         grid_aligned=True)
    values = np.full(n, math.inf)
    values[:len(traj.times)] = traj.states[:, 0]
    return BoundTrajectory(times, values, "nonlinear", float(X0), traj.escaped,
                           traj.escape_time, L.region_radius)


def bernoulli_blowup_time(p_const: float, k_const: float, c: float, alpha: float,
                          X0: float) -> float | None:
    """Finite escape time of X' = p X + k c X^alpha, or None if it stays finite."""
    if not alpha > 1:
        raise UnsupportedError("closed form requires alpha > 1")
    b = k_const * c
    if X0 <= 0 or b <= 0:
        return None
    u0 = X0 ** (1 - alpha)
    if p_const == 0:
        return u0 / ((alpha - 1) * b)
    # u(t) = (u0 + r) exp((1 - alpha) p t) - r with r = b / p; escape where u = 0
    r = b / p_const
    if u0 + r == 0:
        return None
    ratio = r / (u0 + r)
    if ratio <= 0:
        return None
    t = math.log(ratio) / ((1 - alpha) * p_const)
    return t if t > 0 else None


def bernoulli_closed_form(p_const: float, k_const: float, c: float, alpha: float,
                          X0: float, t):
    """Exact solution of X' = p X + k c X^alpha (alpha > 1) via u = X^(1 - alpha).

    Returns inf at and beyond the blow-up time.
    """
    if not alpha > 1:
        raise UnsupportedError("closed form requires alpha > 1")
    t = np.asarray(t, dtype=float)
    b = k_const * c
    if X0 == 0:
        out = np.zeros(t.shape)
    elif b == 0:
        out = X0 * np.exp(p_const * t)
    else:
        u0 = X0 ** (1 - alpha)
        if p_const == 0:
            u = u0 + (1 - alpha) * b * t
        else:
            r = b / p_const
            u = (u0 + r) * np.exp((1 - alpha) * p_const * t) - r
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(u > 0, np.abs(u) ** (1 / (1 - alpha)), math.inf)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ComparisonReport:
    max_violation: float
    first_violation_time: float | None
    passed: bool
    excursion_time: float | None = None


def verify_comparison(actual: Trajectory, bound: BoundTrajectory,
                      rtol: float = 1e-6) -> ComparisonReport:
    """Check ||x(t)|| <= bound(t) + rtol (1 + bound(t)) on the shared grid."""
    m = len(actual.times)
    if m > len(bound.times) or not np.allclose(actual.times, bound.times[:m], rtol=0,
                                               atol=1e-9):
        raise ValidationError("actual trajectory and bound are on different grids")
    if m < len(bound.times) and not actual.escaped:
        raise ValidationError("actual trajectory and bound are on different grids")
    norms = actual.norms()
    b = bound.values[:m]
    with np.errstate(invalid="ignore"):
        diff = np.where(np.isinf(b), -math.inf, norms - b)
        bad = diff > rtol * (1 + np.where(np.isinf(b), 0.0, b))
    first = float(actual.times[np.argmax(bad)]) if bad.any() else None
    outside = norms > bound.region_radius
    excursion = float(actual.times[np.argmax(outside)]) if outside.any() else None
    return ComparisonReport(float(np.max(diff)), first, not bad.any(), excursion)


@dataclass(frozen=True)
class StabilityReport:
    corollary1: bool
    corollary1_violation_time: float | None
    corollary2: bool
    nu1: float
    chi_bar_max: float
    chi_star: float
    chi_hat: float
    corollary3: bool
    spectral_floor: float
    corollary4_applicable: bool
    forced_bound: float | None = None
    M: float | None = None
    lam: float | None = None

    def summary(self) -> str:
        def mark(ok):
            return "pass" if ok else "fail"
        lines = [
            f"corollary 1 (p + k l < 0 for all t): {mark(self.corollary1)}"
            + (f", first violation t = {self.corollary1_violation_time:.6g}"
               if self.corollary1_violation_time is not None else ""),
            f"corollary 2 (sup(p + k l) < -nu1): {mark(self.corollary2)}, nu1 = {self.nu1:.6g}",
            f"chi_bar_max = {self.chi_bar_max:.6g}, chi_star = {self.chi_star:.6g}, "
            f"chi_hat = {self.chi_hat:.6g}",
            f"corollary 3 (chi_hat < 0): {mark(self.corollary3)}, "
            f"spectral floor = {self.spectral_floor:.6g}",
        ]
        if self.corollary4_applicable:
            lines.append(f"corollary 4 forced bound F0 M / lambda = {self.forced_bound:.6g} "
                         f"(M = {self.M:.6g}, lambda = {self.lam:.6g})")
        else:
            lines.append("corollary 4: not applicable (chi_hat >= 0)")
        return "\n".join(lines)


def stability_report(fd: FundamentalData, l, forcing_norm=None, tail_fraction: float = 0.25,
                     t1: float | None = None) -> StabilityReport:
    """Evaluate the linear-envelope stability criteria on the computed grid.

    limsup quantities are replaced by maxima over the tail window of the
    finite-horizon averages.  Corollary 4 constants are grid estimates:
    epsilon = 0.1 |chi_hat|, lambda = -(chi_hat + epsilon) and
    M = sup_{s <= t} theta(t, s) exp(lambda (t - s)).
    """
    if isinstance(l, LipschitzEnvelope):
        if not (l.is_linear or l.is_empty):
            raise ValidationError("stability criteria need a linear envelope")
        l = l.terms[0][0] if l.terms else QuasiPeriodicScalar()
    elif not isinstance(l, QuasiPeriodicScalar):
        l = QuasiPeriodicScalar(float(l))
    times = fd.times
    kl = fd.k * np.asarray(l(times)) * np.ones(len(times))
    rate = fd.p + kl
    t1 = times[0] if t1 is None else t1
    window = times >= t1
    bad = window & (rate >= 0)
    c1 = not bad.any()
    c1_time = float(times[np.argmax(bad)]) if bad.any() else None
    nu1 = float(-np.max(rate[window]))

    chi_bar = estimate_max_lyapunov(fd, tail_fraction)
    elapsed = times - times[0]
    tail = (times >= times[0] + (1 - tail_fraction) * elapsed[-1]) & (elapsed > 0)
    chi_star = float(np.max(cumulative_trapezoid(kl, times)[tail] / elapsed[tail]))
    chi_hat = chi_bar + chi_star

    floor = spectral_floor(fd)
    if chi_hat < 0:
        eps = 0.1 * abs(chi_hat)
        lam = -(chi_hat + eps)
        g = cumulative_trapezoid(rate, times) + lam * elapsed
        M = float(np.exp(np.max(g - np.minimum.accumulate(g))))
        F0 = float(np.max(forcing_on_grid(forcing_norm, times)))
        return StabilityReport(c1, c1_time, nu1 > 0, nu1, chi_bar, chi_star, chi_hat, True,
                               floor, True, F0 * M / lam, M, lam)
    return StabilityReport(c1, c1_time, nu1 > 0, nu1, chi_bar, chi_star, chi_hat, False,
                           floor, False)


def bounds_csv(times, actual=None, linear=None, nonlinear=None) -> str:
    """CSV of (t, actual_norm?, linear_bound?, nonlinear_bound?).

    The header row lists only the columns present.
    """
    names, units, cols = ["t"], ["time"], [times]
    for name, col in (("actual_norm", actual), ("linear_bound", linear),
                      ("nonlinear_bound", nonlinear)):
        if col is not None:
            names.append(name)
            units.append("state")
            cols.append(col)
    buf = io.StringIO()
    write_csv(buf, names, units, cols)
    return buf.getvalue()
