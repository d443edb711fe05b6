"""Trapping and stability region estimates.

Three routes to the critical initial value of the comparison equation:

* frozen suprema of p, k, L, ||F|| give the autonomous Q(X) whose positive
  roots split the behavior of solutions;
* long-time averages give a sharper autonomous model, corrected by a
  measured margin mu between the averaged fixed point and the oscillating
  solution of the time-varying equation;
* bisection on X0 with the time-varying equation itself.

Scalar radii map to ellipsoids ||W^-1(t0) x0|| <= radius of initial states.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import LipschitzEnvelope, auxiliary_solve, forcing_on_grid
from .errors import BracketError, DegeneracyError, ValidationError
from .integrator import IntegratorConfig, integrate_ivp
from .linear_analysis import write_csv
from .system_model import SystemSpec

STABLE = "stable"
UNSTABLE = "unstable"
SEMISTABLE = "semistable"

TANGENCY_TOL = 1e-8


@dataclass(frozen=True)
class FrozenCoefficients:
    p_hat: float
    k_hat: float
    L_hat: tuple[tuple[float, float], ...]
    F_hat: float
    provenance: str
    window: float | None = None
    converged: bool | None = None

    def __post_init__(self):
        if self.provenance not in ("supremum", "average"):
            raise ValidationError("provenance must be 'supremum' or 'average'")
        if self.F_hat < 0 or any(c < 0 for c, _ in self.L_hat):
            raise ValidationError("frozen envelope and forcing must be non-negative")
        object.__setattr__(self, "L_hat", tuple((float(c), float(e)) for c, e in self.L_hat))

    def Q(self, X):
        """Right-hand side p X + k L(X) + k F of the autonomous comparison equation."""
        X = np.asarray(X, dtype=float)
        nl = sum(c * X ** e for c, e in self.L_hat) if self.L_hat else 0.0
        return self.p_hat * X + self.k_hat * nl + self.k_hat * self.F_hat

    def dQ(self, X):
        X = np.asarray(X, dtype=float)
        nl = sum(c * e * X ** (e - 1) for c, e in self.L_hat) if self.L_hat else 0.0
        return self.p_hat + self.k_hat * nl

    def balance_scale(self) -> float:
        """Magnitude at which the leading nonlinear term balances the linear one."""
        p = abs(self.p_hat)
        nonlinear = [(c, e) for c, e in self.L_hat if e > 1 and c > 0]
        if nonlinear and p > 0:
            c, e = max(nonlinear, key=lambda t: t[1])
            return (p / (self.k_hat * c)) ** (1 / (e - 1))
        slope = p - self.k_hat * sum(c for c, e in self.L_hat if e == 1)
        if self.F_hat > 0 and slope > 0:
            return self.k_hat * self.F_hat / slope
        return 1.0


def _coefficient_samples(L: LipschitzEnvelope, times):
    table = L.coefficient_table()
    return np.array([table(t) for t in times]) if L.terms else np.zeros((len(times), 0))


def freeze_sup(fd, L: LipschitzEnvelope, forcing_norm=None) -> FrozenCoefficients:
    """Suprema over the grid; analytic bounds where the coefficient is quasi-periodic."""
    p_hat = float(np.max(fd.p))
    k_hat = float(np.max(fd.k))
    p_model = getattr(fd, "p_model", None)
    k_model = getattr(fd, "k_model", None)
    if p_model is not None:
        p_hat = p_model.offset + sum(abs(h.amplitude) for h in p_model.terms)
    if k_model is not None:
        k_hat = k_model.offset + sum(abs(h.amplitude) for h in k_model.terms)
    L_hat = tuple((c.bound(), e) for c, e in L.terms)
    F_grid = float(np.max(forcing_on_grid(forcing_norm, fd.times)))
    F_bound = getattr(forcing_norm, "bound", None)
    F_hat = max(F_grid, F_bound) if F_bound is not None else F_grid
    return FrozenCoefficients(p_hat, k_hat, L_hat, F_hat, "supremum")


def _window_mean(values, times, t_start, t_stop) -> float:
    """Trapezoidal mean over [t_start, t_stop], the partial last cell interpolated."""
    values = np.asarray(values, dtype=float)
    inside = (times >= t_start) & (times <= t_stop)
    idx = np.nonzero(inside)[0]
    t = times[idx]
    v = values[idx]
    if t[-1] < t_stop and idx[-1] + 1 < len(times):
        j = idx[-1] + 1
        w = (t_stop - times[j - 1]) / (times[j] - times[j - 1])
        t = np.append(t, t_stop)
        v = np.append(v, values[j - 1] + w * (values[j] - values[j - 1]))
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)) / (t_stop - t_start))


def freeze_avg(fd, L: LipschitzEnvelope, forcing_norm=None, window: float | None = None,
               tol: float = 0.01) -> FrozenCoefficients:
    """Means over [t0, t0 + window] of p, k, ||F|| and the envelope coefficients.

    ``converged`` is set when the means over the window and its first half
    agree within ``tol`` (relative).
    """
    times = fd.times
    t0 = float(times[0])
    horizon = float(times[-1]) - t0
    window = horizon if window is None else float(window)
    if window > horizon * (1 + 1e-12) or window <= 0:
        raise ValidationError(f"averaging window {window} exceeds the horizon {horizon}")
    F = forcing_on_grid(forcing_norm, times)
    C = _coefficient_samples(L, times)

    def means(T):
        return (_window_mean(fd.p, times, t0, t0 + T), _window_mean(fd.k, times, t0, t0 + T),
                _window_mean(F, times, t0, t0 + T),
                [_window_mean(C[:, j], times, t0, t0 + T) for j in range(C.shape[1])])

    p_hat, k_hat, F_hat, c_hat = means(window)
    p_half, k_half, F_half, c_half = means(window / 2)

    def close(a, b):
        return abs(a - b) <= tol * max(abs(a), 1e-12) or a == b

    converged = (close(p_hat, p_half) and close(k_hat, k_half) and close(F_hat, F_half)
                 and all(close(a, b) for a, b in zip(c_hat, c_half)))
    L_hat = tuple((max(c, 0.0), e) for c, (_, e) in zip(c_hat, L.terms))
    return FrozenCoefficients(p_hat, k_hat, L_hat, max(F_hat, 0.0), "average", window, converged)


@dataclass(frozen=True)
class RootSet:
    roots: tuple[float, ...]
    classifications: tuple[str, ...]
    X_max: float

    def __len__(self):
        return len(self.roots)

    def of_kind(self, kind: str) -> list[float]:
        return [r for r, c in zip(self.roots, self.classifications) if c == kind]


def _bisect(f, a, b, fa, rtol=1e-13):
    for _ in range(400):
        m = 0.5 * (a + b)
        if b - a <= rtol * abs(m) or m in (a, b):
            break
        fm = f(m)
        if fm == 0:
            return m
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def find_roots(frozen: FrozenCoefficients, X_max: float | None = None,
               samples: int = 4000) -> RootSet:
    """Positive roots of Q on (0, X_max] by scan, bisection and tangency search."""
    if X_max is None:
        X_max = 10.0 * frozen.balance_scale()
    if not X_max > 0:
        raise ValidationError("X_max must be positive")
    if frozen.p_hat > 0 and frozen.k_hat >= 0:
        # Q >= 0 everywhere: no splitting points
        return RootSet((), (), X_max)

    def Q(x):
        return float(frozen.Q(x))

    grid = np.unique(np.concatenate([
        np.geomspace(X_max * 1e-12, X_max, samples),
        np.linspace(0, X_max, samples)[1:],
    ]))
    vals = frozen.Q(grid)
    scale = 1.0 + np.abs(frozen.p_hat) * grid

    roots, kinds = [], []
    for i in range(len(grid) - 1):
        a, b, fa, fb = grid[i], grid[i + 1], vals[i], vals[i + 1]
        if fa == 0 and i > 0:
            continue
        if fb == 0 or (fa < 0) != (fb < 0):
            r = b if fb == 0 else _bisect(Q, a, b, fa)
            roots.append(r)
            kinds.append(None)
    # tangential touches: local minima of |Q| with no sign change
    absq = np.abs(vals) / scale
    for i in range(1, len(grid) - 1):
        if absq[i] <= absq[i - 1] and absq[i] <= absq[i + 1] and absq[i] < 1e-3:
            if (vals[i - 1] < 0) != (vals[i + 1] < 0):
                continue
            a, b = grid[i - 1], grid[i + 1]
            sgn = 1.0 if vals[i] >= 0 else -1.0
            for _ in range(200):  # golden-section on sgn * Q
                m1 = b - 0.618033988749895 * (b - a)
                m2 = a + 0.618033988749895 * (b - a)
                if sgn * Q(m1) < sgn * Q(m2):
                    b = m2
                else:
                    a = m1
                if b - a < 1e-14 * b:
                    break
            x = 0.5 * (a + b)
            if abs(Q(x)) <= TANGENCY_TOL * (1 + abs(frozen.p_hat) * x) and \
                    all(abs(x - r) > 1e-6 * x for r in roots):
                roots.append(x)
                kinds.append(SEMISTABLE)

    order = np.argsort(roots)
    roots = [float(roots[i]) for i in order]
    kinds = [kinds[i] for i in order]
    for i, r in enumerate(roots):
        if kinds[i] is None:
            delta = max(1e-7 * r, 1e-12)
            below, above = Q(r - delta), Q(r + delta)
            if below < 0 < above:
                kinds[i] = UNSTABLE
            elif below > 0 > above:
                kinds[i] = STABLE
            else:
                kinds[i] = SEMISTABLE
    return RootSet(tuple(roots), tuple(kinds), float(X_max))


@dataclass(frozen=True)
class AttractorReport:
    method: str
    theorem: str
    radii: dict = field(default_factory=dict)
    roots: RootSet | None = None
    splitting_value: float | None = None
    mu: float = 0.0
    frozen: FrozenCoefficients | None = None
    inconclusive: bool = False
    note: str = ""

    @property
    def boundary_radius(self) -> float | None:
        """Largest X0 whose ellipsoid the estimate certifies, or None."""
        for key in ("basin", "trapping"):
            if key in self.radii:
                return self.radii[key]
        return None

    @property
    def finite(self) -> bool:
        return self.boundary_radius is not None and not self.inconclusive


def classify_report(roots: RootSet, frozen: FrozenCoefficients, mu: float = 0.0) -> AttractorReport:
    """Map the root structure of Q to the applicable theorem and radii.

    With averaged coefficients every radius shrinks to d - mu and every
    guaranteed level grows to d + mu.
    """
    for r in roots.roots:
        if abs(float(frozen.Q(r))) > 1e-6 * (1 + abs(frozen.p_hat) * r + frozen.k_hat * frozen.F_hat):
            raise ValidationError(f"{r} is not a root of the given frozen equation")
    averaged = frozen.provenance == "average"
    method = "averaged" if averaged else "frozen"
    mu = float(mu) if averaged else 0.0
    forced = frozen.F_hat > 0
    kinds = roots.classifications

    def done(theorem, radii, note=""):
        radii = {k: v - mu if k in ("basin", "trapping", "inner") else v + mu
                 for k, v in radii.items()}
        bad = any(v < 0 for k, v in radii.items() if k in ("basin", "trapping", "inner"))
        return AttractorReport(method, theorem, radii, roots, mu=mu, frozen=frozen,
                               inconclusive=bad, note=note or ("d - mu < 0" if bad else ""))

    if not roots.roots:
        return AttractorReport(method, "growth", {}, roots, mu=mu, frozen=frozen,
                               inconclusive=True, note="no finite estimate")
    if frozen.p_hat >= 0:
        return AttractorReport(method, "uncatalogued", {}, roots, mu=mu, frozen=frozen,
                               inconclusive=True, note="roots with p_hat >= 0")
    n = len(roots.roots)
    if not forced and n == 1:
        d = roots.roots[0]
        if kinds[0] == UNSTABLE:
            return done("Thm5-case1" if averaged else "Thm3-case1", {"basin": d, "level": d})
        if kinds[0] == STABLE:
            return done("Thm5-case1" if averaged else "Thm3-case2",
                        {"trapping": d, "level": d, "limsup": d})
    if forced and n == 2 and kinds == (STABLE, UNSTABLE):
        d2, d1 = roots.roots
        return done("Thm5-case2" if averaged else "Thm4-case1",
                    {"trapping": d1, "level": d1, "inner": d2, "limsup": d2})
    if forced and n == 1 and kinds[0] == SEMISTABLE:
        d = roots.roots[0]
        return done("Thm5-case3" if averaged else "Thm4-case2", {"trapping": d, "level": d})
    return AttractorReport(method, "uncatalogued", {}, roots, mu=mu, frozen=frozen,
                           inconclusive=True, note="root pattern outside the catalogued cases")


def splitting_report(value: float, forced: bool) -> AttractorReport:
    if forced:
        return AttractorReport("numeric-splitting", "Cor5-case2", {"trapping": value},
                               splitting_value=value)
    return AttractorReport("numeric-splitting", "Cor5-case1", {"basin": value},
                           splitting_value=value)


@dataclass(frozen=True)
class MuEstimate:
    mu: float
    reliable: bool
    stable: bool
    window: tuple[float, float]

    def __float__(self):
        return self.mu


def estimate_mu(fd, L: LipschitzEnvelope, forcing_norm, d: float, horizon: float | None = None,
                stable: bool | None = None, transient: float = 0.2,
                cfg: IntegratorConfig | None = None) -> MuEstimate:
    """Sup deviation between the fixed point d of the averaged equation and the
    bounded oscillating solution of the time-varying comparison equation.

    A stable d is approached forward in time from X0 = d.  An unstable d is
    tracked backward in time, where it attracts, from X(horizon) = d.  The
    first ``transient`` fraction of the run is discarded either way.
    """
    cfg = cfg or IntegratorConfig()
    if not d > 0:
        raise ValidationError("d must be positive")
    times = np.asarray(fd.times)
    t0 = float(times[0])
    t_end = float(times[-1]) if horizon is None else t0 + float(horizon)
    if stable is None:
        avg = freeze_avg(fd, L, forcing_norm, t_end - t0)
        stable = float(avg.dQ(d)) < 0
    skip = transient * (t_end - t0)
    if stable:
        run = auxiliary_solve(fd, L, forcing_norm, d, cfg, t_end=t_end)
        mask = run.times >= t0 + skip
        window = (t0 + skip, t_end)
    else:
        run = auxiliary_solve(fd, L, forcing_norm, d, cfg, t_end=t_end, reverse=True)
        mask = run.times <= t_end - skip
        window = (t0, t_end - skip)
    dev = np.abs(run.values[mask] - d)
    reliable = not run.escaped and bool(np.all(run.values[mask] > 1e-3 * d))
    mu = float(np.max(dev)) if np.all(np.isfinite(dev)) else math.inf
    return MuEstimate(mu, reliable, bool(stable), window)


def _aux_outcome(fd, L, forcing_norm, X0, t_end, criterion, cfg):
    run = auxiliary_solve(fd, L, forcing_norm, X0, cfg, t_end=t_end)
    final = run.final
    if criterion == "decays":
        ok = not run.escaped and final < 1e-3 * X0
    else:
        ok = not run.escaped
    return ok, final


CRITERIA = ("decays", "bounded")


def splitting_value_search(fd, L: LipschitzEnvelope, forcing_norm, X_lo: float, X_hi: float,
                           horizon: float | None = None, criterion: str = "decays",
                           rtol: float = 1e-4, cfg: IntegratorConfig | None = None) -> float:
    """Largest X0 (to ``rtol``) for which the comparison equation keeps the criterion.

    ``decays``: no escape and X(horizon) < 1e-3 X0.  ``bounded``: no escape.
    """
    if criterion not in CRITERIA:
        raise ValidationError(f"criterion must be one of {CRITERIA}")
    if not 0 <= X_lo < X_hi:
        raise ValidationError("need 0 <= X_lo < X_hi")
    if criterion == "decays" and X_lo <= 0:
        raise ValidationError("the decays criterion needs X_lo > 0")
    cfg = cfg or IntegratorConfig()
    t_end = None if horizon is None else float(fd.times[0]) + horizon
    seen = []

    def probe(x):
        ok, final = _aux_outcome(fd, L, forcing_norm, x, t_end, criterion, cfg)
        seen.append((x, final))
        ordered = sorted(seen)
        for (xa, fa), (xb, fb) in zip(ordered, ordered[1:]):
            if fa > fb * (1 + 1e-6) + 1e-12:
                raise BracketError(
                    f"comparison solutions not monotone in X0: X({xa:.6g}) ends at {fa:.6g} "
                    f"> X({xb:.6g}) ends at {fb:.6g}")
        return ok

    if not probe(X_lo):
        raise BracketError(f"criterion '{criterion}' fails at the lower bracket X0 = {X_lo:.6g}")
    if probe(X_hi):
        raise BracketError(f"criterion '{criterion}' holds at the upper bracket X0 = {X_hi:.6g}")
    lo, hi = X_lo, X_hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class EllipsoidSpec:
    t0: float
    W_inv: np.ndarray
    radius: float

    def measure(self, x) -> float:
        return float(np.linalg.norm(self.W_inv @ np.asarray(x, dtype=float)))

    def contains(self, x) -> bool:
        return self.measure(x) <= self.radius

    def intercept(self, direction) -> float:
        """Distance from the origin to the boundary along ``direction``."""
        e = np.asarray(direction, dtype=float)
        e = e / np.linalg.norm(e)
        return self.radius / float(np.linalg.norm(self.W_inv @ e))

    def boundary(self, n_angles: int = 72):
        """(angle, intercept) pairs for a 2-D ellipsoid."""
        if self.W_inv.shape != (2, 2):
            raise ValidationError("boundary polylines are defined for 2-D systems")
        angles = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
        return angles, np.array([self.intercept((math.cos(a), math.sin(a))) for a in angles])

    def sample(self, rng, count: int) -> np.ndarray:
        """Uniform samples inside the ellipsoid."""
        n = self.W_inv.shape[0]
        g = rng.standard_normal((count, n))
        g /= np.linalg.norm(g, axis=1)[:, None]
        r = self.radius * rng.random(count) ** (1 / n)
        W = np.linalg.inv(self.W_inv)
        return (g * r[:, None]) @ W.T


def map_to_ellipsoid(fd_or_w0, radius: float) -> EllipsoidSpec:
    if hasattr(fd_or_w0, "W"):
        w0, t0 = fd_or_w0.W[0], float(fd_or_w0.times[0])
    else:
        w0, t0 = np.asarray(fd_or_w0, dtype=float), 0.0
    if not radius >= 0:
        raise ValidationError("radius must be non-negative")
    if np.linalg.cond(w0) > 1e14:
        raise DegeneracyError("W(t0) is singular")
    return EllipsoidSpec(t0, np.linalg.inv(w0), float(radius))


def direct_basin_probe(spec: SystemSpec, direction, horizon: float = 100.0,
                       escape_radius: float = 1e3, criterion: str = "decays",
                       s_lo: float = 1e-3, s_hi: float = 10.0, rtol: float = 1e-3,
                       cfg: IntegratorConfig | None = None) -> float:
    """Critical amplitude s along x0 = s * direction for the full system.

    ``decays``: no escape and ||x(horizon)|| < 1e-3 ||x0||.  ``bounded``:
    no escape.  Returns ``s_hi`` when the whole bracket qualifies.
    """
    if criterion not in CRITERIA:
        raise ValidationError(f"criterion must be one of {CRITERIA}")
    cfg = (cfg or IntegratorConfig(rtol=1e-8, atol=1e-11, grid_step=0.05)).replace(
        escape_radius=escape_radius)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    rhs = spec.rhs_function()

    def ok(s):
        tr = integrate_ivp(rhs, spec.t0, s * e, spec.t0 + horizon, cfg, on_escape="stop")
        if tr.escaped:
            return False
        return criterion == "bounded" or np.linalg.norm(tr.final) < 1e-3 * s

    if not ok(s_lo):
        raise BracketError(f"criterion '{criterion}' fails at the lower amplitude {s_lo:.6g}")
    if ok(s_hi):
        return s_hi
    lo, hi = s_lo, s_hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def estimates_csv(rows) -> str:
    """Table of region estimates.

    Each row is (method, kind, value, mu, radius, angle, intercept): the root
    or critical value found by ``method``, the margin applied, the resulting
    ellipsoid radius and its intercept along the direction at ``angle``.
    """
    names = ["method", "kind", "value", "mu", "radius", "angle", "intercept"]
    units = ["-", "-", "state", "state", "state", "rad", "state"]
    buf = io.StringIO()
    buf.write("# " + ",".join(f"{n} [{u}]" for n, u in zip(names, units)) + "\n")
    for method, kind, *nums in rows:
        buf.write(f"{method},{kind}," + ",".join(repr(float(v)) for v in nums) + "\n")
    return buf.getvalue()


def boundary_csv(angles, intercepts) -> str:
    buf = io.StringIO()
    write_csv(buf, ["angle", "intercept"], ["rad", "state"], [angles, intercepts])
    return buf.getvalue()
