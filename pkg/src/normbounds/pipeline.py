"""Analysis pipelines shared by the command line, the figure presets and replay.

Every pipeline is a pure function of (spec, options, integrator settings) and
returns its outputs as ``{file name: text}`` so the caller decides where the
bytes go.  Identical inputs give identical bytes.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import attractor as at
from .bounds import (auxiliary_solve, bounds_csv, envelope_from_polynomial, linear_bound,
                     linear_l_from_energy, verify_comparison)
from .errors import BracketError, NormBoundsError, ValidationError
from .integrator import IntegratorConfig, integrate_ivp
from .linear_analysis import Normalization, compute_fundamental, write_csv
from .system_model import SystemSpec, vdp_preset

_FIG2 = dict(alpha2=0.1, omega2=2 * math.pi, a1=0.5, a2=0.5, r1=math.pi, r2=7.0)
_FIG3 = dict(alpha2=-0.05, r1=3.2 * math.pi, r2=13.0, omega2=8 * math.pi)

# name -> (preset parameters, pipeline options, assumptions recorded in the manifest)
FIGURES = {
    "fig1": (dict(alpha2=0.1), dict(t_end=200.0),
             ["parametric excitation switched off (omega1 = 0)"]),
    "fig2.1": (dict(_FIG2, a=0.0), dict(t_end=100.0, x0=[0.3, 0.0]),
               ["x0 = (0.3, 0) chosen so the nonlinear bound stays finite"]),
    "fig2.2": (dict(_FIG2, a=0.01), dict(t_end=100.0, x0=[0.3, 0.0]),
               ["x0 = (0.3, 0) chosen so the nonlinear bound stays finite"]),
    "fig3.1": (dict(_FIG3, a1=0.1, a2=0.1, a=0.01), dict(t_end=200.0),
               ["forcing frequency 8 pi assumed"]),
    "fig3.2": (dict(_FIG3, a1=5.0, a2=5.0, a=0.0), dict(t_end=200.0),
               ["'omega = 8 pi' read as the forcing frequency"]),
    "fig3.3": (dict(_FIG3, a1=5.0, a2=5.0, a=0.05), dict(t_end=200.0),
               ["'omega = 8 pi' read as the forcing frequency"]),
    "fig4": (dict(_FIG3, a1=5.0, a2=5.0, a=0.05), dict(t_end=200.0),
             ["'omega = 8 pi' read as the forcing frequency"]),
}

def figure_spec(name: str) -> SystemSpec:
    if name not in FIGURES:
        raise ValidationError(f"unknown figure '{name}'; choose from {', '.join(FIGURES)}")
    return vdp_preset(**FIGURES[name][0])


@dataclass
class Result:
    outputs: dict[str, str] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)
    inconclusive: bool = False


def _norm(name) -> Normalization:
    try:
        return Normalization(name)
    except ValueError:
        raise ValidationError(f"normalization must be 'identity' or 'frozen', got {name!r}") from None


def run_fundamental(spec: SystemSpec, cfg: IntegratorConfig, normalization: str = "frozen",
                    t_end: float = 100.0, out: str = "fundamental.csv") -> Result:
    fd = compute_fundamental(spec, _norm(normalization), t_end, cfg)
    res = Result({out: fd.to_csv()})
    res.messages.append(f"p_bar(t_end) = {fd.p_bar[-1]:.6g}, k_bar(t_end) = {fd.k_bar[-1]:.6g}")
    return res


def _lipschitz(spec, x0, lipschitz):
    if lipschitz is not None:
        return float(lipschitz)
    if not spec.nonlinear.terms:
        return 0.0
    return linear_l_from_energy(spec, x0)


def run_bound(spec: SystemSpec, cfg: IntegratorConfig, x0, envelope: str = "both",
              t_end: float = 100.0, lipschitz: float | None = None,
              out: str = "bounds.csv") -> Result:
    if envelope not in ("linear", "nonlinear", "both"):
        raise ValidationError("envelope must be linear, nonlinear or both")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.dimension,):
        raise ValidationError(f"x0 needs {spec.dimension} components")
    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, t_end, cfg)
    F = spec.forcing_norm()
    actual = integrate_ivp(spec.rhs_function(), spec.t0, x0, fd.times[-1],
                           cfg.replace(grid_step=fd.dt), on_escape="stop")
    norms = np.full(len(fd.times), math.inf)
    norms[:len(actual.times)] = actual.norms()
    res = Result()
    lin = nl = None
    if envelope in ("linear", "both"):
        l = _lipschitz(spec, x0, lipschitz)
        lin = linear_bound(fd, l, F, x0)
        rep = verify_comparison(actual, lin)
        res.messages.append(f"linear bound (l = {l:.6g}): "
                            + ("dominates" if rep.passed else
                               f"violated from t = {rep.first_violation_time:.6g}"))
        res.inconclusive |= not rep.passed
    if envelope in ("nonlinear", "both"):
        L = envelope_from_polynomial(spec.nonlinear)
        X0 = float(np.linalg.norm(np.linalg.solve(fd.W0, x0)))
        nl = auxiliary_solve(fd, L, F, X0, cfg)
        rep = verify_comparison(actual, nl)
        res.messages.append(f"nonlinear bound (X0 = {X0:.6g}): "
                            + ("dominates" if rep.passed else
                               f"violated from t = {rep.first_violation_time:.6g}")
                            + (f", escapes at t = {nl.escape_time:.6g}" if nl.escaped else ""))
        res.inconclusive |= not rep.passed
    res.outputs[out] = bounds_csv(fd.times, norms, None if lin is None else lin.values,
                                  None if nl is None else nl.values)
    return res


METHODS = ("sup", "avg", "numeric", "probe")


def _grow_bracket(ok, lo, hi_max):
    hi = 2 * lo
    while hi <= hi_max:
        if not ok(hi):
            return hi
        hi *= 2
    return None


def run_attractor(spec: SystemSpec, cfg: IntegratorConfig, method: str = "all",
                  directions=("e1",), t_end: float = 200.0, probe_horizon: float = 100.0,
                  escape_radius: float = 1e3, out: str = "estimates.csv",
                  boundary: str | None = None) -> Result:
    methods = METHODS if method == "all" else (method,)
    if any(m not in METHODS for m in methods):
        raise ValidationError(f"method must be one of {', '.join(METHODS)} or all")
    dirs = []
    for d in directions:
        if isinstance(d, str):
            if not (d[:1] == "e" and d[1:].isdigit() and 1 <= int(d[1:]) <= spec.dimension):
                raise ValidationError(f"direction {d!r} does not fit a {spec.dimension}-D state")
            vec = np.eye(spec.dimension)[int(d[1:]) - 1]
        else:
            vec = np.asarray(d, dtype=float)
        if vec.shape != (spec.dimension,) or not np.linalg.norm(vec) > 0:
            raise ValidationError(f"direction {d!r} does not fit a {spec.dimension}-D state")
        dirs.append(vec / np.linalg.norm(vec))

    def angle(e):
        return math.atan2(e[1], e[0]) if len(e) == 2 else math.nan

    fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, t_end, cfg)
    L = envelope_from_polynomial(spec.nonlinear)
    F = spec.forcing_norm()
    forced = spec.forcing_bound() > 0
    criterion = "bounded" if forced else "decays"
    res = Result()
    rows = []
    radii = {}

    for m in methods:
        if m in ("sup", "avg"):
            frozen = at.freeze_sup(fd, L, F) if m == "sup" else at.freeze_avg(fd, L, F)
            roots = at.find_roots(frozen)
            mus = [0.0] * len(roots)
            if m == "avg":
                mus = []
                for d, kind in zip(roots.roots, roots.classifications):
                    est = at.estimate_mu(fd, L, F, d, stable=kind == at.STABLE, cfg=cfg)
                    if not est.reliable:
                        res.messages.append(f"mu at d = {d:.6g} unreliable")
                    mus.append(est.mu)
            report = at.classify_report(roots, frozen, max(mus) if mus else 0.0)
            res.messages.append(
                f"{m}: p_hat = {frozen.p_hat:.6g}, k_hat = {frozen.k_hat:.6g}, "
                f"F_hat = {frozen.F_hat:.6g}, roots = {[round(r, 6) for r in roots.roots]}, "
                f"case {report.theorem}" + (f" ({report.note})" if report.note else ""))
            for d, kind, mu in zip(roots.roots, roots.classifications, mus):
                for e in dirs:
                    r = d - mu
                    icpt = at.map_to_ellipsoid(fd, max(r, 0.0)).intercept(e) if r >= 0 else math.nan
                    rows.append((m, kind, d, mu, r, angle(e), icpt))
            if report.finite:
                radii[m] = report.boundary_radius
        elif m == "numeric":
            def ok(x):
                return at._aux_outcome(fd, L, F, x, None, criterion, cfg)[0]
            lo = 1e-3
            try:
                if not ok(lo):
                    raise BracketError(f"criterion '{criterion}' fails already at X0 = {lo}")
                hi = _grow_bracket(ok, lo, 1e4)
                if hi is None:
                    res.messages.append(f"numeric: criterion '{criterion}' holds up to X0 = 1e4")
                    continue
                value = at.splitting_value_search(fd, L, F, max(lo, hi / 2), hi,
                                                  criterion=criterion, cfg=cfg)
            except BracketError as exc:
                res.messages.append(f"numeric: no splitting value ({exc})")
                continue
            rep = at.splitting_report(value, forced)
            res.messages.append(f"numeric: splitting value = {value:.6g} ({rep.theorem})")
            radii[m] = value
            for e in dirs:
                rows.append((m, criterion, value, 0.0, value, angle(e),
                             at.map_to_ellipsoid(fd, value).intercept(e)))
        else:
            for e in dirs:
                try:
                    s = at.direct_basin_probe(spec, e, probe_horizon, escape_radius, criterion,
                                              s_lo=1e-3, s_hi=20.0)
                except BracketError as exc:
                    res.messages.append(f"probe: {exc}")
                    continue
                res.messages.append(f"probe along angle {angle(e):.6g}: {s:.6g}")
                rows.append((m, criterion, s, 0.0, math.nan, angle(e), s))

    estimating = [m for m in methods if m != "probe"]
    if (estimating and not radii) or not rows:
        res.messages.append("verdict: no finite estimate")
        res.inconclusive = True
    res.outputs[out] = at.estimates_csv(rows)
    if boundary is not None and spec.dimension == 2 and radii:
        names = list(radii)
        angles = None
        cols = []
        for name in names:
            angles, icpt = at.map_to_ellipsoid(fd, radii[name]).boundary()
            cols.append(icpt)
        buf = io.StringIO()
        write_csv(buf, ["angle"] + [f"{n}_intercept" for n in names],
                  ["rad"] + ["state"] * len(names), [angles] + cols)
        res.outputs[boundary] = buf.getvalue()
    return res


def run_figure(name: str, cfg: IntegratorConfig) -> Result:
    spec = figure_spec(name)
    opts = FIGURES[name][1]
    if name == "fig1":
        ident = compute_fundamental(spec, Normalization.IDENTITY, opts["t_end"], cfg)
        frozen = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, opts["t_end"], cfg)
        buf = io.StringIO()
        write_csv(buf, ["t", "p_identity", "p_frozen", "p_bar_identity"],
                  ["time", "1/time", "1/time", "1/time"],
                  [ident.times, ident.p, frozen.p, ident.p_bar])
        return Result({"fig1_p.csv": buf.getvalue()},
                      [f"p_bar_identity(t_end) = {ident.p_bar[-1]:.6g}"])
    if name == "fig4":
        fd = compute_fundamental(spec, Normalization.FROZEN_REFERENCE, opts["t_end"], cfg)
        buf = io.StringIO()
        write_csv(buf, ["t", "p", "k", "p_bar", "k_bar"],
                  ["time", "1/time", "1", "1/time", "1"], [fd.times, fd.p, fd.k, fd.p_bar, fd.k_bar])
        return Result({"fig4_coefficients.csv": buf.getvalue()},
                      [f"p_bar(t_end) = {fd.p_bar[-1]:.6g}, k_bar(t_end) = {fd.k_bar[-1]:.6g}"])
    if name.startswith("fig2"):
        return run_bound(spec, cfg, opts["x0"], "both", opts["t_end"], out=f"{name}_bounds.csv")
    return run_attractor(spec, cfg, "all", ("e1", "e2"), opts["t_end"],
                         out=f"{name}_estimates.csv", boundary=f"{name}_boundary.csv")


__all__ = ["FIGURES", "Result", "figure_spec", "run_fundamental", "run_bound",
           "run_attractor", "run_figure", "NormBoundsError"]
