"""Fundamental matrix of x' = A(t) x and the scalar quantities derived from it.

p(t) is the logarithmic growth rate of the spectral norm ||W(t)||, k(t) the
running condition number sigma_max / sigma_min.  Both feed the scalar
comparison equation in :mod:`normbounds.bounds`.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ValidationError
from .integrator import IntegratorConfig, integrate_matrix_ode
from .system_model import SystemSpec

# relative gap (sigma_1 - sigma_2) / sigma_1 below which a crossing is flagged
CROSSING_GAP = 1e-6


class Normalization(enum.Enum):
    IDENTITY = "identity"
    FROZEN_REFERENCE = "frozen"


def frozen_reference_matrix(a_const) -> np.ndarray:
    """Real modal basis of a constant matrix, scaled to unit spectral norm.

    Complex pairs contribute their real and imaginary parts, so for an
    oscillatory mode the norm of exp(A t) V evolves purely as exp(Re(lambda) t).
    """
    a_const = np.asarray(a_const, dtype=float)
    vals, vecs = np.linalg.eig(a_const)
    cols = []
    used = np.zeros(len(vals), dtype=bool)
    for i, lam in enumerate(vals):
        if used[i]:
            continue
        used[i] = True
        v = vecs[:, i]
        if abs(lam.imag) > 1e-12 * max(1.0, abs(lam)):
            # locate and consume the conjugate partner
            partner = np.argmin(np.where(used, np.inf, np.abs(vals - lam.conjugate())))
            used[partner] = True
            if lam.imag < 0:
                v = v.conjugate()
            cols.extend([v.real, v.imag])
        else:
            cols.append(v.real)
    basis = np.column_stack(cols)
    if np.linalg.cond(basis) > 1e12:
        raise DegeneracyError("frozen matrix is defective; no modal reference basis")
    return basis / np.linalg.norm(basis, 2)


@dataclass(frozen=True)
class FundamentalData:
    times: np.ndarray
    W: np.ndarray
    sigma_max: np.ndarray
    sigma_min: np.ndarray
    log_sigma_max: np.ndarray
    p: np.ndarray
    k: np.ndarray
    p_bar: np.ndarray
    k_bar: np.ndarray
    crossings: np.ndarray
    log_det: np.ndarray
    normalization: Normalization = Normalization.IDENTITY

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def W0(self) -> np.ndarray:
        return self.W[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_csv(buf, ["t", "sigma_max", "sigma_min", "p", "k", "p_bar", "k_bar"],
                  ["time", "1", "1", "1/time", "1", "1/time", "1"],
                  [self.times, self.sigma_max, self.sigma_min, self.p, self.k,
                   self.p_bar, self.k_bar])
        return buf.getvalue()


def write_csv(fh, names, units, columns):
    """CSV with a ``#`` header line naming columns and units."""
    fh.write("# " + ",".join(f"{n} [{u}]" for n, u in zip(names, units)) + "\n")
    cols = [np.asarray(c, dtype=float) for c in columns]
    for row in zip(*cols):
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _uniform_step(times) -> float:
    steps = np.diff(times)
    if steps.size == 0:
        raise ValidationError("need at least two samples")
    h = steps[0]
    # the last step may be shorter when t_end is off-grid
    if np.any(np.abs(steps[:-1] - h) > 1e-9 * max(1.0, h)):
        raise ValidationError("grid is not uniform")
    return float(h)


def log_growth_rate(log_sigma, times) -> np.ndarray:
    """Central differences of ln sigma inside, one-sided at the ends."""
    _uniform_step(times)
    return np.gradient(np.asarray(log_sigma, dtype=float), np.asarray(times, dtype=float),
                       edge_order=1)


def compute_p(fd_or_sigma, times=None) -> np.ndarray:
    """p(t) = d ln ||W(t)|| / dt from sampled sigma_max.

    Accepts a :class:`FundamentalData` or a raw ``sigma_max`` series plus times.
    """
    if isinstance(fd_or_sigma, FundamentalData):
        return log_growth_rate(fd_or_sigma.log_sigma_max, fd_or_sigma.times)
    sigma = np.asarray(fd_or_sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise DegeneracyError("sigma_max must be positive")
    return log_growth_rate(np.log(sigma), times)


def cumulative_trapezoid(series, times) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    out = np.zeros_like(series)
    out[1:] = np.cumsum(0.5 * (series[1:] + series[:-1]) * np.diff(times))
    return out


def running_average(series, times) -> np.ndarray:
    """t -> (t - t0)^-1 * integral of the series from t0, trapezoidal."""
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    out = np.empty_like(series)
    out[0] = series[0]
    out[1:] = cumulative_trapezoid(series, times)[1:] / (times[1:] - times[0])
    return out


def initial_matrix(spec: SystemSpec, norm: Normalization) -> np.ndarray:
    n = spec.dimension
    if norm is Normalization.IDENTITY:
        return np.eye(n)
    return frozen_reference_matrix(spec.linear.constant_part())


def fundamental_from_matrices(times, scaled, log_scale, normalization) -> FundamentalData:
    times = np.asarray(times, dtype=float)
    sv = np.linalg.svd(scaled, compute_uv=False)
    smax, smin = sv[:, 0], sv[:, -1]
    if np.any(~(smin > 0)):
        i = int(np.argmax(~(smin > 0)))
        raise DegeneracyError(f"singular fundamental matrix sample at t = {times[i]:.6g}")
    log_smax = np.log(smax) + log_scale
    log_smin = np.log(smin) + log_scale
    p = log_growth_rate(log_smax, times)
    sigma_max, sigma_min = np.exp(log_smax), np.exp(log_smin)
    k = sigma_max / sigma_min
    n = scaled.shape[1]
    sign, logabs = np.linalg.slogdet(scaled)
    crossings = (sv[:, 0] - sv[:, 1]) / sv[:, 0] < CROSSING_GAP if n > 1 else np.zeros(len(times), bool)
    return FundamentalData(
        times=times,
        W=scaled * np.exp(log_scale)[:, None, None],
        sigma_max=sigma_max,
        sigma_min=sigma_min,
        log_sigma_max=log_smax,
        p=p,
        k=k,
        p_bar=running_average(p, times),
        k_bar=running_average(k, times),
        crossings=crossings,
        log_det=logabs + n * log_scale,
        normalization=normalization,
    )


def compute_fundamental(spec: SystemSpec, norm: Normalization = Normalization.FROZEN_REFERENCE,
                        t_end: float = 100.0,
                        cfg: IntegratorConfig | None = None) -> FundamentalData:
    cfg = cfg or IntegratorConfig()
    w0 = initial_matrix(spec, norm)
    traj = integrate_matrix_ode(spec.linear.evaluator(), w0, spec.t0, t_end, cfg)
    return fundamental_from_matrices(traj.times, traj.scaled, traj.log_scale, norm)


def estimate_max_lyapunov(fd: FundamentalData, tail_fraction: float = 0.25) -> float:
    """Finite-horizon limsup proxy of t^-1 ln sigma_max(t).

    Growth is measured relative to sigma_max(t0), which is 1 under both
    normalizations.
    """
    if not 0 < tail_fraction < 1:
        raise ValidationError("tail_fraction must lie in (0, 1)")
    elapsed = fd.times - fd.times[0]
    start = fd.times[0] + (1 - tail_fraction) * elapsed[-1]
    mask = (fd.times >= start) & (elapsed > 0)
    if mask.sum() < 10:
        raise ValidationError("tail window holds fewer than 10 samples")
    rates = (fd.log_sigma_max[mask] - fd.log_sigma_max[0]) / elapsed[mask]
    return float(rates.max())


def spectral_floor(fd: FundamentalData) -> float:
    return float(fd.sigma_min.min())


def liouville_residual(fd: FundamentalData, spec: SystemSpec) -> float:
    """Max relative error of det W(t) against det W0 * exp(int tr A)."""
    tr = spec.linear.trace()
    expected = fd.log_det[0] + tr.integral(fd.times[0], fd.times)
    return float(np.max(np.abs(np.expm1(fd.log_det - expected))))


def reconstruction_residual(fd: FundamentalData) -> float:
    """Max relative error of exp(cumtrapz p) against sigma_max / sigma_max(t0)."""
    recon = cumulative_trapezoid(fd.p, fd.times)
    return float(np.max(np.abs(np.expm1(recon - (fd.log_sigma_max - fd.log_sigma_max[0])))))
