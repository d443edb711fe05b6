"""Adaptive explicit integration on a uniform output grid.

Dormand-Prince 5(4) with FSAL and the 4th-order continuous extension used
for dense output.  The matrix equation W' = A(t) W is flattened into an
n*n vector problem and runs through the same stepper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, EvaluationError, ValidationError

# Butcher tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus embedded 4th order weights, last entry multiplies the FSAL stage
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Shampine's dense output polynomial coefficients (powers theta^1..theta^4)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-9
    atol: float = 1e-12
    max_step: float = math.inf
    grid_step: float = 0.01
    escape_radius: float = 1e6

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValidationError("tolerances must be positive")
        if not self.grid_step > 0:
            raise ValidationError("output grid step must be positive")
        if not self.max_step > 0:
            raise ValidationError("max step must be positive")
        if not self.escape_radius > 0:
            raise ValidationError("escape radius must be positive")

    def replace(self, **changes) -> "IntegratorConfig":
        return IntegratorConfig(**{**self.__dict__, **changes})


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    escaped: bool = False
    escape_time: float | None = None

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class MatrixTrajectory:
    """W(t) on a grid, stored as ``exp(log_scale[i]) * scaled[i]``.

    The split keeps the relative accuracy of strongly decaying or growing
    solutions; ``matrices`` reassembles the true values.
    """

    times: np.ndarray
    scaled: np.ndarray
    log_scale: np.ndarray

    @property
    def matrices(self) -> np.ndarray:
        return self.scaled * np.exp(self.log_scale)[:, None, None]


def output_grid(t0: float, t_end: float, step: float) -> np.ndarray:
    if not t_end > t0:
        raise ValidationError(f"t_end ({t_end}) must exceed t0 ({t0})")
    n = int(math.floor((t_end - t0) / step + 1e-9))
    grid = t0 + step * np.arange(n + 1)
    if t_end - grid[-1] > 1e-9 * max(1.0, abs(t_end)):
        grid = np.append(grid, t_end)
    else:
        grid[-1] = t_end
    return grid


def _rms(x):
    return math.sqrt(float(np.dot(x, x)) / x.size)


def _initial_step(fun, t0, y0, f0, rtol, atol, max_step):
    # Hairer, Norsett & Wanner, "Solving ODEs I", II.4
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, max_step)
    y1 = y0 + h0 * f0
    f1 = fun(t0 + h0, y1)
    d2 = _rms((f1 - f0) / scale) / h0 if np.all(np.isfinite(f1)) else math.inf
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, max_step)


def _solve(fun, grid, y0, cfg: IntegratorConfig, *, on_escape="raise",
           grid_aligned=False, rescale=False):
    """Core stepping loop.

    Returns (states on the reached part of the grid, log-scales, escape time).
    ``rescale`` is only valid for linear homogeneous problems: the state is
    renormalized whenever its magnitude leaves [0.1, 10].
    """
    t = float(grid[0])
    t_end = float(grid[-1])
    y = np.array(y0, dtype=float)
    n = y.size
    out = np.empty((grid.size, n))
    logs = np.zeros(grid.size)
    out[0] = y
    log_scale = 0.0
    gi = 1

    f = np.asarray(fun(t, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise EvaluationError("non-finite right-hand side", t)
    if not np.all(np.isfinite(y)):
        raise EvaluationError("non-finite initial state", t)
    if np.linalg.norm(y) > cfg.escape_radius:
        if on_escape == "raise":
            raise BlowUpError("initial state outside escape radius", t)
        return out[:1], logs[:1], t

    if rescale:
        s = np.max(np.abs(y))
        if s > 0:
            y /= s
            f /= s
            log_scale = math.log(s)
            out[0] = y
            logs[0] = log_scale

    max_step = min(cfg.max_step, t_end - t)
    h = _initial_step(fun, t, y, f, cfg.rtol, cfg.atol, max_step)
    K = np.empty((7, n))

    while gi < grid.size:
        min_step = 10 * np.spacing(abs(t) + 1.0)
        if grid_aligned:
            h = min(h, grid[gi] - t)
        h = min(h, cfg.max_step, t_end - t)
        if h < min_step:
            if on_escape == "stop":
                return out[:gi], logs[:gi], t
            raise BlowUpError("step size underflow", t)

        accepted = False
        while not accepted:
            if h < min_step:
                if on_escape == "stop":
                    return out[:gi], logs[:gi], t
                raise BlowUpError("step size underflow", t)
            K[0] = f
            for s in range(1, 6):
                dy = np.dot(K[:s].T, _A[s]) * h
                K[s] = fun(t + _C[s] * h, y + dy)
            y_new = y + h * np.dot(K[:6].T, _B)
            t_new = t + h
            if t_end - t_new < min_step:
                t_new = t_end
            f_new = np.asarray(fun(t_new, y_new), dtype=float)
            K[6] = f_new
            if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
                h *= MIN_FACTOR
                continue
            scale = cfg.atol + np.maximum(np.abs(y), np.abs(y_new)) * cfg.rtol
            err = _rms(np.dot(K.T, _E) * h / scale)
            if err <= 1.0:
                accepted = True
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
                h_next = h * factor
            else:
                h *= max(MIN_FACTOR, SAFETY * err ** -0.2)

        # dense output onto every grid point passed by this step
        j = gi
        while j < grid.size and grid[j] <= t_new + 1e-12 * max(1.0, abs(t_new)):
            j += 1
        if j > gi:
            if grid_aligned or (j == gi + 1 and grid[gi] == t_new):
                out[gi:j] = y_new
            else:
                theta = (grid[gi:j] - t) / h
                powers = np.cumprod(np.repeat(theta[:, None], 4, axis=1), axis=1)
                q = np.dot(K.T, _P)
                out[gi:j] = y + h * powers @ q.T
                if grid[j - 1] >= t_new:
                    out[j - 1] = y_new
            logs[gi:j] = log_scale
            gi = j

        t, y, f, h = t_new, y_new, f_new, h_next

        if np.linalg.norm(y) * math.exp(log_scale) > cfg.escape_radius:
            if on_escape == "raise":
                raise BlowUpError("state norm exceeded escape radius", t)
            return out[:gi], logs[:gi], t

        if rescale:
            s = np.max(np.abs(y))
            if s > 10.0 or 0.0 < s < 0.1:
                y = y / s
                f = f / s
                log_scale += math.log(s)

    return out, logs, None


def integrate_ivp(rhs, t0: float, x0, t_end: float, cfg: IntegratorConfig | None = None, *,
                  on_escape: str = "raise", grid_aligned: bool = False) -> Trajectory:
    """Integrate x' = rhs(t, x) from t0 to t_end and sample on the output grid.

    ``on_escape='raise'`` turns an escape-radius exceedance or a step-size
    underflow into :class:`BlowUpError`; ``'stop'`` returns the reached part
    of the grid with ``escaped=True``.  ``grid_aligned`` makes every step end on a grid
    point, which suits right-hand sides that are only piecewise smooth
    between grid nodes.
    """
    cfg = cfg or IntegratorConfig()
    if on_escape not in ("raise", "stop"):
        raise ValueError("on_escape must be 'raise' or 'stop'")
    grid = output_grid(t0, t_end, cfg.grid_step)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    states, _, t_esc = _solve(rhs, grid, x0, cfg, on_escape=on_escape, grid_aligned=grid_aligned)
    return Trajectory(grid[:len(states)], states, t_esc is not None, t_esc)


def integrate_matrix_ode(a_of_t, w0, t0: float, t_end: float,
                         cfg: IntegratorConfig | None = None) -> MatrixTrajectory:
    """Integrate W' = A(t) W from W(t0) = w0."""
    cfg = cfg or IntegratorConfig()
    w0 = np.atleast_2d(np.asarray(w0, dtype=float))
    n = w0.shape[0]
    if w0.shape != (n, n):
        raise ValidationError("W0 must be square")
    if abs(np.linalg.det(w0)) == 0.0 or np.linalg.cond(w0) > 1e14:
        raise ValidationError("W0 must be nonsingular")

    def fun(t, y):
        return (a_of_t(t) @ y.reshape(n, n)).ravel()

    grid = output_grid(t0, t_end, cfg.grid_step)
    cfg = cfg.replace(escape_radius=math.inf)
    states, logs, _ = _solve(fun, grid, w0.ravel(), cfg, rescale=True)
    return MatrixTrajectory(grid, states.reshape(-1, n, n), logs)
