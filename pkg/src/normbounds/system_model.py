"""Parameterized systems  x' = A(t) x + f(t, x) + F(t).

Coefficients are quasi-periodic scalars (an offset plus a finite sum of
harmonics), the nonlinearity is a polynomial vector field whose terms all
have total degree >= 1, so f(t, 0) = 0 holds by construction.

Configuration documents are TOML.  Indices (matrix entries, forcing
components, nonlinear target components) are zero-based.  Explicit form::

    dimension = 2
    t0 = 0.0

    [linear.entry.0.1]
    offset = 1.0

    [linear.entry.1.0]
    offset = -4.0
    [[linear.entry.1.0.term]]
    amplitude = -0.5
    frequency = 3.141592653589793
    phase = 0.0
    kind = "sin"

    [[nonlinear.term]]
    component = 1
    coefficient = -0.1
    exponents = [0, 3]

    [forcing.1]
    offset = 0.0

Omitted matrix entries and forcing components are zero.  A nonlinear
``coefficient`` is either a number or a table shaped like a scalar entry
(``offset`` plus ``term`` list).  Preset form::

    preset = "vdp"
    [parameters]
    omega0 = 2.0
    alpha1 = 0.2
    ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import tomli
import tomli_w

from .errors import ConfigError, DimensionError, ValidationError

KINDS = ("sin", "cos")


@dataclass(frozen=True)
class Harmonic:
    amplitude: float
    frequency: float
    phase: float = 0.0
    kind: str = "sin"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"harmonic kind must be 'sin' or 'cos', got {self.kind!r}")
        for name in ("amplitude", "frequency", "phase"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"harmonic {name} must be finite")


@dataclass(frozen=True)
class QuasiPeriodicScalar:
    """``offset + sum(amplitude * kind(frequency * t + phase))``."""

    offset: float = 0.0
    terms: tuple[Harmonic, ...] = ()

    def __post_init__(self):
        if not math.isfinite(self.offset):
            raise ValidationError("offset must be finite")
        object.__setattr__(self, "terms", tuple(self.terms))

    @classmethod
    def constant(cls, value: float) -> "QuasiPeriodicScalar":
        return cls(float(value))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.offset)
        for h in self.terms:
            arg = h.frequency * t + h.phase
            out = out + h.amplitude * (np.sin(arg) if h.kind == "sin" else np.cos(arg))
        return out if out.ndim else float(out)

    def bound(self) -> float:
        """Uniform bound on |value|: |offset| + sum |amplitude|."""
        return abs(self.offset) + sum(abs(h.amplitude) for h in self.terms)

    def constant_part(self) -> float:
        """Long-time mean: the offset plus any zero-frequency terms."""
        c = self.offset
        for h in self.terms:
            if h.frequency == 0.0:
                c += h.amplitude * (math.sin(h.phase) if h.kind == "sin" else math.cos(h.phase))
        return c

    def integral(self, t0, t):
        """Exact integral from t0 to t (t may be an array)."""
        t = np.asarray(t, dtype=float)
        out = self.offset * (t - t0)
        for h in self.terms:
            if h.frequency == 0.0:
                val = math.sin(h.phase) if h.kind == "sin" else math.cos(h.phase)
                out = out + h.amplitude * val * (t - t0)
                continue
            a, b = h.frequency * t + h.phase, h.frequency * t0 + h.phase
            if h.kind == "sin":
                out = out - h.amplitude / h.frequency * (np.cos(a) - math.cos(b))
            else:
                out = out + h.amplitude / h.frequency * (np.sin(a) - math.sin(b))
        return out if np.ndim(out) else float(out)

    @property
    def is_constant(self) -> bool:
        return all(h.frequency == 0.0 or h.amplitude == 0.0 for h in self.terms)

    @property
    def is_zero(self) -> bool:
        return self.offset == 0.0 and all(h.amplitude == 0.0 for h in self.terms)


ZERO = QuasiPeriodicScalar()


class _HarmonicTable:
    """Vectorized evaluation of many quasi-periodic scalars at one time."""

    def __init__(self, scalars: Sequence[QuasiPeriodicScalar]):
        self.size = len(scalars)
        self.offsets = np.array([s.offset for s in scalars], dtype=float)
        idx, amp, freq, phase = [], [], [], []
        for i, s in enumerate(scalars):
            for h in s.terms:
                if h.amplitude == 0.0:
                    continue
                idx.append(i)
                amp.append(h.amplitude)
                freq.append(h.frequency)
                phase.append(h.phase + (0.5 * math.pi if h.kind == "cos" else 0.0))
        self.idx = np.array(idx, dtype=int)
        self.amp = np.array(amp)
        self.freq = np.array(freq)
        self.phase = np.array(phase)
        self.constant = not idx

    def __call__(self, t: float) -> np.ndarray:
        if self.constant:
            return self.offsets.copy()
        vals = self.amp * np.sin(self.freq * t + self.phase)
        return self.offsets + np.bincount(self.idx, vals, minlength=self.size)


@dataclass(frozen=True)
class MatrixFunctionSpec:
    entries: tuple[tuple[QuasiPeriodicScalar, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.entries)
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise DimensionError("matrix entries must form a non-empty square grid")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def constant(cls, matrix) -> "MatrixFunctionSpec":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(tuple(tuple(QuasiPeriodicScalar(float(v)) for v in row) for row in m))

    @property
    def dimension(self) -> int:
        return len(self.entries)

    def __call__(self, t: float) -> np.ndarray:
        return self.evaluator()(t)

    def evaluator(self):
        """Return a fast ``t -> ndarray(n, n)`` closure."""
        n = self.dimension
        table = _HarmonicTable([e for row in self.entries for e in row])
        return lambda t: table(t).reshape(n, n)

    def constant_part(self) -> np.ndarray:
        return np.array([[e.constant_part() for e in row] for row in self.entries])

    def trace(self) -> QuasiPeriodicScalar:
        diag = [self.entries[i][i] for i in range(self.dimension)]
        return QuasiPeriodicScalar(sum(d.offset for d in diag),
                                   tuple(h for d in diag for h in d.terms))


@dataclass(frozen=True)
class PolynomialTerm:
    component: int
    coefficient: QuasiPeriodicScalar
    exponents: tuple[int, ...]

    def __post_init__(self):
        if not isinstance(self.coefficient, QuasiPeriodicScalar):
            object.__setattr__(self, "coefficient", QuasiPeriodicScalar(float(self.coefficient)))
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValidationError("polynomial exponents must be non-negative")
        if sum(exps) < 1:
            raise ValidationError("polynomial term of total degree 0 violates f(t, 0) = 0")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return sum(self.exponents)


@dataclass(frozen=True)
class PolynomialVectorField:
    dimension: int
    terms: tuple[PolynomialTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.dimension < 1:
            raise DimensionError("dimension must be positive")
        for term in self.terms:
            if len(term.exponents) != self.dimension:
                raise DimensionError(
                    f"term exponents have length {len(term.exponents)}, expected {self.dimension}")
            if not 0 <= term.component < self.dimension:
                raise DimensionError(f"term component {term.component} out of range")

    def evaluator(self):
        """Return a fast ``(t, x) -> ndarray(n)`` closure."""
        n = self.dimension
        if not self.terms:
            return lambda t, x: np.zeros(n)
        comp = np.array([tm.component for tm in self.terms])
        expo = np.array([tm.exponents for tm in self.terms], dtype=float)
        coef = _HarmonicTable([tm.coefficient for tm in self.terms])

        def f(t, x):
            mono = np.prod(np.asarray(x, dtype=float)[None, :] ** expo, axis=1)
            return np.bincount(comp, coef(t) * mono, minlength=n)

        return f

    def __call__(self, t, x):
        return self.evaluator()(t, x)


@dataclass(frozen=True)
class SystemSpec:
    linear: MatrixFunctionSpec
    nonlinear: PolynomialVectorField
    forcing: tuple[QuasiPeriodicScalar, ...]
    t0: float = 0.0
    # Preset name and parameters when built from one; not part of identity.
    origin: Mapping[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "forcing", tuple(self.forcing))
        n = self.linear.dimension
        if self.nonlinear.dimension != n or len(self.forcing) != n:
            raise DimensionError(
                f"dimension mismatch: linear {n}, nonlinear {self.nonlinear.dimension}, "
                f"forcing {len(self.forcing)}")
        if not math.isfinite(self.t0):
            raise ValidationError("t0 must be finite")

    @property
    def dimension(self) -> int:
        return self.linear.dimension

    @property
    def unforced(self) -> bool:
        return all(c.is_zero for c in self.forcing)

    def rhs_function(self):
        """Return a fast ``(t, x) -> x'`` closure for the integrator."""
        a = self.linear.evaluator()
        f = self.nonlinear.evaluator()
        forcing = _HarmonicTable(self.forcing)
        return lambda t, x: a(t) @ x + f(t, x) + forcing(t)

    def forcing_vector(self, t: float) -> np.ndarray:
        return _HarmonicTable(self.forcing)(t)

    def forcing_norm(self):
        """Return ``t -> ||F(t)||`` accepting scalars or arrays."""
        comps = [c for c in self.forcing if not c.is_zero]

        def norm(t):
            t = np.asarray(t, dtype=float)
            total = np.zeros(t.shape)
            for c in comps:
                total = total + np.asarray(c(t)) ** 2
            out = np.sqrt(total)
            return out if out.ndim else float(out)

        norm.bound = self.forcing_bound()
        return norm

    def forcing_bound(self) -> float:
        """Uniform bound on ||F(t)|| from the per-component analytic bounds."""
        return math.sqrt(sum(c.bound() ** 2 for c in self.forcing))


def eval_rhs(spec: SystemSpec, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dimension,):
        raise DimensionError(f"state has shape {x.shape}, expected ({spec.dimension},)")
    return spec.rhs_function()(float(t), x)


# -- benchmark ---------------------------------------------------------------

VDP_DEFAULTS = dict(omega0=2.0, alpha1=0.2, alpha2=0.0, a1=0.0, a2=0.0,
                    r1=0.0, r2=0.0, a=0.0, omega2=0.0)


def vdp_preset(omega0=2.0, alpha1=0.2, alpha2=0.0, a1=0.0, a2=0.0, r1=0.0, r2=0.0,
               a=0.0, omega2=0.0, t0=0.0) -> SystemSpec:
    """Van der Pol-like oscillator with parametric and external excitation.

    A = [[0, 1], [-w(t)^2, -alpha1]] with w^2 = omega0^2 + a1 sin(r1 t) + a2 sin(r2 t),
    f = (0, -alpha2 x2^3), F = (0, a sin(omega2 t)).
    """
    params = dict(omega0=omega0, alpha1=alpha1, alpha2=alpha2, a1=a1, a2=a2,
                  r1=r1, r2=r2, a=a, omega2=omega2)
    for name, value in params.items():
        if not math.isfinite(value):
            raise ValidationError(f"preset parameter {name} must be finite")
    params = {k: float(v) for k, v in params.items()}
    wterms = tuple(Harmonic(-amp, r) for amp, r in ((a1, r1), (a2, r2)) if amp != 0.0)
    linear = MatrixFunctionSpec((
        (ZERO, QuasiPeriodicScalar(1.0)),
        (QuasiPeriodicScalar(-omega0 ** 2, wterms), QuasiPeriodicScalar(-alpha1)),
    ))
    terms = ()
    if alpha2 != 0.0:
        terms = (PolynomialTerm(1, QuasiPeriodicScalar(-alpha2), (0, 3)),)
    forcing2 = QuasiPeriodicScalar(0.0, (Harmonic(a, omega2),) if a != 0.0 else ())
    return SystemSpec(linear, PolynomialVectorField(2, terms), (ZERO, forcing2), float(t0),
                      origin={"preset": "vdp", "parameters": params})


PRESETS = {"vdp": (vdp_preset, VDP_DEFAULTS)}


# -- configuration -------------------------------------------------------------

_SCALAR_KEYS = {"offset", "term"}
_TERM_KEYS = {"amplitude", "frequency", "phase", "kind"}


def _number(value, key) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    return float(value)


def _parse_scalar(table, key) -> QuasiPeriodicScalar:
    if isinstance(table, (int, float)) and not isinstance(table, bool):
        return QuasiPeriodicScalar(float(table))
    if not isinstance(table, dict):
        raise ConfigError("expected a table with 'offset' and 'term'", key)
    unknown = set(table) - _SCALAR_KEYS
    if unknown:
        raise ConfigError("unknown key", f"{key}.{sorted(unknown)[0]}")
    offset = _number(table.get("offset", 0.0), f"{key}.offset")
    terms = []
    raw_terms = table.get("term", [])
    if not isinstance(raw_terms, list):
        raise ConfigError("expected an array of tables", f"{key}.term")
    for i, raw in enumerate(raw_terms):
        tkey = f"{key}.term[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError("expected a table", tkey)
        unknown = set(raw) - _TERM_KEYS
        if unknown:
            raise ConfigError("unknown key", f"{tkey}.{sorted(unknown)[0]}")
        for req in ("amplitude", "frequency"):
            if req not in raw:
                raise ConfigError("missing required key", f"{tkey}.{req}")
        kind = raw.get("kind", "sin")
        if kind not in KINDS:
            raise ConfigError(f"kind must be 'sin' or 'cos', got {kind!r}", f"{tkey}.kind")
        terms.append(Harmonic(_number(raw["amplitude"], f"{tkey}.amplitude"),
                              _number(raw["frequency"], f"{tkey}.frequency"),
                              _number(raw.get("phase", 0.0), f"{tkey}.phase"), kind))
    return QuasiPeriodicScalar(offset, tuple(terms))


def _index(raw, n, key) -> int:
    try:
        i = int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer index, got {raw!r}", key) from None
    if not 0 <= i < n:
        raise DimensionError(f"{key}: index {i} outside 0..{n - 1}")
    return i


def spec_from_mapping(doc: Mapping[str, Any]) -> SystemSpec:
    if "preset" in doc:
        unknown = set(doc) - {"preset", "parameters", "t0"}
        if unknown:
            raise ConfigError("key not allowed alongside 'preset'", sorted(unknown)[0])
        name = doc["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}", "preset")
        builder, defaults = PRESETS[name]
        params = dict(defaults)
        raw = doc.get("parameters", {})
        if not isinstance(raw, dict):
            raise ConfigError("expected a table", "parameters")
        for k, v in raw.items():
            if k not in defaults:
                raise ConfigError("unknown preset parameter", f"parameters.{k}")
            params[k] = _number(v, f"parameters.{k}")
        return builder(**params, t0=_number(doc.get("t0", 0.0), "t0"))

    unknown = set(doc) - {"dimension", "t0", "linear", "nonlinear", "forcing"}
    if unknown:
        raise ConfigError("unknown key", sorted(unknown)[0])
    if "dimension" not in doc:
        raise ConfigError("missing required key", "dimension")
    n = doc["dimension"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError("must be a positive integer", "dimension")
    t0 = _number(doc.get("t0", 0.0), "t0")

    grid = [[ZERO] * n for _ in range(n)]
    linear = doc.get("linear", {})
    if not isinstance(linear, dict) or set(linear) - {"entry"}:
        raise ConfigError("only 'entry' sub-sections are allowed", "linear")
    for si, row in linear.get("entry", {}).items():
        i = _index(si, n, f"linear.entry.{si}")
        if not isinstance(row, dict):
            raise ConfigError("expected sub-sections entry.<i>.<j>", f"linear.entry.{si}")
        for sj, table in row.items():
            j = _index(sj, n, f"linear.entry.{si}.{sj}")
            grid[i][j] = _parse_scalar(table, f"linear.entry.{si}.{sj}")

    terms = []
    nonlinear = doc.get("nonlinear", {})
    if not isinstance(nonlinear, dict) or set(nonlinear) - {"term"}:
        raise ConfigError("only 'term' entries are allowed", "nonlinear")
    for k, raw in enumerate(nonlinear.get("term", [])):
        key = f"nonlinear.term[{k}]"
        if not isinstance(raw, dict):
            raise ConfigError("expected a table", key)
        unknown = set(raw) - {"component", "coefficient", "exponents"}
        if unknown:
            raise ConfigError("unknown key", f"{key}.{sorted(unknown)[0]}")
        for req in ("component", "coefficient", "exponents"):
            if req not in raw:
                raise ConfigError("missing required key", f"{key}.{req}")
        comp = _index(raw["component"], n, f"{key}.component")
        exps = raw["exponents"]
        if not isinstance(exps, list) or not all(isinstance(e, int) and not isinstance(e, bool)
                                                 for e in exps):
            raise ConfigError("expected an integer list", f"{key}.exponents")
        if len(exps) != n:
            raise DimensionError(f"{key}.exponents: length {len(exps)}, expected {n}")
        if any(e < 0 for e in exps):
            raise ValidationError(f"{key}.exponents: negative exponent")
        if sum(exps) < 1:
            raise ValidationError(f"{key}: total degree 0 violates f(t, 0) = 0")
        terms.append(PolynomialTerm(comp, _parse_scalar(raw["coefficient"], f"{key}.coefficient"),
                                    tuple(exps)))

    forcing = [ZERO] * n
    raw_forcing = doc.get("forcing", {})
    if not isinstance(raw_forcing, dict):
        raise ConfigError("expected sub-sections forcing.<i>", "forcing")
    for si, table in raw_forcing.items():
        i = _index(si, n, f"forcing.{si}")
        forcing[i] = _parse_scalar(table, f"forcing.{si}")

    return SystemSpec(MatrixFunctionSpec(tuple(map(tuple, grid))),
                      PolynomialVectorField(n, tuple(terms)), tuple(forcing), t0)


def parse_config(text: str) -> SystemSpec:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return spec_from_mapping(doc)


def load_config(path) -> SystemSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _scalar_table(s: QuasiPeriodicScalar) -> dict:
    table: dict[str, Any] = {"offset": s.offset}
    if s.terms:
        table["term"] = [{"amplitude": h.amplitude, "frequency": h.frequency,
                          "phase": h.phase, "kind": h.kind} for h in s.terms]
    return table


def spec_to_mapping(spec: SystemSpec, prefer_preset: bool = True) -> dict:
    if prefer_preset and spec.origin is not None:
        return {"preset": spec.origin["preset"], "t0": spec.t0,
                "parameters": dict(spec.origin["parameters"])}
    n = spec.dimension
    doc: dict[str, Any] = {"dimension": n, "t0": spec.t0}
    entry = {}
    for i in range(n):
        row = {str(j): _scalar_table(spec.linear.entries[i][j])
               for j in range(n) if not spec.linear.entries[i][j].is_zero}
        if row:
            entry[str(i)] = row
    doc["linear"] = {"entry": entry}
    if spec.nonlinear.terms:
        terms = []
        for tm in spec.nonlinear.terms:
            coef = tm.coefficient
            terms.append({"component": tm.component,
                          "coefficient": coef.offset if not coef.terms else _scalar_table(coef),
                          "exponents": list(tm.exponents)})
        doc["nonlinear"] = {"term": terms}
    forcing = {str(i): _scalar_table(c) for i, c in enumerate(spec.forcing) if not c.is_zero}
    if forcing:
        doc["forcing"] = forcing
    return doc


def dump_config(spec: SystemSpec, prefer_preset: bool = True) -> str:
    return tomli_w.dumps(spec_to_mapping(spec, prefer_preset))
