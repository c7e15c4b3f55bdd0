"""Deterministic (controlled) vector fields and their composition with controlled paths.

Shape conventions, with ``p`` the path axis, ``d`` the state dimension and
``n`` the rough driver dimension:

* a field of value shape ``S`` maps ``x`` of shape (p, d) to (p, *S);
  ``dx`` has shape (p, *S, d), ``dxx`` (p, *S, d, d), ``dxxx`` (p, *S, d, d, d);
* a controlled vector field ``beta`` has value shape (d, n), column ``nu`` being
  ``beta_nu``; its time derivative ``prime`` has shape (d, n, n) with entry
  ``[i, nu, mu]`` the coefficient of ``dW^mu`` in ``beta_nu(t) - beta_nu(s)``;
* a controlled sample ``(Y, Y')`` carries ``Y`` of shape (p, K+1, *V) and
  ``Y'`` of shape (p, K+1, *V, n).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import mcstats
from .roughpath import RoughPath

FieldFn = Callable[[float, np.ndarray], np.ndarray]


def _fd_step(x: np.ndarray) -> np.ndarray:
    return np.maximum(1e-5, 1e-5 * np.abs(x))


def _central_difference(fn: FieldFn, t: float, x: np.ndarray) -> np.ndarray:
    """Derivative of ``fn`` in x, appended as the last axis."""
    h = _fd_step(x)
    cols = []
    for j in range(x.shape[1]):
        e = np.zeros_like(x)
        e[:, j] = h[:, j]
        diff = fn(t, x + e) - fn(t, x - e)
        cols.append(diff / (2 * h[:, j]).reshape((-1,) + (1,) * (diff.ndim - 1)))
    return np.stack(cols, axis=-1)


class Field:
    """A time-dependent field with spatial derivatives.

    Missing derivative callbacks fall back to central differences of the next
    lower order, with step ``max(1e-5, 1e-5 |x|)``.
    """

    def __init__(self, value: FieldFn, shape: tuple = (), dx: Optional[FieldFn] = None,
                 dxx: Optional[FieldFn] = None, dxxx: Optional[FieldFn] = None,
                 name: str = "", is_zero: bool = False):
        self._value = value
        self.shape = tuple(shape)
        self._derivs = [dx, dxx, dxxx]
        self.name = name
        self.is_zero = is_zero

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self._value(t, x)

    def has_analytic(self, order: int) -> bool:
        return self._derivs[order - 1] is not None

    def derivative(self, order: int, t: float, x: np.ndarray) -> np.ndarray:
        if order == 0:
            return self._value(t, x)
        fn = self._derivs[order - 1]
        if fn is not None:
            return fn(t, x)
        return _central_difference(lambda tt, xx: self.derivative(order - 1, tt, xx), t, x)

    def dx(self, t, x):
        return self.derivative(1, t, x)

    def dxx(self, t, x):
        return self.derivative(2, t, x)

    def dxxx(self, t, x):
        return self.derivative(3, t, x)

    def shifted(self, s: float, horizon: float) -> "Field":
        """Field evaluated at time ``min(s + t, horizon)``."""
        if s == 0.0:
            return self

        def wrap(fn):
            if fn is None:
                return None
            return lambda t, x: fn(min(s + t, horizon), x)

        return Field(wrap(self._value), self.shape, *(wrap(f) for f in self._derivs),
                     name=self.name, is_zero=self.is_zero)

    def __add__(self, other: "Field") -> "Field":
        return linear_combination([(1.0, self), (1.0, other)])

    def scaled(self, a: float) -> "Field":
        return linear_combination([(a, self)])

    @classmethod
    def zero(cls, shape: tuple = (), name: str = "zero") -> "Field":
        shape = tuple(shape)

        def make(extra):
            return lambda t, x: np.zeros((x.shape[0],) + shape + (x.shape[1],) * extra)

        return cls(make(0), shape, make(1), make(2), make(3), name=name, is_zero=True)

    @classmethod
    def constant(cls, value, name: str = "constant") -> "Field":
        v = np.asarray(value, dtype=float)
        shape = v.shape

        def make(extra):
            if extra == 0:
                return lambda t, x: np.broadcast_to(v, (x.shape[0],) + shape).copy()
            return lambda t, x: np.zeros((x.shape[0],) + shape + (x.shape[1],) * extra)

        return cls(make(0), shape, make(1), make(2), make(3), name=name, is_zero=not np.any(v))


def linear_combination(terms: list[tuple[float, Field]]) -> Field:
    shape = terms[0][1].shape
    if any(f.shape != shape for _, f in terms):
        raise ValueError("fields in a linear combination must share a value shape")

    def make(order):
        if order > 0 and not all(f.has_analytic(order) for _, f in terms):
            return None
        return lambda t, x: sum(a * f.derivative(order, t, x) for a, f in terms)

    return Field(make(0), shape, make(1), make(2), make(3),
                 name="+".join(f.name for _, f in terms),
                 is_zero=all(f.is_zero or a == 0 for a, f in terms))


@dataclass
class ControlledVectorField:
    """Field ``beta`` together with its Gubinelli time derivative ``beta'``."""

    value: Field
    prime: Field
    holder_exponent: float = 0.5

    def __post_init__(self):
        if self.prime.shape != self.value.shape + (self.value.shape[-1],):
            raise ValueError(f"prime shape {self.prime.shape} incompatible with value shape {self.value.shape}")

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def is_zero(self) -> bool:
        return self.value.is_zero and self.prime.is_zero

    def __call__(self, t, x):
        return self.value(t, x)

    def shifted(self, s: float, horizon: float) -> "ControlledVectorField":
        return ControlledVectorField(self.value.shifted(s, horizon), self.prime.shifted(s, horizon),
                                     self.holder_exponent)

    @classmethod
    def time_homogeneous(cls, value: Field, holder_exponent: float = 0.5) -> "ControlledVectorField":
        return cls(value, Field.zero(value.shape + (value.shape[-1],), name="zero'"), holder_exponent)

    @classmethod
    def zero(cls, shape: tuple) -> "ControlledVectorField":
        shape = tuple(shape)
        return cls(Field.zero(shape), Field.zero(shape + (shape[-1],)))


def combine(terms: list[tuple[float, ControlledVectorField]]) -> ControlledVectorField:
    return ControlledVectorField(linear_combination([(a, f.value) for a, f in terms]),
                                 linear_combination([(a, f.prime) for a, f in terms]),
                                 min(f.holder_exponent for _, f in terms))


@dataclass
class ControlledSample:
    """Monte Carlo sample of a controlled path: ``X`` (p, K+1, *V) and ``Xp`` (p, K+1, *V, n)."""

    X: np.ndarray
    Xp: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Xp = np.asarray(self.Xp, dtype=float)
        if self.Xp.shape[:-1] != self.X.shape:
            raise ValueError(f"derivative shape {self.Xp.shape} does not extend value shape {self.X.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Xp))):
            raise ValueError("controlled sample contains non-finite entries")

    @property
    def num_paths(self) -> int:
        return self.X.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.X.shape[1]


# pointwise composition helpers (one time node, batch over paths)

def compose_at(cvf: ControlledVectorField, t: float, x: np.ndarray, xp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(beta(x), D_x beta(x) x' + beta'(x)) at one time node; x (p, d), xp (p, d, n)."""
    val = cvf.value(t, x)
    der = np.einsum("p...j,pjm->p...m", cvf.value.dx(t, x), xp) + cvf.prime(t, x)
    return val, der


def compose_linear_at(cvf: ControlledVectorField, t: float, x, xp, v, vp) -> tuple[np.ndarray, np.ndarray]:
    """Derivative of the composition in direction (v, v').

    Value ``D beta(x) v``; Gubinelli derivative
    ``D^2 beta(x)[x', v] + D beta'(x) v + D beta(x) v'``.
    """
    dval = cvf.value.dx(t, x)
    val = np.einsum("p...j,pj->p...", dval, v)
    der = (np.einsum("p...k,pkm->p...m", _last(cvf.value.dxx(t, x), v), xp)
           + np.einsum("p...j,pj->p...", cvf.prime.dx(t, x), v)
           + np.einsum("p...j,pjm->p...m", dval, vp))
    return val, der


def _last(tensor, a):
    """Contract the trailing index of ``tensor`` (p, ..., j) with ``a`` (p, j)."""
    return np.einsum("p...j,pj->p...", tensor, a)


def _sym_bilinear(tensor, a, b):
    """Symmetrized bilinear form so that swapping a and b is exact in floating point."""
    return 0.5 * (_last(_last(tensor, b), a) + _last(_last(tensor, a), b))


def compose_bilinear_at(cvf: ControlledVectorField, t: float, x, xp, v, vp, w, wp) -> tuple[np.ndarray, np.ndarray]:
    """Second derivative of the composition along directions (v, v') and (w, w').

    Value ``D^2 beta(x)[v, w]``; Gubinelli derivative
    ``D^3 beta[x', v, w] + D^2 beta'[v, w] + D^2 beta[v', w] + D^2 beta[v, w']``.
    """
    d2 = cvf.value.dxx(t, x)
    val = _sym_bilinear(d2, v, w)
    d3 = cvf.value.dxxx(t, x)
    # contract the two directions first (trailing indices are symmetric), then x'
    third = 0.5 * np.einsum("p...l,plm->p...m", _last(_last(d3, w), v) + _last(_last(d3, v), w), xp)
    prime_part = _sym_bilinear(cvf.prime.dxx(t, x), v, w)
    # D^2 beta is symmetric, so each mixed term is one contraction; the pair is swap-invariant
    d2v, d2w = _last(d2, v), _last(d2, w)
    mixed = np.einsum("p...j,pjm->p...m", d2w, vp) + np.einsum("p...j,pjm->p...m", d2v, wp)
    return val, third + prime_part + mixed


def compose(cvf: ControlledVectorField, cs: ControlledSample, times: np.ndarray) -> ControlledSample:
    """(beta(X), D_x beta(X) X' + beta'(X)) at every node of every path."""
    if cs.X.ndim != 3:
        raise ValueError("compose expects a state-valued sample X of shape (p, K+1, d)")
    if cs.X.shape[1] != len(times):
        raise ValueError("sample and time grid lengths differ")
    vals, ders = [], []
    for k, t in enumerate(times):
        v, dv = compose_at(cvf, float(t), cs.X[:, k], cs.Xp[:, k])
        vals.append(v)
        ders.append(dv)
    return ControlledSample(np.stack(vals, axis=1), np.stack(ders, axis=1))


# remainder diagnostics

@dataclass
class MomentTable:
    """Empirical moments of increments and remainders per dyadic span."""

    spans: np.ndarray
    p: float
    moment_dX: np.ndarray
    moment_RX: np.ndarray
    slope_dX: float
    slope_RX: float
    extra: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "p", "moment_dX", "moment_RX"])
            for h, a, b in zip(self.spans, self.moment_dX, self.moment_RX):
                w.writerow([repr(float(h)), self.p, repr(float(a)), repr(float(b))])


def dyadic_spans(num_steps: int, max_fraction: float = 0.25) -> list[int]:
    spans, h = [], 1
    while h <= max(1, int(num_steps * max_fraction)):
        spans.append(h)
        h *= 2
    return spans


def remainder_moments(cs: ControlledSample, rp: RoughPath, p: float = 2, spans: Optional[list[int]] = None,
                      min_paths: int = 100) -> MomentTable:
    """p-th moments of dX and R^X = dX - X' dW over dyadic spans.

    Every span is averaged over the same window starts (those admissible for
    the longest span), so the fitted slope is not biased by a start range that
    shrinks with the span.
    """
    if p not in (2, 4, 8):
        raise ValueError("p must be one of 2, 4, 8")
    if cs.num_paths < min_paths:
        raise ValueError(f"need at least {min_paths} paths, got {cs.num_paths}")
    K = cs.num_nodes - 1
    if K > rp.num_steps:
        raise ValueError("sample is longer than the driver")
    spans = spans or dyadic_spans(K)
    if len(spans) < 4:
        raise ValueError("fewer than 4 dyadic levels available")
    flat = cs.X.reshape(cs.num_paths, K + 1, -1)
    flat_p = cs.Xp.reshape(cs.num_paths, K + 1, -1, rp.dim)
    mdx, mrx = [], []
    starts = np.arange(0, K - max(spans) + 1)
    for h in spans:
        dX = flat[:, starts + h] - flat[:, starts]
        dW = rp.values[starts + h] - rp.values[starts]
        RX = dX - np.einsum("psvm,sm->psv", flat_p[:, starts], dW)
        mdx.append(np.mean(np.sum(dX ** 2, axis=-1) ** (p / 2)) ** (1 / p))
        mrx.append(np.mean(np.sum(RX ** 2, axis=-1) ** (p / 2)) ** (1 / p))
    h_times = np.asarray(spans) * rp.dt
    mdx, mrx = np.array(mdx), np.array(mrx)
    return MomentTable(h_times, p, mdx, mrx, mcstats.positive_slope(h_times, mdx),
                       mcstats.positive_slope(h_times, mrx))


def time_remainder_slope(cvf: ControlledVectorField, rp: RoughPath, x_probe: np.ndarray,
                         spans: Optional[list[int]] = None) -> float:
    """Slope of sup_x |beta_t(x) - beta_s(x) - beta'_s(x) dW_{s,t}| against |t - s|.

    The sup over the probe points is averaged over window starts; a max over
    starts would pick up the logarithmic factor of the driver's modulus.
    """
    x_probe = np.atleast_2d(np.asarray(x_probe, dtype=float))
    spans = spans or dyadic_spans(rp.num_steps)
    vals = np.stack([cvf.value(float(t), x_probe) for t in rp.times])
    primes = np.stack([cvf.prime(float(t), x_probe) for t in rp.times])
    sup = []
    for h in spans:
        starts = np.arange(0, rp.num_steps - h + 1)
        dW = rp.values[starts + h] - rp.values[starts]
        rem = vals[starts + h] - vals[starts] - np.einsum("sp...m,sm->sp...", primes[starts], dW)
        sup.append(np.mean(np.max(np.abs(rem).reshape(len(starts), -1), axis=1)))
    return mcstats.positive_slope(np.asarray(spans) * rp.dt, np.array(sup))
