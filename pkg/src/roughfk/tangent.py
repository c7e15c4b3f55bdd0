"""First and second variations of RSDE solutions in the initial state.

The first variation solves the linear rough SDE with coefficients

    G = D b(X),  S = D sigma(X),  f = D beta(X),  f' = D^2 beta(X)[beta(X), .] + D beta'(X)

along the frozen base path.  Discretized with the same one-step scheme, this
is the exact derivative of the discrete flow, so finite differences of the
solver agree with it up to O(h^2) and rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .controlled import ControlledSample, ControlledVectorField, Field, _sym_bilinear, compose_bilinear_at
from .integrator import ito_integral, lebesgue_integral, rough_integral
from .roughpath import RoughPath
from .rsde import HybridPathEnsemble, LinearCoefficients, SDECoefficients, solve_linear_rsde


class MissingDerivativeError(ValueError):
    pass


@dataclass
class TangentEnsemble:
    """Variation process ``Y`` (p, K+1, d) with Gubinelli derivative ``Yp`` (p, K+1, d, n)."""

    Y: np.ndarray
    Yp: np.ndarray
    direction: np.ndarray
    pair: Optional[tuple] = None
    provenance: dict = field(default_factory=dict)

    @property
    def terminal(self) -> np.ndarray:
        return self.Y[:, -1]

    def controlled_sample(self) -> ControlledSample:
        return ControlledSample(self.Y, self.Yp)


def _require(f: Field, order: int, what: str) -> None:
    """Allow at most one level of finite differencing on top of an analytic derivative."""
    if f.is_zero or order <= 1:
        return
    if not (f.has_analytic(order) or f.has_analytic(order - 1)):
        raise MissingDerivativeError(f"{what} needs an analytic derivative of order {order - 1} or {order}")


def linearized_coefficients(base: HybridPathEnsemble, coeffs: SDECoefficients) -> LinearCoefficients:
    """Per-step callables for the first-variation equation along ``base``."""
    X, times = base.X, base.times
    beta = coeffs.beta
    _require(beta.value, 2, "first variation of beta")

    def G(k):
        return coeffs.b.dx(float(times[k]), X[:, k])

    def S(k):
        return coeffs.sigma.dx(float(times[k]), X[:, k])

    def f(k):
        return beta.value.dx(float(times[k]), X[:, k])

    def fp(k):
        t, x = float(times[k]), X[:, k]
        return (np.einsum("pinjk,pkm->pinmj", beta.value.dxx(t, x), beta(t, x))
                + beta.prime.dx(t, x))

    return LinearCoefficients(
        d=coeffs.d, n=coeffs.n,
        G=None if coeffs.b.is_zero else G,
        S=None if coeffs.sigma.is_zero else S,
        f=None if beta.value.is_zero else f,
        fp=None if beta.is_zero else fp,
    )


def _basis(d: int, direction) -> np.ndarray:
    if np.ndim(direction) == 0:
        e = np.zeros(d)
        e[int(direction)] = 1.0
        return e
    e = np.asarray(direction, dtype=float)
    if e.shape != (d,):
        raise ValueError(f"direction must have dimension {d}")
    return e


def first_variation(base: HybridPathEnsemble, coeffs: SDECoefficients, rp: RoughPath,
                    brownian: Optional[np.ndarray], direction) -> TangentEnsemble:
    """Derivative of the solution in the initial state along ``direction`` (index or vector)."""
    e = _basis(coeffs.d, direction)
    lc = linearized_coefficients(base, coeffs)
    xi = np.broadcast_to(e, (base.num_paths, coeffs.d))
    sol = solve_linear_rsde(lc, xi, rp, brownian, steps=base.num_steps)
    return TangentEnsemble(sol.X, sol.gub, e, provenance={"base": id(base), "order": 1})


def first_variations(base, coeffs, rp, brownian) -> list[TangentEnsemble]:
    return [first_variation(base, coeffs, rp, brownian, i) for i in range(coeffs.d)]


def second_variation_forcing(base: HybridPathEnsemble, Yi: TangentEnsemble, Yj: TangentEnsemble,
                             coeffs: SDECoefficients, rp: RoughPath,
                             brownian: Optional[np.ndarray]) -> ControlledSample:
    """(F, F') with dF = D^2b[Y^i,Y^j] dt + D^2sigma[Y^i,Y^j] dB + (phi, phi') dW.

    phi = D^2 beta(X)[Y^i, Y^j]; phi' is its Gubinelli derivative.  Every
    bilinear term is symmetrized so that swapping i and j is exact.
    """
    beta = coeffs.beta
    _require(beta.value, 3, "second variation of beta")
    X, times = base.X, base.times
    K = base.num_steps
    p, d = X.shape[0], coeffs.d
    F = np.zeros((p, K + 1, d))
    if not coeffs.b.is_zero:
        drift = np.stack([_sym_bilinear(coeffs.b.dxx(float(t), X[:, k]), Yi.Y[:, k], Yj.Y[:, k])
                          for k, t in enumerate(times[:K])], axis=1)
        F = F + lebesgue_integral(drift, rp.dt, K).values
    if not coeffs.sigma.is_zero:
        diff = np.stack([_sym_bilinear(coeffs.sigma.dxx(float(t), X[:, k]), Yi.Y[:, k], Yj.Y[:, k])
                         for k, t in enumerate(times[:K])], axis=1)
        F = F + ito_integral(diff, brownian[:, :K]).values
    phi = np.zeros((p, K + 1, d, coeffs.n))
    phi_p = np.zeros((p, K + 1, d, coeffs.n, coeffs.n))
    if not beta.is_zero:
        for k, t in enumerate(times):
            x = X[:, k]
            phi[:, k], phi_p[:, k] = compose_bilinear_at(beta, float(t), x, base.gub[:, k],
                                                         Yi.Y[:, k], Yi.Yp[:, k], Yj.Y[:, k], Yj.Yp[:, k])
        F = F + rough_integral(ControlledSample(phi, phi_p), rp).values
    return ControlledSample(F, phi)


def second_variation(base: HybridPathEnsemble, first: Sequence[TangentEnsemble], coeffs: SDECoefficients,
                     rp: RoughPath, brownian: Optional[np.ndarray], pair: tuple[int, int]) -> TangentEnsemble:
    """Second derivative in the initial state along (e_i, e_j); Z_0 = 0."""
    i, j = pair
    forcing = second_variation_forcing(base, first[i], first[j], coeffs, rp, brownian)
    lc = linearized_coefficients(base, coeffs)
    lc.forcing = forcing
    zero = np.zeros((base.num_paths, coeffs.d))
    sol = solve_linear_rsde(lc, zero, rp, brownian, steps=base.num_steps)
    return TangentEnsemble(sol.X, sol.gub, np.zeros(coeffs.d), pair=(i, j),
                           provenance={"base": id(base), "order": 2})


# parameters as frozen state coordinates

def _pad_rows(f: Field, q: int) -> Field:
    def wrap(fn):
        if fn is None:
            return None

        def padded(t, x):
            v = fn(t, x)
            return np.concatenate([v, np.zeros((v.shape[0], q) + v.shape[2:])], axis=1)

        return padded

    return Field(wrap(f._value), (f.shape[0] + q,) + f.shape[1:], *(wrap(g) for g in f._derivs),
                 name=f.name, is_zero=f.is_zero)


def with_parameters(coeffs: SDECoefficients, q: int) -> SDECoefficients:
    """Extend the state by ``q`` parameter coordinates with zero dynamics.

    ``coeffs`` must already be written on the augmented state (fields take
    x of dimension d + q and return the first d rows).
    """
    beta = coeffs.beta
    return SDECoefficients(_pad_rows(coeffs.b, q), _pad_rows(coeffs.sigma, q),
                           ControlledVectorField(_pad_rows(beta.value, q), _pad_rows(beta.prime, q),
                                                 beta.holder_exponent))


# finite-difference cross-check

@dataclass
class FDReport:
    h: float
    pathwise_rel_error: float
    mean_rel_error: float
    fd_mean: np.ndarray
    tangent_mean: np.ndarray


def central_difference(solve: Callable[[np.ndarray], np.ndarray], x0, h: float, order: int = 1,
                       pair: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Central difference of ``solve(x0)`` (an array of per-path outputs) in x0.

    order 1 differentiates along ``pair[0]``; order 2 along ``pair``.
    """
    x0 = np.asarray(x0, dtype=float)
    e = [np.eye(x0.size)[k] * h for k in pair]
    if order == 1:
        return (solve(x0 + e[0]) - solve(x0 - e[0])) / (2 * h)
    if order != 2:
        raise ValueError("order must be 1 or 2")
    if pair[0] == pair[1]:
        return (solve(x0 + e[0]) - 2 * solve(x0) + solve(x0 - e[0])) / h ** 2
    return (solve(x0 + e[0] + e[1]) - solve(x0 + e[0] - e[1])
            - solve(x0 - e[0] + e[1]) + solve(x0 - e[0] - e[1])) / (4 * h ** 2)


def fd_check(solve: Callable[[np.ndarray], np.ndarray], x0, tangent: np.ndarray, h: Optional[float] = None,
             order: int = 1, pair: tuple[int, int] = (0, 0), allow_small: bool = False) -> FDReport:
    """Compare per-path tangent output with central differences of ``solve``.

    ``solve`` must reuse the same noise for every call.  Steps below
    ``1e-4 (1 + |x0|)`` are refused unless ``allow_small`` is set, since
    rounding dominates there.
    """
    x0 = np.asarray(x0, dtype=float)
    scale = 1.0 + float(np.max(np.abs(x0)))
    h = 1e-2 * scale if h is None else h
    if h <= 0:
        raise ValueError("h must be positive")
    if h < 1e-4 * scale and not allow_small:
        raise ValueError(f"h={h:g} is below 1e-4*scale; cancellation error dominates")
    fd = central_difference(solve, x0, h, order, pair)
    tangent = np.asarray(tangent, dtype=float)
    denom = float(np.mean(np.abs(fd)))
    path_err = float(np.mean(np.abs(tangent - fd))) / denom if denom > 0 else float(np.max(np.abs(tangent)))
    fd_mean, tan_mean = fd.mean(axis=0), tangent.mean(axis=0)
    mnorm = float(np.linalg.norm(fd_mean))
    mean_err = (float(np.linalg.norm(tan_mean - fd_mean)) / mnorm if mnorm > 0
                else float(np.linalg.norm(tan_mean)))
    return FDReport(h, path_err, mean_err, fd_mean, tan_mean)
