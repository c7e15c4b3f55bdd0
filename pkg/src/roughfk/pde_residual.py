"""Finite-difference operators of the backward rough Kolmogorov equation and
residual checks for tabulated solution surfaces (one space dimension).

With Gamma_mu f = beta_mu . Df + gamma_mu f and Gamma'_{mu nu} f = beta'_{mu nu} . Df + gamma'_{mu nu} f,
a regular solution satisfies

    u_s - u_t = int_s^t L_r u_r dr + Gamma_t u_t dW_{s,t} + (Gamma_t Gamma_t - Gamma'_t) u_t WW_{s,t} + o(|t - s|).

Derivatives of u use five-point central stencils (exact on quartics), so every
operator needs a two-cell margin and returns values on ``mesh[2:-2]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import mcstats
from .controlled import dyadic_spans
from .feynman_kac import CoefficientSet, SolutionSurface, build_surface, estimate
from .roughpath import RoughPath

MARGIN = 2


class MarginError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorStencil:
    """Uniform one-dimensional mesh with five-point central differences."""

    mesh: np.ndarray

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        if mesh.ndim != 1 or mesh.size < 2 * MARGIN + 1:
            raise MarginError("mesh needs at least 5 points for the two-cell margin")
        steps = np.diff(mesh)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValueError("mesh must be uniform")
        object.__setattr__(self, "mesh", mesh)

    @property
    def h(self) -> float:
        return float((self.mesh[-1] - self.mesh[0]) / (self.mesh.size - 1))

    @property
    def interior(self) -> np.ndarray:
        return self.mesh[MARGIN:-MARGIN]

    def _check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.mesh.size:
            raise MarginError(f"values of length {u.shape[-1]} do not match the mesh ({self.mesh.size})")
        return u

    def d1(self, u) -> np.ndarray:
        u = self._check(u)
        return (u[..., :-4] - 8 * u[..., 1:-3] + 8 * u[..., 3:-1] - u[..., 4:]) / (12 * self.h)

    def d2(self, u) -> np.ndarray:
        u = self._check(u)
        return (-u[..., :-4] + 16 * u[..., 1:-3] - 30 * u[..., 2:-2] + 16 * u[..., 3:-1] - u[..., 4:]) / (12 * self.h ** 2)

    def mid(self, u) -> np.ndarray:
        return self._check(u)[..., MARGIN:-MARGIN]

    def shrink(self) -> "OperatorStencil":
        return OperatorStencil(self.interior)


def _col(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)[:, None]


def _require_1d(cs: CoefficientSet) -> None:
    if cs.d != 1:
        raise ValueError("stencil operators are implemented for one space dimension")


def apply_L(u, stencil: OperatorStencil, cs: CoefficientSet, t: float) -> np.ndarray:
    """1/2 |sigma|^2 u'' + b u' + c u on the interior."""
    _require_1d(cs)
    x = _col(stencil.interior)
    sig = cs.sigma(t, x)[:, 0, :]
    out = 0.5 * np.sum(sig ** 2, axis=-1) * stencil.d2(u) + cs.b(t, x)[:, 0] * stencil.d1(u)
    if not cs.c.is_zero:
        out = out + cs.c(t, x) * stencil.mid(u)
    return out


def apply_Gamma(u, stencil: OperatorStencil, cs: CoefficientSet, t: float, mu: int) -> np.ndarray:
    _require_1d(cs)
    x = _col(stencil.interior)
    return cs.beta(t, x)[:, 0, mu] * stencil.d1(u) + cs.gamma(t, x)[:, mu] * stencil.mid(u)


def apply_Gamma_prime(u, stencil: OperatorStencil, cs: CoefficientSet, t: float, mu: int, nu: int) -> np.ndarray:
    _require_1d(cs)
    x = _col(stencil.interior)
    return cs.beta.prime(t, x)[:, 0, mu, nu] * stencil.d1(u) + cs.gamma.prime(t, x)[:, mu, nu] * stencil.mid(u)


def apply_Gamma_pair(u, stencil: OperatorStencil, cs: CoefficientSet, t: float, mu: int,
                     nu: int) -> tuple[np.ndarray, np.ndarray]:
    """(Gamma_mu u, (Gamma_mu Gamma_nu - Gamma'_{mu nu}) u), the second assembled term by term."""
    _require_1d(cs)
    x = _col(stencil.interior)
    bm = cs.beta(t, x)[:, 0, mu]
    bn = cs.beta(t, x)[:, 0, nu]
    dbn = cs.beta.value.dx(t, x)[:, 0, nu, 0]
    gm = cs.gamma(t, x)[:, mu]
    gn = cs.gamma(t, x)[:, nu]
    dgn = cs.gamma.value.dx(t, x)[:, nu, 0]
    du, d2u, u0 = stencil.d1(u), stencil.d2(u), stencil.mid(u)
    pair = (bm * dbn * du + bm * bn * d2u + bm * dgn * u0
            + bm * gn * du + gm * bn * du + gm * gn * u0)
    prime = cs.beta.prime(t, x)[:, 0, mu, nu] * du + cs.gamma.prime(t, x)[:, mu, nu] * u0
    return bm * du + gm * u0, pair - prime


def apply_Gamma_pair_nested(u, stencil: OperatorStencil, cs: CoefficientSet, t: float, mu: int,
                            nu: int) -> np.ndarray:
    """Gamma_mu (Gamma_nu u) - Gamma'_{mu nu} u by applying the stencil twice; values on mesh[4:-4]."""
    inner = apply_Gamma(u, stencil, cs, t, nu)
    outer_stencil = stencil.shrink()
    outer = apply_Gamma(inner, outer_stencil, cs, t, mu)
    prime = apply_Gamma_prime(u, stencil, cs, t, mu, nu)
    return outer - prime[MARGIN:-MARGIN]


# residual reports

@dataclass
class ResidualReport:
    """Per span: mean over window starts of sup_x |residual| (``sup_residual``), the
    max over starts (``worst``) and the Monte Carlo noise floor; slopes of both."""

    spans: np.ndarray
    sup_residual: np.ndarray
    noise_floor: np.ndarray
    slope: float
    used: np.ndarray
    worst: np.ndarray
    worst_slope: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "sup_residual", "noise_floor", "slope"])
            for h, r, f in zip(self.spans, self.sup_residual, self.noise_floor):
                w.writerow([repr(float(h)), repr(float(r)), repr(float(f)), repr(float(self.slope))])


def _fit(spans, sup, floor, min_points: int = 4) -> tuple[float, np.ndarray]:
    """Slope over spans whose residual is at least 3x the noise floor."""
    spans, sup, floor = map(np.asarray, (spans, sup, floor))
    used = (sup >= 3 * floor) & (sup > 0)
    if np.all(sup == 0):
        return float("inf"), used
    if used.sum() < min_points:
        return float("nan"), used
    return mcstats.slope_fit(spans[used], sup[used]).slope, used


def _span_report(spans, dt, residual_fn, floor_fn, num_slices: int) -> ResidualReport:
    """residual_fn(a, b) and floor_fn(a, b) give sup_x values for the slice pair (a, b)."""
    typical, worst, floor = [], [], []
    for h in spans:
        r = np.array([residual_fn(a, a + h) for a in range(num_slices - h)])
        f = np.array([floor_fn(a, a + h) for a in range(num_slices - h)])
        typical.append(r.mean())
        worst.append(r.max())
        floor.append(f.mean())
    h_t = np.asarray(spans) * dt
    typical, worst, floor = map(np.array, (typical, worst, floor))
    slope, used = _fit(h_t, typical, floor)
    worst_slope, _ = _fit(h_t, worst, floor)
    return ResidualReport(h_t, typical, floor, slope, used, worst, worst_slope)


def _slice_nodes(surface: SolutionSurface, driver: RoughPath) -> np.ndarray:
    nodes = np.array([driver.node_index(float(s)) for s in surface.times])
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("surface slices must be increasing grid nodes")
    stride = np.diff(nodes)
    if stride.size and np.any(stride != stride[0]):
        raise ValueError("surface slices must be equally spaced")
    return nodes


def _surface_values(surface: SolutionSurface) -> tuple[np.ndarray, np.ndarray, OperatorStencil]:
    if surface.xs.shape[1] != 1:
        raise ValueError("residual checks need a one-dimensional mesh")
    return surface.u, surface.u_se, OperatorStencil(surface.xs[:, 0])


def _gamma_tables(u, st, cs, times, mu_list) -> tuple[np.ndarray, np.ndarray]:
    """Gamma_mu u_a (S, len(mu_list), x) and (Gamma_mu Gamma_nu - Gamma'_{mu nu}) u_a (S, len(mu_list), n, x)."""
    S, n = len(times), cs.n
    gam = np.zeros((S, len(mu_list)) + st.interior.shape)
    gg = np.zeros((S, len(mu_list), n) + st.interior.shape)
    for a in range(S):
        for i, mu in enumerate(mu_list):
            for nu in range(n):
                gam[a, i], gg[a, i, nu] = apply_Gamma_pair(u[a], st, cs, float(times[a]), mu, nu)
    return gam, gg


def davie_residual_of_u(surface: SolutionSurface, cs: CoefficientSet, driver: RoughPath,
                        spans: Optional[Sequence[int]] = None, quadrature: str = "composite") -> ResidualReport:
    """sup_x |u^natural_{s,t}| per span (in slice units), with fitted slopes.

    The time integral of L_r u_r uses the trapezoid rule, either composite over
    every slice in [s, t] (``"composite"``) or one panel on the two end slices
    (``"endpoint"``).  The composite rule is more accurate but its error is
    O(|t - s| dt^2) for a fixed slice spacing dt, which caps the observable
    slope at 1 once the true residual is smaller; the single panel has error
    O(|t - s|^3) for smooth-in-time surfaces.  Spans whose residual is below
    three times the Monte Carlo noise floor (sup_x of se_s + se_t) are left
    out of the fit.
    """
    if quadrature not in ("composite", "endpoint"):
        raise ValueError("quadrature must be 'composite' or 'endpoint'")
    u, se, st = _surface_values(surface)
    nodes = _slice_nodes(surface, driver)
    S = len(nodes)
    if S < 5:
        raise ValueError("need at least 5 time slices")
    times = driver.times[nodes]
    Lu = np.stack([apply_L(u[a], st, cs, float(times[a])) for a in range(S)])
    dts = np.diff(times)
    cumL = np.concatenate([np.zeros((1, Lu.shape[1])), np.cumsum(0.5 * (Lu[1:] + Lu[:-1]) * dts[:, None], axis=0)])
    gam, gg = _gamma_tables(u, st, cs, times, range(cs.n))

    def residual(a, b):
        dW, WW = driver.window(nodes[a], nodes[b])
        if quadrature == "composite":
            integral = cumL[b] - cumL[a]
        else:
            integral = 0.5 * (Lu[a] + Lu[b]) * (times[b] - times[a])
        res = (st.mid(u[a]) - st.mid(u[b]) - integral
               - np.einsum("m,mx->x", dW, gam[b]) - np.einsum("mn,mnx->x", WW, gg[b]))
        return float(np.max(np.abs(res)))

    def floor(a, b):
        return float(np.max(st.mid(se[a]) + st.mid(se[b])))

    spans = list(spans) if spans is not None else dyadic_spans(S - 1)
    return _span_report(spans, times[1] - times[0], residual, floor, S)


@dataclass
class ConditionIIReport:
    first: ResidualReport
    second: ResidualReport


def condition_ii_check(surface: SolutionSurface, cs: CoefficientSet, driver: RoughPath, mu: int = 0,
                       spans: Optional[Sequence[int]] = None) -> ConditionIIReport:
    """Holder quotients behind the regularity condition, as sup-residuals per span.

    first:  (Gamma Gamma - Gamma')_s u_s - (Gamma Gamma - Gamma')_t u_t   (max over nu)
    second: Gamma_t u_t - Gamma_s u_s + (Gamma Gamma - Gamma')_t u_t dW_{s,t}
    """
    u, se, st = _surface_values(surface)
    nodes = _slice_nodes(surface, driver)
    S = len(nodes)
    if S < 5:
        raise ValueError("need at least 5 time slices")
    times = driver.times[nodes]
    gam, gg = _gamma_tables(u, st, cs, times, [mu])
    gam, gg = gam[:, 0], gg[:, 0]
    # stencils amplify the Monte Carlo error by about 1/h (first) and 1/h^2 (second differences)
    amp1, amp2 = 3.0 / st.h, 6.0 / st.h ** 2

    def first(a, b):
        return float(np.max(np.abs(gg[a] - gg[b])))

    def second(a, b):
        dW = driver.values[nodes[b]] - driver.values[nodes[a]]
        return float(np.max(np.abs(gam[b] - gam[a] + np.einsum("n,nx->x", dW, gg[b]))))

    def noise(a, b):
        return float(np.max(st.mid(se[a]) + st.mid(se[b])))

    spans = list(spans) if spans is not None else dyadic_spans(S - 1)
    dt = times[1] - times[0]
    return ConditionIIReport(_span_report(spans, dt, first, lambda a, b: amp2 * noise(a, b), S),
                             _span_report(spans, dt, second, lambda a, b: amp1 * noise(a, b), S))


def exact_surface(exact, driver: RoughPath, times: Sequence[float], mesh) -> SolutionSurface:
    """Tabulate a closed-form solution ``exact(s, x (k, 1), driver)`` with zero standard errors."""
    xs = np.asarray(mesh, dtype=float).reshape(-1, 1)
    u = np.stack([exact(float(s), xs, driver) for s in times])
    return SolutionSurface(np.asarray(times, dtype=float), xs, u, np.zeros_like(u),
                           metadata={"source": "closed form"})


# smooth drivers: comparison with the classical equation

@dataclass
class SmoothComparison:
    xs: np.ndarray
    u_rough: np.ndarray
    se_rough: np.ndarray
    u_classical: np.ndarray
    se_classical: np.ndarray

    @property
    def discrepancy(self) -> float:
        return float(np.max(np.abs(self.u_rough - self.u_classical)))

    @property
    def combined_se(self) -> float:
        return float(np.max(np.hypot(self.se_rough, self.se_classical)))


def classical_estimate(s: float, xs, cs: CoefficientSet, driver: RoughPath, num_paths: int, seed: int,
                       substeps: int = 8, tag: str = "classical") -> tuple[np.ndarray, np.ndarray]:
    """Feynman-Kac with the smooth driver as a time-dependent drift.

    Euler with ``substeps`` steps per grid cell, W differentiated cell by cell:
    dX = (b + beta(X) W') dt + sigma dB, weight exp(int c + gamma(X) W' dr).
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, cs.d)
    m = driver.node_index(s)
    N, T = driver.num_steps, driver.horizon
    if m == N:
        return cs.g(T, xs), np.zeros(len(xs))
    dt = driver.dt / substeps
    wdot = driver.increments / driver.dt
    deterministic = cs.sigma.is_zero
    M = 1 if deterministic else num_paths
    ledger = mcstats.SeedLedger(seed)
    samples = []
    for b, start, stop in mcstats.path_blocks(M):
        Mb = stop - start
        x = np.repeat(xs, Mb, axis=0)
        I = np.zeros(x.shape[0])
        dB = (np.zeros((Mb, (N - m) * substeps, cs.m)) if deterministic
              else mcstats.brownian_increments(ledger, tag, 0, b, Mb, (N - m) * substeps, cs.m, dt))
        dB = np.tile(dB, (len(xs), 1, 1))
        r = 0
        for k in range(m, N):
            for j in range(substeps):
                t = (k + j / substeps) * driver.dt
                beta_w = np.einsum("pin,n->pi", cs.beta(t, x), wdot[k])
                rate = np.einsum("pn,n->p", cs.gamma(t, x), wdot[k]) + cs.c(t, x)
                x_new = x + (cs.b(t, x) + beta_w) * dt + np.einsum("pia,pa->pi", cs.sigma(t, x), dB[:, r])
                I = I + rate * dt
                x = x_new
                r += 1
        samples.append((cs.g(T, x) * np.exp(I)).reshape(len(xs), Mb))
    return mcstats.mean_stderr(np.concatenate(samples, axis=1), axis=1)


def smooth_case_reference(cs: CoefficientSet, driver: RoughPath, xs, s: float = 0.0, num_paths: int = 10_000,
                          seed: int = 0, substeps: int = 8) -> SmoothComparison:
    if not driver.geometric:
        raise ValueError("smooth-case comparison needs a driver flagged geometric")
    xs = np.asarray(xs, dtype=float).reshape(-1, cs.d)
    est = estimate(s, xs, cs, driver, num_paths, seed)
    uc, sec = classical_estimate(s, xs, cs, driver, num_paths, seed, substeps)
    return SmoothComparison(xs, est.u, est.u_se, uc, sec)


def surface_for_residuals(cs: CoefficientSet, driver: RoughPath, mesh, stride: int = 1, num_paths: int = 1,
                          seed: int = 0, threads: int = 1) -> SolutionSurface:
    """Monte Carlo surface on every ``stride``-th grid node (the last slice is u_T = g)."""
    nodes = np.arange(0, driver.num_steps + 1, stride)
    if nodes[-1] != driver.num_steps:
        raise ValueError("stride must divide the number of steps")
    return build_surface(cs, driver, driver.times[nodes], np.asarray(mesh).reshape(-1, 1), num_paths, seed,
                         threads=threads)
