"""Monte Carlo Feynman-Kac estimators for the backward rough Kolmogorov equation

    u(s, x) = E[ g(X^{s,x}_{T-s}) exp(I^{s,x}_{T-s}) ],
    I = int c(X) dr + int (gamma, D gamma beta + gamma')(X) dW^s,

where X^{s,x} solves the hybrid RSDE driven by the shifted rough path W^s.

Random numbers: block b of paths draws Brownian increments over the whole
grid from the stream (seed, tag, noise index, b); a start at node m uses the
increments after m.  Every x in a mesh and every start time sees the same
Brownian path (common random numbers), so surfaces are smooth in x and s and
the estimator at a point does not depend on which other points are requested.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import mcstats
from .controlled import ControlledSample, ControlledVectorField, Field, _sym_bilinear, compose, \
    compose_bilinear_at, compose_linear_at
from .integrator import IntegralPath, lebesgue_integral, rough_integral
from .roughpath import RoughPath, coarsen, perturb, rho_alpha, shift_index
from .rsde import HybridPathEnsemble, SDECoefficients, solve_rsde
from .tangent import TangentEnsemble, first_variations, second_variation

MAX_ROWS = 16384


class AssumptionError(ValueError):
    """Declared regularity exponents violate the standing assumptions."""


class MeshTooNarrowError(RuntimeError):
    pass


@dataclass
class Exponents:
    """Declared regularity: driver alpha, time regularity delta (beta) and eta (gamma),
    spatial regularity kappa (beta), theta (gamma) and lam (g)."""

    alpha: float = 0.5
    delta: Optional[float] = None
    eta: Optional[float] = None
    lam: float = 3.0
    kappa: float = 5.0
    theta: float = 5.0

    def resolved(self) -> "Exponents":
        return Exponents(self.alpha, self.alpha if self.delta is None else self.delta,
                         self.alpha if self.eta is None else self.eta, self.lam, self.kappa, self.theta)

    def check(self) -> None:
        e = self.resolved()
        if not 1 / 3 < e.alpha <= 1 / 2:
            raise AssumptionError(f"alpha={e.alpha} must lie in (1/3, 1/2]")
        time_reg = min(e.delta, e.eta)
        if not e.alpha + time_reg > 0.5:
            raise AssumptionError(f"alpha + min(delta, eta) = {e.alpha + time_reg} must exceed 1/2")
        gap = min((e.lam - 2) * e.alpha, (min(e.kappa, e.theta) - 4) * e.alpha, e.delta, e.eta)
        if not e.alpha + time_reg + gap > 1:
            raise AssumptionError(f"alpha + min(delta, eta) + {gap} = {e.alpha + time_reg + gap} must exceed 1")

    def as_dict(self) -> dict:
        e = self.resolved()
        return {"alpha": e.alpha, "delta": e.delta, "eta": e.eta, "lam": e.lam, "kappa": e.kappa, "theta": e.theta}


@dataclass
class CoefficientSet:
    """b (d,), sigma (d, m), c (), beta (d, n), gamma (n,), payoff g ()."""

    b: Field
    sigma: Field
    c: Field
    beta: ControlledVectorField
    gamma: ControlledVectorField
    g: Field
    exponents: Exponents = field(default_factory=Exponents)

    def __post_init__(self):
        d = self.b.shape[0]
        n = self.beta.shape[1]
        if self.sigma.shape[0] != d or self.beta.shape[0] != d:
            raise ValueError("inconsistent state dimension across b, sigma, beta")
        if self.gamma.shape != (n,):
            raise ValueError(f"gamma must have value shape ({n},), got {self.gamma.shape}")
        if self.c.shape != () or self.g.shape != ():
            raise ValueError("c and g must be scalar fields")

    @property
    def d(self) -> int:
        return self.b.shape[0]

    @property
    def n(self) -> int:
        return self.beta.shape[1]

    @property
    def m(self) -> int:
        return self.sigma.shape[1]

    @property
    def sde(self) -> SDECoefficients:
        return SDECoefficients(self.b, self.sigma, self.beta)

    def shifted(self, s: float, horizon: float) -> "CoefficientSet":
        """Coefficients restarted at s, frozen at their time-T value beyond the horizon."""
        return CoefficientSet(self.b.shifted(s, horizon), self.sigma.shifted(s, horizon),
                              self.c.shifted(s, horizon), self.beta.shifted(s, horizon),
                              self.gamma.shifted(s, horizon), self.g, self.exponents)

    def check_assumptions(self, probe: Optional[np.ndarray] = None, horizon: float = 1.0) -> None:
        self.exponents.check()
        probe = np.linspace(-3, 3, 13)[:, None] * np.ones((1, self.d)) if probe is None else probe
        for t in (0.0, horizon):
            for name, f in (("b", self.b), ("sigma", self.sigma), ("c", self.c), ("beta", self.beta.value),
                            ("gamma", self.gamma.value), ("g", self.g)):
                if not np.all(np.isfinite(f(t, probe))):
                    raise AssumptionError(f"{name} is not finite on the probe mesh")


@dataclass
class WeightProcess:
    """Exponent ``I`` (p, K+1) and its Gubinelli derivative ``Ip`` = gamma(X) (p, K+1, n)."""

    I: np.ndarray
    Ip: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.I[:, -1]


def weight_process(ens: HybridPathEnsemble, cs: CoefficientSet, rp_shifted: RoughPath) -> WeightProcess:
    p, K1 = ens.X.shape[:2]
    if ens.X.shape[2] != cs.d or K1 - 1 > rp_shifted.num_steps:
        raise ValueError("ensemble does not match the coefficient set or driver")
    I = np.zeros((p, K1))
    if not cs.c.is_zero:
        cv = np.stack([cs.c(float(t), ens.X[:, k]) for k, t in enumerate(ens.times)], axis=1)
        I = I + lebesgue_integral(cv, rp_shifted.dt).values
    if cs.gamma.is_zero:
        return WeightProcess(I, np.zeros((p, K1, cs.n)))
    integrand = compose(cs.gamma, ens.controlled_sample(), ens.times)
    I = I + rough_integral(integrand, rp_shifted).values
    return WeightProcess(I, integrand.X)


def tangent_weight(ens: HybridPathEnsemble, cs: CoefficientSet, rp: RoughPath, Y: TangentEnsemble) -> np.ndarray:
    """Directional derivative of I along a first variation Y, shape (p, K+1)."""
    p, K1 = ens.X.shape[:2]
    out = np.zeros((p, K1))
    if not cs.c.is_zero:
        v = np.stack([np.einsum("pj,pj->p", cs.c.dx(float(t), ens.X[:, k]), Y.Y[:, k])
                      for k, t in enumerate(ens.times)], axis=1)
        out = out + lebesgue_integral(v, rp.dt).values
    if not cs.gamma.is_zero:
        phi, phi_p = zip(*(compose_linear_at(cs.gamma, float(t), ens.X[:, k], ens.gub[:, k], Y.Y[:, k], Y.Yp[:, k])
                           for k, t in enumerate(ens.times)))
        out = out + rough_integral(ControlledSample(np.stack(phi, 1), np.stack(phi_p, 1)), rp).values
    return out


def second_tangent_weight(ens: HybridPathEnsemble, cs: CoefficientSet, rp: RoughPath, Yi: TangentEnsemble,
                          Yj: TangentEnsemble, Z: TangentEnsemble) -> np.ndarray:
    """Second derivative of I along (Y^i, Y^j) with second variation Z, shape (p, K+1)."""
    p, K1 = ens.X.shape[:2]
    out = np.zeros((p, K1))
    if not cs.c.is_zero:
        v = np.stack([_sym_bilinear(cs.c.dxx(float(t), ens.X[:, k]), Yi.Y[:, k], Yj.Y[:, k])
                      + np.einsum("pj,pj->p", cs.c.dx(float(t), ens.X[:, k]), Z.Y[:, k])
                      for k, t in enumerate(ens.times)], axis=1)
        out = out + lebesgue_integral(v, rp.dt).values
    if not cs.gamma.is_zero:
        phis, phips = [], []
        for k, t in enumerate(ens.times):
            x, xp = ens.X[:, k], ens.gub[:, k]
            v2, d2 = compose_bilinear_at(cs.gamma, float(t), x, xp, Yi.Y[:, k], Yi.Yp[:, k], Yj.Y[:, k], Yj.Yp[:, k])
            v1, d1 = compose_linear_at(cs.gamma, float(t), x, xp, Z.Y[:, k], Z.Yp[:, k])
            phis.append(v2 + v1)
            phips.append(d2 + d1)
        out = out + rough_integral(ControlledSample(np.stack(phis, 1), np.stack(phips, 1)), rp).values
    return out


# estimators

@dataclass
class Estimate:
    """Estimates at points ``xs`` (nx, d) for one start node."""

    s: float
    xs: np.ndarray
    u: np.ndarray
    u_se: np.ndarray
    grad: Optional[np.ndarray] = None
    grad_se: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None
    hess_se: Optional[np.ndarray] = None
    num_paths: int = 0


def _prepare_driver(driver: RoughPath, N: Optional[int]) -> RoughPath:
    if N is None or N == driver.num_steps:
        return driver
    if driver.num_steps % N:
        raise ValueError(f"driver with {driver.num_steps} steps cannot be coarsened to {N}")
    return coarsen(driver, driver.num_steps // N)


def _block_samples(cs: CoefficientSet, cs_s: CoefficientSet, rp_s: RoughPath, K: int, xs: np.ndarray,
                   dB: np.ndarray, order: int, horizon: float) -> dict:
    nx, d = xs.shape
    Mb = dB.shape[0]
    X0 = np.repeat(xs, Mb, axis=0)
    dBt = np.tile(dB, (nx, 1, 1))
    sde = cs_s.sde
    ens = solve_rsde(sde, X0, rp_s, dBt, steps=K)
    wp = weight_process(ens, cs_s, rp_s)
    XT = ens.X[:, K]
    w = np.exp(wp.I[:, K])
    gv = cs.g(horizon, XT)
    out = {"u": (gv * w).reshape(nx, Mb)}
    if order < 1:
        return out
    Ys = first_variations(ens, sde, rp_s, dBt)
    dI = [tangent_weight(ens, cs_s, rp_s, Y)[:, K] for Y in Ys]
    Dg = cs.g.dx(horizon, XT)
    DgY = [np.einsum("pj,pj->p", Dg, Y.Y[:, K]) for Y in Ys]
    grad = np.stack([(DgY[i] + gv * dI[i]) * w for i in range(d)], axis=-1)
    out["grad"] = grad.reshape(nx, Mb, d)
    if order < 2:
        return out
    D2g = cs.g.dxx(horizon, XT)
    hess = np.empty((nx * Mb, d, d))
    for i in range(d):
        for j in range(i, d):
            Z = second_variation(ens, Ys, sde, rp_s, dBt, (i, j))
            d2I = second_tangent_weight(ens, cs_s, rp_s, Ys[i], Ys[j], Z)[:, K]
            val = (_sym_bilinear(D2g, Ys[i].Y[:, K], Ys[j].Y[:, K])
                   + np.einsum("pj,pj->p", Dg, Z.Y[:, K])
                   + (DgY[i] * dI[j] + DgY[j] * dI[i])
                   + gv * d2I + gv * (dI[i] * dI[j])) * w
            hess[:, i, j] = hess[:, j, i] = val
    out["hess"] = hess.reshape(nx, Mb, d, d)
    return out


def estimate(s: float, xs, cs: CoefficientSet, driver: RoughPath, num_paths: int, seed: int,
             order: int = 0, N: Optional[int] = None, threads: int = 1, tag: str = "fk",
             noise_index: int = 0) -> Estimate:
    """u (and derivatives up to ``order``) at start time ``s`` for every row of ``xs``.

    Block b draws increments for the whole grid from stream (seed, tag,
    noise_index, b); a run started at node m uses those after m, so estimates
    at different start times are driven by one Brownian path per sample.
    """
    rp = _prepare_driver(driver, N)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != cs.d:
        xs = xs.reshape(-1, cs.d)
    if s > rp.horizon + 1e-12:
        raise ValueError(f"s={s} is beyond the horizon {rp.horizon}")
    m = rp.node_index(s)
    T = rp.horizon
    nx, d = xs.shape
    if m == rp.num_steps:
        t = float(T)
        return Estimate(s, xs, cs.g(t, xs), np.zeros(nx), cs.g.dx(t, xs), np.zeros((nx, d)),
                        cs.g.dxx(t, xs), np.zeros((nx, d, d)), 0)
    K = rp.num_steps - m
    rp_s = shift_index(rp, m)
    cs_s = cs.shifted(m * rp.dt, T)
    deterministic = cs.sigma.is_zero
    M = 1 if deterministic else num_paths
    ledger = mcstats.SeedLedger(seed)
    blocks = mcstats.path_blocks(M)

    def run(block):
        b, start, stop = block
        Mb = stop - start
        if deterministic:
            dB = np.zeros((Mb, K, cs.m))
        else:
            dB = mcstats.brownian_increments(ledger, tag, noise_index, b, Mb, rp.num_steps, cs.m, rp.dt)[:, m:]
        chunk = max(1, MAX_ROWS // Mb)
        parts = [_block_samples(cs, cs_s, rp_s, K, xs[i:i + chunk], dB, order, T) for i in range(0, nx, chunk)]
        return {key: np.concatenate([p_[key] for p_ in parts], axis=0) for key in parts[0]}

    results = mcstats.map_blocks(run, blocks, threads)
    samples = {key: np.concatenate([r[key] for r in results], axis=1) for key in results[0]}
    u, u_se = mcstats.mean_stderr(samples["u"], axis=1)
    est = Estimate(s, xs, u, u_se, num_paths=M)
    if "grad" in samples:
        est.grad, est.grad_se = mcstats.mean_stderr(samples["grad"], axis=1)
    if "hess" in samples:
        h, hse = mcstats.mean_stderr(samples["hess"], axis=1)
        est.hess = 0.5 * (h + np.swapaxes(h, -1, -2))
        est.hess_se = 0.5 * (hse + np.swapaxes(hse, -1, -2))
    return est


def estimate_u(s, x, cs, driver, num_paths, seed, N=None, threads=1) -> tuple[float, float]:
    est = estimate(s, [x], cs, driver, num_paths, seed, 0, N, threads)
    return float(est.u[0]), float(est.u_se[0])


def estimate_u_gradient(s, x, cs, driver, num_paths, seed, N=None, threads=1) -> tuple[np.ndarray, np.ndarray]:
    est = estimate(s, [x], cs, driver, num_paths, seed, 1, N, threads)
    return est.grad[0], est.grad_se[0]


def estimate_u_hessian(s, x, cs, driver, num_paths, seed, N=None, threads=1) -> tuple[np.ndarray, np.ndarray]:
    est = estimate(s, [x], cs, driver, num_paths, seed, 2, N, threads)
    return est.hess[0], est.hess_se[0]


# surfaces

@dataclass
class SolutionSurface:
    """u, grad u, hess u with standard errors on a (s, x) mesh; arrays indexed [s, x, ...]."""

    times: np.ndarray
    xs: np.ndarray
    u: np.ndarray
    u_se: np.ndarray
    grad: Optional[np.ndarray] = None
    grad_se: Optional[np.ndarray] = None
    hess: Optional[np.ndarray] = None
    hess_se: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def header(self) -> list[str]:
        d = self.d
        cols = ["s"] + [f"x_{i + 1}" for i in range(d)] + ["u", "stderr"]
        if self.grad is not None:
            cols += [f"du_{i + 1}" for i in range(d)] + [f"se_du_{i + 1}" for i in range(d)]
        if self.hess is not None:
            pairs = [(i + 1, j + 1) for i in range(d) for j in range(d)]
            cols += [f"d2u_{i}{j}" for i, j in pairs] + [f"se_d2u_{i}{j}" for i, j in pairs]
        return cols

    def rows(self):
        for a, s in enumerate(self.times):
            for b, x in enumerate(self.xs):
                row = [s, *x, self.u[a, b], self.u_se[a, b]]
                if self.grad is not None:
                    row += [*self.grad[a, b], *self.grad_se[a, b]]
                if self.hess is not None:
                    row += [*self.hess[a, b].ravel(), *self.hess_se[a, b].ravel()]
                yield [repr(float(v)) for v in row]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            w.writerows(self.rows())

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else np.asarray(a).tolist()

        return {"times": lst(self.times), "xs": lst(self.xs), "u": lst(self.u), "u_se": lst(self.u_se),
                "grad": lst(self.grad), "grad_se": lst(self.grad_se), "hess": lst(self.hess),
                "hess_se": lst(self.hess_se), "metadata": self.metadata}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "SolutionSurface":
        def arr(v):
            return None if v is None else np.asarray(v, dtype=float)

        return cls(arr(data["times"]), arr(data["xs"]), arr(data["u"]), arr(data["u_se"]), arr(data["grad"]),
                   arr(data["grad_se"]), arr(data["hess"]), arr(data["hess_se"]), data.get("metadata", {}))

    def slice_at(self, s: float) -> int:
        idx = int(np.argmin(np.abs(self.times - s)))
        if abs(self.times[idx] - s) > 1e-12:
            raise KeyError(f"no slice at s={s}")
        return idx


def build_surface(cs: CoefficientSet, driver: RoughPath, times: Sequence[float], xs, num_paths: int, seed: int,
                  order: int = 0, threads: int = 1, tag: str = "fk") -> SolutionSurface:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != cs.d:
        xs = xs.reshape(-1, cs.d)
    ests = [estimate(float(s), xs, cs, driver, num_paths, seed, order, threads=threads, tag=tag) for s in times]
    stack = lambda key: None if getattr(ests[0], key) is None else np.stack([getattr(e, key) for e in ests])
    meta = {"num_paths": num_paths, "num_steps": driver.num_steps, "horizon": driver.horizon,
            "seed": seed, "order": order, "tag": tag}
    return SolutionSurface(np.asarray(times, dtype=float), xs, stack("u"), stack("u_se"), stack("grad"),
                           stack("grad_se"), stack("hess"), stack("hess_se"), meta)


# diagnostics

@dataclass
class MarkovReport:
    direct: float
    direct_se: float
    nested: float
    nested_se: float
    exit_fraction: float

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.direct_se, self.nested_se))

    @property
    def discrepancy(self) -> float:
        return abs(self.direct - self.nested)


def _field_scale(f: Field, t: float, probe: np.ndarray) -> float:
    return 0.0 if f.is_zero else float(np.max(np.abs(f(t, probe))))


def markov_consistency(s: float, t: float, x: float, cs: CoefficientSet, driver: RoughPath, num_paths: int,
                       seed: int, mesh_points: int = 81, threads: int = 1) -> MarkovReport:
    """Compare u(s, x) with E[exp(I_{t-s}) u(t, X^{s,x}_{t-s})], u(t, .) interpolated on a mesh (d = 1)."""
    if cs.d != 1:
        raise ValueError("markov_consistency interpolates in one space dimension only")
    ms, mt = driver.node_index(s), driver.node_index(t)
    if mt < ms:
        raise ValueError("need s <= t")
    T, N = driver.horizon, driver.num_steps
    direct = estimate(s, [x], cs, driver, num_paths, seed, threads=threads)
    d_u, d_se = float(direct.u[0]), float(direct.u_se[0])
    if mt == ms:
        # X = x and I = 0: the nested estimator evaluates the slice at x itself
        return MarkovReport(d_u, d_se, d_u, d_se, 0.0)
    # mesh half-width: diffusion scale, drift and rough transport over [s, t]
    probe = x + np.linspace(-3, 3, 25)[:, None]
    tau = (mt - ms) * driver.dt
    sig = max(_field_scale(cs.sigma, ts, probe) for ts in (s, t))
    drift = max(_field_scale(cs.b, ts, probe) for ts in (s, t))
    bet = max(_field_scale(cs.beta.value, ts, probe) for ts in (s, t))
    excursion = float(np.max(np.linalg.norm(driver.values[ms:mt + 1] - driver.values[ms], axis=-1)))
    half = 6 * sig * np.sqrt(tau) + drift * tau + bet * excursion + 1e-9
    mesh = np.linspace(x - half, x + half, mesh_points)
    if mt == N:
        slice_u, slice_se = cs.g(T, mesh[:, None]), np.zeros(mesh_points)
    else:
        est_t = estimate(t, mesh[:, None], cs, driver, num_paths, seed, threads=threads)
        slice_u, slice_se = est_t.u, est_t.u_se
    K = mt - ms
    rp_s = shift_index(driver, ms)
    cs_s = cs.shifted(ms * driver.dt, T)
    ledger = mcstats.SeedLedger(seed)
    M = 1 if cs.sigma.is_zero else num_paths

    def run(block):
        b, start, stop = block
        Mb = stop - start
        dB = mcstats.brownian_increments(ledger, "markov-outer", ms, b, Mb, K, cs.m, driver.dt)
        ens = solve_rsde(cs_s.sde, np.full((Mb, 1), x), rp_s, dB, steps=K)
        wp = weight_process(ens, cs_s, rp_s)
        return ens.X[:, K, 0], wp.I[:, K]

    parts = mcstats.map_blocks(run, mcstats.path_blocks(M), threads)
    XK = np.concatenate([a for a, _ in parts])
    IK = np.concatenate([b for _, b in parts])
    exit_fraction = float(np.mean((XK < mesh[0]) | (XK > mesh[-1])))
    if exit_fraction > 1e-3:
        raise MeshTooNarrowError(f"{exit_fraction:.2%} of paths leave the interpolation mesh")
    w = np.exp(IK)
    vals = w * np.interp(XK, mesh, slice_u)
    nested, outer_se = mcstats.mean_stderr(vals)
    # the slice errors are fully correlated across the mesh (common noise), so they add linearly
    slice_err = float(np.mean(w * np.interp(XK, mesh, slice_se)))
    return MarkovReport(d_u, d_se, float(nested), float(np.hypot(outer_se, slice_err)), exit_fraction)


@dataclass
class RobustnessReport:
    u_distance: float
    grad_distance: float
    hess_distance: float
    rho: float

    @property
    def ratio(self) -> float:
        if self.rho == 0:
            return 0.0 if self.u_distance == 0 else float("inf")
        return self.u_distance / self.rho

    @property
    def exact_zero(self) -> bool:
        return self.rho == 0 and self.u_distance == 0


def robustness_in_driver(cs: CoefficientSet, driver_a: RoughPath, driver_b: RoughPath, xs, num_paths: int,
                         seed: int, s: float = 0.0, alpha: Optional[float] = None, order: int = 0,
                         threads: int = 1) -> RobustnessReport:
    """Sup-mesh distance between the solutions for two drivers (common Brownian noise) and rho_alpha."""
    if (driver_a.num_steps, driver_a.dim, driver_a.horizon) != (driver_b.num_steps, driver_b.dim, driver_b.horizon):
        raise ValueError("drivers live on different grids")
    alpha = cs.exponents.resolved().alpha if alpha is None else alpha
    ea = estimate(s, xs, cs, driver_a, num_paths, seed, order, threads=threads)
    eb = estimate(s, xs, cs, driver_b, num_paths, seed, order, threads=threads)
    dist = lambda a, b: 0.0 if a is None else float(np.max(np.abs(a - b)))
    return RobustnessReport(dist(ea.u, eb.u), dist(ea.grad, eb.grad), dist(ea.hess, eb.hess),
                            rho_alpha(driver_a, driver_b, alpha).total)


def translated_driver(driver: RoughPath, direction: RoughPath, eps: float) -> RoughPath:
    return perturb(driver, direction, eps)


@dataclass
class MomentProbe:
    p: np.ndarray
    full: np.ndarray
    subsample: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.full / self.subsample

    def rows(self):
        return [(float(p), float(a), float(b), float(a / b)) for p, a, b in zip(self.p, self.full, self.subsample)]


def exponential_moment_probe(weights: WeightProcess, ps: Sequence[float] = (1, 2, 4), sub: int = 10) -> MomentProbe:
    """E exp(p sup_t |I_t|) on all paths and on the first 1/``sub`` of them."""
    sup = np.max(np.abs(weights.I), axis=1)
    M = sup.shape[0]
    if M < sub:
        raise ValueError(f"need at least {sub} paths")
    ps = np.asarray(ps, dtype=float)
    full = np.array([np.mean(np.exp(p * sup)) for p in ps])
    part = np.array([np.mean(np.exp(p * sup[: M // sub])) for p in ps])
    return MomentProbe(ps, full, part)


def simulate_weights(cs: CoefficientSet, driver: RoughPath, x, num_paths: int, seed: int, s: float = 0.0,
                     threads: int = 1, tag: str = "weights") -> WeightProcess:
    """Weight process for start (s, x), concatenated over path blocks."""
    m = driver.node_index(s)
    K = driver.num_steps - m
    rp_s = shift_index(driver, m)
    cs_s = cs.shifted(m * driver.dt, driver.horizon)
    ledger = mcstats.SeedLedger(seed)
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def run(block):
        b, start, stop = block
        dB = mcstats.brownian_increments(ledger, tag, m, b, stop - start, K, cs.m, driver.dt)
        ens = solve_rsde(cs_s.sde, x, rp_s, dB, steps=K)
        return weight_process(ens, cs_s, rp_s)

    parts = mcstats.map_blocks(run, mcstats.path_blocks(num_paths), threads)
    return WeightProcess(np.concatenate([w.I for w in parts]), np.concatenate([w.Ip for w in parts]))
