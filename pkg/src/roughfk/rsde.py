"""One-step Davie scheme for hybrid rough SDEs

    dX = b(t, X) dt + sigma(t, X) dB + (beta, beta')(t, X) dW

and for linear rough SDEs with forcing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import mcstats
from .controlled import ControlledSample, ControlledVectorField, Field, dyadic_spans
from .integrator import SlopeReport, residual_report
from .roughpath import RoughPath, rho_alpha


class SimulationError(RuntimeError):
    """A path left the finite range; carries the offending path and step."""

    def __init__(self, path: int, step: int, message: str = ""):
        self.path = path
        self.step = step
        super().__init__(message or f"non-finite state on path {path} at step {step}")


@dataclass
class SDECoefficients:
    b: Field
    sigma: Field
    beta: ControlledVectorField

    def __post_init__(self):
        d = self.b.shape[0]
        if self.sigma.shape[:1] != (d,) or self.beta.shape[:1] != (d,):
            raise ValueError("b, sigma and beta disagree on the state dimension")

    @property
    def d(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.sigma.shape[1]

    @property
    def n(self) -> int:
        return self.beta.shape[1]

    def shifted(self, s: float, horizon: float) -> "SDECoefficients":
        return SDECoefficients(self.b.shifted(s, horizon), self.sigma.shifted(s, horizon),
                               self.beta.shifted(s, horizon))


@dataclass
class HybridPathEnsemble:
    """Sampled solution paths ``X`` (p, K+1, d) with Gubinelli derivatives ``gub`` (p, K+1, d, n)."""

    X: np.ndarray
    gub: np.ndarray
    brownian: np.ndarray
    times: np.ndarray
    seeds: dict = field(default_factory=dict)

    @property
    def num_paths(self) -> int:
        return self.X.shape[0]

    @property
    def num_steps(self) -> int:
        return self.X.shape[1] - 1

    @property
    def terminal(self) -> np.ndarray:
        return self.X[:, -1]

    def controlled_sample(self) -> ControlledSample:
        return ControlledSample(self.X, self.gub)

    def gubinelli_defect(self, beta: ControlledVectorField) -> float:
        """Max |gub_k - beta(t_k, X_k)| over nodes and paths."""
        return max(float(np.max(np.abs(self.gub[:, k] - beta(float(t), self.X[:, k]))))
                   for k, t in enumerate(self.times))


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.argmax(~np.all(np.isfinite(x.reshape(x.shape[0], -1)), axis=1)))
        raise SimulationError(bad, step)


def _initial_state(x0, num_paths: int, d: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        if x0.shape != (d,):
            raise ValueError(f"initial condition must have dimension {d}")
        return np.broadcast_to(x0, (num_paths, d)).copy()
    if x0.shape != (num_paths, d):
        raise ValueError(f"initial states must have shape {(num_paths, d)}")
    return x0.copy()


def solve_rsde(coeffs: SDECoefficients, x0, rp: RoughPath, brownian: Optional[np.ndarray] = None,
               steps: Optional[int] = None, num_paths: Optional[int] = None) -> HybridPathEnsemble:
    """Davie scheme

        X_{k+1} = X_k + b dt + sigma dB_k + beta dW_k + (D_x beta beta + beta') A_k

    with all coefficients evaluated at (t_k, X_k).  ``brownian`` has shape
    (p, K, m); it may be omitted when sigma vanishes.
    """
    K = rp.num_steps if steps is None else steps
    if not 0 <= K <= rp.num_steps:
        raise ValueError(f"steps must lie in 0..{rp.num_steps}")
    if rp.dim != coeffs.n:
        raise ValueError(f"driver dimension {rp.dim} does not match beta ({coeffs.n})")
    d, m = coeffs.d, coeffs.m
    if brownian is None:
        if not coeffs.sigma.is_zero:
            raise ValueError("Brownian increments are required when sigma is nonzero")
        p = num_paths or (np.asarray(x0).shape[0] if np.ndim(x0) == 2 else 1)
        brownian = np.zeros((p, K, m))
    brownian = np.asarray(brownian, dtype=float)
    if brownian.ndim != 3 or brownian.shape[1] < K or brownian.shape[2] != m:
        raise ValueError(f"Brownian increments must have shape (p, >= {K}, {m}), got {brownian.shape}")
    brownian = brownian[:, :K]
    p = brownian.shape[0]
    dt = rp.dt
    times = np.arange(K + 1) * dt
    X = np.empty((p, K + 1, d))
    gub = np.empty((p, K + 1, d, coeffs.n))
    X[:, 0] = _initial_state(x0, p, d)
    beta = coeffs.beta
    rough = not beta.is_zero
    for k in range(K):
        t = float(times[k])
        x = X[:, k]
        nxt = x
        if not coeffs.b.is_zero:
            nxt = nxt + coeffs.b(t, x) * dt
        if not coeffs.sigma.is_zero:
            nxt = nxt + np.einsum("pia,pa->pi", coeffs.sigma(t, x), brownian[:, k])
        bv = beta(t, x)
        gub[:, k] = bv
        if rough:
            second = np.einsum("pinj,pjm->pinm", beta.value.dx(t, x), bv) + beta.prime(t, x)
            nxt = nxt + (np.einsum("pin,n->pi", bv, rp.increments[k])
                         + np.einsum("pinm,mn->pi", second, rp.step_areas[k]))
        _check_finite(nxt, k)
        X[:, k + 1] = nxt
    gub[:, K] = beta(float(times[K]), X[:, K])
    return HybridPathEnsemble(X, gub, brownian, times)


ArrayOrFn = Union[None, np.ndarray, Callable[[int], np.ndarray]]


def _at(coef: ArrayOrFn, k: int):
    if coef is None:
        return None
    if callable(coef):
        return coef(k)
    return coef[:, k]


@dataclass
class LinearCoefficients:
    """Per-node coefficients of a linear rough SDE.

    Each entry is an array indexed ``[path, node, ...]``, a callable ``k ->
    array[path, ...]`` or ``None`` for zero:

    * ``G``: (d, d) drift matrix;
    * ``S``: (d, m, d), ``S[i, a, j]`` multiplies ``Y^j dB^a``;
    * ``f``: (d, n, d), ``f[i, nu, j]`` multiplies ``Y^j dW^nu``;
    * ``fp``: (d, n, n, d), ``fp[i, nu, mu, j]`` the time derivative of ``f_nu`` along ``dW^mu``;
    * ``forcing``: controlled sample (F, F') with F of shape (p, K+1, d).
    """

    d: int
    n: int
    G: ArrayOrFn = None
    S: ArrayOrFn = None
    f: ArrayOrFn = None
    fp: ArrayOrFn = None
    forcing: Optional[ControlledSample] = None


def solve_linear_rsde(lc: LinearCoefficients, xi, rp: RoughPath, brownian: Optional[np.ndarray] = None,
                      steps: Optional[int] = None) -> HybridPathEnsemble:
    """Davie scheme for the linear equation

        Y_{k+1} = Y_k + dF_k + G Y dt + S Y dB + f Y dW + (f' Y + f (f Y + F')) A_k.

    The returned ``gub`` is the Gubinelli derivative ``f Y + F'``.
    """
    K = rp.num_steps if steps is None else steps
    d, n = lc.d, lc.n
    xi = np.asarray(xi, dtype=float)
    p = xi.shape[0] if xi.ndim == 2 else (brownian.shape[0] if brownian is not None else 1)
    Y = np.empty((p, K + 1, d))
    Yp = np.zeros((p, K + 1, d, n))
    Y[:, 0] = _initial_state(xi, p, d)
    F = Fp = None
    if lc.forcing is not None:
        F, Fp = lc.forcing.X, lc.forcing.Xp
        if F.shape[:2] != (p, K + 1) and F.shape[1] < K + 1:
            raise ValueError("forcing does not cover the grid")
    if lc.S is not None and brownian is None:
        raise ValueError("Brownian increments are required when S is nonzero")
    dt = rp.dt

    def gubinelli(k, y):
        fk = _at(lc.f, k)
        out = np.zeros((p, d, n)) if fk is None else np.einsum("pinj,pj->pin", fk, y)
        if Fp is not None:
            out = out + Fp[:, k]
        return fk, out

    for k in range(K):
        y = Y[:, k]
        nxt = y
        if F is not None:
            nxt = nxt + (F[:, k + 1] - F[:, k])
        G = _at(lc.G, k)
        if G is not None:
            nxt = nxt + np.einsum("pij,pj->pi", G, y) * dt
        S = _at(lc.S, k)
        if S is not None:
            nxt = nxt + np.einsum("piaj,pj,pa->pi", S, y, brownian[:, k])
        fk, yp = gubinelli(k, y)
        Yp[:, k] = yp
        A = rp.step_areas[k]
        if fk is not None:
            fy = np.einsum("pinj,pj->pin", fk, y)
            lvl2 = np.einsum("pinj,pjm,mn->pi", fk, yp, A)
            fpk = _at(lc.fp, k)
            if fpk is not None:
                lvl2 = lvl2 + np.einsum("pinmj,pj,mn->pi", fpk, y, A)
            nxt = nxt + (np.einsum("pin,n->pi", fy, rp.increments[k]) + lvl2)
        _check_finite(nxt, k)
        Y[:, k + 1] = nxt
    Yp[:, K] = gubinelli(K, Y[:, K])[1]
    times = np.arange(K + 1) * dt
    return HybridPathEnsemble(Y, Yp, brownian if brownian is not None else np.zeros((p, K, 0)), times)


def simulate(coeffs: SDECoefficients, x0, rp: RoughPath, num_paths: int, seed: int, tag: str = "rsde",
             steps: Optional[int] = None, refinement: int = 1) -> HybridPathEnsemble:
    """Solve with Brownian increments drawn from the block streams of ``seed``.

    With ``refinement > 1`` the increments are drawn on a grid that many times
    finer and summed, so that a fine and a coarse run share one noise.
    """
    ledger = mcstats.SeedLedger(seed)
    K = rp.num_steps if steps is None else steps
    dB = []
    for b, start, stop in mcstats.path_blocks(num_paths):
        fine = mcstats.brownian_increments(ledger, tag, 0, b, stop - start, K * refinement, coeffs.m,
                                           rp.dt / refinement)
        dB.append(fine.reshape(stop - start, K, refinement, coeffs.m).sum(axis=2))
    ens = solve_rsde(coeffs, x0, rp, np.concatenate(dB), steps=K)
    ens.seeds = {"master_seed": seed, "tag": tag}
    return ens


def davie_remainder_scaling(ens: HybridPathEnsemble, coeffs: SDECoefficients, rp: RoughPath,
                            brownian: np.ndarray, p: float = 2, factor: int = 4,
                            spans: Optional[list[int]] = None) -> SlopeReport:
    """Moments of the Davie remainder X^natural_{s,t} against a fine reference.

    ``ens``, ``rp`` and ``brownian`` live on the fine grid; spans are multiples
    of ``factor`` fine steps (the coarse grid).  The drift and Ito parts of the
    expansion are the fine-grid left sums along the reference path.
    """
    if ens is None:
        raise ValueError("missing fine reference ensemble")
    Kf = ens.num_steps
    if factor < 2 or Kf % factor or Kf > rp.num_steps:
        raise ValueError("fine reference must have a multiple of `factor` steps on the driver grid")
    Kc = Kf // factor
    spans = spans or dyadic_spans(Kc)
    dt = rp.dt
    X = ens.X
    cum = np.zeros_like(X)
    for k in range(Kf):
        t, x = float(ens.times[k]), X[:, k]
        inc = np.zeros_like(x)
        if not coeffs.b.is_zero:
            inc = inc + coeffs.b(t, x) * dt
        if not coeffs.sigma.is_zero:
            inc = inc + np.einsum("pia,pa->pi", coeffs.sigma(t, x), brownian[:, k])
        cum[:, k + 1] = cum[:, k] + inc
    coarse_nodes = np.arange(Kc + 1) * factor
    beta = coeffs.beta
    lvl1_coef, lvl2_coef = [], []
    for k in coarse_nodes:
        t, x = float(ens.times[k]), X[:, k]
        bv = beta(t, x)
        lvl1_coef.append(bv)
        lvl2_coef.append(np.einsum("pinj,pjm->pinm", beta.value.dx(t, x), bv) + beta.prime(t, x))
    lvl1_coef = np.stack(lvl1_coef, axis=1)
    lvl2_coef = np.stack(lvl2_coef, axis=1)
    table = rp.window_table
    residuals = {}
    for h in spans:
        s = np.arange(0, Kc - h + 1)
        S, T = coarse_nodes[s], coarse_nodes[s + h]
        dW = rp.values[T] - rp.values[S]
        expansion = (cum[:, T] - cum[:, S]
                     + np.einsum("psin,sn->psi", lvl1_coef[:, s], dW)
                     + np.einsum("psinm,smn->psi", lvl2_coef[:, s], table[S, T]))
        residuals[h] = X[:, T] - X[:, S] - expansion
    return residual_report(residuals, dt * factor, p)


@dataclass
class RSDERun:
    coeffs: SDECoefficients
    x0: np.ndarray
    rp: RoughPath
    brownian: Optional[np.ndarray] = None


@dataclass
class StabilityReport:
    distance: float
    initial_distance: float
    driver_distance: float
    coefficient_distance: dict

    def ratio(self, perturbation: str = "initial") -> float:
        denom = {"initial": self.initial_distance, "driver": self.driver_distance}[perturbation]
        return self.distance / denom if denom > 0 else (0.0 if self.distance == 0 else float("inf"))


def stability_probe(a: RSDERun, b: RSDERun, alpha: float = 0.45, p: float = 2) -> StabilityReport:
    """sup over nodes of the L_p distance between two solutions sharing the noise."""
    if a.rp.num_steps != b.rp.num_steps or a.rp.horizon != b.rp.horizon or a.rp.dim != b.rp.dim:
        raise ValueError("runs use different grids")
    ea = solve_rsde(a.coeffs, a.x0, a.rp, a.brownian)
    eb = solve_rsde(b.coeffs, b.x0, b.rp, b.brownian)
    diff = np.linalg.norm(ea.X - eb.X, axis=-1)
    distance = float(np.max(np.mean(diff ** p, axis=0) ** (1 / p)))
    xa, xb = np.broadcast_to(a.x0, ea.X[:, 0].shape), np.broadcast_to(b.x0, eb.X[:, 0].shape)
    init = float(np.mean(np.linalg.norm(xa - xb, axis=-1) ** p) ** (1 / p))
    drift = rho_alpha(a.rp, b.rp, alpha).total
    probe = ea.X[: min(64, ea.num_paths)]
    coef = {}
    for name in ("b", "sigma"):
        fa, fb = getattr(a.coeffs, name), getattr(b.coeffs, name)
        coef[name] = max(float(np.max(np.abs(fa(float(t), probe[:, k]) - fb(float(t), probe[:, k]))))
                         for k, t in enumerate(ea.times))
    coef["beta"] = max(float(np.max(np.abs(a.coeffs.beta(float(t), probe[:, k]) - b.coeffs.beta(float(t), probe[:, k]))))
                       for k, t in enumerate(ea.times))
    return StabilityReport(distance, init, drift, coef)
