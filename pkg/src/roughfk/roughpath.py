"""Level-2 rough paths on a uniform grid.

A :class:`RoughPath` stores the path values at the grid nodes and one second
level tensor per grid step.  Every window ``(dW_{i,j}, WW_{i,j})`` is rebuilt
from the steps by Chen's relation, so Chen holds by construction.  The tensor
norm is Frobenius throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _accumulate(values: np.ndarray, areas: np.ndarray, i: int, j: int) -> np.ndarray:
    """Left-to-right Chen accumulation of WW_{i,j}; leading batch axes allowed."""
    n = values.shape[-1]
    acc = np.zeros(values.shape[:-2] + (n, n))
    for k in range(i, j):
        left = values[..., k, :] - values[..., i, :]
        step = values[..., k + 1, :] - values[..., k, :]
        acc = acc + areas[..., k, :, :] + left[..., :, None] * step[..., None, :]
    return acc


@dataclass(frozen=True, eq=False)
class RoughPath:
    """Path values ``W[0..N]`` of shape (N+1, n) and step areas ``A[0..N-1]`` of shape (N, n, n)."""

    horizon: float
    values: np.ndarray
    step_areas: np.ndarray
    geometric: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        areas = np.array(self.step_areas, dtype=float)
        if values.ndim != 2 or values.shape[0] < 2:
            raise ValueError("values must have shape (N+1, n) with N >= 1")
        num_steps, dim = values.shape[0] - 1, values.shape[1]
        if areas.shape != (num_steps, dim, dim):
            raise ValueError(f"step_areas must have shape {(num_steps, dim, dim)}, got {areas.shape}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "step_areas", _readonly(areas))
        object.__setattr__(self, "geometric", bool(self.geometric))

    @property
    def num_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.horizon / self.num_steps

    @cached_property
    def times(self) -> np.ndarray:
        return _readonly(np.arange(self.num_steps + 1) * self.dt)

    @cached_property
    def increments(self) -> np.ndarray:
        return _readonly(np.diff(self.values, axis=0))

    def node_index(self, s: float) -> int:
        """Grid index of time ``s``; raises if ``s`` is not a grid node."""
        k = int(round(s / self.dt))
        if not 0 <= k <= self.num_steps or abs(k * self.dt - s) > 1e-9 * self.horizon:
            raise ValueError(f"time {s} is not a grid node of a {self.num_steps}-step grid on [0, {self.horizon}]")
        return k

    def window(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(dW_{t_i,t_j}, WW_{t_i,t_j}) by Chen accumulation."""
        if not (0 <= i <= j <= self.num_steps):
            raise IndexError(f"window ({i}, {j}) outside 0..{self.num_steps}")
        return self.values[j] - self.values[i], _accumulate(self.values, self.step_areas, i, j)

    @cached_property
    def window_table(self) -> np.ndarray:
        """WW_{i,j} for all i <= j, shape (N+1, N+1, n, n); entries with i > j are zero.

        Uses the same operation order as :meth:`window`, so both agree bitwise.
        """
        N, n = self.num_steps, self.dim
        W, A = self.values, self.step_areas
        table = np.zeros((N + 1, N + 1, n, n))
        for j in range(1, N + 1):
            left = W[j - 1] - W[:j]
            step = W[j] - W[j - 1]
            table[:j, j] = table[:j, j - 1] + A[j - 1] + left[:, :, None] * step[None, None, :]
        table.setflags(write=False)
        return table

    def level1_table(self) -> np.ndarray:
        """dW_{i,j} = W_j - W_i, shape (N+1, N+1, n)."""
        return self.values[None, :, :] - self.values[:, None, :]

    def chen_defect(self, i: int, m: int, j: int) -> np.ndarray:
        _, w_ij = self.window(i, j)
        dw_im, w_im = self.window(i, m)
        dw_mj, w_mj = self.window(m, j)
        return w_ij - w_im - w_mj - np.outer(dw_im, dw_mj)

    def geometricity_defect(self) -> np.ndarray:
        """Sym(A_k) - 1/2 dW_k (x) dW_k for every step."""
        A = self.step_areas
        dW = self.increments
        return 0.5 * (A + np.swapaxes(A, -1, -2)) - 0.5 * dW[:, :, None] * dW[:, None, :]

    # serialization

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "geometric": self.geometric,
            "values": self.values.tolist(),
            "step_areas": self.step_areas.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoughPath":
        return cls(data["horizon"], np.array(data["values"]), np.array(data["step_areas"]), data["geometric"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RoughPath":
        return cls.from_dict(json.loads(text))

    def write_csv(self, path_file, areas_file) -> None:
        n = self.dim
        with open(path_file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"W_{i + 1}" for i in range(n)])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        with open(areas_file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"A_{a + 1}{b + 1}" for a in range(n) for b in range(n)])
            for k, A in enumerate(self.step_areas):
                w.writerow([k] + [repr(float(v)) for v in A.ravel()])


@dataclass(frozen=True)
class RhoAlphaReport:
    alpha: float
    level1_dist: float
    level2_dist: float

    @property
    def total(self) -> float:
        return self.level1_dist + self.level2_dist


# constructors

def canonical_lift(path_samples, target_steps: int, horizon: float = 1.0) -> RoughPath:
    """Lift of a bounded-variation path sampled on a grid R times finer than the target.

    Each fine step is treated as linear (area 1/2 dw (x) dw) and the fine steps
    inside a coarse step are composed with Chen, i.e. trapezoidal quadrature of
    the iterated integral.
    """
    w = np.asarray(path_samples, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2:
        raise ValueError("path samples must be an (R*N+1, n) array")
    if target_steps < 1:
        raise ValueError("target_steps must be positive")
    fine = w.shape[0] - 1
    if fine < target_steps or fine % target_steps:
        raise ValueError(f"{w.shape[0]} samples do not form a refinement of {target_steps} steps")
    R = fine // target_steps
    n = w.shape[1]
    dw = np.diff(w, axis=0).reshape(target_steps, R, n)
    offsets = np.cumsum(dw, axis=1) - dw
    areas = np.einsum("kri,krj->kij", offsets + 0.5 * dw, dw)
    return RoughPath(horizon, w[::R], areas, geometric=True)


def canonical_from_function(fn: Callable[[np.ndarray], np.ndarray], horizon: float, steps: int,
                            refinement: int = 64) -> RoughPath:
    t = np.linspace(0.0, horizon, steps * refinement + 1)
    return canonical_lift(np.asarray(fn(t), dtype=float), steps, horizon)


def _ito_areas(fine: np.ndarray) -> np.ndarray:
    """Left-point iterated sums per coarse step; fine has shape (..., N, R, n)."""
    offsets = np.cumsum(fine, axis=-2) - fine
    return np.einsum("...ri,...rj->...ij", offsets, fine)


def _check_grid(horizon, steps, refinement):
    if not horizon > 0 or steps < 1 or refinement < 1:
        raise ValueError("horizon, steps and refinement must be positive")
    if refinement < 2:
        raise ValueError("Levy areas need refinement >= 2")


def brownian_ito_lift(dim: int, horizon: float, steps: int, refinement: int,
                      rng: np.random.Generator) -> tuple[RoughPath, np.ndarray]:
    """Ito lift of a Brownian path simulated on the fine grid.

    Returns the rough path and the coarse Brownian increments (shape (N, n)) of
    the same fine path.
    """
    _check_grid(horizon, steps, refinement)
    dt_fine = horizon / (steps * refinement)
    fine = rng.standard_normal((steps, refinement, dim)) * np.sqrt(dt_fine)
    coarse = fine.sum(axis=1)
    values = np.vstack([np.zeros((1, dim)), np.cumsum(coarse, axis=0)])
    return RoughPath(horizon, values, _ito_areas(fine), geometric=False), coarse


def brownian_ito_lift_batch(dim: int, horizon: float, steps: int, refinement: int,
                            rng: np.random.Generator, batch: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized lifts: values (B, N+1, n) and step areas (B, N, n, n)."""
    _check_grid(horizon, steps, refinement)
    dt_fine = horizon / (steps * refinement)
    fine = rng.standard_normal((batch, steps, refinement, dim)) * np.sqrt(dt_fine)
    coarse = fine.sum(axis=2)
    values = np.concatenate([np.zeros((batch, 1, dim)), np.cumsum(coarse, axis=1)], axis=1)
    return values, _ito_areas(fine)


def batch_window(values: np.ndarray, areas: np.ndarray, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Windows for a stack of paths (leading batch axes)."""
    return values[..., j, :] - values[..., i, :], _accumulate(values, areas, i, j)


def pure_area(dim: int, horizon: float, steps: int, area) -> RoughPath:
    """W = 0 with step areas ``area * dt``; geometric when ``area`` is antisymmetric."""
    a = np.asarray(area, dtype=float)
    if a.shape != (dim, dim):
        raise ValueError("area must be a dim x dim matrix")
    dt = horizon / steps
    antisym = np.allclose(a, -a.T, atol=0.0)
    return RoughPath(horizon, np.zeros((steps + 1, dim)), np.broadcast_to(a * dt, (steps, dim, dim)), antisym)


# transformations

def geometrize(rp: RoughPath) -> RoughPath:
    """Replace each step's symmetric part by 1/2 dW (x) dW, keeping the Levy area."""
    A = rp.step_areas
    dW = rp.increments
    antisym = 0.5 * (A - np.swapaxes(A, -1, -2))
    return RoughPath(rp.horizon, rp.values, antisym + 0.5 * dW[:, :, None] * dW[:, None, :], geometric=True)


def shift(rp: RoughPath, s: float) -> RoughPath:
    """Driver restarted at grid node ``s`` and frozen at ``W_T`` after ``T - s``."""
    m = rp.node_index(s)
    return shift_index(rp, m)


def shift_index(rp: RoughPath, m: int) -> RoughPath:
    N = rp.num_steps
    if not 0 <= m <= N:
        raise ValueError(f"shift index {m} outside 0..{N}")
    if m == 0:
        return rp
    idx = np.minimum(np.arange(N + 1) + m, N)
    areas = np.zeros_like(rp.step_areas)
    areas[: N - m] = rp.step_areas[m:]
    return RoughPath(rp.horizon, rp.values[idx], areas, rp.geometric)


def coarsen(rp: RoughPath, factor: int) -> RoughPath:
    """Subsample by ``factor``; coarse step areas are Chen compositions of the fine ones."""
    if factor < 1 or rp.num_steps % factor:
        raise ValueError(f"factor {factor} does not divide {rp.num_steps} steps")
    if factor == 1:
        return rp
    N = rp.num_steps // factor
    areas = np.stack([rp.window(k * factor, (k + 1) * factor)[1] for k in range(N)])
    return RoughPath(rp.horizon, rp.values[::factor], areas, rp.geometric)


def perturb(rp: RoughPath, direction: RoughPath, eps: float) -> RoughPath:
    """Translate ``rp`` by ``eps`` times the path ``direction``.

    Level one is ``W + eps V``.  Per step, the cross integrals are replaced by
    their symmetric (midpoint) approximation ``1/2 (dV (x) dW + dW (x) dV)`` and
    the second level of ``V`` enters with ``eps**2``; this keeps Chen exact and
    preserves weak geometricity.
    """
    if direction.num_steps != rp.num_steps or direction.dim != rp.dim or direction.horizon != rp.horizon:
        raise ValueError("perturbation direction must live on the same grid")
    dW, dV = rp.increments, direction.increments
    cross = 0.5 * (dV[:, :, None] * dW[:, None, :] + dW[:, :, None] * dV[:, None, :])
    areas = rp.step_areas + eps * cross + eps ** 2 * direction.step_areas
    return RoughPath(rp.horizon, rp.values + eps * direction.values, areas,
                     rp.geometric and direction.geometric)


# norms

def _pair_gaps(rp: RoughPath) -> tuple[np.ndarray, np.ndarray]:
    N = rp.num_steps
    i, j = np.triu_indices(N + 1, k=1)
    return i, j


def holder_norms(rp: RoughPath, alpha: float) -> tuple[float, float]:
    """(|dW|_alpha, |WW|_{2 alpha}) as maxima over all grid pairs."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    i, j = _pair_gaps(rp)
    gap = (j - i) * rp.dt
    lvl1 = np.linalg.norm(rp.values[j] - rp.values[i], axis=-1) / gap ** alpha
    lvl2 = np.linalg.norm(rp.window_table[i, j], axis=(-2, -1)) / gap ** (2 * alpha)
    return float(lvl1.max()), float(lvl2.max())


def rho_alpha(a: RoughPath, b: RoughPath, alpha: float) -> RhoAlphaReport:
    """Inhomogeneous alpha-Holder distance over all grid pairs."""
    if a.num_steps != b.num_steps or a.dim != b.dim or a.horizon != b.horizon:
        raise ValueError("rough paths live on different grids")
    i, j = _pair_gaps(a)
    gap = (j - i) * a.dt
    d1 = (a.values[j] - a.values[i]) - (b.values[j] - b.values[i])
    d2 = a.window_table[i, j] - b.window_table[i, j]
    lvl1 = np.linalg.norm(d1, axis=-1) / gap ** alpha
    lvl2 = np.linalg.norm(d2, axis=(-2, -1)) / gap ** (2 * alpha)
    return RhoAlphaReport(alpha, float(lvl1.max()), float(lvl2.max()))


SMOOTH_PATHS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda t: np.zeros_like(t)[:, None],
    "linear": lambda t: t[:, None],
    "sin": lambda t: np.sin(t)[:, None],
    "circle": lambda t: np.stack([np.cos(t), np.sin(t)], axis=-1),
    "lissajous": lambda t: np.stack([np.sin(2 * t), 0.5 * np.cos(3 * t)], axis=-1),
}
