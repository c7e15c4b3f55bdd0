"""Compensated Riemann sums for rough integrals, left-point Ito and Lebesgue sums."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import mcstats
from .controlled import ControlledSample, dyadic_spans
from .roughpath import RoughPath


@dataclass
class IntegralPath:
    """Accumulated integral per node and path, ``values`` of shape (p, K+1, *V)."""

    values: np.ndarray
    kind: str

    def increment(self, i: int, j: int) -> np.ndarray:
        return self.values[:, j] - self.values[:, i]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def _accumulate(increments: np.ndarray) -> np.ndarray:
    zeros = np.zeros(increments.shape[:1] + (1,) + increments.shape[2:])
    return np.concatenate([zeros, np.cumsum(increments, axis=1)], axis=1)


def rough_increments(phi: np.ndarray, phi_prime: np.ndarray, dW: np.ndarray, A: np.ndarray) -> np.ndarray:
    """phi_nu dW^nu + phi'_{nu mu} A^{mu nu} for one step; phi (p, *V, n), phi' (p, *V, n, n)."""
    return np.einsum("p...n,n->p...", phi, dW) + np.einsum("p...nm,mn->p...", phi_prime, A)


def rough_integral(phi: ControlledSample, rp: RoughPath) -> IntegralPath:
    """Integral of the controlled integrand (phi, phi') against the rough path."""
    K = phi.num_nodes - 1
    n = rp.dim
    if phi.X.shape[-1] != n or phi.Xp.shape[-2:] != (n, n):
        raise ValueError(f"integrand must take values in L(R^{n}; V); got shapes {phi.X.shape}, {phi.Xp.shape}")
    if K > rp.num_steps:
        raise ValueError("integrand has more nodes than the driver grid")
    dW = rp.increments[:K]
    A = rp.step_areas[:K]
    inc = (np.einsum("pk...n,kn->pk...", phi.X[:, :K], dW)
           + np.einsum("pk...nm,kmn->pk...", phi.Xp[:, :K], A))
    return IntegralPath(_accumulate(inc), "rough")


def ito_integral(nu: np.ndarray, brownian_increments: np.ndarray) -> IntegralPath:
    """Left-point sums of nu_k dB_k; nu (p, K or K+1, *V, m), increments (p, K, m)."""
    nu = np.asarray(nu, dtype=float)
    dB = np.asarray(brownian_increments, dtype=float)
    K = dB.shape[1]
    if nu.shape[0] != dB.shape[0] or nu.shape[1] < K or nu.shape[-1] != dB.shape[-1]:
        raise ValueError(f"shape mismatch between integrand {nu.shape} and increments {dB.shape}")
    inc = np.einsum("pk...m,pkm->pk...", nu[:, :K], dB)
    return IntegralPath(_accumulate(inc), "ito")


def lebesgue_integral(values: np.ndarray, dt: float, steps: Optional[int] = None) -> IntegralPath:
    """Left-rectangle rule over the first ``steps`` steps."""
    values = np.asarray(values, dtype=float)
    K = values.shape[1] - 1 if steps is None else steps
    return IntegralPath(_accumulate(values[:, :K] * dt), "lebesgue")


@dataclass
class SlopeReport:
    """Residual sizes per dyadic span and their fitted log-log slopes."""

    spans: np.ndarray
    moment: np.ndarray
    mean_residual: np.ndarray
    slope: float
    mean_slope: float
    p: float = 2

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "moment", "mean_residual"])
            for h, m, r in zip(self.spans, self.moment, self.mean_residual):
                w.writerow([repr(float(h)), repr(float(m)), repr(float(r))])


def residual_report(residuals: dict[int, np.ndarray], dt: float, p: float) -> SlopeReport:
    """Moments of residual samples keyed by span; each array has shape (paths, starts, ...)."""
    spans = sorted(residuals)
    if len(spans) < 4:
        raise ValueError("fewer than 4 dyadic spans available")
    moment, mean_res = [], []
    for h in spans:
        r = residuals[h]
        r = r.reshape(r.shape[0], r.shape[1], -1)
        moment.append(np.mean(np.sum(r ** 2, axis=-1) ** (p / 2)) ** (1 / p))
        mean_res.append(np.mean(np.linalg.norm(r.mean(axis=0), axis=-1)))
    h_t = np.asarray(spans) * dt
    moment, mean_res = np.array(moment), np.array(mean_res)
    return SlopeReport(h_t, moment, mean_res, mcstats.positive_slope(h_t, moment),
                       mcstats.positive_slope(h_t, mean_res), p)


def local_expansion_residual(ip: IntegralPath, phi: ControlledSample, rp: RoughPath, p: float = 2,
                             spans: Optional[list[int]] = None) -> SlopeReport:
    """Residual of the one-step expansion int_s^t - phi_s dW_{s,t} - phi'_s WW_{s,t} over dyadic spans."""
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    K = ip.values.shape[1] - 1
    spans = spans or dyadic_spans(K)
    table = rp.window_table
    residuals = {}
    for h in spans:
        s = np.arange(0, K - h + 1)
        t = s + h
        dW = rp.values[t] - rp.values[s]
        WW = table[s, t]
        expansion = (np.einsum("ps...n,sn->ps...", phi.X[:, s], dW)
                     + np.einsum("ps...nm,smn->ps...", phi.Xp[:, s], WW))
        residuals[h] = ip.values[:, t] - ip.values[:, s] - expansion
    return residual_report(residuals, rp.dt, p)
