"""Bundled coefficient presets and driver construction.

Fields are assembled from constants and ridge functions ``V h(w . x)``, which
carry analytic derivatives up to third order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import mcstats
from .controlled import ControlledVectorField, Field, linear_combination
from .feynman_kac import CoefficientSet, Exponents
from .roughpath import (SMOOTH_PATHS, RoughPath, brownian_ito_lift, canonical_from_function, geometrize,
                        pure_area)

# scalar profiles with derivatives of order 0..3

def _tanh(z):
    th = np.tanh(z)
    s2 = 1 - th ** 2
    return [th, s2, -2 * th * s2, -2 * s2 ** 2 + 4 * th ** 2 * s2]


PROFILES: dict[str, Callable[[np.ndarray], list]] = {
    "tanh": _tanh,
    "sin": lambda z: [np.sin(z), np.cos(z), -np.sin(z), -np.cos(z)],
    "cos": lambda z: [np.cos(z), -np.sin(z), -np.cos(z), np.sin(z)],
    "id": lambda z: [z, np.ones_like(z), np.zeros_like(z), np.zeros_like(z)],
}


def ridge(profile: str, V, w) -> Field:
    """x -> V h(w . x) with value shape V.shape."""
    V = np.asarray(V, dtype=float)
    w = np.asarray(w, dtype=float)
    h = PROFILES[profile]

    def make(order):
        def fn(t, x):
            z = x @ w
            hk = h(z)[order]
            out = hk.reshape((-1,) + (1,) * V.ndim) * V
            for _ in range(order):
                out = out[..., None] * w
            return out
        return fn

    return Field(make(0), V.shape, make(1), make(2), make(3), name=f"{profile}-ridge", is_zero=not np.any(V))


def total(shape, *terms: Field) -> Field:
    if not terms:
        return Field.zero(shape)
    return linear_combination([(1.0, f) for f in terms])


def homogeneous(value: Field, delta: float = 0.5) -> ControlledVectorField:
    return ControlledVectorField.time_homogeneous(value, delta)


# drivers

@dataclass
class DriverSpec:
    kind: str = "brownian_strat"
    dim: int = 1
    horizon: float = 1.0
    steps: int = 256
    refinement: int = 32
    area: Optional[list] = None

    def build(self, seed: int) -> RoughPath:
        if self.steps < 1 or self.refinement < 1 or self.dim < 1 or not self.horizon > 0:
            raise ValueError("driver counts and horizon must be positive")
        if self.kind in ("brownian_ito", "brownian_strat"):
            rng = mcstats.substream(seed, "driver")
            rp, _ = brownian_ito_lift(self.dim, self.horizon, self.steps, self.refinement, rng)
            return geometrize(rp) if self.kind == "brownian_strat" else rp
        if self.kind.startswith("canonical:"):
            name = self.kind.split(":", 1)[1]
            if name not in SMOOTH_PATHS:
                raise KeyError(f"unknown smooth path {name!r}; available: {', '.join(sorted(SMOOTH_PATHS))}")
            rp = canonical_from_function(SMOOTH_PATHS[name], self.horizon, self.steps, max(self.refinement, 1))
            if rp.dim != self.dim:
                raise ValueError(f"smooth path {name!r} has dimension {rp.dim}, not {self.dim}")
            return rp
        if self.kind == "pure_area":
            area = self.area if self.area is not None else _default_area(self.dim)
            return pure_area(self.dim, self.horizon, self.steps, area)
        raise KeyError(f"unknown driver kind {self.kind!r}")

    def as_dict(self) -> dict:
        return asdict(self)


def _default_area(n: int) -> list:
    a = np.zeros((n, n))
    if n >= 2:
        a[0, 1], a[1, 0] = 1.0, -1.0
    return a.tolist()


@dataclass
class Scenario:
    name: str
    cs: CoefficientSet
    driver: DriverSpec
    x: list
    num_paths: int = 10_000
    description: str = ""
    exact: Optional[Callable] = None  # (s, x (k, d), driver) -> u
    params: dict = field(default_factory=dict)


def _constant(value) -> Field:
    return Field.constant(value)


def _cvf_zero(shape) -> ControlledVectorField:
    return ControlledVectorField.zero(shape)


def _cos_payoff() -> Field:
    return ridge("cos", 1.0, [1.0])


def _make(b, sigma, c, beta, gamma, g, exponents=None) -> CoefficientSet:
    return CoefficientSet(b, sigma, c, beta, gamma, g, exponents or Exponents())


def _delta_w(driver: RoughPath, s: float) -> np.ndarray:
    m = driver.node_index(s)
    return driver.values[-1] - driver.values[m]


def heat(sigma: float = 1.0, steps: int = 256, paths: int = 100_000) -> Scenario:
    cs = _make(Field.zero((1,)), _constant([[sigma]]), Field.zero(), _cvf_zero((1, 1)), _cvf_zero((1,)),
               _cos_payoff())

    def exact(s, x, driver):
        return np.cos(x[:, 0]) * np.exp(-0.5 * sigma ** 2 * (driver.horizon - s))

    return Scenario("heat", cs, DriverSpec("canonical:zero", 1, 1.0, steps, 1), [0.0], paths,
                    "heat flow of cos under unit diffusion", exact, {"sigma": sigma})


def transport(e: float = 1.0, steps: int = 256, alpha: float = 0.45) -> Scenario:
    cs = _make(Field.zero((1,)), Field.zero((1, 1)), Field.zero(), homogeneous(_constant([[e]]), alpha),
               _cvf_zero((1,)), _cos_payoff(), Exponents(alpha))

    def exact(s, x, driver):
        return np.cos(x[:, 0] + e * _delta_w(driver, s)[0])

    return Scenario("transport", cs, DriverSpec("brownian_strat", 1, 1.0, steps, 32), [0.0], 1,
                    "rough transport with constant direction", exact, {"e": e})


def exp_weight(c0: float = 0.3, gamma0: float = 0.5, steps: int = 256, alpha: float = 0.45) -> Scenario:
    cs = _make(Field.zero((1,)), _constant([[1.0]]), _constant(c0), _cvf_zero((1, 1)),
               homogeneous(_constant([gamma0]), alpha), _cos_payoff(), Exponents(alpha))

    def exact(s, x, driver):
        tau = driver.horizon - s
        return np.cos(x[:, 0]) * np.exp(-0.5 * tau + c0 * tau + gamma0 * _delta_w(driver, s)[0])

    return Scenario("exp_weight", cs, DriverSpec("brownian_strat", 1, 1.0, steps, 32), [0.0], 100_000,
                    "heat flow with constant potential and constant rough weight", exact,
                    {"c0": c0, "gamma0": gamma0})


def gbm(mu: float = 0.05, nu: float = 0.2, steps: int = 256) -> Scenario:
    cs = _make(ridge("id", [mu], [1.0]), ridge("id", [[nu]], [1.0]), Field.zero(), _cvf_zero((1, 1)),
               _cvf_zero((1,)), ridge("id", 1.0, [1.0]))

    def exact(s, x, driver):
        return x[:, 0] * np.exp(mu * (driver.horizon - s))

    return Scenario("gbm", cs, DriverSpec("canonical:zero", 1, 1.0, steps, 1), [1.0], 100_000,
                    "geometric Brownian motion, payoff x", exact, {"mu": mu, "nu": nu})


def full_hybrid(steps: int = 256, alpha: float = 0.45) -> Scenario:
    b = ridge("tanh", [-0.5], [1.0])
    sigma = total((1, 1), _constant([[0.3]]), ridge("tanh", [[0.2]], [1.0]))
    beta = total((1, 2), _constant([[0.3, 0.0]]), ridge("tanh", [[0.4, 0.0]], [1.0]),
                 ridge("cos", [[0.0, 0.3]], [1.0]))
    c = ridge("cos", 0.2, [1.0])
    gamma = total((2,), ridge("sin", [0.2, 0.0], [1.0]), ridge("tanh", [0.0, 0.1], [1.0]))
    cs = _make(b, sigma, c, homogeneous(beta, alpha), homogeneous(gamma, alpha), _cos_payoff(), Exponents(alpha))
    return Scenario("full_hybrid", cs, DriverSpec("brownian_strat", 2, 1.0, steps, 32), [0.0], 10_000,
                    "all coefficients active, two-dimensional Brownian driver")


def smooth_reference(e: float = 1.0, gamma0: float = 0.5, steps: int = 512) -> Scenario:
    cs = _make(Field.zero((1,)), Field.zero((1, 1)), Field.zero(), homogeneous(_constant([[e]]), 0.5),
               homogeneous(_constant([gamma0]), 0.5), _cos_payoff())

    def exact(s, x, driver):
        dw = _delta_w(driver, s)[0]
        return np.cos(x[:, 0] + e * dw) * np.exp(gamma0 * dw)

    return Scenario("smooth_reference", cs, DriverSpec("canonical:sin", 1, 1.0, steps, 64), [0.0], 1,
                    "transport with constant weight along W = sin t", exact, {"e": e, "gamma0": gamma0})


def tanh_preset(steps: int = 128, alpha: float = 0.45) -> Scenario:
    cs = _make(ridge("tanh", [0.5], [1.0]), total((1, 1), _constant([[0.3]]), ridge("tanh", [[0.2]], [1.0])),
               Field.zero(), homogeneous(ridge("tanh", [[1.0]], [1.0]), alpha), _cvf_zero((1,)), _cos_payoff(),
               Exponents(alpha))
    return Scenario("tanh", cs, DriverSpec("brownian_strat", 1, 1.0, steps, 32), [0.3], 10_000,
                    "tanh drift, diffusion and rough direction")


def brownian_gamma(gamma1: float = 0.5, steps: int = 256, alpha: float = 0.45) -> Scenario:
    cs = _make(Field.zero((1,)), _constant([[1.0]]), Field.zero(), _cvf_zero((1, 1)),
               homogeneous(ridge("sin", [gamma1], [1.0]), alpha), _cos_payoff(), Exponents(alpha))
    return Scenario("brownian_gamma", cs, DriverSpec("brownian_strat", 1, 1.0, steps, 32), [0.0], 100_000,
                    "state-dependent rough weight along a Brownian driver", None, {"gamma1": gamma1})


def transport_linear(steps: int = 512) -> Scenario:
    cs = _make(Field.zero((1,)), Field.zero((1, 1)), Field.zero(), homogeneous(ridge("id", [[1.0]], [1.0])),
               _cvf_zero((1,)), _cos_payoff())

    def exact(s, x, driver):
        return np.cos(x[:, 0] * np.exp(_delta_w(driver, s)[0]))

    return Scenario("transport_linear", cs, DriverSpec("canonical:sin", 1, 1.0, steps, 64), [0.5], 1,
                    "linear rough flow dX = X dW along W = sin t", exact)


def weighted_transport(k: float = 0.5, steps: int = 512) -> Scenario:
    cs = _make(Field.zero((1,)), Field.zero((1, 1)), Field.zero(), homogeneous(ridge("id", [[1.0]], [1.0])),
               homogeneous(ridge("id", [k], [1.0])), _cos_payoff())

    def exact(s, x, driver):
        grow = np.exp(_delta_w(driver, s)[0])
        return np.cos(x[:, 0] * grow) * np.exp(k * x[:, 0] * (grow - 1))

    return Scenario("weighted_transport", cs, DriverSpec("canonical:sin", 1, 1.0, steps, 64), [0.5], 1,
                    "linear rough flow with weight gamma(x) = k x", exact, {"k": k})


def heat_transport(sigma: float = 0.5, e: float = 1.0, steps: int = 256, alpha: float = 0.45) -> Scenario:
    cs = _make(Field.zero((1,)), _constant([[sigma]]), Field.zero(), homogeneous(_constant([[e]]), alpha),
               _cvf_zero((1,)), _cos_payoff(), Exponents(alpha))

    def exact(s, x, driver):
        tau = driver.horizon - s
        return np.cos(x[:, 0] + e * _delta_w(driver, s)[0]) * np.exp(-0.5 * sigma ** 2 * tau)

    return Scenario("heat_transport", cs, DriverSpec("brownian_strat", 1, 1.0, steps, 32), [0.0], 100_000,
                    "diffusion plus constant rough transport", exact, {"sigma": sigma, "e": e})


def coupled2d(steps: int = 64, alpha: float = 0.45) -> Scenario:
    b = total((2,), ridge("tanh", [-0.5, 0.2], [1.0, 0.5]), ridge("sin", [0.1, -0.3], [0.3, 1.0]))
    sigma = total((2, 2), _constant([[0.3, 0.0], [0.1, 0.25]]), ridge("tanh", [[0.1, 0.05], [0.0, 0.1]], [0.5, -1.0]))
    beta = total((2, 2), _constant([[0.2, 0.1], [0.0, 0.2]]), ridge("tanh", [[0.3, 0.0], [0.1, 0.2]], [1.0, -0.5]),
                 ridge("cos", [[0.0, 0.2], [0.2, 0.0]], [0.4, 0.8]))
    c = ridge("cos", 0.2, [1.0, 1.0])
    gamma = total((2,), ridge("sin", [0.2, 0.1], [1.0, 0.0]), ridge("tanh", [0.0, 0.1], [0.5, 0.5]))
    g = total((), ridge("cos", 1.0, [1.0, 0.0]), ridge("sin", 0.5, [0.3, 1.0]))
    cs = _make(b, sigma, c, homogeneous(beta, alpha), homogeneous(gamma, alpha), g, Exponents(alpha))
    return Scenario("coupled2d", cs, DriverSpec("brownian_strat", 2, 1.0, steps, 16), [0.1, -0.2], 10_000,
                    "two-dimensional state with coupled nonlinear coefficients")


def free(steps: int = 64) -> Scenario:
    cs = _make(Field.zero((1,)), Field.zero((1, 1)), Field.zero(), _cvf_zero((1, 1)), _cvf_zero((1,)),
               _cos_payoff())

    def exact(s, x, driver):
        return np.cos(x[:, 0])

    return Scenario("free", cs, DriverSpec("canonical:zero", 1, 1.0, steps, 1), [0.3], 1,
                    "no dynamics: u = g", exact)


PRESETS: dict[str, Callable[..., Scenario]] = {
    "brownian_gamma": brownian_gamma,
    "coupled2d": coupled2d,
    "exp_weight": exp_weight,
    "free": free,
    "full_hybrid": full_hybrid,
    "gbm": gbm,
    "heat": heat,
    "heat_transport": heat_transport,
    "smooth_reference": smooth_reference,
    "tanh": tanh_preset,
    "transport": transport,
    "transport_linear": transport_linear,
    "weighted_transport": weighted_transport,
}


def list_presets() -> list[str]:
    return sorted(PRESETS)


class UnknownPresetError(KeyError):
    pass


def get_preset(name: str, **params) -> Scenario:
    if name not in PRESETS:
        raise UnknownPresetError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return PRESETS[name](**params)
