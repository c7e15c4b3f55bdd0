import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughfk import mcstats, presets
from roughfk.controlled import ControlledSample, ControlledVectorField, Field, compose
from roughfk.integrator import (ito_integral, lebesgue_integral, local_expansion_residual, rough_increments,
                                rough_integral)
from roughfk.presets import ridge
from roughfk.roughpath import SMOOTH_PATHS, brownian_ito_lift, canonical_from_function, geometrize, pure_area
from roughfk.rsde import SDECoefficients, simulate


def strat(seed, dim=1, steps=256, refinement=16):
    return geometrize(brownian_ito_lift(dim, 1.0, steps, refinement, mcstats.substream(seed, "int"))[0])


def constant_integrand(value, prime, p, K):
    value, prime = np.asarray(value, float), np.asarray(prime, float)
    return ControlledSample(np.broadcast_to(value, (p, K + 1) + value.shape),
                            np.broadcast_to(prime, (p, K + 1) + prime.shape))


def test_identity_integrand_returns_driver():
    rp = strat(0, dim=2, steps=32)
    ip = rough_integral(constant_integrand(np.eye(2), np.zeros((2, 2, 2)), 1, 32), rp)
    np.testing.assert_allclose(ip.values[0], rp.values - rp.values[0], atol=1e-14)
    assert ip.kind == "rough" and np.all(ip.values[:, 0] == 0)


@given(st.integers(0, 10_000))
def test_half_square_telescoping(seed):
    rp = strat(seed, steps=64, refinement=4)
    W = rp.values - rp.values[0]
    phi = ControlledSample(W[None], np.ones((1, 65, 1, 1)))
    ip = rough_integral(phi, rp)
    assert abs(ip.terminal[0] - 0.5 * W[-1, 0] ** 2) <= 1e-12


def test_pure_area_integral():
    a = np.array([[0.0, 1.5], [-1.5, 0.0]])
    rp = pure_area(2, 2.0, 16, a)
    prime = np.array([[0.3, -0.7], [1.1, 0.4]])
    ip = rough_integral(constant_integrand([0.2, 0.5], prime, 1, 16), rp)
    assert np.isclose(ip.terminal[0], np.einsum("nm,mn->", prime, a) * 2.0, atol=1e-12)


def test_rough_increments_formula():
    rng = np.random.default_rng(0)
    phi, php = rng.standard_normal((3, 2)), rng.standard_normal((3, 2, 2))
    dW, A = rng.standard_normal(2), rng.standard_normal((2, 2))
    expected = phi @ dW + np.einsum("pnm,mn->p", php, A)
    np.testing.assert_allclose(rough_increments(phi, php, dW, A), expected, atol=1e-14)


def test_rough_integral_shape_errors():
    rp = strat(1, dim=2, steps=8)
    with pytest.raises(ValueError):
        rough_integral(constant_integrand([1.0], [[0.0]], 1, 8), rp)
    with pytest.raises(ValueError):
        rough_integral(constant_integrand([1.0, 0.0], np.zeros((2, 2)), 1, 12), rp)


@given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-2, 2))
def test_additivity_and_linearity(seed, a, b):
    rp = strat(seed, steps=32, refinement=4)
    rng = mcstats.substream(seed, "integrand")
    f = ControlledSample(rng.standard_normal((4, 33, 1)), rng.standard_normal((4, 33, 1, 1)))
    g = ControlledSample(rng.standard_normal((4, 33, 1)), rng.standard_normal((4, 33, 1, 1)))
    If, Ig = rough_integral(f, rp), rough_integral(g, rp)
    np.testing.assert_allclose(If.increment(0, 10) + If.increment(10, 32), If.increment(0, 32), atol=1e-12)
    comb = rough_integral(ControlledSample(a * f.X + b * g.X, a * f.Xp + b * g.Xp), rp)
    np.testing.assert_allclose(comb.values, a * If.values + b * Ig.values, atol=1e-12)


def test_smooth_integral_converges_at_first_order():
    # int_0^1 cos(W) dW with W = sin t equals sin(sin 1)
    exact = np.sin(np.sin(1.0))
    errs = []
    for N in (256, 512, 1024):
        rp = canonical_from_function(SMOOTH_PATHS["sin"], 1.0, N, 16)
        W = rp.values[:, 0]
        phi = ControlledSample(np.cos(W)[None, :, None], -np.sin(W)[None, :, None, None])
        errs.append(abs(rough_integral(phi, rp).terminal[0] - exact))
        # without the compensator the sum is only first order too, but much less accurate
    assert errs[0] / errs[1] >= 1.9 and errs[1] / errs[2] >= 1.9


def test_ito_identity_and_shapes():
    dB = mcstats.substream(2, "ito").standard_normal((3, 10, 2))
    nu = np.broadcast_to(np.eye(2), (3, 11, 2, 2))
    ip = ito_integral(nu, dB)
    np.testing.assert_allclose(ip.values[:, 1:], np.cumsum(dB, axis=1), atol=1e-14)
    with pytest.raises(ValueError):
        ito_integral(np.zeros((3, 5, 2)), dB)


def test_ito_martingale_and_isometry():
    M, K = 100_000, 32
    dt = 1.0 / K
    dB = mcstats.substream(3, "iso").standard_normal((M, K, 1)) * np.sqrt(dt)
    B = np.concatenate([np.zeros((M, 1, 1)), np.cumsum(dB, axis=1)], axis=1)
    nu = np.cos(B)[..., None]  # adapted and bounded
    term = ito_integral(nu, dB).terminal[:, 0]
    mean, se = mcstats.mean_stderr(term)
    assert abs(mean) <= 3 * se
    target = np.mean(np.sum(nu[:, :K, 0, 0] ** 2, axis=1) * dt)
    assert abs(np.mean(term ** 2) / target - 1) <= 0.05


def test_lebesgue_left_rectangles():
    v = np.arange(5, dtype=float)[None, :]
    ip = lebesgue_integral(v, 0.5)
    np.testing.assert_allclose(ip.values[0], [0, 0, 0.5, 1.5, 3.0])
    assert lebesgue_integral(v, 0.5, steps=2).values.shape == (1, 3)


def test_constant_integrand_residual_vanishes():
    # a constant path is controlled with zero Gubinelli derivative
    rp = strat(4, steps=64)
    phi = constant_integrand([0.7], [[0.0]], 10, 64)
    rep = local_expansion_residual(rough_integral(phi, rp), phi, rp, 2)
    assert np.max(rep.moment) <= 1e-14


def test_linear_integrand_expansion_is_exact():
    # (W, 1) is integrated exactly by the one-step expansion (Chen)
    rp = canonical_from_function(SMOOTH_PATHS["sin"], 1.0, 256, 16)
    W = rp.values[:, 0] - rp.values[0, 0]
    phi = ControlledSample(W[None, :, None], np.ones((1, 257, 1, 1)))
    rep = local_expansion_residual(rough_integral(phi, rp), phi, rp, 2)
    assert np.max(rep.moment) <= 1e-14


def test_smooth_residual_slope():
    rp = canonical_from_function(SMOOTH_PATHS["sin"], 1.0, 256, 16)
    W = rp.values[:, 0]
    phi = ControlledSample(np.cos(W)[None, :, None], -np.sin(W)[None, :, None, None])
    rep = local_expansion_residual(rough_integral(phi, rp), phi, rp, 2)
    assert rep.slope >= 1.5


def test_composed_integrand_residual_slope():
    sc = presets.get_preset("tanh")
    sde = SDECoefficients(sc.cs.b, sc.cs.sigma, sc.cs.beta)
    rp = strat(5)
    ens = simulate(sde, sc.x, rp, 400, 5)
    phi = compose(ControlledVectorField.time_homogeneous(ridge("tanh", [[1.0]], [1.0]), 0.45),
                  ens.controlled_sample(), ens.times)
    rep = local_expansion_residual(rough_integral(phi, rp), phi, rp, 2)
    assert rep.slope >= 0.9 - 0.15


def test_residual_report_csv(tmp_path):
    rp = strat(6, steps=64)
    phi = constant_integrand([0.7], [[0.2]], 10, 64)
    rep = local_expansion_residual(rough_integral(phi, rp), phi, rp, 4)
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "h,moment,mean_residual"
    with pytest.raises(ValueError):
        local_expansion_residual(rough_integral(phi, rp), phi, rp, 3)
