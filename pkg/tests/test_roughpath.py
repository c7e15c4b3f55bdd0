import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughfk import mcstats
from roughfk.roughpath import (SMOOTH_PATHS, RoughPath, brownian_ito_lift, brownian_ito_lift_batch,
                               batch_window, canonical_from_function, canonical_lift, coarsen, geometrize,
                               holder_norms, perturb, pure_area, rho_alpha, shift, shift_index)

from oracles import CIRCLE_AREA_12


def brownian(seed, dim=2, steps=32, refinement=8, horizon=1.0):
    return brownian_ito_lift(dim, horizon, steps, refinement, mcstats.substream(seed, "test-lift"))


# construction

def test_linear_path_areas():
    rp = canonical_from_function(SMOOTH_PATHS["linear"], 1.0, 4, 64)
    np.testing.assert_allclose(rp.step_areas[:, 0, 0], 1 / 32, atol=1e-12)
    assert rp.geometric


def test_zero_path_areas():
    rp = canonical_from_function(SMOOTH_PATHS["zero"], 1.0, 8, 4)
    assert np.all(rp.step_areas == 0)


def test_circle_area_against_refined_quadrature():
    coarse = canonical_from_function(SMOOTH_PATHS["circle"], 1.0, 64, 64)
    fine = canonical_from_function(SMOOTH_PATHS["circle"], 1.0, 64, 512)
    a64 = coarse.window(0, 64)[1][0, 1]
    a512 = fine.window(0, 64)[1][0, 1]
    assert abs(a64 - a512) <= 1e-6
    assert abs(a512 - CIRCLE_AREA_12) <= 1e-6


def test_canonical_lift_rejects_bad_refinement():
    with pytest.raises(ValueError):
        canonical_lift(np.zeros((10, 1)), 4)
    with pytest.raises(ValueError):
        canonical_lift(np.zeros((9, 1)), 0)


def test_constructor_validates_shapes():
    with pytest.raises(ValueError):
        RoughPath(1.0, np.zeros((5, 2)), np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        RoughPath(0.0, np.zeros((5, 1)), np.zeros((4, 1, 1)))


def test_rough_path_is_immutable():
    rp, _ = brownian(0)
    with pytest.raises(ValueError):
        rp.values[0, 0] = 1.0


def test_ito_diagonal_identity():
    rng = mcstats.substream(1, "diag")
    steps, R, dim = 16, 8, 2
    rp, coarse = brownian_ito_lift(dim, 1.0, steps, R, rng)
    fine = mcstats.substream(1, "diag").standard_normal((steps, R, dim)) * np.sqrt(1.0 / (steps * R))
    expected = 0.5 * (coarse ** 2 - np.sum(fine ** 2, axis=1))
    np.testing.assert_allclose(np.einsum("kii->ki", rp.step_areas), expected, atol=1e-14)
    np.testing.assert_allclose(np.diff(rp.values, axis=0), coarse, atol=1e-15)
    assert not rp.geometric


def test_ito_lift_validation():
    with pytest.raises(ValueError):
        brownian_ito_lift(2, 1.0, 4, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        brownian_ito_lift(2, -1.0, 4, 4, np.random.default_rng(0))


def test_levy_area_moments():
    vals, areas = brownian_ito_lift_batch(2, 1.0, 1, 32, mcstats.substream(5, "levy"), 100_000)
    a12 = batch_window(vals, areas, 0, 1)[1][:, 0, 1]
    mean, se = mcstats.mean_stderr(a12)
    assert abs(mean) <= 3 * se
    assert abs(a12.var() - 0.5) <= 0.05 * 0.5


# windows and Chen

def test_window_trivial_cases():
    rp, _ = brownian(2)
    dw, ww = rp.window(3, 3)
    assert np.all(dw == 0) and np.all(ww == 0)
    _, ww = rp.window(4, 6)
    np.testing.assert_allclose(ww, rp.step_areas[4] + rp.step_areas[5] + np.outer(rp.increments[4], rp.increments[5]),
                               atol=1e-15)
    with pytest.raises(IndexError):
        rp.window(5, 3)


def test_window_table_matches_window_bitwise():
    rp, _ = brownian(3, steps=12)
    for i in range(13):
        for j in range(i, 13):
            np.testing.assert_array_equal(rp.window_table[i, j], rp.window(i, j)[1])


def test_random_canonical_lift_against_fine_quadrature(rng):
    # random smooth path: a few Fourier modes
    coef = rng.standard_normal((2, 4))
    fn = lambda t: np.stack([sum(coef[i, k] * np.sin((k + 1) * t) for k in range(4)) for i in range(2)], axis=-1)
    rp = canonical_from_function(fn, 1.0, 32, 64)
    t = np.linspace(0, 1, 200_001)
    w = fn(t)
    dw = np.diff(w, axis=0)
    mid = 0.5 * (w[1:] + w[:-1]) - w[0]
    direct = np.einsum("ki,kj->ij", mid, dw)
    np.testing.assert_allclose(rp.window(0, 32)[1], direct, atol=1e-6)


@given(st.integers(0, 10_000))
def test_chen_exhaustive(seed):
    rp, _ = brownian(seed, steps=16, refinement=4)
    for i in range(17):
        for m in range(i, 17):
            for j in range(m, 17):
                assert np.max(np.abs(rp.chen_defect(i, m, j))) <= 1e-12


# transformations

@given(st.integers(0, 10_000))
def test_geometrize_properties(seed):
    rp, _ = brownian(seed)
    g = geometrize(rp)
    assert np.max(np.abs(g.geometricity_defect())) <= 1e-12
    anti = lambda A: A - np.swapaxes(A, -1, -2)
    np.testing.assert_allclose(anti(g.step_areas), anti(rp.step_areas), atol=1e-15)
    np.testing.assert_allclose(np.einsum("kii->ki", g.step_areas), 0.5 * rp.increments ** 2, atol=1e-15)
    np.testing.assert_allclose(geometrize(g).step_areas, g.step_areas, atol=1e-15)
    assert g.geometric


def test_ito_mean_symmetric_defect():
    vals, areas = brownian_ito_lift_batch(2, 1.0, 8, 16, mcstats.substream(9, "defect"), 10_000)
    dW = np.diff(vals, axis=1)
    sym = 0.5 * (areas + np.swapaxes(areas, -1, -2)) - 0.5 * dW[..., :, None] * dW[..., None, :]
    per_path = sym.mean(axis=1)
    mean, se = mcstats.mean_stderr(per_path)
    target = -0.5 * (1 / 8) * np.eye(2)
    assert np.all(np.abs(mean - target) <= 3 * se + 1e-15)


def test_shift_properties():
    rp, _ = brownian(4, steps=16)
    assert shift(rp, 0.0) is rp
    m = 5
    s = shift(rp, m * rp.dt)
    np.testing.assert_array_equal(s.values[: 16 - m + 1], rp.values[m:])
    np.testing.assert_array_equal(s.values[16 - m:], np.broadcast_to(rp.values[-1], (m + 1, 2)))
    assert np.all(s.window(16 - m, 16)[1] == 0)
    for k in range(16 - m + 1):
        np.testing.assert_allclose(s.window(0, k)[1], rp.window(m, m + k)[1], atol=1e-14)
    for alpha in (0.4, 0.5):
        a, b = holder_norms(s, alpha)
        a0, b0 = holder_norms(rp, alpha)
        assert a <= a0 + 1e-12 and b <= b0 + 1e-12
    with pytest.raises(ValueError):
        shift(rp, 0.5 * rp.dt)


def test_geometrize_commutes_with_shift():
    rp, _ = brownian(6, steps=16)
    a = geometrize(shift_index(rp, 3))
    b = shift_index(geometrize(rp), 3)
    np.testing.assert_allclose(a.step_areas[:13], b.step_areas[:13], atol=1e-15)
    np.testing.assert_array_equal(a.values, b.values)


def test_coarsen_preserves_windows():
    rp, _ = brownian(7, steps=32)
    c = coarsen(rp, 4)
    for i in range(9):
        for j in range(i, 9):
            np.testing.assert_allclose(c.window(i, j)[1], rp.window(4 * i, 4 * j)[1], atol=1e-13)
    with pytest.raises(ValueError):
        coarsen(rp, 5)


def test_pure_area_flags():
    rp = pure_area(2, 1.0, 8, [[0, 1], [-1, 0]])
    assert rp.geometric and np.all(rp.values == 0)
    assert not pure_area(2, 1.0, 8, [[1, 0], [0, 0]]).geometric


# norms

def test_holder_norms_linear_and_scaling():
    rp = canonical_from_function(SMOOTH_PATHS["linear"], 1.0, 16, 8)
    assert abs(holder_norms(rp, 1.0)[0] - 1.0) <= 1e-12
    circle = canonical_from_function(SMOOTH_PATHS["circle"], 1.0, 16, 16)
    doubled = canonical_from_function(lambda t: 2 * SMOOTH_PATHS["circle"](t), 1.0, 16, 16)
    a, b = holder_norms(circle, 0.5)
    a2, b2 = holder_norms(doubled, 0.5)
    assert np.isclose(a2, 2 * a, rtol=1e-12) and np.isclose(b2, 4 * b, rtol=1e-12)


def test_holder_norm_refinement_monotone():
    rng = mcstats.substream(11, "refine")
    fine, _ = brownian_ito_lift(2, 1.0, 64, 8, rng)
    coarse = coarsen(fine, 2)
    for level in (0, 1):
        assert np.isfinite(holder_norms(coarse, 0.4)[level])
        assert holder_norms(fine, 0.4)[level] >= holder_norms(coarse, 0.4)[level] - 1e-12


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_rho_alpha_metric_properties(s1, s2):
    a = geometrize(brownian(s1, steps=16)[0])
    b = geometrize(brownian(s2, steps=16)[0])
    assert rho_alpha(a, a, 0.45).total == 0
    r1, r2 = rho_alpha(a, b, 0.45), rho_alpha(b, a, 0.45)
    assert r1.total == r2.total and r1.level1_dist >= 0 and r1.level2_dist >= 0
    assert r1.total == r1.level1_dist + r1.level2_dist


def test_rho_alpha_linear_in_eps():
    a = geometrize(brownian(12, steps=32)[0])
    v = canonical_from_function(SMOOTH_PATHS["lissajous"], 1.0, 32, 8)
    d = [rho_alpha(a, perturb(a, v, eps), 0.45).level1_dist / eps for eps in (1e-2, 1e-3)]
    assert abs(d[0] / d[1] - 1) <= 0.01
    with pytest.raises(ValueError):
        rho_alpha(a, geometrize(brownian(1, steps=16)[0]), 0.45)


def test_perturb_keeps_chen_and_geometricity():
    a = geometrize(brownian(13, steps=16)[0])
    b = perturb(a, canonical_from_function(SMOOTH_PATHS["circle"], 1.0, 16, 8), 0.1)
    assert b.geometric
    assert np.max(np.abs(b.geometricity_defect())) <= 1e-12
    assert np.max(np.abs(b.chen_defect(0, 7, 16))) <= 1e-12


# serialization

def test_json_round_trip(tmp_path):
    rp, _ = brownian(14, steps=8)
    back = RoughPath.from_json(rp.to_json())
    np.testing.assert_array_equal(back.values, rp.values)
    np.testing.assert_array_equal(back.step_areas, rp.step_areas)
    assert back.horizon == rp.horizon and back.geometric == rp.geometric
    json.loads(rp.to_json())
    rp.write_csv(tmp_path / "w.csv", tmp_path / "a.csv")
    header = (tmp_path / "w.csv").read_text().splitlines()[0]
    assert header == "t,W_1,W_2"
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "k,A_11,A_12,A_21,A_22"
