"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly
(``python tests/test_acceptance.py``) for the summary table alone.
"""

import contextlib
import io
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roughfk import cli, mcstats, presets  # noqa: E402
from roughfk import feynman_kac as fk  # noqa: E402
from roughfk.pde_residual import condition_ii_check, davie_residual_of_u, exact_surface, surface_for_residuals  # noqa: E402
from roughfk.roughpath import (SMOOTH_PATHS, batch_window, brownian_ito_lift, brownian_ito_lift_batch,  # noqa: E402
                               canonical_from_function, geometrize)
from roughfk.rsde import (LinearCoefficients, davie_remainder_scaling, simulate, solve_linear_rsde,  # noqa: E402
                          solve_rsde)
from roughfk.tangent import fd_check, first_variations, second_variation  # noqa: E402

from oracles import EXP_MOMENTS_C03, HEAT_U00, LEVY_AREA_VAR  # noqa: E402

ALPHA = 0.45


def chen_all_splits(rp):
    """Max Chen defect over every i <= m <= j, vectorized over the window table."""
    table = rp.window_table
    vals = rp.values
    worst = 0.0
    K = rp.num_steps
    for m in range(K + 1):
        i = np.arange(m + 1)
        j = np.arange(m, K + 1)
        left, right = table[i, m], table[m, j]
        dx_l = vals[m] - vals[i]
        dx_r = vals[j] - vals[m]
        whole = table[i[:, None], j[None, :]]
        pred = left[:, None] + right[None, :] + dx_l[:, None, :, None] * dx_r[None, :, None, :]
        worst = max(worst, float(np.max(np.abs(whole - pred))))
    return worst


def c1_chen():
    worst, seen = 0.0, set()
    for name in presets.list_presets():
        spec = presets.get_preset(name).driver
        key = (spec.kind, spec.dim, spec.refinement)
        if key in seen:
            continue
        seen.add(key)
        spec.steps = 64
        worst = max(worst, chen_all_splits(spec.build(1)))
        spec.steps = 256
        rp = spec.build(2)
        i, m, j = np.sort(mcstats.substream(0, "chen-sample").integers(0, 257, (3, 20_000)), axis=0)
        table, vals = rp.window_table, rp.values
        pred = table[i, m] + table[m, j] + (vals[m] - vals[i])[:, :, None] * (vals[j] - vals[m])[:, None, :]
        worst = max(worst, float(np.max(np.abs(table[i, j] - pred))))
        for a, b, c in zip(i[:20], m[:20], j[:20]):
            worst = max(worst, float(np.max(np.abs(rp.chen_defect(int(a), int(b), int(c))))))
    return worst <= 1e-12, f"max Chen defect {worst:.2e} over {len(seen)} driver kinds", 5


def c2_geometricity():
    worst = 0.0
    for seed in range(20):
        rp, _ = brownian_ito_lift(2, 1.0, 64, 16, mcstats.substream(seed, "geo"))
        worst = max(worst, float(np.max(np.abs(geometrize(rp).geometricity_defect()))))
    vals, areas = brownian_ito_lift_batch(2, 1.0, 8, 16, mcstats.substream(9, "defect"), 10_000)
    dW = np.diff(vals, axis=1)
    sym = 0.5 * (areas + np.swapaxes(areas, -1, -2)) - 0.5 * dW[..., :, None] * dW[..., None, :]
    mean, se = mcstats.mean_stderr(sym.mean(axis=1))
    target = -0.5 / 8 * np.eye(2)
    ok_ito = bool(np.all(np.abs(mean - target) <= 3 * se + 1e-15))
    dev = float(np.max(np.abs(mean - target) / np.where(se > 0, se, 1)))
    return worst <= 1e-12 and ok_ito, f"geometrize defect {worst:.1e}; Ito mean defect within {dev:.2f} se", 10


def c3_levy():
    vals, areas = brownian_ito_lift_batch(2, 1.0, 1, 32, mcstats.substream(5, "levy"), 100_000)
    var = float(batch_window(vals, areas, 0, 1)[1][:, 0, 1].var())
    return 0.475 <= var <= 0.525, f"Var(A12) = {var:.4f} (oracle {LEVY_AREA_VAR})", 30


def c4_smooth():
    xs = np.linspace(-1, 1, 21)
    details, ok = [], True
    for name in ("transport_linear", "weighted_transport"):
        errs = []
        for N in (256, 512):
            sc = presets.get_preset(name, steps=N)
            rp = sc.driver.build(0)
            est = fk.estimate(0.0, xs, sc.cs, rp, 1, 0)
            errs.append(float(np.max(np.abs(est.u - sc.exact(0.0, xs[:, None], rp)))))
        ok &= errs[1] <= 1e-3 and errs[0] / errs[1] >= 1.9
        details.append(f"{name} err {errs[1]:.1e} ratio {errs[0] / errs[1]:.2f}")
    return ok, "; ".join(details), 30


def c5_heat():
    sc = presets.get_preset("heat")
    rp = sc.driver.build(0)
    est = fk.estimate(0.0, [0.0], sc.cs, rp, 100_000, 1, order=2)
    u, g, h = est.u[0], est.grad[0, 0], est.hess[0, 0, 0]
    ok = (abs(u - HEAT_U00) <= 3 * est.u_se[0] + 1e-2 and abs(g) <= 3 * est.grad_se[0, 0] + 2e-2
          and abs(h + HEAT_U00) <= 3 * est.hess_se[0, 0, 0] + 2e-2)
    return ok, f"u={u:.4f}+-{est.u_se[0]:.4f} du={g:.4f} d2u={h:.4f}", 60


def c6_factorization():
    xs = np.linspace(-1, 1, 9)
    worst = 0.0
    for s in (0.0, 0.5):
        sc = presets.get_preset("exp_weight", c0=0.3)
        sc0 = presets.get_preset("exp_weight", c0=0.0)
        rp = sc.driver.build(6)
        a = fk.estimate(s, xs, sc.cs, rp, 2000, 6).u
        b = fk.estimate(s, xs, sc0.cs, rp, 2000, 6).u
        worst = max(worst, float(np.max(np.abs(a / (b * np.exp(0.3 * (1 - s))) - 1))))
    sc = presets.get_preset("exp_weight", c0=0.0, gamma0=0.5)
    rp = sc.driver.build(7)
    w = fk.simulate_weights(sc.cs, rp, [0.2], 1000, 7)
    dW = rp.values[-1, 0] - rp.values[0, 0]
    weight_err = float(np.max(np.abs(np.exp(w.terminal) / np.exp(0.5 * dW) - 1)))
    return worst <= 1e-12 and weight_err <= 1e-12, f"c-shift rel {worst:.1e}; gamma weight rel {weight_err:.1e}", 10


def c7_tangent():
    sc = presets.get_preset("tanh")
    rp = sc.driver.build(6)
    ens = simulate(sc.cs.sde, sc.x, rp, 10_000, 6)
    solve = lambda x: solve_rsde(sc.cs.sde, x, rp, ens.brownian).terminal
    ys = first_variations(ens, sc.cs.sde, rp, ens.brownian)
    first = fd_check(solve, sc.x, ys[0].terminal, h=1e-2)
    z = second_variation(ens, ys, sc.cs.sde, rp, ens.brownian, (0, 0))
    second = fd_check(solve, sc.x, z.terminal, h=1e-2, order=2)
    c2 = presets.get_preset("coupled2d")
    rp2 = c2.driver.build(3)
    e2 = simulate(c2.cs.sde, c2.x, rp2, 200, 3)
    y2 = first_variations(e2, c2.cs.sde, rp2, e2.brownian)
    sym = float(np.max(np.abs(second_variation(e2, y2, c2.cs.sde, rp2, e2.brownian, (0, 1)).Y
                              - second_variation(e2, y2, c2.cs.sde, rp2, e2.brownian, (1, 0)).Y)))
    ok = first.mean_rel_error <= 2e-2 and sym <= 1e-12 and second.mean_rel_error <= 5e-2
    return ok, (f"first FD mean rel {first.mean_rel_error:.1e}; second FD mean rel {second.mean_rel_error:.1e}; "
                f"symmetry {sym:.1e}"), 60


def c8_davie():
    sc = presets.get_preset("full_hybrid")
    sc.driver.steps, sc.driver.refinement = 1024, 8
    rp = sc.driver.build(1)
    ens = simulate(sc.cs.sde, sc.x, rp, 2000, 1, tag="davie")
    slope = davie_remainder_scaling(ens, sc.cs.sde, rp, ens.brownian).slope
    rp2, _ = brownian_ito_lift(2, 1.0, 32, 8, mcstats.substream(8, "lin"))
    rng = mcstats.substream(8, "lin-coeffs")
    K = 32
    lc = LinearCoefficients(2, 2, G=rng.standard_normal((4, K + 1, 2, 2)),
                            S=rng.standard_normal((4, K + 1, 2, 1, 2)),
                            f=0.3 * rng.standard_normal((4, K + 1, 2, 2, 2)),
                            fp=0.1 * rng.standard_normal((4, K + 1, 2, 2, 2, 2)))
    dB = rng.standard_normal((4, K, 1)) * np.sqrt(1 / K)
    xi = rng.standard_normal((4, 2))
    y1 = solve_linear_rsde(lc, xi, geometrize(rp2), dB).X
    homog = max(float(np.max(np.abs(solve_linear_rsde(lc, a * xi, geometrize(rp2), dB).X - a * y1)))
                for a in (-2.5, 0.3, 7.0))
    return slope >= 2 * ALPHA - 0.15 and homog <= 1e-12, f"remainder slope {slope:.3f}; homogeneity {homog:.1e}", 60


def c9_residual():
    mesh = np.linspace(-2, 2, 81)
    sc = presets.get_preset("transport")
    rp = sc.driver.build(11)
    surf = surface_for_residuals(sc.cs, rp, mesh, 1, 1, 11)
    rep = davie_residual_of_u(surf, sc.cs, rp)
    cond = condition_ii_check(surf, sc.cs, rp)
    sc2 = presets.get_preset("heat_transport")
    rp2 = sc2.driver.build(11)
    cond2 = condition_ii_check(exact_surface(sc2.exact, rp2, rp2.times, mesh), sc2.cs, rp2)
    firsts = (cond.first.slope, cond2.first.slope)
    seconds = (cond.second.slope, cond2.second.slope)
    ok = rep.slope > 1.0 and min(firsts) >= ALPHA - 0.2 and min(seconds) >= 2 * ALPHA - 0.2
    return ok, (f"Davie slope {rep.slope:.2f} (floor {np.max(rep.noise_floor):.1e}); "
                f"condition-ii first {min(firsts):.2f}, second {min(seconds):.2f}"), 120


def c10_markov():
    worst, ok = 0.0, True
    for name in ("heat", "transport"):
        sc = presets.get_preset(name)
        rp = sc.driver.build(5)
        for t in (0.5, 1.0):
            r = fk.markov_consistency(0.0, t, 0.0, sc.cs, rp, 20_000, 5)
            ok &= r.discrepancy <= 3 * r.combined_se + 2e-2
            worst = max(worst, r.discrepancy)
    return ok, f"max |direct - nested| {worst:.1e}", 60


def c11_robustness():
    xs = np.linspace(-1, 1, 5)
    details, ok = [], True
    for name in ("transport", "heat_transport", "full_hybrid"):
        sc = presets.get_preset(name)
        sc.driver.refinement = 8
        rp = sc.driver.build(5)
        fn = SMOOTH_PATHS["sin" if rp.dim == 1 else "circle"]
        direction = canonical_from_function(fn, 1.0, rp.num_steps, 8)
        ratios = [fk.robustness_in_driver(sc.cs, rp, fk.translated_driver(rp, direction, eps), xs, 2000, 5,
                                          alpha=ALPHA).ratio for eps in (1e-2, 1e-3)]
        q = ratios[0] / ratios[1]
        ok &= 0.5 <= q <= 2
        details.append(f"{name} {q:.3f}")
    return ok, "ratio quotient " + ", ".join(details), 60


def c12_moments():
    sc = presets.get_preset("exp_weight", c0=0.3, gamma0=0.0)
    probe = fk.exponential_moment_probe(fk.simulate_weights(sc.cs, sc.driver.build(1), [0.0], 10_000, 1))
    exact_err = float(np.max(np.abs(probe.full / np.asarray(EXP_MOMENTS_C03) - 1)))
    bg = presets.get_preset("brownian_gamma")
    probe2 = fk.exponential_moment_probe(fk.simulate_weights(bg.cs, bg.driver.build(1), [0.0], 100_000, 1))
    ok = exact_err <= 1e-12 and bool(np.all((probe2.ratio >= 0.5) & (probe2.ratio <= 2)))
    return ok, f"constant-c rel {exact_err:.1e}; Brownian-gamma ratios {np.round(probe2.ratio, 3).tolist()}", 30


def c13_determinism():
    configs = {
        "tanh": 'paths = 3000\noutputs = ["u", "grad", "hess", "moments"]\n[driver]\nsteps = 64\n',
        "full_hybrid": 'paths = 3000\noutputs = ["u", "grad", "robustness"]\n[driver]\nsteps = 64\n',
        "coupled2d": 'paths = 1500\noutputs = ["u", "grad", "hess"]\n[mesh]\nx = [[0.0, 0.0], [0.3, -0.2]]\n',
        "heat_transport": 'paths = 2000\noutputs = ["u", "markov"]\n[driver]\nsteps = 64\n',
    }
    mismatched = []
    with tempfile.TemporaryDirectory() as d:
        root = Path(d)
        for name, body in configs.items():
            cfg = root / f"{name}.toml"
            cfg.write_text(f'scenario = "{name}"\n' + body)
            outs = []
            for threads in ("1", "3"):
                out = root / f"{name}-{threads}"
                with contextlib.redirect_stdout(io.StringIO()):
                    code = cli.main(["run", str(cfg), "--seed", "13", "--threads", threads, "--out", str(out)])
                if code != 0:
                    mismatched.append(f"{name}: run failed")
                outs.append(out)
            for f in sorted(outs[0].iterdir()):
                if f.read_bytes() != (outs[1] / f.name).read_bytes():
                    mismatched.append(f"{name}/{f.name}")
    return not mismatched, f"{len(configs)} presets, mismatches: {mismatched or 'none'}", 60


CRITERIA = [
    (1, "Chen exactness", c1_chen),
    (2, "Geometricity", c2_geometricity),
    (3, "Levy-area statistics", c3_levy),
    (4, "Smooth-case equivalence", c4_smooth),
    (5, "Heat-kernel reproduction", c5_heat),
    (6, "Exact exponential factorizations", c6_factorization),
    (7, "Tangent correctness", c7_tangent),
    (8, "Davie remainder orders", c8_davie),
    (9, "Rough-PDE residual", c9_residual),
    (10, "Markov consistency", c10_markov),
    (11, "Driver robustness", c11_robustness),
    (12, "Exponential moments", c12_moments),
    (13, "Determinism", c13_determinism),
]


def evaluate(number, title, fn):
    start = time.perf_counter()
    ok, detail, budget = fn()
    elapsed = time.perf_counter() - start
    ok = bool(ok) and elapsed < budget
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail} ({elapsed:.1f}s of {budget}s)",
          flush=True)
    return ok


@pytest.mark.parametrize("number,title,fn", CRITERIA, ids=[f"c{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, title, fn, capsys):
    # print through the capture so the PASS/FAIL line shows up in ordinary pytest output
    with capsys.disabled():
        ok = evaluate(number, title, fn)
    assert ok


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
