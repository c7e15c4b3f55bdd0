"""Scenario runner.

    python -m roughfk run heat.toml --seed 7 --threads 4 --out results/
    python -m roughfk list-presets

Exit codes: 0 success, 2 unknown preset, 3 invalid configuration or
assumption violation, 4 non-finite value during simulation.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import tomli
import tomli_w

from . import __version__, feynman_kac as fk, pde_residual, presets
from .feynman_kac import AssumptionError, Exponents
from .presets import DriverSpec, UnknownPresetError
from .roughpath import SMOOTH_PATHS, RoughPath, canonical_from_function
from .rsde import SimulationError

OUTPUTS = ("u", "grad", "hess", "residuals", "markov", "robustness", "moments")
EXIT_OK, EXIT_PRESET, EXIT_CONFIG, EXIT_NAN = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# configuration

def resolve_config(raw: dict, seed: Optional[int] = None) -> dict:
    """Fill every key from the preset defaults; the result is what the manifest echoes."""
    raw = copy.deepcopy(raw)
    name = raw.get("scenario")
    if not isinstance(name, str):
        raise ConfigError("config needs a string 'scenario' naming a preset")
    params = dict(raw.get("preset", {}))
    scenario = presets.get_preset(name, **params)
    driver = scenario.driver.as_dict()
    unknown = set(raw.get("driver", {})) - set(driver)
    if unknown:
        raise ConfigError(f"unknown driver keys: {sorted(unknown)}")
    driver.update(raw.get("driver", {}))
    if driver.get("area") is None:
        driver.pop("area", None)
    exponents = scenario.cs.exponents.as_dict()
    unknown = set(raw.get("exponents", {})) - set(exponents)
    if unknown:
        raise ConfigError(f"unknown exponent keys: {sorted(unknown)}")
    exponents.update(raw.get("exponents", {}))
    mesh = {"s": [0.0], "x": [list(map(float, scenario.x))]}
    mesh.update(raw.get("mesh", {}))
    mesh["s"] = [float(v) for v in mesh["s"]]
    mesh["x"] = [[float(c) for c in np.atleast_1d(row)] for row in mesh["x"]]
    outputs = list(raw.get("outputs", ["u", "grad", "hess"]))
    resolved = {
        "scenario": name,
        "preset": params,
        "driver": driver,
        "exponents": exponents,
        "mesh": mesh,
        "paths": int(raw.get("paths", scenario.num_paths)),
        "seed": int(seed if seed is not None else raw.get("seed", 0)),
        "outputs": outputs,
        "format": raw.get("format", "csv"),
    }
    validate(resolved)
    return resolved


def validate(cfg: dict) -> None:
    bad = [o for o in cfg["outputs"] if o not in OUTPUTS]
    if bad:
        raise ConfigError(f"unknown outputs {bad}; choose from {list(OUTPUTS)}")
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    if cfg["paths"] < 1:
        raise ConfigError("paths must be positive")
    d = cfg["driver"]
    if d["steps"] < 1 or d["refinement"] < 1 or d["dim"] < 1 or not d["horizon"] > 0:
        raise ConfigError("driver steps, refinement, dim and horizon must be positive")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    T = d["horizon"]
    if any(s < 0 or s > T for s in cfg["mesh"]["s"]):
        raise ConfigError("mesh times must lie in [0, T]")
    Exponents(**cfg["exponents"]).check()


def load_config(path, seed: Optional[int] = None) -> dict:
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    return resolve_config(raw, seed)


def dump_config(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


# running

def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _build(cfg: dict):
    scenario = presets.get_preset(cfg["scenario"], **cfg["preset"])
    cs = scenario.cs
    cs.exponents = Exponents(**cfg["exponents"])
    driver = DriverSpec(**cfg["driver"]).build(cfg["seed"])
    if driver.dim != cs.n:
        raise ConfigError(f"driver dimension {driver.dim} does not match the preset ({cs.n})")
    cs.check_assumptions(horizon=driver.horizon)
    return scenario, cs, driver


def _direction(driver: RoughPath) -> RoughPath:
    """Smooth translation direction used by the robustness output."""
    name = "sin" if driver.dim == 1 else "circle"
    fn = SMOOTH_PATHS[name]
    if driver.dim > 2:
        fn = lambda t: np.stack([np.sin((k + 1) * t) for k in range(driver.dim)], axis=-1)
    return canonical_from_function(fn, driver.horizon, driver.num_steps, 8)


def run(cfg: dict, out: Path, threads: int = 1) -> list[Path]:
    scenario, cs, driver = _build(cfg)
    out.mkdir(parents=True, exist_ok=True)
    M, seed = cfg["paths"], cfg["seed"]
    xs = np.asarray(cfg["mesh"]["x"], dtype=float)
    written = []
    order = max([i for i, o in enumerate(("u", "grad", "hess")) if o in cfg["outputs"]], default=-1)
    if order >= 0:
        surface = fk.build_surface(cs, driver, cfg["mesh"]["s"], xs, M, seed, order, threads)
        surface.metadata.update({"scenario": cfg["scenario"]})
        if cfg["format"] == "csv":
            path = out / "surface.csv"
            surface.to_csv(path)
        else:
            path = out / "surface.json"
            surface.metadata["config"] = cfg
            surface.to_json(path)
        written.append(path)
    if "residuals" in cfg["outputs"]:
        written += _residuals(cfg, scenario, cs, driver, out, threads)
    if "markov" in cfg["outputs"]:
        rows = []
        for x in xs[:, 0]:
            for t in (0.5 * driver.horizon, driver.horizon):
                t = driver.times[driver.node_index(round(t / driver.dt) * driver.dt)]
                r = fk.markov_consistency(0.0, float(t), float(x), cs, driver, M, seed, threads=threads)
                rows.append([0.0, float(t), float(x), r.direct, r.direct_se, r.nested, r.nested_se,
                             r.combined_se, r.discrepancy, r.exit_fraction])
        path = out / "markov.csv"
        _write_rows(path, ["s", "t", "x", "direct", "direct_se", "nested", "nested_se", "combined_se",
                           "discrepancy", "exit_fraction"], rows)
        written.append(path)
    if "robustness" in cfg["outputs"]:
        direction = _direction(driver)
        rows = []
        for eps in (1e-2, 1e-3):
            r = fk.robustness_in_driver(cs, driver, fk.translated_driver(driver, direction, eps), xs, M, seed,
                                        threads=threads)
            rows.append([eps, r.u_distance, r.rho, r.ratio])
        path = out / "robustness.csv"
        _write_rows(path, ["eps", "u_distance", "rho_alpha", "ratio"], rows)
        written.append(path)
    if "moments" in cfg["outputs"]:
        wp = fk.simulate_weights(cs, driver, xs[0], M, seed, threads=threads)
        probe = fk.exponential_moment_probe(wp)
        path = out / "moments.csv"
        _write_rows(path, ["p", "full", "subsample", "ratio"], probe.rows())
        written.append(path)
    return written


def _residuals(cfg, scenario, cs, driver, out: Path, threads: int) -> list[Path]:
    if cs.d != 1:
        raise ConfigError("residual outputs need a one-dimensional state")
    x0 = float(cfg["mesh"]["x"][0][0])
    mesh = np.linspace(x0 - 2.0, x0 + 2.0, 81)
    stride = max(1, driver.num_steps // 64)
    surface = pde_residual.surface_for_residuals(cs, driver, mesh, stride, min(cfg["paths"], 2000),
                                                 cfg["seed"], threads)
    davie = pde_residual.davie_residual_of_u(surface, cs, driver)
    cond = pde_residual.condition_ii_check(surface, cs, driver)
    paths = [out / "residuals.csv", out / "condition_ii_first.csv", out / "condition_ii_second.csv"]
    davie.to_csv(paths[0])
    cond.first.to_csv(paths[1])
    cond.second.to_csv(paths[2])
    return paths


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: dict, files: list[Path], out: Path) -> Path:
    manifest = {"version": __version__, "config": cfg,
                "files": {p.name: sha256(p) for p in sorted(files)}}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


# entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roughfk", description="Rough Feynman-Kac scenario runner")
    ap.add_argument("--config", help="TOML scenario config")
    ap.add_argument("--seed", type=int, help="master seed, overrides the config")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    ap.add_argument("--out", default="out", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config_path", nargs="?", help="TOML scenario config")
    # the global flags are also accepted after the subcommand
    r.add_argument("--config", dest="config_sub")
    r.add_argument("--seed", dest="seed_sub", type=int)
    r.add_argument("--threads", dest="threads_sub", type=int)
    r.add_argument("--out", dest="out_sub")
    sub.add_parser("list-presets", help="print the bundled presets")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-presets":
        for name in presets.list_presets():
            print(name)
        return EXIT_OK
    config = args.config_path or args.config_sub or args.config
    seed = args.seed_sub if args.seed_sub is not None else args.seed
    threads = args.threads_sub or args.threads
    out = Path(args.out_sub or args.out)
    if config is None:
        print("error: no config given", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(config, seed)
    except UnknownPresetError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_PRESET
    except (ConfigError, AssumptionError, TypeError, ValueError, tomli.TOMLDecodeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = run(cfg, out, max(1, threads))
    except SimulationError as exc:
        print(f"error: {exc} (path {exc.path}, step {exc.step})", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = write_manifest(cfg, files, out)
    for p in files + [manifest]:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
