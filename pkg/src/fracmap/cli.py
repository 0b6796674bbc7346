"""Command-line front end: ``fracmap <command> [flags]``.

Every command writes ``report.json`` into the output directory. The report
holds the fully resolved configuration, the results, and a separate
``timing`` section (the only part that varies between identical runs).

Exit codes: 0 success, 1 failed check, 2 configuration or usage error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis, checks, constants, extension, fieldio, nonlocal_ops, seminorms, solver, weighted_pde
from .constants import FracParams
from .errors import ConfigError, FracmapError, NumericalError
from .lattice import PRESETS, build_lattice, preset_field, preset_function, unit_defect

log = logging.getLogger("fracmap")

COMMANDS = ("constants", "energy", "minimize", "extend", "density", "check", "replace", "blowup", "singular", "perimeter")

DEFAULTS = {
    "params": {"n": 1, "s": 0.5, "d": None},
    "lattice": {"h": 1.0 / 32, "L": 1.0, "L_ext": None, "cutoff": 2, "subsamples": 4, "shape": "box", "tail_mode": "auto"},
    "extension": {"z_max": None, "levels": 48, "ratio": None, "x_extent": None},
    "solver": solver.SolverConfig().as_dict(),
    "preset": {"name": "constant", "options": {}},
    "input": None,
    "options": {},
    "threads": None,
    "seed": 0,
    "out": "fracmap-out",
}

# per-command defaults for the free-form "options" section
COMMAND_OPTIONS = {
    "minimize": {"perturbation": 0.0},
    "density": {"center": None, "radii": None},
    "check": {"tol": 1e-11, "d": 3},
    "replace": {"radius": None, "center": None, "height": None, "rtol": 1e-10},
    "blowup": {"center": None, "rho": [1.0, 2.0, 4.0]},
    "singular": {"epsilon": None, "radii": None},
    "perimeter": {},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for key in ("n", "s", "d"):
        if getattr(args, key) is not None:
            cfg["params"][key] = getattr(args, key)
    for key in ("h", "L"):
        if getattr(args, key) is not None:
            cfg["lattice"][key] = getattr(args, key)
    if args.L_ext is not None:
        cfg["lattice"]["L_ext"] = args.L_ext
    if args.preset is not None:
        cfg["preset"]["name"] = args.preset
    if args.tol is not None:
        cfg["solver"]["tol_tangential"] = args.tol
    if args.max_iters is not None:
        cfg["solver"]["max_iters"] = args.max_iters
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["solver"]["seed"] = cfg["seed"]
    if args.input is not None:
        cfg["input"] = args.input
    if args.out is not None:
        cfg["out"] = args.out
    threads = args.threads if args.threads is not None else os.environ.get("FRACMAP_THREADS")
    cfg["threads"] = int(threads) if threads not in (None, "") else cfg["threads"]
    cfg["options"] = _merge(COMMAND_OPTIONS.get(args.command, {}), cfg["options"])

    p, lat = cfg["params"], cfg["lattice"]
    if p["d"] is None:
        p["d"] = p["n"]
    if lat["L_ext"] is None:
        lat["L_ext"] = 2.0 * lat["L"]
    if lat["tail_mode"] == "auto":
        lat["tail_mode"] = "exterior-function" if cfg["preset"]["name"] != "random-perturbation" else "zero"
    ext = cfg["extension"]
    if ext["z_max"] is not None and not ext["z_max"] > 0:
        raise ConfigError("extension.z_max must be positive")
    if int(ext["levels"]) < 4:
        raise ConfigError("extension.levels must be >= 4")
    if cfg["threads"] is not None and int(cfg["threads"]) < 1:
        raise ConfigError("threads must be >= 1")
    if cfg["preset"]["name"] not in PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']['name']!r}")
    return cfg


# ---------------------------------------------------------------------------
# builders


def _params(cfg) -> FracParams:
    p = cfg["params"]
    return FracParams(int(p["n"]), float(p["s"]), int(p["d"]))


def _lattice(cfg, params=None):
    params = params or _params(cfg)
    L = cfg["lattice"]
    pre = cfg["preset"]
    exterior = None
    if L["tail_mode"] == "exterior-function":
        exterior = preset_function(pre["name"], params.n, params.d, **pre["options"])
    elif L["tail_mode"] == "constant-exterior":
        exterior = pre["options"].get("value")
    return build_lattice(params, float(L["h"]), float(L["L"]), float(L["L_ext"]), int(L["cutoff"]), int(L["subsamples"]),
                         L["shape"], L["tail_mode"], exterior)


def _field(cfg, lat):
    if cfg["input"]:
        _, u = fieldio.read_lattice_field(cfg["input"], lat)
        return u
    opts = dict(cfg["preset"]["options"])
    if cfg["preset"]["name"] == "random-perturbation":
        opts.setdefault("seed", cfg["seed"])
    return preset_field(lat, cfg["preset"]["name"], **opts)


def _ext_grid(cfg, lat, x_extent=None):
    e = cfg["extension"]
    return extension.build_halfspace_grid(lat, levels=int(e["levels"]), z_max=e["z_max"], ratio=e["ratio"],
                                          x_extent=x_extent if x_extent is not None else e["x_extent"])


def _center(opt, n):
    return np.zeros(n) if opt is None else np.asarray(opt, dtype=float).reshape(n)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


# ---------------------------------------------------------------------------
# commands; each returns (results, status) and may write artifacts into ``out``


def cmd_constants(cfg, out):
    p = _params(cfg)
    res = p.as_dict()
    res["gamma_1s"] = constants.gamma_ns(1, p.s)
    if p.n >= 2:
        res["alpha"] = res["alpha_ns_closed_form"]
    return res, 0


def cmd_energy(cfg, out):
    lat = _lattice(cfg)
    u = _field(cfg, lat)
    res = {"lattice": lat.describe(), "energy": nonlocal_ops.energy(lat, u),
           "energy_pairs_only": nonlocal_ops.energy(lat, u, tail=False), "unit_defect": unit_defect(u)}
    if unit_defect(u) < 1e-10:
        _, sup, tsup = nonlocal_ops.el_residual(lat, u)
        res["el_residual_sup"] = sup
        res["el_residual_tangential_sup"] = tsup
    return res, 0


def cmd_minimize(cfg, out):
    lat = _lattice(cfg)
    u0 = _field(cfg, lat)
    amp = float(cfg["options"]["perturbation"])
    if amp > 0:
        rng = np.random.default_rng(cfg["seed"])
        om = lat.omega_idx
        trial = u0[om] + amp * rng.standard_normal((om.size, lat.d))
        if lat.d == 1:
            u0[om] = np.where(trial >= 0, 1.0, -1.0)
        else:
            u0[om] = trial / np.linalg.norm(trial, axis=1)[:, None]
    conf = solver.SolverConfig(**cfg["solver"])
    u, rep = solver.minimize(u0, lat, conf)
    fieldio.write_lattice_field(out / "field.bin", lat, u)
    if lat.n <= 2:
        (out / "field.csv").write_text(fieldio.lattice_csv(lat, u))
    hist = np.asarray(rep.energy_history)
    res = {
        "lattice": lat.describe(),
        "solve": rep.as_dict(),
        "energy_nonincreasing": bool(np.all(np.diff(hist) <= 0.0)),
        "unit_defect": unit_defect(u),
    }
    if lat.d >= 2:
        res["conservation_sweep"] = nonlocal_ops.conservation_sweep(lat, u)
        res["stationarity_residual"] = solver.stationarity_residual(lat, u)
    return res, 0


def cmd_extend(cfg, out):
    lat = _lattice(cfg)
    u = _field(cfg, lat)
    grid = _ext_grid(cfg, lat)
    v = extension.extend(u, grid)
    fieldio.write_extension(out / "extension.bin", v)
    res = {"lattice": lat.describe(), "grid": grid.describe(), "weighted_energy": extension.weighted_energy(v),
           "lattice_energy": nonlocal_ops.energy(lat, u)}
    return res, 0


def cmd_density(cfg, out):
    lat = _lattice(cfg)
    u = _field(cfg, lat)
    o = cfg["options"]
    x0 = _center(o["center"], lat.n)
    radii = extension.default_xi_radii(lat.h) if o["radii"] is None else np.asarray(o["radii"], dtype=float)
    r_max = float(np.max(radii))
    grid = _ext_grid(cfg, lat, x_extent=cfg["extension"]["x_extent"] or min(lat.L_ext, float(np.max(np.abs(x0))) + r_max + lat.h))
    v = extension.extend(u, grid)
    prof = extension.monotonicity_profile(v, u, x0, radii)
    (out / "profile.csv").write_text(prof.to_csv())
    return {"grid": grid.describe(), "profile": prof.as_dict()}, 0


def cmd_check(cfg, out):
    p = _params(cfg)
    L = cfg["lattice"]
    lat = checks.suite_lattice(p.n, p.s, float(L["h"]), float(L["L"]), float(L["L_ext"]), L["shape"])
    o = cfg["options"]
    rep = checks.exactness_suite(lat, d=int(o["d"]), seed=checks.DEFAULT_SEED + int(cfg["seed"]), tol=float(o["tol"]))
    ok = all(v["pass"] for v in rep.values())
    return {"lattice": lat.describe(), "identities": rep, "all_pass": ok}, 0 if ok else 1


def cmd_replace(cfg, out):
    if not cfg["input"]:
        raise ConfigError("replace needs --input <extension dump>")
    header, vals = fieldio.read_extension(cfg["input"])
    n, h = int(header["n"]), float(header["h"])
    z = np.asarray(header["z"], dtype=float)
    params = FracParams(n, float(header["s"]), int(header["d"]))
    k = (vals.shape[1] - 1) // 2
    ax = np.arange(-k, k + 1) * h
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator([z] + [ax] * n, vals, method="linear")
    o = cfg["options"]
    radius = float(o["radius"]) if o["radius"] is not None else 0.5 * float(header["L"])
    height = float(o["height"]) if o["height"] is not None else radius
    c = _center(o["center"], n)
    if np.max(np.abs(c)) + radius > k * h + 1e-12 or height > z[-1]:
        raise ConfigError("replacement box leaves the dumped extension grid")
    grid = weighted_pde.build_weighted_grid(params, radius, height, h, symmetric=True, center=c)

    def trace(x, zz):
        return interp(np.column_stack([np.abs(zz), x]))

    xg, zg = grid.coords()
    original = trace(xg.reshape(-1, n), zg.reshape(-1)).reshape(grid.shape + (-1,))
    sol = weighted_pde.solve_weighted_dirichlet(grid, original, rtol=float(o["rtol"]))
    e_orig = weighted_pde.grid_energy(grid, original)
    e_rep = weighted_pde.grid_energy(grid, sol.values)
    fieldio._write(out / "replaced.bin", {"kind": "weighted", "n": n, "d": params.d, "h": h, "s": params.s,
                                          "radius": radius, "height": height}, sol.values)
    fieldio._write(out / "original.bin", {"kind": "weighted", "n": n, "d": params.d, "h": h, "s": params.s,
                                          "radius": radius, "height": height}, original)
    mp = weighted_pde.check_max_principle(sol)
    res = {"radius": radius, "height": height, "center": c, "energy_original": e_orig, "energy_replaced": e_rep,
           "energy_not_increased": bool(e_rep <= e_orig * (1 + 1e-12)), "cg_iterations": sol.iterations,
           "cg_residual": sol.residual, "max_principle": mp["pass"]}
    return res, 0


def cmd_blowup(cfg, out):
    lat = _lattice(cfg)
    u = _field(cfg, lat)
    o = cfg["options"]
    x0 = _center(o["center"], lat.n)
    rows = []
    for rho in o["rho"]:
        rho = float(rho)
        # reference lattice: the part of the source box that stays inside after rescaling
        half = (lat.L_ext - float(np.max(np.abs(x0)))) / rho
        m = int(math.floor(half / lat.h + 1e-9))
        if m < 2:
            raise ConfigError(f"rho = {rho:g} leaves no room for a blow-up lattice")
        ref = build_lattice(FracParams(lat.n, lat.params.s, lat.d), lat.h, min(lat.L, (m // 2) * lat.h), m * lat.h)
        b = analysis.blowup(lat, u, x0, rho, ref)
        fieldio.write_lattice_field(out / f"blowup_rho{rho:g}.bin", ref, b)
        dim, basis, _, _ = analysis.symmetry_subspace(ref, b)
        rows.append({"rho": rho, "homogeneity_defect": analysis.homogeneity_defect(ref, b),
                     "symmetry_dimension": dim, "symmetry_basis": basis})
    return {"center": x0, "blowups": rows}, 0


def cmd_singular(cfg, out):
    lat = _lattice(cfg)
    u = _field(cfg, lat)
    o = cfg["options"]
    rep = analysis.detect_singular(lat, u, epsilon=o["epsilon"], radii=o["radii"], levels=int(cfg["extension"]["levels"]))
    (out / "flagged.csv").write_text(rep.flagged_csv())
    return rep.as_dict(), 0


def cmd_perimeter(cfg, out):
    lat = _lattice(cfg)
    u = _field(cfg, lat)
    if u.shape[1] != 1 or not np.all(np.abs(np.abs(u[:, 0]) - 1.0) == 0):
        raise ConfigError("perimeter needs a +-1 scalar field (e.g. --preset char-ball --d 1)")
    E_mask = u[:, 0] > 0
    P = nonlocal_ops.frac_perimeter(lat, E_mask)
    E = nonlocal_ops.energy(lat, u, tail=False)
    g = lat.params.gamma_ns
    return {"perimeter": P, "energy_pairs_only": E, "energy_over_gamma_P": E / (g * P) if P > 0 else None,
            "bmo": seminorms.bmo_seminorm(lat, u)}, 0


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracmap", description="Lattice experiments with fractional harmonic maps into spheres.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--n", type=int)
    ap.add_argument("--s", type=float)
    ap.add_argument("--d", type=int)
    ap.add_argument("--h", type=float)
    ap.add_argument("--L", type=float)
    ap.add_argument("--L-ext", dest="L_ext", type=float)
    ap.add_argument("--preset", choices=PRESETS)
    ap.add_argument("--input", help="field dump to use instead of the preset")
    ap.add_argument("--tol", type=float)
    ap.add_argument("--max-iters", dest="max_iters", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, cfg: dict) -> tuple[int, dict]:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    t0 = time.perf_counter()
    report = {"command": command, "config": cfg}
    status = 0
    try:
        with threadpool_limits(limits=cfg["threads"]):
            results, status = HANDLERS[command](cfg, out)
        report["results"] = results
    except NumericalError as exc:
        report["error"] = {"type": "numerical", "message": str(exc), "report": exc.report}
        status = 3
    except (FracmapError, ValueError) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        status = 2
    report["status"] = status
    report["timing"] = {"seconds": time.perf_counter() - t0}
    _write_json(out / "report.json", report)
    return status, report


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (FracmapError, ValueError) as exc:
        print(f"fracmap: {exc}", file=sys.stderr)
        return 2
    status, report = run(args.command, cfg)
    summary = {k: report[k] for k in ("command", "status") if k in report}
    if "error" in report:
        summary["error"] = report["error"]["message"]
    print(json.dumps(_clean(summary)))
    return status


if __name__ == "__main__":
    sys.exit(main())
