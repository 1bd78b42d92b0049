"""Command-line entry point.

Subcommands: propagate (single paraboloid flow), reach (family + slices),
verify (Monte-Carlo soundness and coverage), examples (embedded presets).
Artifacts are written as CSV (plot-friendly) with JSON mirrors; all
randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError, ParareachError
from .family import (build_family, check_assumptions, membership_margins,
                     reach_slice)
from .model import IqcSystem, Paraboloid, system_from_json
from .oracle import OracleConfig, coverage, endpoints_to_csv, sample_admissible
from .presets import load_preset, preset_names
from .riccati import IntegratorConfig, propagate

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ESCAPE = 2

SOUNDNESS_MARGIN_TOL = 1e-8


@dataclass
class RunConfig:
    """Validated inputs of one CLI run."""

    system: IqcSystem
    seed_paraboloid: Paraboloid
    t_end: float
    times: list
    eps_q: float
    n_members: int
    gammas: Optional[list]
    gamma_spacing: str
    sampler_density: int
    grid_window: tuple
    grid_points: int
    integrator: IntegratorConfig
    oracle_n: int
    oracle_segments: int
    oracle_w_scale: float
    oracle_seed: int
    cells_per_dim: int
    out_dir: Path
    fmt: str
    preset_name: Optional[str] = None


def _parse_json_flag(text, what):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"could not parse {what} as JSON: {e}") from e


def _build_config(args) -> RunConfig:
    preset = None
    if args.example:
        try:
            preset = load_preset(args.example)
        except KeyError as e:
            raise ConfigError(str(e)) from e
        system = preset["system"]
        seed_par = preset["seed"]
    elif args.system:
        path = Path(args.system)
        if not path.exists():
            raise ConfigError(f"system file not found: {path}")
        with open(path) as fh:
            system = system_from_json(json.load(fh))
        if args.e0 is None:
            raise ConfigError("--e0 is required with --system (plus --f0/--g0)")
        E0 = np.asarray(_parse_json_flag(args.e0, "--e0"), dtype=float)
        f0 = (np.zeros(system.n) if args.f0 is None
              else np.asarray(_parse_json_flag(args.f0, "--f0"), dtype=float))
        seed_par = Paraboloid(E0, f0, args.g0 if args.g0 is not None else 0.0)
    else:
        raise ConfigError("one of --example or --system is required")

    if args.e0 is not None and preset is not None:
        seed_par = Paraboloid(
            np.asarray(_parse_json_flag(args.e0, "--e0"), dtype=float),
            (seed_par.f if args.f0 is None
             else np.asarray(_parse_json_flag(args.f0, "--f0"), dtype=float)),
            seed_par.g if args.g0 is None else args.g0)
    elif preset is not None and (args.f0 is not None or args.g0 is not None):
        seed_par = Paraboloid(
            seed_par.E,
            (seed_par.f if args.f0 is None
             else np.asarray(_parse_json_flag(args.f0, "--f0"), dtype=float)),
            seed_par.g if args.g0 is None else args.g0)

    def pick(flag, key, fallback):
        if flag is not None:
            return flag
        if preset is not None and key in preset:
            return preset[key]
        return fallback

    t_end = float(pick(args.t_end, "t_end", 1.0))
    integ = preset["integrator"] if preset else {}
    cfg = IntegratorConfig(
        rel_tol=float(pick(args.rel_tol, None, integ.get("rel_tol", 1e-9))),
        abs_tol=float(pick(args.abs_tol, None, integ.get("abs_tol", 1e-12))),
        max_step=float(pick(args.max_step, None, integ.get("max_step", 0.025))),
        escape_norm=float(args.escape_norm),
        t_end=t_end)

    times = args.time if args.time else pick(None, "times", [t_end])
    gammas = None
    if args.gammas:
        gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    elif preset is not None and "gammas" in preset:
        gammas = preset["gammas"]

    window = pick(None, "grid_window", None)
    if args.window is not None:
        half = abs(float(args.window))
        window = ([-half] * system.n, [half] * system.n)
    if window is None:
        window = ([-2.0] * system.n, [2.0] * system.n)

    orc = preset["oracle"] if preset else {}
    n_members = int(pick(args.members, "n_members", 16))
    if args.members is not None:
        gammas = gammas if args.gammas else None  # explicit member count wins

    out_dir = Path(args.out)
    return RunConfig(
        system=system, seed_paraboloid=seed_par, t_end=t_end,
        times=[float(t) for t in times],
        eps_q=float(pick(args.eps_q, "eps_q", 1e-3 * max(abs(seed_par.g), 1e-6))),
        n_members=n_members, gammas=gammas,
        gamma_spacing=pick(args.gamma_spacing, "gamma_spacing", "uniform"),
        sampler_density=int(pick(None, "sampler_density", 64)),
        grid_window=window, grid_points=int(pick(args.grid_points, "grid_points", 61)),
        integrator=cfg,
        oracle_n=int(pick(args.n, None, orc.get("n", 2000))),
        oracle_segments=int(pick(args.segments, None, orc.get("segments", 8))),
        oracle_w_scale=float(pick(args.w_scale, None, orc.get("w_scale", 1.0))),
        oracle_seed=int(args.seed), cells_per_dim=int(args.cells),
        out_dir=out_dir, fmt=args.format, preset_name=args.example)


def _grid_from_window(rc: RunConfig):
    lo, hi = rc.grid_window
    axes = [np.linspace(lo[d], hi[d], rc.grid_points) for d in range(rc.system.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _write(rc: RunConfig, name: str, text: str):
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    path = rc.out_dir / name
    path.write_text(text)
    return path


def _write_json(rc: RunConfig, name: str, obj):
    return _write(rc, name, json.dumps(obj, indent=2) + "\n")


def _csv_to_json(text: str):
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    return {"columns": header, "rows": rows}


def _emit_table(rc: RunConfig, stem: str, csv_text: str):
    if rc.fmt == "json":
        _write_json(rc, f"{stem}.json", _csv_to_json(csv_text))
    else:
        _write(rc, f"{stem}.csv", csv_text)


def cmd_propagate(rc: RunConfig) -> int:
    tvp = propagate(rc.seed_paraboloid, rc.system, rc.integrator)
    _emit_table(rc, "tvp", tvp.to_csv())
    E, f, g = tvp.params_at(tvp.t_end)
    manifest = {
        "t_end_requested": rc.t_end,
        "t_end_reached": tvp.t_end,
        "escape_time": tvp.escape_time,
        "n_grid_points": int(len(tvp.grid)),
        "final": {"t": tvp.t_end, "E": E.tolist(), "f": f.tolist(), "g": g},
        "seed": {"E": rc.seed_paraboloid.E.tolist(),
                 "f": rc.seed_paraboloid.f.tolist(),
                 "g": rc.seed_paraboloid.g},
        "preset": rc.preset_name,
    }
    _write_json(rc, "manifest.json", manifest)
    if tvp.escape_time is not None and tvp.escape_time < rc.t_end:
        return EXIT_ESCAPE
    return EXIT_OK


def cmd_reach(rc: RunConfig) -> int:
    fam = build_family(rc.seed_paraboloid, rc.system, rc.eps_q, rc.n_members,
                       rc.integrator, gammas=rc.gammas,
                       spacing=rc.gamma_spacing,
                       sampler_density=rc.sampler_density)
    grid = _grid_from_window(rc)
    report = check_assumptions(fam, rc.integrator, probe_grid=grid,
                               max_rim_points=6)
    tube_parts = []
    for t in rc.times:
        slc = reach_slice(fam, t, grid)
        stem = f"slice_t{t:g}".replace(".", "p")
        _emit_table(rc, stem, slc.to_csv())
        tube_parts.append((t, slc))
    # stacked tube export
    n = rc.system.n
    cols = ["t"] + [f"x_{i}" for i in range(n)] + ["xq_max", "argmin_gamma"]
    rows = [",".join(cols)]
    for t, slc in tube_parts:
        ag = slc.argmin_gamma
        for k in range(len(slc.xq_max)):
            rows.append(",".join(repr(float(v)) for v in
                                 [t, *slc.x_grid[k], slc.xq_max[k], ag[k]]))
    _emit_table(rc, "tube", "\n".join(rows) + "\n")
    _write_json(rc, "family_manifest.json", fam.to_manifest(report))
    return EXIT_OK


def cmd_verify(rc: RunConfig) -> int:
    fam = build_family(rc.seed_paraboloid, rc.system, rc.eps_q, rc.n_members,
                       rc.integrator, gammas=rc.gammas,
                       spacing=rc.gamma_spacing,
                       sampler_density=rc.sampler_density)
    check_times = rc.times if rc.times else [rc.t_end]
    sample_times = sorted(set(check_times))
    ocfg = OracleConfig(n_trajectories=rc.oracle_n, segments=rc.oracle_segments,
                        w_scale=rc.oracle_w_scale, seed=rc.oracle_seed,
                        t_end=rc.t_end)
    trajs = sample_admissible(rc.system, rc.seed_paraboloid, ocfg, family=fam,
                              sample_times=sample_times)
    grid = trajs[0].grid
    violations = []
    worst = -np.inf
    for t in sample_times:
        k = int(np.argmin(np.abs(grid - t)))
        xs = np.stack([tr.x_samples[k] for tr in trajs])
        xqs = np.array([tr.xq_samples[k] for tr in trajs])
        margins = membership_margins(fam, t, xs, xqs)
        worst = max(worst, float(margins.max()))
        for j in np.nonzero(margins > SOUNDNESS_MARGIN_TOL)[0]:
            violations.append({"t": float(t), "x": xs[j].tolist(),
                               "x_q": float(xqs[j]), "margin": float(margins[j])})

    t_cov = sample_times[-1] if rc.times else rc.t_end
    k = int(np.argmin(np.abs(grid - t_cov)))
    endpoints = np.stack([tr.x_samples[k] for tr in trajs])
    cov = coverage(fam, t_cov, endpoints, cells_per_dim=rc.cells_per_dim)

    from .model import AugmentedState
    end_states = [AugmentedState(tr.x_samples[k], tr.xq_samples[k]) for tr in trajs]
    _emit_table(rc, "endpoints", endpoints_to_csv(end_states))
    _write_json(rc, "coverage.json", cov.to_json())
    report = {
        "n_requested": rc.oracle_n,
        "n_admissible": len(trajs),
        "check_times": list(map(float, sample_times)),
        "worst_margin": worst,
        "margin_tolerance": SOUNDNESS_MARGIN_TOL,
        "n_violations": len(violations),
        "violations": violations[:100],
        "coverage_fraction": cov.fraction,
        "coverage_time": float(t_cov),
        "seed": rc.oracle_seed,
    }
    _write_json(rc, "verify_report.json", report)
    return EXIT_OK if not violations else EXIT_ERROR


def cmd_examples(args) -> int:
    if args.show:
        try:
            preset = load_preset(args.show)
        except KeyError as e:
            raise ConfigError(str(e)) from e
        out = {
            "name": args.show,
            "system": preset["system"].to_json(),
            "seed_paraboloid": {"E": preset["seed"].E.tolist(),
                                "f": preset["seed"].f.tolist(),
                                "g": preset["seed"].g},
            "t_end": preset["t_end"],
            "times": preset["times"],
            "eps_q": preset["eps_q"],
            "n_members": preset["n_members"],
            "gamma_spacing": preset["gamma_spacing"],
        }
        print(json.dumps(out, indent=2))
    else:
        for name in preset_names():
            print(name)
    return EXIT_OK


def _add_common(sp):
    sp.add_argument("--system", help="system JSON file")
    sp.add_argument("--example", help=f"embedded preset ({', '.join(preset_names())})")
    sp.add_argument("--e0", help="seed quadratic coefficient, JSON matrix")
    sp.add_argument("--f0", help="seed linear coefficient, JSON vector")
    sp.add_argument("--g0", type=float, help="seed offset")
    sp.add_argument("--t-end", dest="t_end", type=float, help="horizon")
    sp.add_argument("--time", type=float, action="append",
                    help="evaluation time (repeatable)")
    sp.add_argument("--rel-tol", dest="rel_tol", type=float)
    sp.add_argument("--abs-tol", dest="abs_tol", type=float)
    sp.add_argument("--max-step", dest="max_step", type=float)
    sp.add_argument("--escape-norm", dest="escape_norm", type=float, default=1e7)
    sp.add_argument("--gammas", help="explicit comma-separated scalings")
    sp.add_argument("--members", type=int, help="family size")
    sp.add_argument("--eps-q", dest="eps_q", type=float, help="rim slab thickness")
    sp.add_argument("--gamma-spacing", dest="gamma_spacing",
                    choices=("uniform", "log"))
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    sp.add_argument("--window", type=float,
                    help="half-width of the symmetric evaluation window")
    sp.add_argument("--n", type=int, help="oracle trajectory draws")
    sp.add_argument("--segments", type=int, help="disturbance segments")
    sp.add_argument("--w-scale", dest="w_scale", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cells", type=int, default=10, help="coverage cells per dim")
    sp.add_argument("--out", default="parareach_out", help="output directory")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="parareach",
        description="Reachable sets of LTI systems under integral quadratic "
                    "constraints, via time-varying paraboloids.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("propagate", cmd_propagate), ("reach", cmd_reach),
                     ("verify", cmd_verify)):
        sp = sub.add_parser(name)
        _add_common(sp)
        sp.set_defaults(fn=fn)
    spx = sub.add_parser("examples")
    spx.add_argument("--show", help="print one preset as JSON")
    spx.set_defaults(fn=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "examples":
            return cmd_examples(args)
        rc = _build_config(args)
        return args.fn(rc)
    except ParareachError as e:
        msg = {"error": type(e).__name__, "message": str(e)}
        print(f"error: {json.dumps(msg)}", file=_sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
