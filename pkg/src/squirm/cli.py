"""Command-line front end: scenario-driven runs with deterministic outputs.

Subcommands: forward, ocp, beam-benchmark, audit, sweep.  Every run writes
meta.json with the fully resolved scenario; feeding that file back through
--config reproduces the outputs bit for bit.  All floating-point output is
printed with 17 significant digits.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, SquirmError
from .forward import simulate
from .ocp import adjoint_sweep, control_residual, fbsm, objective
from .oracle import run_beam_benchmark
from .scenarios import build, resolve


def fmt(x):
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating))
                             else v for v in row])


def _write_meta(out_dir, scenario, preset, extra=None):
    meta = {"scenario": scenario, "preset": preset, "version": __version__}
    if extra:
        meta.update(extra)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trajectory(out_dir, traj, save_state_every=0):
    rows = [
        (traj.times[n], *traj.x_cm[n], traj.U[n], traj.W[n])
        for n in range(len(traj.times))
    ]
    _write_csv(os.path.join(out_dir, "trajectory.csv"),
               ["t", "xcm_x", "xcm_y", "xcm_z", "U", "W"], rows)
    if save_state_every > 0:
        model = traj.model
        for n in range(0, len(traj.times), save_state_every):
            pts = model.full_positions(traj.x[n]).reshape(-1, 3)
            vel = model.full_velocities(traj.v[n]).reshape(-1, 3)
            _write_csv(
                os.path.join(out_dir, f"state_{n:05d}.csv"),
                ["node", "x", "y", "z", "vx", "vy", "vz"],
                [(i, *pts[i], *vel[i]) for i in range(len(pts))],
            )


def _write_controls(out_dir, times, s_coords, u_table):
    header = ["t"] + [f"u_s{fmt(s)}" for s in s_coords]
    rows = [(times[n], *u_table[n]) for n in range(len(times))]
    _write_csv(os.path.join(out_dir, "controls.csv"), header, rows)


def _net_displacement(traj):
    return traj.x_cm[-1] - traj.x_cm[0]


def run_forward(built, out_dir):
    traj = simulate(built.model, built.u_table, built.scenario["time"]["T"],
                    built.scenario["time"]["dt"], tau=built.tau,
                    newton=built.newton, store_tangents=False)
    _write_trajectory(out_dir, traj,
                      built.scenario["output"]["save_state_every"])
    _write_controls(out_dir, built.times, built.model.cmap.s_coords,
                    built.u_table)
    return {"net_displacement": [fmt(v) for v in _net_displacement(traj)]}


def run_ocp(built, out_dir):
    conv_rows = []

    def track(k, J, r_norm, theta):
        conv_rows.append((k, J, r_norm, theta))

    res = fbsm(built.model, built.u0, built.scenario["time"]["T"],
               built.scenario["time"]["dt"], built.ocp, tau=built.tau,
               newton=built.newton, callback=track)
    traj = res.trajectory
    _write_trajectory(out_dir, traj,
                      built.scenario["output"]["save_state_every"])
    _write_controls(out_dir, built.times, built.model.cmap.s_coords, res.u)
    rows = [(0, res.J_history[0], res.r_norm_history[0], 0.0)] + conv_rows
    _write_csv(os.path.join(out_dir, "convergence.csv"),
               ["k", "J", "r_norm", "theta"], rows)
    return {
        "converged": res.converged,
        "n_sweeps": res.n_sweeps,
        "stop_reason": res.stop_reason,
        "J_final": fmt(res.J_history[-1]),
        "terminal_centroid": [fmt(v) for v in traj.x_cm[-1]],
    }


def run_beam(built, out_dir):
    bb = built.scenario["beam"]
    rows = run_beam_benchmark(nx_values=tuple(bb["nx_values"]),
                              nu_values=tuple(bb["nu_values"]),
                              T=built.scenario["time"]["T"],
                              dt=built.scenario["time"]["dt"])
    _write_csv(
        os.path.join(out_dir, "beam.csv"),
        ["nx", "nu", "u_o", "computed", "analytic", "abs_error", "rel_error",
         "equilibrium_residual"],
        [(r["nx"], r["nu"], r["u_o"], r["computed"], r["analytic"],
          r["abs_error"], r["rel_error"], r["equilibrium_residual"])
         for r in rows],
    )
    return {"cases": len(rows)}


def run_audit(built, out_dir, threshold=1e-4):
    from .audit import run_all_audits

    report = run_all_audits(
        mu=built.scenario["material"]["mu"],
        lam=built.scenario["material"]["lam"],
        substrate=built.scenario["substrate"],
        enhanced=built.scenario["element"]["enhanced"],
    )
    worst = max(report.values())
    for name, err in sorted(report.items()):
        print(f"{name}: max relative error {fmt(err)}")
    with open(os.path.join(out_dir, "audit.json"), "w") as fh:
        json.dump({k: float(v) for k, v in report.items()}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    if worst > threshold:
        raise SquirmError(
            f"derivative audit failed: worst error {worst:.3e} > {threshold}")
    return {"worst_error": fmt(worst)}


def _set_by_path(d, dotted, value):
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def run_sweep(built, out_dir, params):
    """Cartesian sweep of dotted scenario parameters, one forward run each."""
    import itertools

    names = list(params)
    grids = [params[n] for n in names]
    rows = []
    for combo in itertools.product(*grids):
        override = {}
        for name, value in zip(names, combo):
            _set_by_path(override, name, value)
        scenario = resolve(config=override and
                           _merge_scenario(built.scenario, override))
        sub = build(scenario)
        traj = simulate(sub.model, sub.u_table, scenario["time"]["T"],
                        scenario["time"]["dt"], tau=sub.tau,
                        newton=sub.newton, store_tangents=False)
        net = _net_displacement(traj)
        rows.append(tuple(combo) + tuple(net))
    _write_csv(os.path.join(out_dir, "sweep.csv"),
               names + ["net_dx", "net_dy", "net_dz"], rows)
    return {"runs": len(rows)}


def _merge_scenario(base, override):
    from .scenarios import _deep_update

    return _deep_update(base, override)


def _parse_param(spec):
    if "=" not in spec:
        raise ConfigError([f"--param must look like path=v1,v2,... got {spec!r}"])
    path, values = spec.split("=", 1)
    return path, [float(v) for v in values.split(",")]


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="squirm",
        description="Soft-body locomotion simulation and optimal control",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("forward", "ocp", "beam-benchmark", "audit", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML/JSON scenario file")
        p.add_argument("--preset", help="named preset scenario")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        if name == "sweep":
            p.add_argument("--param", action="append", default=[],
                           help="dotted parameter grid, e.g. substrate.mu_f=1,2,5")
    args = parser.parse_args(argv)

    try:
        config = None
        if args.config:
            with open(args.config) as fh:
                config = yaml.safe_load(fh)
        scenario = resolve(config=config, preset=args.preset)
        mode = args.command if args.command != "sweep" else "forward"
        if args.command in ("forward", "ocp", "beam-benchmark", "audit"):
            scenario["mode"] = args.command
        from .scenarios import validate
        validate(scenario)

        os.makedirs(args.out, exist_ok=True)
        built = build(scenario)
        if args.command == "forward":
            summary = run_forward(built, args.out)
        elif args.command == "ocp":
            summary = run_ocp(built, args.out)
        elif args.command == "beam-benchmark":
            summary = run_beam(built, args.out)
        elif args.command == "audit":
            summary = run_audit(built, args.out)
        else:
            params = dict(_parse_param(s) for s in args.param)
            summary = run_sweep(built, args.out, params)
        _write_meta(args.out, scenario, args.preset, {"summary": summary})
        print(json.dumps({"status": "ok", **summary}, default=str))
        return 0
    except ConfigError as exc:
        print(json.dumps({"status": "config-error",
                          "errors": exc.messages}), file=sys.stderr)
        return 2
    except SquirmError as exc:
        print(json.dumps({"status": "solver-error", "error": str(exc)}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
