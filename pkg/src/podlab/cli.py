"""Command-line entry points for reproducing the comparative studies.

Exit codes: 0 success, 2 malformed scenario/case, 3 simulation divergence.
Worker count for sweeps comes from the PODLAB_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .modal import eigendecompose, linearize, mode_table_rows, screen_modes, write_mode_table
from .model import CaseError, load_case
from .simulation import SimulationDiverged, Simulator


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_modes(args) -> int:
    model = load_case(args.case)
    sim = Simulator(model)
    lm = linearize(sim, input_actuator=args.actuator, output_channel=args.measurement)
    modes = screen_modes(eigendecompose(lm.a), (args.f_min, args.f_max))
    rows = mode_table_rows(lm, modes)
    print(f"{'f [Hz]':>8} {'zeta [%]':>9} {'|r|':>10} {'arg r [deg]':>12} {'beta [deg]':>11}")
    for row in rows:
        print(f"{row['freq_hz']:8.3f} {row['damping_pct']:9.3f} {row['residue_mag']:10.5f} "
              f"{row['residue_deg']:12.2f} {row['beta_deg']:11.2f}")
    if args.out:
        out = _out_dir(args)
        write_mode_table(out / "modes.csv", lm, modes)
        print(f"wrote {out / 'modes.csv'}")
    return 0


def cmd_simulate(args) -> int:
    scenario = ex.Scenario.from_file(args.scenario)
    result = ex.run_scenario(scenario)
    stem = Path(scenario.output) if scenario.output else _out_dir(args) / "run"
    paths = ex.export_experiment(result, stem)
    print(f"cost={result.cost:.6g} performance="
          f"{'inf' if result.performance_unbounded else f'{result.performance:.6g}'}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_smib_study(args) -> int:
    out = _out_dir(args)
    study = ex.run_smib_study(args.gain0, args.gain_cim, include_uncontrolled=True)
    info = study["mode"]
    print(f"targeted mode: f={info['freq_hz']:.3f} Hz, zeta={100 * info['damping']:.2f}%, "
          f"|r|={abs(info['residue']):.4f}, beta={info['beta_deg']:.1f} deg")
    summary = {"mode": _mode_json(info)}
    for name in ("uncontrolled", "pod0", "cim"):
        res = study[name]
        ex.export_experiment(res, out / f"smib_{name}")
        summary[name] = {"cost": res.cost, "performance": res.performance}
        print(f"{name:13s}: C={res.cost:.4f} P={res.performance:.3f}")
    (out / "smib_study.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'smib_study.json'}")
    return 0


def cmd_gain_sweep(args) -> int:
    out = _out_dir(args)
    gains = [float(g) for g in args.gains.split(",")]
    curves = ex.gain_sweep(gains)
    cols = {}
    for kind in ("pod0", "cim"):
        cols[f"{kind}_gain"] = curves[kind]["gain"]
        cols[f"{kind}_cost"] = curves[kind]["cost"]
        cols[f"{kind}_performance"] = curves[kind]["performance"]
    ex.write_timeseries_csv(out / "gain_sweep.csv", cols)
    print(f"wrote {out / 'gain_sweep.csv'}")
    return 0


def cmd_residue_sweep(args) -> int:
    out = _out_dir(args)
    scales = np.geomspace(args.scale_min, args.scale_max, args.n_scales).round(9)
    angles = np.linspace(args.angle_min, args.angle_max, args.n_angles).round(9)
    gains = [float(g) for g in args.gains.split(",")]
    grid = ex.residue_sweep(scales, angles, gains, target_cost=args.target_cost)
    paths = ex.export_grid(grid, out / "residue_sweep")
    adv = grid.advantage_pct
    print(f"target cost {grid.target_cost:.4f}; advantage at exact residue: "
          f"{adv[np.argmin(np.abs(grid.scales - 1.0)), np.argmin(np.abs(grid.angles_deg))]:.2f}%")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_ieee39_study(args) -> int:
    out = _out_dir(args)
    study = ex.run_ieee39_study(args.gain)
    info = study["mode"]
    print(f"degraded-system mode: f={info['freq_hz']:.3f} Hz, zeta={100 * info['damping']:.2f}%")
    summary = {"mode": _mode_json(info)}
    for name in ("uncontrolled", "pod0", "cim"):
        res = study[name]
        ex.export_experiment(res, out / f"ieee39_{name}")
        summary[name] = {"cost": res.cost, "performance": res.performance}
        print(f"{name:13s}: C={res.cost:.4f} P={res.performance:.3f}")
    (out / "ieee39_study.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'ieee39_study.json'}")
    return 0


def _mode_json(info: dict) -> dict:
    return {
        "freq_hz": info["freq_hz"],
        "damping": info["damping"],
        "residue": [info["residue"].real, info["residue"].imag],
        "beta_deg": info["beta_deg"],
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="podlab",
                                description="phasor oscillation damping laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("modes", help="mode table for a case")
    sp.add_argument("case", help="built-in case name or case JSON path")
    sp.add_argument("--actuator", default="TCSC1")
    sp.add_argument("--measurement", default="speed:G1")
    sp.add_argument("--f-min", type=float, default=0.1)
    sp.add_argument("--f-max", type=float, default=3.0)
    sp.add_argument("-o", "--out", default=None)
    sp.set_defaults(fn=cmd_modes)

    sp = sub.add_parser("simulate", help="run a scenario file")
    sp.add_argument("scenario")
    sp.add_argument("-o", "--out", default="out")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("smib-study", help="equal-gain / equal-cost comparison")
    sp.add_argument("--gain0", type=float, default=15.0)
    sp.add_argument("--gain-cim", type=float, default=15.0)
    sp.add_argument("-o", "--out", default="out")
    sp.set_defaults(fn=cmd_smib_study)

    sp = sub.add_parser("gain-sweep", help="cost/performance curves over gains")
    sp.add_argument("--gains", default="0,5,10,15,22,32,46,68,100")
    sp.add_argument("-o", "--out", default="out")
    sp.set_defaults(fn=cmd_gain_sweep)

    sp = sub.add_parser("residue-sweep", help="residue-error robustness grid")
    sp.add_argument("--scale-min", type=float, default=0.5)
    sp.add_argument("--scale-max", type=float, default=2.0)
    sp.add_argument("--n-scales", type=int, default=7)
    sp.add_argument("--angle-min", type=float, default=-60.0)
    sp.add_argument("--angle-max", type=float, default=60.0)
    sp.add_argument("--n-angles", type=int, default=13)
    sp.add_argument("--gains", default=",".join(str(g) for g in ex.DEFAULT_SWEEP_GAINS))
    sp.add_argument("--target-cost", type=float, default=None)
    sp.add_argument("-o", "--out", default="out")
    sp.set_defaults(fn=cmd_residue_sweep)

    sp = sub.add_parser("ieee39-study", help="39-bus comparison at one gain")
    sp.add_argument("--gain", type=float, default=20.0)
    sp.add_argument("-o", "--out", default="out")
    sp.set_defaults(fn=cmd_ieee39_study)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ex.ScenarioError, CaseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
