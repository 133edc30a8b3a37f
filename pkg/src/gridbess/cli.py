"""Command-line interface: run scenarios, sweep comparisons, check gains.

    gridbess run <scenario> [--out DIR] [--variant NAME] [--scale-ic F]
                 [--dt SEC] [--no-figures]
    gridbess sweep <scenario>... [--gains LIST] [--variants LIST]
                 [--scales LIST] [--out DIR] [--no-figures]
    gridbess check <scenario>

<scenario> is a JSON file path or the name of a bundled scenario
(case1, case2, case3, table1, scaling, recon3, hygiene).  The default
output directory comes from $GRIDBESS_OUT, falling back to ./out.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .engine import RunResult, ScenarioSpec, run_scenario
from .scenario import ScenarioError, bundled_path, bundled_scenarios, load_scenario

log = logging.getLogger(__name__)

# Named gain sets of the comparison study (k1, k2, k3, alpha, beta); the
# exponents, trigger threshold and d are taken from the scenario's gains.
GAIN_SETS = {
    "S1": (30.0, 35.0, 16.0, 72.0, 12.0),
    "S2": (6.0, 7.0, 3.5, 72.0, 12.0),
    "S3": (6.0, 7.0, 3.5, 150.0, 20.0),
}
VARIANT_ALIASES = {
    "proposed": "proposed",
    "finite": "finite_baseline",
    "finite_baseline": "finite_baseline",
    "asymptotic": "asymptotic_baseline",
    "asymptotic_baseline": "asymptotic_baseline",
}


def _resolve_scenario(token: str) -> Path:
    p = Path(token)
    if p.suffix == ".json" or p.exists():
        return p
    return bundled_path(token)


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("GRIDBESS_OUT", "out"))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def write_timeseries_csv(result: RunResult, agent_ids, path: Path):
    cols = [("t", result.t)]
    for name, arr in (("lam", result.lam), ("soc", result.soc),
                      ("omega_dev", result.omega_dev), ("p_inj", result.p_inj),
                      ("p_ref", result.p_ref), ("f", result.f_value)):
        for k, aid in enumerate(agent_ids):
            cols.append((f"{name}_{aid}", arr[:, k]))
    cols += [("lambda_star", result.lambda_star),
             ("soc_leader", result.soc_leader),
             ("omega_syn", result.omega_syn),
             ("load_total", result.load_total)]
    with open(path, "w") as fh:
        fh.write(",".join(name for name, _ in cols) + "\n")
        data = np.column_stack([c for _, c in cols])
        for row in data:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def write_events_csv(result: RunResult, agent_ids, path: Path):
    with open(path, "w") as fh:
        fh.write("agent,t,interval,f_value\n")
        for e in result.events:
            fh.write(f"{agent_ids[e.agent]},{e.time:.9g},{e.interval:.9g},"
                     f"{e.f_value:.9g}\n")


def _write_run_artifacts(spec: ScenarioSpec, result: RunResult, outdir: Path,
                         figures: bool = True):
    outdir.mkdir(parents=True, exist_ok=True)
    ids = [u.id for u in spec.units]
    write_timeseries_csv(result, ids, outdir / "timeseries.csv")
    write_events_csv(result, ids, outdir / "events.csv")
    (outdir / "metrics.json").write_text(
        json.dumps({"scenario": spec.name, "variant": spec.variant,
                    **result.metrics}, indent=2, default=_json_default) + "\n")
    (outdir / "feasibility.json").write_text(
        json.dumps(result.feasibility.as_dict(), indent=2) + "\n")
    from .figures import write_gnuplot_script
    write_gnuplot_script(outdir, spec.name, ids)
    if figures:
        from .figures import render_run_figures
        render_run_figures(result, outdir, ids)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _apply_overrides(spec: ScenarioSpec, args) -> ScenarioSpec:
    changes = {}
    if getattr(args, "variant", None):
        changes["variant"] = VARIANT_ALIASES[args.variant]
    if getattr(args, "scale_ic", None) is not None:
        changes["ic_scale"] = args.scale_ic
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    return replace(spec, **changes) if changes else spec


def cmd_run(args) -> int:
    spec = load_scenario(_resolve_scenario(args.scenario))
    spec = _apply_overrides(spec, args)
    result = run_scenario(spec)
    outdir = _out_dir(args) / spec.name
    _write_run_artifacts(spec, result, outdir, figures=not args.no_figures)
    m = result.metrics
    print(f"{spec.name} [{spec.variant}]: settled="
          f"{_fmt(m['settling_time'])}s events={m['event_count']} "
          f"final_err={m['final_consensus_error']:.3g} "
          f"feasible={m['feasible']} -> {outdir}")
    return 0


def cmd_check(args) -> int:
    spec = load_scenario(_resolve_scenario(args.scenario))
    from .netgraph import check_feasibility, grounded_matrix, laplacian
    rep = check_feasibility(spec.gains, grounded_matrix(laplacian(spec.topology),
                                                        spec.topology))
    print(json.dumps(rep.as_dict(), indent=2))
    return 0


def cmd_sweep(args) -> int:
    if not args.scenarios:
        print("sweep: at least one scenario is required", file=sys.stderr)
        return 2
    gain_names = [g.strip() for g in args.gains.split(",")] if args.gains else [None]
    for g in gain_names:
        if g is not None and g not in GAIN_SETS:
            print(f"sweep: unknown gain set {g!r} (have {sorted(GAIN_SETS)})",
                  file=sys.stderr)
            return 2
    variants = ([VARIANT_ALIASES[v.strip()] for v in args.variants.split(",")]
                if args.variants else [None])
    scales = ([float(s) for s in args.scales.split(",")]
              if args.scales else [None])

    outdir = _out_dir(args)
    outdir.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    for token in args.scenarios:
        base = load_scenario(_resolve_scenario(token))
        for gname in gain_names:
            for variant in variants:
                for scale in scales:
                    spec = base
                    label = [spec.name]
                    if gname:
                        k1, k2, k3, al, be = GAIN_SETS[gname]
                        spec = replace(spec, gains=replace(
                            spec.gains, k1=k1, k2=k2, k3=k3, alpha=al, beta=be))
                        label.append(gname)
                    if variant:
                        spec = replace(spec, variant=variant)
                        label.append(variant)
                    if scale is not None:
                        spec = replace(spec, ic_scale=scale)
                        label.append(f"x{scale:g}")
                    cell = "__".join(label)
                    spec = replace(spec, name=cell)
                    try:
                        result = run_scenario(spec)
                        _write_run_artifacts(spec, result, outdir / cell,
                                             figures=not args.no_figures)
                        m = result.metrics
                        rows.append({
                            "cell": cell, "scenario": base.name,
                            "gains": gname or "file",
                            "variant": spec.variant,
                            "ic_scale": spec.ic_scale,
                            "settling_time": m["settling_time"],
                            "overshoot": m["overshoot"],
                            "mean_event_interval": m["mean_event_interval"],
                            "event_count": m["event_count"],
                            "final_consensus_error": m["final_consensus_error"],
                        })
                        print(f"  {cell}: settle={_fmt(m['settling_time'])}s "
                              f"oversh={m['overshoot']:.3g} "
                              f"mean_int={_fmt(m['mean_event_interval'])}")
                    except Exception as exc:  # partial-failure report
                        failures.append((cell, str(exc)))
                        print(f"  {cell}: FAILED ({exc})", file=sys.stderr)
    header = ["cell", "scenario", "gains", "variant", "ic_scale",
              "settling_time", "overshoot", "mean_event_interval",
              "event_count", "final_consensus_error"]
    with open(outdir / "comparison.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[h]) for h in header) + "\n")
    print(f"sweep: {len(rows)} cells ok, {len(failures)} failed -> "
          f"{outdir / 'comparison.csv'}")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridbess",
        description="Microgrid BESS secondary-control simulator")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write artifacts")
    p_run.add_argument("scenario", help="path or bundled name "
                       f"({', '.join(bundled_scenarios())})")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--variant", choices=sorted(VARIANT_ALIASES))
    p_run.add_argument("--scale-ic", type=float, default=None)
    p_run.add_argument("--dt", type=float, default=None)
    p_run.add_argument("--no-figures", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="cross product of scenarios x "
                             "gains x variants x IC scales")
    p_sweep.add_argument("scenarios", nargs="*")
    p_sweep.add_argument("--gains", default=None,
                         help="comma list from " + ",".join(sorted(GAIN_SETS)))
    p_sweep.add_argument("--variants", default=None,
                         help="comma list, e.g. proposed,finite,asymptotic")
    p_sweep.add_argument("--scales", default=None, help="comma list of floats")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--no-figures", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("check", help="validate a scenario and print "
                             "the gain feasibility report")
    p_check.add_argument("scenario")
    p_check.set_defaults(func=cmd_check)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
