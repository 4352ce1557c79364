"""Command line front end: run scenarios, list presets, build reports.

Layout under the output root (``--out`` or ``$BUNDLENET_OUT``, default
``./out``)::

    <out>/<preset>/<scenario>/<seed>/trace.txt   full run trace
    <out>/<preset>/<scenario>/<seed>/qdelay.csv  queue-delay series
    <out>/<preset>/<scenario>/<seed>/done        completion marker
    <out>/<preset>/summary.csv                   aggregated metrics

A run directory with a ``done`` marker is never re-run or overwritten;
delete the directory to force a redo.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .scenarios import (PRESETS, Scenario, ScenarioError, load_scenario_file,
                        preset_scenarios, apply_overrides)
from .netsim import run_scenario, unloaded_reference
from .netsim.trace import write_trace
from .workload import BANDS, band_of, percentile, slowdown

SUMMARY_HEADER = "# bundlenet-summary v1"
SUMMARY_COLUMNS = ["scenario", "seed", "band", "p50_slowdown",
                   "p99_slowdown", "throughput", "mode_fractions"]


def _parse_seeds(text: str) -> list[int]:
    """'3' means seeds 1..3; '2,5,9' means exactly those."""
    try:
        if "," in text:
            seeds = [int(tok) for tok in text.split(",") if tok]
        else:
            seeds = list(range(1, int(text) + 1))
    except ValueError:
        raise ScenarioError(f"--seeds {text!r}: expected N or a,b,c")
    if not seeds:
        raise ScenarioError(f"--seeds {text!r}: empty seed list")
    return seeds


def _fmt_fractions(fracs: dict) -> str:
    """{1: {'delay': 0.9, ...}} -> 'b1=delay:0.900+competitive:0.100'."""
    parts = []
    for bid in sorted(fracs):
        inner = "+".join(f"{mode}:{frac:.3f}"
                         for mode, frac in sorted(fracs[bid].items()) if frac)
        parts.append(f"b{bid}={inner or 'none'}")
    return "|".join(parts) or "-"


def _slowdown_rows(scenario, result, records, label):
    """Summary rows for one record set: one row per size band."""
    ref = unloaded_reference(scenario.topology)
    by_band = {b: [] for b in BANDS}
    for r in records:
        if r.t_end is None:
            continue
        s = slowdown(r.fct, ref(r))
        by_band[band_of(r.size_bytes)].append(s)
        by_band["all"].append(s)
    tput = result.meta["throughput_bps"]
    if label == result.scenario_name:
        bits = sum(v for k, v in tput.items() if k.startswith("b"))
    else:
        bits = tput.get(label.rsplit(".", 1)[-1], 0.0)
    fr = _fmt_fractions(result.mode_fractions)
    rows = []
    for band in BANDS:
        vals = sorted(by_band[band])
        p50 = percentile(vals, 50) if vals else ""
        p99 = percentile(vals, 99) if vals else ""
        rows.append([label, result.seed, band,
                     f"{p50:.4f}" if vals else "", f"{p99:.4f}" if vals else "",
                     f"{bits / 1e6:.3f}", fr])
    return rows


def summary_rows(scenario, result) -> list[list]:
    """All summary rows for a finished run.

    Multi-bundle scenarios emit extra per-bundle rows named
    '<scenario>.b<id>' so reports can compare bundles individually.
    """
    rows = _slowdown_rows(scenario, result, result.records,
                          result.scenario_name)
    bids = sorted({b.bundle_id for b in scenario.bundles})
    if len(bids) > 1:
        for bid in bids:
            recs = [r for r in result.records if r.bundle_id == bid]
            rows += _slowdown_rows(scenario, result, recs,
                                   f"{result.scenario_name}.b{bid}")
    return rows


def _write_qdelay(path, result) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_s", "site", "delay_ms"])
        for t, site, delay in result.qdelay_rows:
            w.writerow([f"{t:.4f}", site, f"{delay * 1e3:.4f}"])


def _run_one(scenario, seed: int, run_dir: str) -> list[list]:
    done = os.path.join(run_dir, "done")
    trace = os.path.join(run_dir, "trace.txt")
    if os.path.exists(done):
        from .netsim.trace import read_trace
        return summary_rows(scenario, read_trace(trace))
    os.makedirs(run_dir, exist_ok=True)
    result = run_scenario(scenario, seed)
    write_trace(trace, result)
    _write_qdelay(os.path.join(run_dir, "qdelay.csv"), result)
    rows = summary_rows(scenario, result)
    with open(done, "w") as f:
        f.write("ok\n")
    return rows


def cmd_run(args) -> int:
    if bool(args.preset) == bool(args.config):
        print("run: give exactly one of --preset or a config file",
              file=sys.stderr)
        return 2
    try:
        if args.preset:
            name = args.preset
            scenarios = preset_scenarios(name, overrides=args.set or None)
        else:
            name = os.path.splitext(os.path.basename(args.config))[0]
            scenarios = [load_scenario_file(args.config,
                                            overrides=args.set or None)]
        seeds = _parse_seeds(args.seeds)
    except ScenarioError as exc:
        print(f"run: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"run: {exc}", file=sys.stderr)
        return 2

    out_root = os.path.join(args.out, name)
    os.makedirs(out_root, exist_ok=True)
    jobs = [(sc, seed, os.path.join(out_root, sc.name, str(seed)))
            for sc in scenarios for seed in seeds]
    all_rows = []
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_run_one, sc, seed, d) for sc, seed, d in jobs]
            for fut in futs:
                all_rows += fut.result()
    else:
        for sc, seed, d in jobs:
            print(f"running {sc.name} seed {seed} ...", flush=True)
            all_rows += _run_one(sc, seed, d)

    summary = os.path.join(out_root, "summary.csv")
    with open(summary, "w", newline="") as f:
        f.write(SUMMARY_HEADER + "\n")
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(all_rows)
    print(f"wrote {summary}")
    return 0


def cmd_presets(args) -> int:
    for name in sorted(PRESETS):
        scens = preset_scenarios(name)
        variants = ", ".join(s.name for s in scens[:6])
        if len(scens) > 6:
            variants += f", ... ({len(scens)} total)"
        print(f"{name:20s} {variants}")
    return 0


def cmd_report(args) -> int:
    from .report import build_report, ReportError
    try:
        build_report(args.summaries, args.out)
    except ReportError as exc:
        print(f"report: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="bundlenet",
        description="run aggregate traffic-control experiments")
    default_out = os.environ.get("BUNDLENET_OUT", "out")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a preset or a scenario config")
    p.add_argument("config", nargs="?", help="scenario YAML file")
    p.add_argument("--preset", help="preset id (see 'presets')")
    p.add_argument("--seeds", default="1", help="N for 1..N, or a,b,c")
    p.add_argument("--out", default=default_out, help="output root")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario field (dotted path)")
    p.add_argument("--jobs", type=int, default=1,
                   help="run up to this many seeds in parallel")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("presets", help="list shipped presets")
    p.set_defaults(fn=cmd_presets)

    p = sub.add_parser("report", help="summarize one or more summary.csv")
    p.add_argument("summaries", nargs="+", help="summary.csv paths")
    p.add_argument("--out", default=default_out, help="report output dir")
    p.set_defaults(fn=cmd_report)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
