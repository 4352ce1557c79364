"""Report builder: merge summary.csv files, diff variants, emit plot data.

Outputs under the report directory:

    report.txt       aggregate table plus baseline deltas (also printed)
    slowdowns.csv    per-scenario/band medians across seeds
    deltas.csv       percentage change vs the status-quo baseline
    slowdowns.png    grouped bar chart of the same numbers
    qdelay_mean.csv / qdelay.png   only when per-run qdelay.csv files are
                     found next to a summary (queue-location figures)

Scenarios named ``statusquo`` (or ``statusquo.<suffix>`` for per-bundle
rows) act as the comparison baseline for variants sharing the suffix.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

SUMMARY_HEADER = "# bundlenet-summary v1"
SUMMARY_COLUMNS = ["scenario", "seed", "band", "p50_slowdown",
                   "p99_slowdown", "throughput", "mode_fractions"]
BAND_ORDER = ["small", "medium", "large", "all"]


class ReportError(ValueError):
    pass


def _median(vals):
    vals = sorted(vals)
    n = len(vals)
    if not n:
        return None
    mid = n // 2
    return vals[mid] if n % 2 else 0.5 * (vals[mid - 1] + vals[mid])


def read_summary(path) -> list[dict]:
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise ReportError(str(exc)) from None
    with f:
        first = f.readline().rstrip("\n")
        if first != SUMMARY_HEADER:
            raise ReportError(
                f"{path}: unknown summary schema {first!r}; "
                f"expected {SUMMARY_HEADER!r}")
        reader = csv.DictReader(f)
        if reader.fieldnames != SUMMARY_COLUMNS:
            raise ReportError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for row in reader:
            row["_src"] = path
            rows.append(row)
    return rows


def merge_rows(row_lists) -> list[dict]:
    """Concatenate summaries; identical rows dedupe, conflicting rows
    (same scenario/seed/band, different numbers) are refused."""
    seen = {}
    for rows in row_lists:
        for row in rows:
            key = (row["scenario"], row["seed"], row["band"])
            body = (row["p50_slowdown"], row["p99_slowdown"],
                    row["throughput"], row["mode_fractions"])
            if key in seen:
                prev_body, prev_src = seen[key]
                if prev_body != body:
                    raise ReportError(
                        f"conflicting rows for scenario={key[0]} seed={key[1]} "
                        f"band={key[2]} between {prev_src} and {row['_src']}; "
                        "refusing to diff mismatched runs")
            else:
                seen[key] = (body, row["_src"])
    return [{"scenario": k[0], "seed": k[1], "band": k[2],
             "p50_slowdown": b[0], "p99_slowdown": b[1],
             "throughput": b[2], "mode_fractions": b[3]}
            for k, (b, _) in sorted(seen.items())]


def aggregate(rows):
    """(scenario, band) -> dict of medians across seeds."""
    groups = defaultdict(list)
    for row in rows:
        groups[(row["scenario"], row["band"])].append(row)
    out = {}
    for key, grp in groups.items():
        p50s = [float(r["p50_slowdown"]) for r in grp if r["p50_slowdown"]]
        p99s = [float(r["p99_slowdown"]) for r in grp if r["p99_slowdown"]]
        tputs = [float(r["throughput"]) for r in grp if r["throughput"]]
        out[key] = {
            "seeds": len(grp),
            "p50": _median(p50s),
            "p99": _median(p99s),
            "throughput": _median(tputs),
            "modes": grp[0]["mode_fractions"],
        }
    return out


def _suffix(name: str) -> str:
    return name.split(".", 1)[1] if "." in name else ""


def _baseline_for(name: str, names) -> str | None:
    if name.split(".", 1)[0] == "statusquo":
        return None
    want = _suffix(name)
    for cand in names:
        if cand.split(".", 1)[0] == "statusquo" and _suffix(cand) == want:
            return cand
    return None


def deltas(agg):
    """Percentage reduction vs the matching status-quo baseline."""
    names = sorted({s for s, _ in agg})
    rows = []
    for (scen, band), cell in sorted(agg.items()):
        base_name = _baseline_for(scen, names)
        if base_name is None:
            continue
        base = agg.get((base_name, band))
        if not base:
            continue
        row = {"scenario": scen, "baseline": base_name, "band": band}
        for metric in ("p50", "p99"):
            b, v = base[metric], cell[metric]
            row[f"{metric}_change_pct"] = \
                None if not b or v is None else 100.0 * (v - b) / b
        rows.append(row)
    return rows


def _fmt(x, spec=".3f"):
    return "" if x is None else format(x, spec)


def _table(agg, delta_rows) -> str:
    lines = []
    lines.append(f"{'scenario':24s} {'band':7s} {'seeds':>5s} "
                 f"{'p50':>8s} {'p99':>9s} {'Mbit/s':>8s}  modes")
    for (scen, band), cell in sorted(
            agg.items(), key=lambda kv: (kv[0][0], BAND_ORDER.index(kv[0][1])
                                         if kv[0][1] in BAND_ORDER else 9)):
        lines.append(f"{scen:24s} {band:7s} {cell['seeds']:5d} "
                     f"{_fmt(cell['p50']):>8s} {_fmt(cell['p99']):>9s} "
                     f"{_fmt(cell['throughput'], '.1f'):>8s}  {cell['modes']}")
    if delta_rows:
        lines.append("")
        lines.append("change vs baseline (negative = lower slowdown):")
        lines.append(f"{'scenario':24s} {'band':7s} {'p50 %':>8s} {'p99 %':>8s}")
        for row in delta_rows:
            lines.append(f"{row['scenario']:24s} {row['band']:7s} "
                         f"{_fmt(row['p50_change_pct'], '+.1f'):>8s} "
                         f"{_fmt(row['p99_change_pct'], '+.1f'):>8s}")
    else:
        lines.append("")
        lines.append("no status-quo baseline present; table only, no deltas")
    return "\n".join(lines) + "\n"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _plot_slowdowns(path, agg) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scens = sorted({s for s, _ in agg})
    bands = [b for b in BAND_ORDER if any((s, b) in agg for s in scens)]
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    width = 0.8 / max(len(scens), 1)
    for ax, metric in zip(axes, ("p50", "p99")):
        for i, scen in enumerate(scens):
            xs = [j + i * width for j in range(len(bands))]
            ys = [(agg.get((scen, b)) or {}).get(metric) or 0.0 for b in bands]
            ax.bar(xs, ys, width=width, label=scen)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(bands))])
        ax.set_xticklabels(bands)
        ax.set_ylabel(f"{metric} slowdown")
        ax.grid(axis="y", alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _collect_qdelay(summary_paths):
    """Per-site mean queue delay over time, averaged across runs found
    next to the given summaries."""
    acc = defaultdict(lambda: defaultdict(list))  # scenario -> (t,site) -> ms
    for spath in summary_paths:
        root = os.path.dirname(os.path.abspath(spath))
        if not os.path.isdir(root):
            continue
        for scen in sorted(os.listdir(root)):
            sdir = os.path.join(root, scen)
            if not os.path.isdir(sdir):
                continue
            for seed in sorted(os.listdir(sdir)):
                q = os.path.join(sdir, seed, "qdelay.csv")
                if not os.path.isfile(q):
                    continue
                with open(q, newline="") as f:
                    reader = csv.DictReader(f)
                    for row in reader:
                        t = round(float(row["t_s"]), 1)
                        acc[scen][(t, row["site"])].append(
                            float(row["delay_ms"]))
    return acc


def _plot_qdelay(png_path, csv_path, acc) -> None:
    rows = []
    for scen in sorted(acc):
        for (t, site), vals in sorted(acc[scen].items()):
            rows.append([scen, f"{t:.1f}", site,
                         f"{sum(vals) / len(vals):.4f}"])
    _write_csv(csv_path, ["scenario", "t_s", "site", "mean_delay_ms"], rows)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scens = sorted(acc)
    fig, axes = plt.subplots(len(scens), 1, figsize=(9, 3.2 * len(scens)),
                             squeeze=False)
    for ax, scen in zip(axes[:, 0], scens):
        series = defaultdict(list)
        for (t, site), vals in sorted(acc[scen].items()):
            series[site].append((t, sum(vals) / len(vals)))
        for site, pts in sorted(series.items()):
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    label=site, linewidth=0.9)
        ax.set_title(scen, fontsize=9)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("queue delay (ms)")
        ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def build_report(summary_paths, out_dir) -> str:
    rows = merge_rows([read_summary(p) for p in summary_paths])
    if not rows:
        raise ReportError("no data rows in the given summaries")
    agg = aggregate(rows)
    delta_rows = deltas(agg)
    os.makedirs(out_dir, exist_ok=True)

    text = _table(agg, delta_rows)
    print(text, end="")
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(text)

    _write_csv(os.path.join(out_dir, "slowdowns.csv"),
               ["scenario", "band", "seeds", "p50_slowdown", "p99_slowdown",
                "throughput_mbps"],
               [[s, b, c["seeds"], _fmt(c["p50"], ".4f"),
                 _fmt(c["p99"], ".4f"), _fmt(c["throughput"], ".3f")]
                for (s, b), c in sorted(agg.items())])
    _write_csv(os.path.join(out_dir, "deltas.csv"),
               ["scenario", "baseline", "band", "p50_change_pct",
                "p99_change_pct"],
               [[r["scenario"], r["baseline"], r["band"],
                 _fmt(r["p50_change_pct"], ".2f"),
                 _fmt(r["p99_change_pct"], ".2f")] for r in delta_rows])
    _plot_slowdowns(os.path.join(out_dir, "slowdowns.png"), agg)

    acc = _collect_qdelay(summary_paths)
    if acc:
        _plot_qdelay(os.path.join(out_dir, "qdelay.png"),
                     os.path.join(out_dir, "qdelay_mean.csv"), acc)
    return text
