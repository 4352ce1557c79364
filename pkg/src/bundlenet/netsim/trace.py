"""Run trace serialization: one line per event, space delimited.

The trace holds the deterministic portion of a run (flow records,
queue-delay samples, mode transitions, throughput buckets, counters);
derived metadata is recomputed on read.  Floats use repr so the file
round-trips exactly and identical runs produce identical bytes.
"""

from __future__ import annotations

from .runner import RunResult, mode_fractions

TRACE_HEADER = "# bundlenet-trace v1"


class TraceError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_trace(path, result: RunResult) -> None:
    with open(path, "w") as f:
        f.write(TRACE_HEADER + "\n")
        f.write(f"run {result.scenario_name} {result.seed} "
                f"{_fmt(result.t_end)}\n")
        for tag, recs in (("flow", result.records),
                          ("xflow", result.cross_records)):
            for r in recs:
                f.write(f"{tag} {r.flow_id} {r.bundle_id} {r.size_bytes} "
                        f"{_fmt(r.t_start)} {_fmt(r.t_end)} "
                        f"{r.prio_class} {r.cc}\n")
        for t, site, delay in result.qdelay_rows:
            f.write(f"qdelay {_fmt(t)} {site} {_fmt(delay)}\n")
        for t, bid, mode in result.mode_events:
            f.write(f"mode {_fmt(t)} {bid} {mode}\n")
        for t, key, nbytes in result.tput_rows:
            f.write(f"tput {_fmt(t)} {key} {nbytes}\n")
        for name in sorted(result.counters):
            f.write(f"counter {name} {result.counters[name]}\n")


def read_trace(path) -> RunResult:
    from ..workload import FlowRecord

    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != TRACE_HEADER:
            raise TraceError(f"not a trace file (header {header!r})")
        res = None
        for lineno, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "run":
                    res = RunResult(parts[1], int(parts[2]), float(parts[3]))
                elif res is None:
                    raise TraceError("record before run line")
                elif tag in ("flow", "xflow"):
                    rec = FlowRecord(parts[1], int(parts[2]), int(parts[3]),
                                     float(parts[4]), float(parts[5]),
                                     prio_class=int(parts[6]), cc=parts[7])
                    (res.records if tag == "flow"
                     else res.cross_records).append(rec)
                elif tag == "qdelay":
                    res.qdelay_rows.append(
                        (float(parts[1]), parts[2], float(parts[3])))
                elif tag == "mode":
                    res.mode_events.append(
                        (float(parts[1]), int(parts[2]), parts[3]))
                elif tag == "tput":
                    res.tput_rows.append(
                        (float(parts[1]), parts[2], int(parts[3])))
                elif tag == "counter":
                    res.counters[parts[1]] = int(parts[2])
                else:
                    raise TraceError(f"unknown record type {tag!r}")
            except (IndexError, ValueError) as exc:
                raise TraceError(f"{path}:{lineno}: {exc}") from exc
    if res is None:
        raise TraceError(f"{path}: empty trace")
    res.mode_fractions = mode_fractions(res.mode_events, res.t_end)
    return res
