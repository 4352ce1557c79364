"""Scenario schema and the shipped experiment presets.

A Scenario is a declarative description of one simulation run: the
bottleneck topology, traffic aggregates (bundles), closed-loop request
workloads, cross traffic, and sampling knobs.  Scenarios round-trip
through plain dicts (and therefore YAML config files) and validate
up front, so a bad config fails with a field path instead of a
mid-run stack trace.

Preset groups mirror the headline experiments; each preset expands to
an ordered list of Scenarios that share seeds so paired comparisons
(same request sequence, different network) are meaningful.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .netsim.links import PathSpec

MTU_BYTES = 1500

DISCIPLINES = ("droptail", "fq")
BALANCERS = ("flow", "packet")
SCHEDULERS = ("fifo", "sfq", "prio", "fqcodel")
CONTROLLERS = ("copa", "basicdelay", "bbr")  # bbr: recognized, unsupported
ENDHOST_CCS = ("cubic", "reno", "fixed")
CROSS_KINDS = ("short_flows", "buffer_filling")

# Closed-loop workload sizing.  Offered load is roughly
# slots * mean_request_bits / (think + FCT); the think time is long
# relative to typical FCTs so congestion feedback moves the offered
# load only weakly, like a large population of mostly-idle users.
# Slot counts are tuned per target load for the 96 Mbps / 50 ms
# topology with the shipped size distribution.
THINK_S = 1.0
SLOTS_84M = 900
SLOTS_48M = 400
SLOTS_42M = 350
SLOTS_56M = 470
SLOTS_28M = 230


class ScenarioError(ValueError):
    """Configuration rejected before the run starts."""


def _check_fields(cls, d, path):
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: expected a mapping, got {type(d).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ScenarioError(f"{path}: unknown field(s): {', '.join(unknown)}")


def _require(cond, msg):
    if not cond:
        raise ScenarioError(msg)


@dataclass
class TopologySpec:
    """Site-to-site bottleneck.  rtt_s is the two-way propagation time;
    n_paths > 1 splits the bandwidth over parallel paths with delays
    spread over [0.5, 1.5] times the nominal one-way delay."""

    bandwidth_bps: float = 96e6
    rtt_s: float = 0.05
    buffer_pkts: int | None = None  # None resolves to 2x BDP
    discipline: str = "droptail"
    n_paths: int = 1
    balancer: str = "flow"
    reverse_bandwidth_bps: float | None = None

    def bdp_pkts(self) -> int:
        return max(1, round(self.bandwidth_bps * self.rtt_s / (8.0 * MTU_BYTES)))

    def resolved_buffer_pkts(self) -> int:
        if self.buffer_pkts is not None:
            return self.buffer_pkts
        return 2 * self.bdp_pkts()

    def forward_paths(self) -> list[PathSpec]:
        n = self.n_paths
        one_way = self.rtt_s / 2.0
        if n == 1:
            mults = [1.0]
        else:
            mults = [0.5 + i / (n - 1) for i in range(n)]
        per_path_buf = max(16, round(self.resolved_buffer_pkts() / n))
        return [PathSpec(self.bandwidth_bps / n, one_way * m, per_path_buf)
                for m in mults]

    def reverse_path(self) -> PathSpec:
        bw = self.reverse_bandwidth_bps
        if bw is None:
            bw = self.bandwidth_bps
        return PathSpec(bw, self.rtt_s / 2.0, self.resolved_buffer_pkts())

    def validate(self, path="topology"):
        _require(self.bandwidth_bps > 0, f"{path}.bandwidth_bps must be > 0")
        _require(self.rtt_s > 0, f"{path}.rtt_s must be > 0")
        _require(self.buffer_pkts is None or self.buffer_pkts >= 1,
                 f"{path}.buffer_pkts must be >= 1 or null")
        _require(self.discipline in DISCIPLINES,
                 f"{path}.discipline must be one of {DISCIPLINES}")
        _require(self.n_paths >= 1, f"{path}.n_paths must be >= 1")
        _require(self.balancer in BALANCERS,
                 f"{path}.balancer must be one of {BALANCERS}")
        _require(self.reverse_bandwidth_bps is None or
                 self.reverse_bandwidth_bps > 0,
                 f"{path}.reverse_bandwidth_bps must be > 0 or null")

    @classmethod
    def from_dict(cls, d, path="topology"):
        _check_fields(cls, d, path)
        return cls(**d)


@dataclass
class BundleDef:
    """One traffic aggregate between a source and destination prefix."""

    bundle_id: int
    src_net: str = "10.1.0.0/16"
    dst_net: str = "10.2.0.0/16"
    scheduler: str = "sfq"
    controller: str = "copa"
    # sized to the default topology buffer (2x BDP at 96 Mbps / 50 ms):
    # moving the queue into the sendbox should not also shrink it
    buffer_pkts: int | None = 800

    def validate(self, path="bundles[]"):
        _require(self.bundle_id >= 0, f"{path}.bundle_id must be >= 0")
        _require(self.scheduler in SCHEDULERS,
                 f"{path}.scheduler must be one of {SCHEDULERS}")
        _require(self.controller in CONTROLLERS,
                 f"{path}.controller must be one of {CONTROLLERS}")
        if self.controller == "bbr":
            raise ScenarioError(
                f"{path}.controller: 'bbr' is recognized but not supported; "
                "use 'copa' or 'basicdelay'")
        _require(self.buffer_pkts is None or self.buffer_pkts >= 1,
                 f"{path}.buffer_pkts must be >= 1 or null")

    @classmethod
    def from_dict(cls, d, path="bundles[]"):
        _check_fields(cls, d, path)
        return cls(**d)


@dataclass
class WorkloadDef:
    """Closed-loop request workload inside one bundle: `slots` logical
    servers, each with one outstanding request and an exponential think
    time between requests.  backlogged_flows adds persistent senders on
    top of the request loop."""

    bundle: int = 1
    n_requests: int = 100_000
    slots: int = SLOTS_84M
    think_mean_s: float = THINK_S
    cc: str = "cubic"
    fixed_window_pkts: int = 450
    prio_split: bool = False
    backlogged_flows: int = 0
    backlogged_cc: str = "cubic"
    cdf_file: str | None = None

    def validate(self, path="workloads[]"):
        _require(self.n_requests >= 0, f"{path}.n_requests must be >= 0")
        _require(self.slots >= 1, f"{path}.slots must be >= 1")
        _require(self.think_mean_s >= 0, f"{path}.think_mean_s must be >= 0")
        _require(self.cc in ENDHOST_CCS, f"{path}.cc must be one of {ENDHOST_CCS}")
        _require(self.fixed_window_pkts >= 1,
                 f"{path}.fixed_window_pkts must be >= 1")
        _require(self.backlogged_flows >= 0,
                 f"{path}.backlogged_flows must be >= 0")
        _require(self.backlogged_cc in ENDHOST_CCS,
                 f"{path}.backlogged_cc must be one of {ENDHOST_CCS}")

    @classmethod
    def from_dict(cls, d, path="workloads[]"):
        _check_fields(cls, d, path)
        return cls(**d)


@dataclass
class CrossDef:
    """Unbundled cross traffic sharing the bottleneck.  short_flows is
    a Poisson stream of CDF-sized flows at load_bps; buffer_filling is
    n_flows persistent senders."""

    kind: str = "short_flows"
    load_bps: float = 0.0
    n_flows: int = 1
    cc: str = "cubic"
    start_s: float = 0.0
    stop_s: float | None = None

    def validate(self, path="cross[]"):
        _require(self.kind in CROSS_KINDS,
                 f"{path}.kind must be one of {CROSS_KINDS}")
        _require(self.load_bps >= 0, f"{path}.load_bps must be >= 0")
        _require(self.n_flows >= 1, f"{path}.n_flows must be >= 1")
        _require(self.cc in ENDHOST_CCS, f"{path}.cc must be one of {ENDHOST_CCS}")
        _require(self.start_s >= 0, f"{path}.start_s must be >= 0")
        _require(self.stop_s is None or self.stop_s > self.start_s,
                 f"{path}.stop_s must be > start_s or null")

    @classmethod
    def from_dict(cls, d, path="cross[]"):
        _check_fields(cls, d, path)
        return cls(**d)


@dataclass
class BandwidthEvent:
    """Scheduled capacity change; path=None rescales every path."""

    t_s: float
    bandwidth_bps: float
    path: int | None = None

    def validate(self, path="events[]"):
        _require(self.t_s >= 0, f"{path}.t_s must be >= 0")
        _require(self.bandwidth_bps > 0, f"{path}.bandwidth_bps must be > 0")

    @classmethod
    def from_dict(cls, d, path="events[]"):
        _check_fields(cls, d, path)
        return cls(**d)


@dataclass
class Scenario:
    name: str
    duration_s: float
    topology: TopologySpec = field(default_factory=TopologySpec)
    bundles: list[BundleDef] = field(default_factory=lambda: [BundleDef(1)])
    workloads: list[WorkloadDef] = field(default_factory=list)
    cross: list[CrossDef] = field(default_factory=list)
    events: list[BandwidthEvent] = field(default_factory=list)
    bundler_enabled: bool = True
    fidelity: bool = False
    qdelay_sample_s: float = 0.05
    tput_bucket_s: float = 0.1
    bootstrap_rate_bps: float | None = None  # None: 10x bottleneck

    def validate(self):
        _require(bool(self.name), "name must be nonempty")
        _require(all(c.isalnum() or c in "-_." for c in self.name),
                 "name must contain only alphanumerics, '-', '_', '.'")
        _require(self.duration_s > 0, "duration_s must be > 0")
        self.topology.validate()
        _require(len(self.bundles) >= 1, "at least one bundle is required")
        ids = [b.bundle_id for b in self.bundles]
        _require(len(set(ids)) == len(ids), "bundle_id values must be unique")
        for i, b in enumerate(self.bundles):
            b.validate(f"bundles[{i}]")
        for i, w in enumerate(self.workloads):
            w.validate(f"workloads[{i}]")
            _require(w.bundle in ids,
                     f"workloads[{i}].bundle {w.bundle} has no matching bundle")
        for i, c in enumerate(self.cross):
            c.validate(f"cross[{i}]")
            _require(c.stop_s is None or c.stop_s <= self.duration_s,
                     f"cross[{i}].stop_s exceeds duration_s")
        for i, e in enumerate(self.events):
            e.validate(f"events[{i}]")
        _require(self.qdelay_sample_s > 0, "qdelay_sample_s must be > 0")
        _require(self.tput_bucket_s > 0, "tput_bucket_s must be > 0")
        _require(self.bootstrap_rate_bps is None or self.bootstrap_rate_bps > 0,
                 "bootstrap_rate_bps must be > 0 or null")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        _check_fields(cls, d, "scenario")
        d = dict(d)
        if "topology" in d:
            d["topology"] = TopologySpec.from_dict(d["topology"])
        d["bundles"] = [BundleDef.from_dict(b, f"bundles[{i}]")
                        for i, b in enumerate(d.get("bundles", [{"bundle_id": 1}]))]
        d["workloads"] = [WorkloadDef.from_dict(w, f"workloads[{i}]")
                          for i, w in enumerate(d.get("workloads", []))]
        d["cross"] = [CrossDef.from_dict(c, f"cross[{i}]")
                      for i, c in enumerate(d.get("cross", []))]
        d["events"] = [BandwidthEvent.from_dict(e, f"events[{i}]")
                       for i, e in enumerate(d.get("events", []))]
        try:
            sc = cls(**d)
        except TypeError as exc:
            raise ScenarioError(f"scenario: {exc}") from None
        return sc.validate()


def load_scenario_file(path, overrides=None) -> Scenario:
    with open(path) as f:
        try:
            d = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: config must be a mapping")
    if overrides:
        d = apply_overrides(d, overrides)
    return Scenario.from_dict(d)


def scenario_to_yaml(sc: Scenario) -> str:
    return yaml.safe_dump(sc.to_dict(), sort_keys=False)


def apply_overrides(d: dict, overrides) -> dict:
    """Apply `a.b.0.c=value` style overrides to a scenario dict; values
    parse as YAML scalars so numbers and booleans come through typed."""
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        tokens = key.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        node = d
        for i, tok in enumerate(tokens[:-1]):
            node = _descend(node, tok, ".".join(tokens[:i + 1]))
        last = tokens[-1]
        if isinstance(node, list):
            node[_index(last, key)] = value
        elif isinstance(node, dict):
            node[last] = value
        else:
            raise ScenarioError(f"override {key!r}: cannot set field on scalar")
    return d


def _index(tok, path):
    try:
        return int(tok)
    except ValueError:
        raise ScenarioError(f"override {path!r}: {tok!r} is not a list index") \
            from None


def _descend(node, tok, path):
    if isinstance(node, list):
        i = _index(tok, path)
        try:
            return node[i]
        except IndexError:
            raise ScenarioError(f"override {path!r}: index out of range") from None
    if isinstance(node, dict):
        if tok not in node:
            raise ScenarioError(f"override {path!r}: no such field")
        return node[tok]
    raise ScenarioError(f"override {path!r}: cannot descend into scalar")


# ---------------------------------------------------------------------------
# Presets


def _bundle(bid=1, src="10.1.0.0/16", dst="10.2.0.0/16", **kw) -> BundleDef:
    return BundleDef(bundle_id=bid, src_net=src, dst_net=dst, **kw)


def _preset_queueshift():
    # Single backlogged flow through the bundle: shows the standing
    # queue moving from the bottleneck into the sendbox.
    return [Scenario(
        name="bundler", duration_s=30.0, topology=TopologySpec(),
        bundles=[_bundle()],
        workloads=[WorkloadDef(bundle=1, n_requests=0, backlogged_flows=1)],
    )]


def _fct_scenario(name, *, bundler, scheduler="sfq", discipline="droptail",
                  n_requests=100_000, duration=170.0, controller="copa",
                  fidelity=False):
    return Scenario(
        name=name, duration_s=duration,
        topology=TopologySpec(discipline=discipline),
        bundles=[_bundle(scheduler=scheduler, controller=controller)],
        workloads=[WorkloadDef(bundle=1, n_requests=n_requests,
                               slots=SLOTS_84M, think_mean_s=THINK_S)],
        bundler_enabled=bundler,
        fidelity=fidelity,
    )


def _preset_fct():
    return [
        _fct_scenario("statusquo", bundler=False),
        _fct_scenario("bundler_sfq", bundler=True, scheduler="sfq",
                      fidelity=True),
        _fct_scenario("bundler_fifo", bundler=True, scheduler="fifo"),
        _fct_scenario("innetwork", bundler=False, discipline="fq"),
    ]


def _preset_crosstraffic():
    # Three phases: alone / against a buffer-filling flow / against
    # short-flow cross traffic.  The workload never exhausts; the run
    # is duration-bound.
    # two elephants rather than one: their drop episodes interleave, so
    # the pulse response recurs every few seconds instead of once per
    # full sawtooth and the competitive verdict holds through the phase
    cross = [
        CrossDef(kind="buffer_filling", n_flows=2, start_s=60.0, stop_s=120.0),
        CrossDef(kind="short_flows", load_bps=24e6, start_s=120.0, stop_s=180.0),
    ]
    mk = lambda name, bundler: Scenario(
        name=name, duration_s=180.0, topology=TopologySpec(),
        bundles=[_bundle()],
        workloads=[WorkloadDef(bundle=1, n_requests=400_000,
                               slots=SLOTS_84M, think_mean_s=THINK_S)],
        cross=[dataclasses.replace(c) for c in cross],
        bundler_enabled=bundler,
    )
    return [mk("bundler", True), mk("statusquo", False)]


def _preset_shortflows():
    mk = lambda name, bundler: Scenario(
        name=name, duration_s=90.0, topology=TopologySpec(),
        bundles=[_bundle()],
        workloads=[WorkloadDef(bundle=1, n_requests=150_000,
                               slots=SLOTS_48M, think_mean_s=THINK_S)],
        cross=[CrossDef(kind="short_flows", load_bps=24e6, start_s=30.0,
                        stop_s=90.0)],
        bundler_enabled=bundler,
    )
    return [mk("bundler", True), mk("statusquo", False)]


def _preset_bufferfilling():
    mk = lambda name, bundler: Scenario(
        name=name, duration_s=90.0, topology=TopologySpec(),
        bundles=[_bundle()],
        workloads=[WorkloadDef(bundle=1, n_requests=150_000,
                               slots=SLOTS_84M, think_mean_s=THINK_S)],
        cross=[CrossDef(kind="buffer_filling", n_flows=1, start_s=30.0)],
        bundler_enabled=bundler,
    )
    return [mk("bundler", True), mk("statusquo", False)]


def _two_bundle_scenario(name, *, bundler, slots_a, slots_b, n_a, n_b):
    return Scenario(
        name=name, duration_s=120.0, topology=TopologySpec(),
        bundles=[
            _bundle(1, "10.1.0.0/16", "10.2.0.0/16"),
            _bundle(2, "10.3.0.0/16", "10.2.0.0/16"),
        ],
        workloads=[
            WorkloadDef(bundle=1, n_requests=n_a, slots=slots_a,
                        think_mean_s=THINK_S),
            WorkloadDef(bundle=2, n_requests=n_b, slots=slots_b,
                        think_mean_s=THINK_S),
        ],
        bundler_enabled=bundler,
    )


def _preset_twobundles():
    return [
        _two_bundle_scenario("bundler_1to1", bundler=True,
                             slots_a=SLOTS_42M, slots_b=SLOTS_42M,
                             n_a=35_000, n_b=35_000),
        _two_bundle_scenario("bundler_2to1", bundler=True,
                             slots_a=SLOTS_56M, slots_b=SLOTS_28M,
                             n_a=45_000, n_b=25_000),
        _two_bundle_scenario("statusquo_1to1", bundler=False,
                             slots_a=SLOTS_42M, slots_b=SLOTS_42M,
                             n_a=35_000, n_b=35_000),
        _two_bundle_scenario("statusquo_2to1", bundler=False,
                             slots_a=SLOTS_56M, slots_b=SLOTS_28M,
                             n_a=45_000, n_b=25_000),
    ]


def _preset_cc_variants():
    return [
        _fct_scenario("copa", bundler=True, n_requests=60_000, duration=110.0),
        _fct_scenario("basicdelay", bundler=True, controller="basicdelay",
                      n_requests=60_000, duration=110.0),
        _fct_scenario("statusquo", bundler=False, n_requests=60_000,
                      duration=110.0),
    ]


def _preset_proxy():
    cubic = Scenario(
        name="bundler_cubic", duration_s=110.0, topology=TopologySpec(),
        bundles=[_bundle()],
        workloads=[WorkloadDef(bundle=1, n_requests=60_000,
                               slots=SLOTS_84M, think_mean_s=THINK_S)],
    )
    proxy = Scenario(
        name="proxy_fixedwin", duration_s=110.0, topology=TopologySpec(),
        bundles=[_bundle(buffer_pkts=None)],
        workloads=[WorkloadDef(bundle=1, n_requests=60_000,
                               slots=SLOTS_84M, think_mean_s=THINK_S,
                               cc="fixed")],
    )
    return [cubic, proxy]


def _preset_multipath():
    out = []
    for n in (1, 2, 4, 8):
        for bw in (24e6, 96e6):
            for rtt in (0.02, 0.1):
                out.append(Scenario(
                    name=f"paths{n}_bw{int(bw / 1e6)}_rtt{int(rtt * 1000)}",
                    duration_s=15.0,
                    topology=TopologySpec(bandwidth_bps=bw, rtt_s=rtt,
                                          n_paths=n, balancer="packet"),
                    bundles=[_bundle()],
                    workloads=[WorkloadDef(bundle=1, n_requests=0,
                                           backlogged_flows=2)],
                ))
    return out


PRESETS = {
    "fig2-queueshift": _preset_queueshift,
    "fig6-fct": _preset_fct,
    "fig7-crosstraffic": _preset_crosstraffic,
    "fig9-shortflows": _preset_shortflows,
    "fig9-bufferfilling": _preset_bufferfilling,
    "fig10-twobundles": _preset_twobundles,
    "fig8-cc-variants": _preset_cc_variants,
    "proxy-idealized": _preset_proxy,
    "multipath-sweep": _preset_multipath,
}

PRESET_NOTES = {
    "fig2-queueshift": "single backlogged flow; queueing shifts to the sendbox",
    "fig6-fct": "request workload FCT: statusquo vs bundler (sfq/fifo) vs in-network fq",
    "fig7-crosstraffic": "three-phase cross traffic; controller mode transitions",
    "fig9-shortflows": "bundle against short-flow (inelastic) cross traffic",
    "fig9-bufferfilling": "bundle against a persistent buffer-filling flow",
    "fig10-twobundles": "two bundles at 1:1 and 2:1 load splits",
    "fig8-cc-variants": "aggregate controller variants (copa, basicdelay)",
    "proxy-idealized": "fixed-window endpoints vs standard endpoints",
    "multipath-sweep": "reordering heuristic across path counts, rates, RTTs",
}


def preset_scenarios(preset_id: str, overrides=None) -> list[Scenario]:
    try:
        factory = PRESETS[preset_id]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ScenarioError(f"unknown preset {preset_id!r}; known: {known}") \
            from None
    scenarios = factory()
    if overrides:
        # overrides hit every variant; per-variant tweaks go via a config
        scenarios = [Scenario.from_dict(apply_overrides(sc.to_dict(), overrides))
                     for sc in scenarios]
    for sc in scenarios:
        sc.validate()
    return scenarios
