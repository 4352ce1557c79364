"""Edge middlebox logic: bundle classification, the feedback wire
format, and the send/receive box event handlers.

Both boxes are passive state machines.  A driver (the simulator, or a
test) delivers packet arrivals, feedback arrivals, and 10 ms timer
ticks, and forwards whatever the handlers return.  Packets are never
modified; the boxes only observe headers and pace departures.
"""

from __future__ import annotations

import ipaddress
import struct
from collections import Counter
from dataclasses import dataclass

from .datapath import Datapath
from .measurement import BundleMeasurement, CongestionAck, ReceiveCounter
from .ratecontrol import BundleController, ControllerMode, TICK_S

WIRE_MAGIC = 0x42554E44
WIRE_VERSION = 1
MSG_CONGESTION_ACK = 1
MSG_EPOCH_UPDATE = 2

_HDR = struct.Struct(">IBBI")
_ACK_PAYLOAD = struct.Struct(">QQ")
_EPOCH_PAYLOAD = struct.Struct(">Q")

FEEDBACK_WIRE_BYTES = 40  # modeled as a minimal UDP datagram


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class AckMsg:
    bundle_id: int
    pkt_hash: int
    bytes_rcvd_cum: int


@dataclass(frozen=True)
class EpochUpdateMsg:
    bundle_id: int
    sampling_period: int


def encode_feedback(msg) -> bytes:
    if isinstance(msg, AckMsg):
        return _HDR.pack(WIRE_MAGIC, WIRE_VERSION, MSG_CONGESTION_ACK,
                         msg.bundle_id) + \
            _ACK_PAYLOAD.pack(msg.pkt_hash, msg.bytes_rcvd_cum)
    if isinstance(msg, EpochUpdateMsg):
        return _HDR.pack(WIRE_MAGIC, WIRE_VERSION, MSG_EPOCH_UPDATE,
                         msg.bundle_id) + \
            _EPOCH_PAYLOAD.pack(msg.sampling_period)
    raise TypeError(f"not a feedback message: {msg!r}")


def decode_feedback(data: bytes):
    if len(data) < _HDR.size:
        raise WireError("short feedback message")
    magic, version, msg_type, bundle_id = _HDR.unpack_from(data)
    if magic != WIRE_MAGIC:
        raise WireError(f"bad magic {magic:#x}")
    if version != WIRE_VERSION:
        raise WireError(f"unsupported version {version}")
    payload = data[_HDR.size:]
    if msg_type == MSG_CONGESTION_ACK:
        if len(payload) != _ACK_PAYLOAD.size:
            raise WireError("bad ack payload length")
        pkt_hash, rcvd = _ACK_PAYLOAD.unpack(payload)
        return AckMsg(bundle_id, pkt_hash, rcvd)
    if msg_type == MSG_EPOCH_UPDATE:
        if len(payload) != _EPOCH_PAYLOAD.size:
            raise WireError("bad epoch payload length")
        return EpochUpdateMsg(bundle_id, _EPOCH_PAYLOAD.unpack(payload)[0])
    raise WireError(f"unknown msg type {msg_type}")


class BundleSpec:
    """Static membership: source and destination IPv4 prefix sets."""

    def __init__(self, bundle_id: int, src_nets, dst_nets):
        self.bundle_id = bundle_id
        self.src_nets = [ipaddress.ip_network(n) for n in src_nets]
        self.dst_nets = [ipaddress.ip_network(n) for n in dst_nets]
        self._src = [(int(n.network_address), n.prefixlen) for n in self.src_nets]
        self._dst = [(int(n.network_address), n.prefixlen) for n in self.dst_nets]

    @staticmethod
    def _contains(nets, addr: int) -> bool:
        for base, plen in nets:
            shift = 32 - plen
            if addr >> shift == base >> shift:
                return True
        return False

    def matches(self, src_addr: int, dst_addr: int) -> bool:
        return self._contains(self._src, src_addr) and \
            self._contains(self._dst, dst_addr)

    def overlaps(self, other: "BundleSpec") -> bool:
        src = any(a.overlaps(b) for a in self.src_nets for b in other.src_nets)
        dst = any(a.overlaps(b) for a in self.dst_nets for b in other.dst_nets)
        return src and dst


def validate_disjoint(specs) -> None:
    for i, a in enumerate(specs):
        for b in specs[i + 1:]:
            if a.overlaps(b):
                raise ValueError(
                    f"bundles {a.bundle_id} and {b.bundle_id} overlap; "
                    "a packet must map to at most one bundle")


@dataclass
class BundleConfig:
    spec: BundleSpec
    scheduler: str = "sfq"
    controller: str = "copa"
    buffer_pkts: int | None = 500  # None means unbounded


class _BundleState:
    def __init__(self, cfg: BundleConfig, bootstrap_rate_bps: float, t: float):
        self.cfg = cfg
        self.datapath = Datapath(cfg.scheduler, rate_bps=bootstrap_rate_bps,
                                 buffer_pkts=cfg.buffer_pkts, t=t)
        self.measurement = BundleMeasurement(sampling_period=1)
        self.controller = BundleController(cfg.controller)
        self.rate_bps = bootstrap_rate_bps
        self.last_decision = None


class Sendbox:
    """Send-side edge box.

    Handler ordering per event time: packet arrivals classify and
    enqueue; the pacing timer dequeues and records epoch boundaries at
    egress; feedback arrivals update measurement; the 10 ms tick runs
    the controller, applies the rate, and recomputes the sampling
    period (emitting an epoch update only when it changes).
    """

    def __init__(self, bundles, bootstrap_rate_bps: float = 1e9, t: float = 0.0):
        validate_disjoint([b.spec for b in bundles])
        self.bundles = {b.spec.bundle_id: _BundleState(b, bootstrap_rate_bps, t)
                        for b in bundles}
        self.bootstrap_rate_bps = bootstrap_rate_bps
        self.counters = Counter()
        self._classify_cache: dict[tuple[int, int], int | None] = {}
        self.tick_s = TICK_S
        self.signal_hook = None  # fn(ack_msg, signals, t)

    # -- data plane --------------------------------------------------

    def classify(self, src_addr: int, dst_addr: int) -> int | None:
        key = (src_addr, dst_addr)
        hit = self._classify_cache.get(key, -1)
        if hit != -1:
            return hit
        found = None
        for bid, st in self.bundles.items():
            if st.cfg.spec.matches(src_addr, dst_addr):
                found = bid
                break
        self._classify_cache[key] = found
        return found

    def on_packet(self, pkt, t):
        """Returns (bundle_id | None, dropped_packet | None).  A None
        bundle_id means the packet bypasses scheduling entirely."""
        bid = self.classify(pkt.src_addr, pkt.dst_addr)
        if bid is None:
            self.counters["bypass"] += 1
            return None, None
        dropped = self.bundles[bid].datapath.enqueue(pkt, t)
        if dropped is not None:
            self.counters["queue_drop"] += 1
        return bid, dropped

    def dequeue(self, bundle_id: int, t):
        """Returns (packet | None, codel_drops).  Egress is where the
        epoch boundary record and byte count are taken."""
        st = self.bundles[bundle_id]
        pkt = st.datapath.dequeue(t)
        drops = st.datapath.codel_drops()
        if pkt is not None:
            st.measurement.on_sent(pkt.ip_id, pkt.dst_addr, pkt.dst_port,
                                   pkt.wire_bytes, t)
        return pkt, drops

    def next_ready_s(self, bundle_id: int, t):
        return self.bundles[bundle_id].datapath.next_ready_s(t)

    # -- feedback plane ----------------------------------------------

    def on_feedback(self, data: bytes, t: float) -> None:
        try:
            msg = decode_feedback(data)
        except WireError:
            self.counters["feedback_bad"] += 1
            return
        if not isinstance(msg, AckMsg):
            self.counters["feedback_unexpected_type"] += 1
            return
        st = self.bundles.get(msg.bundle_id)
        if st is None:
            self.counters["feedback_unknown_bundle"] += 1
            return
        sig = st.measurement.on_ack(
            CongestionAck(msg.bundle_id, msg.pkt_hash, msg.bytes_rcvd_cum), t)
        if sig is not None and self.signal_hook is not None:
            self.signal_hook(msg, sig, t)

    # -- control plane -----------------------------------------------

    def tick(self, t: float):
        """Advance all controllers; returns [(bundle_id, epoch_update
        bytes)] for updates that must reach the receive box."""
        updates = []
        for bid, st in self.bundles.items():
            view = st.measurement.signals_view(t)
            decision = st.controller.tick(
                t, view, st.datapath.queue_delay(t),
                st.measurement.reordering.fraction,
                st.measurement.mean_pkt_size)
            st.last_decision = decision
            st.rate_bps = decision.rate_bps if decision.rate_bps is not None \
                else self.bootstrap_rate_bps
            st.datapath.set_rate(st.rate_bps, t)
            desired = st.measurement.desired_period()
            if desired is not None and desired != st.measurement.sampling_period:
                st.measurement.sampling_period = desired
                updates.append((bid, encode_feedback(EpochUpdateMsg(bid, desired))))
        return updates

    # -- introspection -----------------------------------------------

    def mode(self, bundle_id: int) -> ControllerMode:
        return self.bundles[bundle_id].controller.mode

    def queue_delay(self, bundle_id: int, t: float) -> float:
        return self.bundles[bundle_id].datapath.queue_delay(t)


class Receivebox:
    """Receive-side edge box: counts bundle bytes, acks epoch
    boundaries, and applies sampling-period updates."""

    def __init__(self, specs):
        validate_disjoint(list(specs))
        self.specs = {s.bundle_id: s for s in specs}
        self.counters = {bid: ReceiveCounter(bid) for bid in self.specs}
        self.diag = Counter()
        self._classify_cache: dict[tuple[int, int], int | None] = {}

    def classify(self, src_addr: int, dst_addr: int) -> int | None:
        key = (src_addr, dst_addr)
        hit = self._classify_cache.get(key, -1)
        if hit != -1:
            return hit
        found = None
        for bid, spec in self.specs.items():
            if spec.matches(src_addr, dst_addr):
                found = bid
                break
        self._classify_cache[key] = found
        return found

    def observe(self, pkt, t):
        """Returns (bundle_id | None, feedback bytes | None); feedback
        is present when this packet closes an epoch."""
        bid = self.classify(pkt.src_addr, pkt.dst_addr)
        if bid is None:
            self.diag["bypass"] += 1
            return None, None
        ack = self.counters[bid].on_packet(pkt.ip_id, pkt.dst_addr,
                                           pkt.dst_port, pkt.wire_bytes)
        if ack is None:
            return bid, None
        return bid, encode_feedback(AckMsg(ack.bundle_id, ack.pkt_hash,
                                           ack.bytes_rcvd_cum))

    def on_update(self, data: bytes, t: float) -> None:
        try:
            msg = decode_feedback(data)
        except WireError:
            self.diag["update_bad"] += 1
            return
        if not isinstance(msg, EpochUpdateMsg):
            self.diag["update_unexpected_type"] += 1
            return
        ctr = self.counters.get(msg.bundle_id)
        if ctr is None:
            self.diag["update_unknown_bundle"] += 1
            return
        ctr.sampling_period = msg.sampling_period
