"""Aggregate congestion measurement from sampled packet epochs.

The sending edge box records a subset of forwarded packets (epoch
boundaries) chosen by hashing immutable header fields.  The receiving
edge box acks the same subset.  Matching the two streams yields RTT,
send rate, and receive rate for the whole aggregate without touching
connection state.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
U64 = 0xFFFFFFFFFFFFFFFF

MEAN_PKT_INIT = 1500.0
MEAN_PKT_GAIN = 1.0 / 16.0
TARGET_SAMPLES_PER_RTT = 4
EVICT_RTT_MULT = 4.0
# fallback horizon before the first RTT sample exists
EVICT_FALLBACK_S = 1.0
REORDER_WINDOW = 100
# raw-sample retention horizon for the smoothed views
RETAIN_WINDOW_S = 0.2
# the standing-RTT min filter looks back half an RTT, with a floor so very
# short paths still cover a few ack arrivals; a longer window would blind
# the controller to queue growth for the whole window and make it overshoot
STANDING_WINDOW_FLOOR_S = 0.01


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & U64
    return h


def hash_header(ip_id: int, dst_addr: int, dst_port: int) -> int:
    """FNV-1a-64 over the 8-byte big-endian (ip_id, dst_addr, dst_port)."""
    data = (
        ((ip_id & 0xFFFF) << 48)
        | ((dst_addr & 0xFFFFFFFF) << 16)
        | (dst_port & 0xFFFF)
    ).to_bytes(8, "big")
    return fnv1a_64(data)


def is_epoch_boundary(pkt_hash: int, sampling_period: int) -> bool:
    return pkt_hash % sampling_period == 0


def compute_sampling_period(min_rtt_s: float, send_rate_bps: float,
                            mean_pkt_size_bytes: float) -> int:
    """Packets per epoch, as the largest power of two giving about
    TARGET_SAMPLES_PER_RTT boundary packets per RTT."""
    pkts_per_rtt = min_rtt_s * send_rate_bps / (8.0 * mean_pkt_size_bytes)
    target = max(pkts_per_rtt / TARGET_SAMPLES_PER_RTT, 1.0)
    return 1 << (int(target).bit_length() - 1)


@dataclass(frozen=True)
class HeaderSubset:
    """Fields hashed for epoch selection.  They are immutable along the
    path and differ between a retransmission and its original."""
    ip_id: int
    dst_addr: int
    dst_port: int

    def digest(self) -> int:
        return hash_header(self.ip_id, self.dst_addr, self.dst_port)


@dataclass
class EpochBoundaryRecord:
    pkt_hash: int
    t_sent: float
    bytes_sent_cum: int
    send_index: int


@dataclass(frozen=True)
class CongestionAck:
    bundle_id: int
    pkt_hash: int
    bytes_rcvd_cum: int


@dataclass
class CongestionSignals:
    """One epoch's worth of aggregate signals.  Rates are None for the
    first acked boundary (no previous epoch to span).  epoch_span is
    measured between boundary sends, ack_span between their acks."""
    rtt: float
    send_rate: float | None
    recv_rate: float | None
    min_rtt: float
    epoch_span: float | None
    t_ack: float
    ack_span: float | None = None


@dataclass
class SignalsView:
    """Signals smoothed over a sliding window of recent epochs."""
    rtt: float
    rtt_standing: float
    send_rate: float | None
    recv_rate: float | None
    min_rtt: float
    age: float
    n_samples: int


class ReorderingTracker:
    """Sliding-window fraction of acked boundaries that arrived behind a
    boundary sent after them."""

    def __init__(self, window: int = REORDER_WINDOW):
        self._events = collections.deque(maxlen=window)

    def record(self, out_of_order: bool) -> None:
        self._events.append(bool(out_of_order))

    @property
    def fraction(self) -> float:
        if not self._events:
            return 0.0
        return sum(self._events) / len(self._events)

    @property
    def count(self) -> int:
        return len(self._events)


class BundleMeasurement:
    """Send-side measurement state for one bundle.

    on_sent() runs at datapath egress so recorded timestamps and byte
    counts reflect what actually entered the network, not what arrived
    at the box.  on_ack() consumes receiver feedback and emits
    CongestionSignals.
    """

    def __init__(self, sampling_period: int = 1):
        self.sampling_period = sampling_period
        self.bytes_sent_cum = 0
        self.mean_pkt_size = MEAN_PKT_INIT
        self.min_rtt = float("inf")
        self._send_index = 0
        self._pending: collections.OrderedDict[int, EpochBoundaryRecord] = \
            collections.OrderedDict()
        self._max_acked_index = -1
        self._prev_acked = None  # (record, t_ack, bytes_rcvd_cum)
        self._signals: collections.deque[CongestionSignals] = collections.deque()
        self._tombstones: dict[int, tuple[str, int, float]] = {}
        self.reordering = ReorderingTracker()
        self.counters = collections.Counter()

    # -- send side ---------------------------------------------------

    def on_sent(self, ip_id: int, dst_addr: int, dst_port: int,
                wire_bytes: int, t: float) -> bool:
        """Account one departing packet; returns True if it was recorded
        as an epoch boundary."""
        self.bytes_sent_cum += wire_bytes
        self.mean_pkt_size += MEAN_PKT_GAIN * (wire_bytes - self.mean_pkt_size)
        h = hash_header(ip_id, dst_addr, dst_port)
        idx = self._send_index
        self._send_index += 1
        if h % self.sampling_period != 0:
            return False
        if h in self._pending:
            # same digest already awaiting an ack; keep the older record
            self.counters["hash_collision"] += 1
            return False
        self._pending[h] = EpochBoundaryRecord(h, t, self.bytes_sent_cum, idx)
        return True

    # -- feedback side -----------------------------------------------

    def on_ack(self, ack: CongestionAck, t: float) -> CongestionSignals | None:
        self._evict(t)
        rec = self._pending.pop(ack.pkt_hash, None)
        if rec is None:
            return self._on_unmatched(ack.pkt_hash, t)
        rtt = t - rec.t_sent
        if rtt > 0:
            self.min_rtt = min(self.min_rtt, rtt)
        out_of_order = rec.send_index < self._max_acked_index
        self.reordering.record(out_of_order)
        self._tombstones[rec.pkt_hash] = ("consumed", rec.send_index, t)
        if out_of_order:
            # a later boundary already produced signals past this one
            self.counters["ack_out_of_order"] += 1
            return None
        self._max_acked_index = rec.send_index
        sig = self._make_signals(rec, ack, rtt, t)
        self._prev_acked = (rec, t, ack.bytes_rcvd_cum)
        self._append(sig)
        return sig

    def _make_signals(self, rec, ack, rtt, t) -> CongestionSignals:
        if self._prev_acked is None:
            return CongestionSignals(rtt, None, None, self.min_rtt, None, t)
        prev_rec, prev_t_ack, prev_rcvd = self._prev_acked
        span_send = rec.t_sent - prev_rec.t_sent
        span_ack = t - prev_t_ack
        send_rate = recv_rate = None
        if span_send > 0 and span_ack > 0:
            send_rate = 8.0 * (rec.bytes_sent_cum - prev_rec.bytes_sent_cum) / span_send
            recv_rate = 8.0 * (ack.bytes_rcvd_cum - prev_rcvd) / span_ack
        return CongestionSignals(rtt, send_rate, recv_rate, self.min_rtt,
                                 span_send if span_send > 0 else None, t,
                                 span_ack if span_ack > 0 else None)

    def _on_unmatched(self, h: int, t: float) -> None:
        tomb = self._tombstones.get(h)
        if tomb is not None:
            kind = tomb[0]
            if kind == "consumed":
                self.counters["ack_duplicate"] += 1
            else:
                # record timed out as lost, then its ack showed up late
                self.reordering.record(True)
                self.counters["ack_after_evict"] += 1
        elif h % self.sampling_period == 0:
            self.counters["ack_unknown"] += 1
        else:
            # receiver still sampling at a finer period than ours
            self.counters["ack_foreign_period"] += 1
        return None

    def _evict(self, t: float) -> None:
        horizon = EVICT_RTT_MULT * self.min_rtt \
            if self.min_rtt != float("inf") else EVICT_FALLBACK_S
        while self._pending:
            h, rec = next(iter(self._pending.items()))
            if rec.t_sent >= t - horizon:
                break
            del self._pending[h]
            self._tombstones[h] = ("evicted", rec.send_index, t)
            self.counters["record_evicted"] += 1
        stale = [h for h, (_, _, ts) in self._tombstones.items()
                 if ts < t - 2.0 * max(horizon, 1.0)]
        for h in stale:
            del self._tombstones[h]

    # -- smoothed signals --------------------------------------------

    def _append(self, sig: CongestionSignals) -> None:
        self._signals.append(sig)
        keep = max(RETAIN_WINDOW_S,
                   4.0 * self.min_rtt if self.min_rtt != float("inf") else 1.0)
        while len(self._signals) > 1 and self._signals[0].t_ack < sig.t_ack - keep:
            self._signals.popleft()

    def signals_view(self, t: float) -> SignalsView | None:
        if not self._signals:
            return None
        window = self.min_rtt if self.min_rtt != float("inf") else 0.1
        recent = [s for s in self._signals if s.t_ack >= t - window]
        if not recent:
            recent = [self._signals[-1]]
        standing_w = max(STANDING_WINDOW_FLOOR_S, 0.5 * window)
        standing = min((s.rtt for s in self._signals
                        if s.t_ack >= t - standing_w),
                       default=recent[-1].rtt)
        rtts = [s.rtt for s in recent]
        sends = [s.send_rate for s in recent if s.send_rate is not None]
        recvs = [s.recv_rate for s in recent if s.recv_rate is not None]
        return SignalsView(
            rtt=sum(rtts) / len(rtts),
            rtt_standing=standing,
            send_rate=sum(sends) / len(sends) if sends else None,
            recv_rate=sum(recvs) / len(recvs) if recvs else None,
            min_rtt=self.min_rtt,
            age=t - self._signals[-1].t_ack,
            n_samples=len(recent),
        )

    def desired_period(self) -> int | None:
        """Sampling period implied by current signals, or None before
        any rate estimate exists."""
        if self.min_rtt == float("inf"):
            return None
        sends = [s.send_rate for s in self._signals if s.send_rate is not None]
        if not sends:
            return None
        rate = sum(sends[-TARGET_SAMPLES_PER_RTT * 2:]) / \
            len(sends[-TARGET_SAMPLES_PER_RTT * 2:])
        return compute_sampling_period(self.min_rtt, rate, self.mean_pkt_size)

    @property
    def pending_count(self) -> int:
        return len(self._pending)


class ReceiveCounter:
    """Receive-side per-bundle state: cumulative byte count and the
    boundary check that triggers feedback."""

    def __init__(self, bundle_id: int, sampling_period: int = 1):
        self.bundle_id = bundle_id
        self.sampling_period = sampling_period
        self.bytes_rcvd_cum = 0

    def on_packet(self, ip_id: int, dst_addr: int, dst_port: int,
                  wire_bytes: int) -> CongestionAck | None:
        self.bytes_rcvd_cum += wire_bytes
        h = hash_header(ip_id, dst_addr, dst_port)
        if h % self.sampling_period != 0:
            return None
        return CongestionAck(self.bundle_id, h, self.bytes_rcvd_cum)
