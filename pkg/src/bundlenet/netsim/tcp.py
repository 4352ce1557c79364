"""Packet-level endhost TCP: cubic / reno senders, a fixed-window
variant for proxy-style endhosts, and a delayed-ack receiver.  Loss
recovery is SACK-based: the receiver piggybacks its out-of-order
ranges, the sender keeps a scoreboard and retransmits holes below the
highest sacked byte, with a coarse RTO as backstop."""

from __future__ import annotations

import math

from .core import Packet, MSS_BYTES, HDR_BYTES, ACK_WIRE_BYTES

CUBIC_C = 0.4
CUBIC_BETA = 0.7
RENO_BETA = 0.5
INIT_CWND_PKTS = 10.0
MIN_CWND_PKTS = 1.0
DUPACK_THRESH = 3
MIN_RTO_S = 0.2
MAX_RTO_S = 60.0
DELACK_S = 0.040
DELACK_COUNT = 2
SACK_MAX_BLOCKS = 3
SACK_BLOCK_WIRE_BYTES = 8
RETX_PER_ACK = 2
# delay-based slow start exit: leave slow start once this many
# consecutive rtt samples sit above min_rtt by the hystart margin,
# instead of overshooting the whole path buffer and mass-dropping.
# The margin floor sits above the rtt wobble a pacing middlebox with
# ~25% rate pulsing can induce (~8 ms), so pulses alone never end
# slow start.
HYSTART_SAMPLES = 3
HYSTART_MIN_MARGIN_S = 0.012
HYSTART_MAX_MARGIN_S = 0.024


class TcpSender:
    """One sending endhost connection.

    size_bytes None means backlogged until stop().  out(pkt, t) hands
    packets to the next hop; done(flow, t) fires when the last payload
    byte is cumulatively acked.
    """

    def __init__(self, sim, flow_id, src_addr, src_port, dst_addr, dst_port,
                 size_bytes, out, done=None, algo="cubic",
                 fixed_window_pkts=450, prio_class=0, start_t=0.0,
                 ip_id_start=0):
        self.sim = sim
        self.flow_id = flow_id
        self.src_addr = src_addr
        self.src_port = src_port
        self.dst_addr = dst_addr
        self.dst_port = dst_port
        self.size_bytes = size_bytes
        self.out = out
        self.done = done
        self.algo = algo
        self.prio_class = prio_class
        self.t_start = start_t

        self.cwnd = float(fixed_window_pkts) if algo == "fixed" else INIT_CWND_PKTS
        self.fixed_window_pkts = fixed_window_pkts
        self.ssthresh = math.inf
        self.snd_una = 0
        self.snd_nxt = 0
        self.dupacks = 0
        self.recovery_point = None
        self.w_max = 0.0
        self.cubic_k = 0.0
        self.t_epoch = start_t
        self.srtt = None
        self.rttvar = 0.0
        self.rto = 1.0
        self.backoff = 1
        self.min_rtt = math.inf
        self._hystart_count = 0
        self.last_progress = start_t
        self._rto_pending = False
        self._ip_id = ip_id_start & 0xFFFF
        self._sent_log = []  # (end_seq, t_sent, retx) in send order
        self.sacked = []     # merged (start, end) above snd_una
        self._retx_next = 0  # hole scan position for sack retransmits
        self.stopped = False
        self.completed = False
        self.pkts_sent = 0
        self.retx_sent = 0

    # -- transmit ----------------------------------------------------

    def start(self, t):
        self.pump(t)

    def stop(self, t):
        self.stopped = True

    def _cwnd_bytes(self):
        return self.cwnd * MSS_BYTES

    def _inflight_bytes(self):
        out = self.snd_nxt - self.snd_una
        for s, e in self.sacked:
            out -= e - s
        return out

    def _remaining(self):
        if self.stopped:
            return 0
        if self.size_bytes is None:
            return 1 << 60
        return self.size_bytes - self.snd_nxt

    def pump(self, t):
        while True:
            remaining = self._remaining()
            if remaining <= 0:
                break
            if self._inflight_bytes() >= self._cwnd_bytes():
                break
            if self.recovery_point is not None and self._next_hole() is not None:
                # retransmissions first: sacked ranges deflate inflight,
                # and filling that headroom with new data prolongs the
                # loss episode past the recovery point
                break
            payload = min(MSS_BYTES, remaining)
            self._emit(self.snd_nxt, payload, t, retx=False)
            self.snd_nxt += payload
        self._arm_rto(t)

    def _emit(self, seq, payload, t, retx):
        self._ip_id = (self._ip_id + 1) & 0xFFFF
        pkt = Packet("data", self.flow_id, self.src_addr, self.dst_addr,
                     self.src_port, self.dst_port, ip_id=self._ip_id, seq=seq,
                     payload_bytes=payload, wire_bytes=payload + HDR_BYTES,
                     prio_class=self.prio_class, t_origin=t)
        pkt.retx = retx
        self._sent_log.append((seq + payload, t, retx))
        self.pkts_sent += 1
        if retx:
            self.retx_sent += 1
        self.out(pkt, t)

    def _retransmit_head(self, t):
        hole = min(MSS_BYTES, self.snd_nxt - self.snd_una)
        if hole > 0:
            self._emit(self.snd_una, hole, t, retx=True)

    # -- sack scoreboard ---------------------------------------------

    def _merge_sack(self, blocks):
        ranges = self.sacked
        for start, end in blocks:
            start = max(start, self.snd_una)
            if end <= start:
                continue
            merged = []
            for s, e in ranges:
                if end < s or start > e:
                    merged.append((s, e))
                else:
                    start, end = min(start, s), max(end, e)
            merged.append((start, end))
            merged.sort()
            ranges = merged
        self.sacked = ranges

    def _prune_sack(self):
        self.sacked = [(max(s, self.snd_una), e) for s, e in self.sacked
                       if e > self.snd_una]

    def _next_hole(self):
        """Next unsacked MSS-or-smaller chunk below the highest sacked
        byte, at or past the scan position.  None when nothing below
        the highest sacked byte is known missing."""
        p = max(self._retx_next, self.snd_una)
        for s, e in self.sacked:
            if p < s:
                return p, min(p + MSS_BYTES, s)
            if p < e:
                p = e
        return None

    def _sack_retransmit(self, t):
        for _ in range(RETX_PER_ACK):
            hole = self._next_hole()
            if hole is None:
                return
            s, e = hole
            self._emit(s, e - s, t, retx=True)
            self._retx_next = e

    # -- ack path ----------------------------------------------------

    def on_ack(self, ack_seq, t, sack=None):
        if self.completed:
            return
        if sack:
            self._merge_sack(sack)
        if ack_seq > self.snd_una:
            acked = ack_seq - self.snd_una
            self.snd_una = ack_seq
            self.last_progress = t
            self.backoff = 1
            self._prune_sack()
            self._retx_next = max(self._retx_next, self.snd_una)
            self._sample_rtt(ack_seq, t)
            if self.recovery_point is not None:
                if ack_seq >= self.recovery_point:
                    self.recovery_point = None
                    self.dupacks = 0
                    if self.algo != "fixed" and self.cwnd > self.ssthresh:
                        self.cwnd = max(self.ssthresh, MIN_CWND_PKTS)
                    self.t_epoch = t
                elif self.algo != "fixed" and self.cwnd < self.ssthresh:
                    # post-timeout refill proceeds in slow start
                    self.cwnd += acked / MSS_BYTES
            else:
                self.dupacks = 0
                self._grow(acked / MSS_BYTES, t)
            if self.size_bytes is not None and self.snd_una >= self.size_bytes:
                self.completed = True
                if self.done:
                    self.done(self, t)
                return
        elif ack_seq == self.snd_una and self.snd_nxt > self.snd_una:
            self.dupacks += 1
            # sacked evidence required: dupacks without it are echoes of
            # our own spurious retransmissions, not signs of loss
            if (self.dupacks >= DUPACK_THRESH and self.recovery_point is None
                    and self.sacked):
                self._enter_recovery(t)
        if self.recovery_point is not None:
            self._sack_retransmit(t)
        self.pump(t)

    def _sample_rtt(self, ack_seq, t):
        sample = None
        log = self._sent_log
        i = 0
        for i, (end, ts, retx) in enumerate(log):
            if end > ack_seq:
                break
            if not retx:
                sample = t - ts
        else:
            i = len(log)
        if i:
            del log[:i]
        if sample is None:
            return
        if self.srtt is None:
            self.srtt = sample
            self.rttvar = sample / 2.0
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - sample)
            self.srtt = 0.875 * self.srtt + 0.125 * sample
        self.rto = min(max(MIN_RTO_S, self.srtt + 4.0 * self.rttvar), MAX_RTO_S)
        self.min_rtt = min(self.min_rtt, sample)
        if self.algo == "cubic" and self.cwnd < self.ssthresh:
            margin = min(max(self.min_rtt / 8.0, HYSTART_MIN_MARGIN_S),
                         HYSTART_MAX_MARGIN_S)
            if sample >= self.min_rtt + margin:
                self._hystart_count += 1
                if self._hystart_count >= HYSTART_SAMPLES:
                    self._hystart_exit(t)
            else:
                self._hystart_count = 0

    def _hystart_exit(self, t):
        """Slow start ends at the first sign of standing queue.  Growth
        continues on the cubic curve from the current level, keeping any
        higher plateau remembered from before a timeout."""
        self.ssthresh = self.cwnd
        self.w_max = max(self.w_max, self.cwnd)
        self.cubic_k = ((self.w_max * (1.0 - CUBIC_BETA)) / CUBIC_C) ** (1.0 / 3.0)
        self.t_epoch = t
        self._hystart_count = 0

    # -- congestion control -----------------------------------------

    def _grow(self, acked_pkts, t):
        if self.algo == "fixed":
            return
        if self.cwnd < self.ssthresh:
            self.cwnd += acked_pkts
            return
        if self.algo == "reno":
            self.cwnd += acked_pkts / self.cwnd
            return
        te = t - self.t_epoch
        target = CUBIC_C * (te - self.cubic_k) ** 3 + self.w_max
        if target > self.cwnd:
            gain = min((target - self.cwnd) / self.cwnd, 0.5)
            self.cwnd += gain * acked_pkts
        else:
            self.cwnd += 0.01 * acked_pkts / self.cwnd

    def _enter_recovery(self, t):
        self.recovery_point = self.snd_nxt
        self._retx_next = self.snd_una
        if self.algo == "cubic":
            self.w_max = self.cwnd
            self.cwnd = max(self.cwnd * CUBIC_BETA, MIN_CWND_PKTS)
            self.ssthresh = self.cwnd
            self.cubic_k = ((self.w_max * (1.0 - CUBIC_BETA)) / CUBIC_C) ** (1.0 / 3.0)
            self.t_epoch = t
        elif self.algo == "reno":
            self.cwnd = max(self.cwnd * RENO_BETA, MIN_CWND_PKTS)
            self.ssthresh = self.cwnd
        if self._next_hole() is None:
            # no sack information; fall back to retransmitting the head
            self._retransmit_head(t)
            self._retx_next = self.snd_una + \
                min(MSS_BYTES, self.snd_nxt - self.snd_una)

    # -- timeout -----------------------------------------------------

    def _arm_rto(self, t):
        if self._rto_pending or self.completed:
            return
        if self.snd_nxt == self.snd_una:
            return
        self._rto_pending = True
        self.sim.schedule(self.last_progress + self.rto * self.backoff,
                          self._rto_fire)

    def _rto_fire(self):
        self._rto_pending = False
        t = self.sim.now
        if self.completed or self.snd_nxt == self.snd_una:
            return
        deadline = self.last_progress + self.rto * self.backoff
        if t < deadline - 1e-12:
            self._rto_pending = True
            self.sim.schedule(deadline, self._rto_fire)
            return
        # timeout: collapse, then refill holes through the sack engine
        self.recovery_point = self.snd_nxt
        self.dupacks = 0
        if self.algo != "fixed":
            self.ssthresh = max(self.cwnd / 2.0, 2.0)
            self.cwnd = MIN_CWND_PKTS
            if self.algo == "cubic":
                self.w_max = max(self.w_max, self.cwnd)
            self.t_epoch = t
        self.last_progress = t
        self.backoff = min(self.backoff * 2, 64)
        self._retransmit_head(t)
        self._retx_next = self.snd_una + \
            min(MSS_BYTES, self.snd_nxt - self.snd_una)
        self._arm_rto(t)


class TcpReceiver:
    """Cumulative-ack receiver with standard delayed acks: ack every
    second in-order segment or after DELACK_S, immediately on
    out-of-order data."""

    def __init__(self, sim, flow_id, out):
        self.sim = sim
        self.flow_id = flow_id
        self.out = out
        self.rcv_nxt = 0
        self._ooo = []  # merged (start, end), sorted
        self._recent = None  # range holding the most recent delivery
        self._pending_acks = 0
        self._delack_armed = False
        self.bytes_received = 0
        self.last_data_t = 0.0

    def on_data(self, pkt, t):
        self.last_data_t = t
        start, end = pkt.seq, pkt.seq + pkt.payload_bytes
        self.bytes_received += pkt.payload_bytes
        if start > self.rcv_nxt:
            self._insert_ooo(start, end)
            self._send_ack(pkt, t)
            return
        if end <= self.rcv_nxt:
            self._send_ack(pkt, t)
            return
        self.rcv_nxt = end
        self._drain_ooo()
        self._pending_acks += 1
        if self._pending_acks >= DELACK_COUNT or self._ooo:
            # remaining holes: ack at once so sack recovery stays
            # ack-clocked instead of pacing on the delack timer
            self._send_ack(pkt, t)
        elif not self._delack_armed:
            self._delack_armed = True
            self.sim.schedule(t + DELACK_S, self._delack_fire, pkt)

    def _insert_ooo(self, start, end):
        merged = []
        placed = False
        for s, e in self._ooo:
            if end < s - 1 or start > e + 1:
                merged.append((s, e))
            else:
                start, end = min(start, s), max(end, e)
        for i, (s, e) in enumerate(merged):
            if start < s:
                merged.insert(i, (start, end))
                placed = True
                break
        if not placed:
            merged.append((start, end))
        self._ooo = merged
        self._recent = (start, end)

    def _drain_ooo(self):
        while self._ooo and self._ooo[0][0] <= self.rcv_nxt:
            s, e = self._ooo.pop(0)
            if e > self.rcv_nxt:
                self.rcv_nxt = e

    def _delack_fire(self, pkt):
        self._delack_armed = False
        if self._pending_acks > 0:
            self._send_ack(pkt, self.sim.now)

    def _sack_blocks(self):
        """Most recently received range first, then the lowest others.
        Leading with fresh information lets the sender's scoreboard
        accumulate the full hole field across consecutive acks."""
        if not self._ooo:
            return None
        recent = self._recent if self._recent in self._ooo else self._ooo[-1]
        blocks = [recent]
        for rng in self._ooo:
            if len(blocks) >= SACK_MAX_BLOCKS:
                break
            if rng != recent:
                blocks.append(rng)
        return blocks

    def _send_ack(self, data_pkt, t):
        self._pending_acks = 0
        blocks = self._sack_blocks()
        wire = ACK_WIRE_BYTES + \
            (len(blocks) * SACK_BLOCK_WIRE_BYTES if blocks else 0)
        ack = Packet("ack", self.flow_id, data_pkt.dst_addr, data_pkt.src_addr,
                     data_pkt.dst_port, data_pkt.src_port,
                     wire_bytes=wire, ack_seq=self.rcv_nxt, t_origin=t)
        ack.sack = blocks
        self.out(ack, t)
