"""Deterministic discrete-event core.

Events are ordered by (time, insertion sequence); handlers must derive
all randomness from seeded generators, so a given scenario and seed
always produces the same event order and the same trace.
"""

from __future__ import annotations

import heapq

MSS_BYTES = 1460
HDR_BYTES = 40
MTU_WIRE_BYTES = MSS_BYTES + HDR_BYTES
ACK_WIRE_BYTES = 40


class Simulator:
    def __init__(self):
        self.now = 0.0
        self._heap = []
        self._seq = 0

    def schedule(self, t: float, fn, *args) -> None:
        if t < self.now:
            t = self.now
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def schedule_in(self, delay: float, fn, *args) -> None:
        self.schedule(self.now + delay, fn, *args)

    def run_until(self, t_end: float) -> None:
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            t, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
        if self.now < t_end:
            self.now = t_end

    def run_until_empty(self, hard_limit: float) -> None:
        heap = self._heap
        while heap and heap[0][0] <= hard_limit:
            t, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)


class Packet:
    """One wire packet.  kind is 'data', 'ack', or 'fb' (middlebox
    feedback); wire_bytes includes the 40-byte header."""

    __slots__ = ("kind", "flow_id", "src_addr", "dst_addr", "src_port",
                 "dst_port", "ip_id", "seq", "payload_bytes", "wire_bytes",
                 "ack_seq", "sack", "payload", "prio_class", "flow_key",
                 "t_origin", "t_sb_out", "retx")

    def __init__(self, kind, flow_id, src_addr, dst_addr, src_port, dst_port,
                 ip_id=0, seq=0, payload_bytes=0, wire_bytes=HDR_BYTES,
                 ack_seq=0, payload=None, prio_class=0, t_origin=0.0):
        self.kind = kind
        self.flow_id = flow_id
        self.src_addr = src_addr
        self.dst_addr = dst_addr
        self.src_port = src_port
        self.dst_port = dst_port
        self.ip_id = ip_id
        self.seq = seq
        self.payload_bytes = payload_bytes
        self.wire_bytes = wire_bytes
        self.ack_seq = ack_seq
        self.sack = None  # list of (start, end) above ack_seq, or None
        self.payload = payload
        self.prio_class = prio_class
        self.flow_key = (src_addr, src_port, dst_addr, dst_port)
        self.t_origin = t_origin
        self.t_sb_out = 0.0
        self.retx = False
