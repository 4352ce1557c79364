"""Link models: fixed-rate serializers with finite buffers, optionally
several parallel paths behind a load balancer."""

from __future__ import annotations

from dataclasses import dataclass

from ..datapath import SfqScheduler
from ..measurement import fnv1a_64


@dataclass
class PathSpec:
    bandwidth_bps: float
    one_way_delay_s: float
    buffer_pkts: int = 800


class _Path:
    """Single transmit queue: serialize at bandwidth, then a fixed
    propagation delay.  Constant delay keeps per-path FIFO order."""

    def __init__(self, sim, spec: PathSpec, deliver, drop_cb, name,
                 discipline: str = "droptail"):
        self.sim = sim
        self.bandwidth_bps = spec.bandwidth_bps
        self.delay_s = spec.one_way_delay_s
        self.buffer_pkts = spec.buffer_pkts
        self.deliver = deliver
        self.drop_cb = drop_cb
        self.name = name
        self.discipline = discipline
        self._fifo = []
        self._fifo_head = 0
        self._fq = SfqScheduler(n_buckets=4096) if discipline == "fq" else None
        self.busy = False
        self.backlog_bytes = 0
        self.backlog_pkts = 0
        self.delivered_pkts = 0
        self.delivered_bytes = 0
        self.dropped = 0

    def queue_delay_s(self) -> float:
        if self.bandwidth_bps <= 0:
            return 0.0
        return self.backlog_bytes * 8.0 / self.bandwidth_bps

    def send(self, pkt, t) -> bool:
        if not self.busy:
            self._start(pkt, t)
            return True
        if self.backlog_pkts >= self.buffer_pkts:
            if self._fq is not None:
                victim = self._fq.overflow_drop(pkt, t)
                self.dropped += 1
                self.drop_cb(victim, self.name)
                if victim is pkt:
                    return False
                self.backlog_pkts -= 1
                self.backlog_bytes -= victim.wire_bytes
            else:
                self.dropped += 1
                self.drop_cb(pkt, self.name)
                return False
        if self._fq is not None:
            self._fq.enqueue(pkt, t)
        else:
            self._fifo.append(pkt)
        self.backlog_pkts += 1
        self.backlog_bytes += pkt.wire_bytes
        return True

    def _start(self, pkt, t):
        self.busy = True
        self.sim.schedule(t + pkt.wire_bytes * 8.0 / self.bandwidth_bps,
                          self._complete, pkt)

    def _complete(self, pkt):
        t = self.sim.now
        self.delivered_pkts += 1
        self.delivered_bytes += pkt.wire_bytes
        self.sim.schedule(t + self.delay_s, self.deliver, pkt)
        nxt = self._pop_next(t)
        if nxt is None:
            self.busy = False
        else:
            self._start(nxt, t)

    def _pop_next(self, t):
        if self._fq is not None:
            entry = self._fq.dequeue(t)
            if entry is None:
                return None
            pkt = entry[0]
        else:
            if self._fifo_head >= len(self._fifo):
                return None
            pkt = self._fifo[self._fifo_head]
            self._fifo_head += 1
            if self._fifo_head > 64 and self._fifo_head * 2 > len(self._fifo):
                del self._fifo[:self._fifo_head]
                self._fifo_head = 0
        self.backlog_pkts -= 1
        self.backlog_bytes -= pkt.wire_bytes
        return pkt

    def set_bandwidth(self, bps: float) -> None:
        self.bandwidth_bps = bps


class Link:
    """One or more parallel paths.  balancer 'flow' pins each 5-tuple
    to a path by hash; 'packet' sprays packets uniformly."""

    def __init__(self, sim, specs, deliver, drop_cb, name,
                 discipline: str = "droptail", balancer: str = "flow",
                 rng=None):
        self.paths = [
            _Path(sim, s, deliver, drop_cb, f"{name}:p{i}", discipline)
            for i, s in enumerate(specs)
        ]
        self.balancer = balancer
        self.rng = rng
        self.name = name
        self._n = len(self.paths)

    def path_for(self, pkt) -> int:
        if self._n == 1:
            return 0
        if self.balancer == "packet":
            return self.rng.randrange(self._n)
        return fnv1a_64(repr(pkt.flow_key).encode()) % self._n

    def send(self, pkt, t) -> bool:
        return self.paths[self.path_for(pkt)].send(pkt, t)

    @property
    def total_bandwidth_bps(self) -> float:
        return sum(p.bandwidth_bps for p in self.paths)

    @property
    def delivered_bytes(self) -> int:
        return sum(p.delivered_bytes for p in self.paths)

    @property
    def dropped(self) -> int:
        return sum(p.dropped for p in self.paths)
