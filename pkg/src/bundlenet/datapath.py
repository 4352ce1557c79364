"""Edge-box packet datapath: a token-bucket pacer in front of a
pluggable scheduler.  The scheduler decides ordering and overflow
drops; the bucket decides when the next packet may leave."""

from __future__ import annotations

import collections
import math

from .measurement import fnv1a_64

MTU_BYTES = 1500
TOKEN_DEPTH_BYTES = 2 * MTU_BYTES
DEFAULT_BUFFER_PKTS = 500
SFQ_BUCKETS = 1024
DRR_QUANTUM_BYTES = 1500
CODEL_TARGET_S = 0.005
CODEL_INTERVAL_S = 0.100


def flow_bucket(flow_key, n_buckets: int = SFQ_BUCKETS) -> int:
    """Deterministic flow-to-bucket mapping (no perturbation)."""
    data = repr(flow_key).encode()
    return fnv1a_64(data) % n_buckets


class TokenBucket:
    """Byte token bucket.  Changing the rate never grants tokens for
    time that already passed at the old rate."""

    def __init__(self, rate_bps: float, depth_bytes: float = TOKEN_DEPTH_BYTES,
                 t: float = 0.0):
        self.rate_bps = rate_bps
        self.depth_bytes = depth_bytes
        self.tokens = depth_bytes
        self._last_t = t

    def refill(self, t: float) -> None:
        if t > self._last_t:
            self.tokens = min(self.depth_bytes,
                              self.tokens + self.rate_bps / 8.0 * (t - self._last_t))
            self._last_t = t

    def set_rate(self, rate_bps: float, t: float) -> None:
        self.refill(t)
        self.rate_bps = rate_bps

    # Tolerance (bytes) absorbing float error in refill arithmetic, so a
    # deficit computed by delay_until is consumable once that delay passes.
    EPS_BYTES = 1e-6

    def try_consume(self, nbytes: int, t: float) -> bool:
        self.refill(t)
        if self.tokens >= nbytes - self.EPS_BYTES:
            self.tokens = max(0.0, self.tokens - nbytes)
            return True
        return False

    def delay_until(self, nbytes: int, t: float) -> float:
        """Seconds until nbytes of tokens will be available."""
        self.refill(t)
        deficit = nbytes - self.tokens
        if deficit <= self.EPS_BYTES:
            return 0.0
        if self.rate_bps <= 0:
            return math.inf
        return deficit * 8.0 / self.rate_bps


class FifoQueue:
    """Plain drop-tail FIFO."""

    def __init__(self):
        self._q = collections.deque()
        self.bytes = 0

    def __len__(self):
        return len(self._q)

    def enqueue(self, pkt, t):
        self._q.append((pkt, t))
        self.bytes += pkt.wire_bytes
        return None

    def overflow_drop(self, incoming_pkt, t):
        return incoming_pkt

    def dequeue(self, t):
        if not self._q:
            return None
        pkt, t_enq = self._q.popleft()
        self.bytes -= pkt.wire_bytes
        return pkt, t_enq

    def peek_size(self, t):
        return self._q[0][0].wire_bytes if self._q else None

    def head_sojourn(self, t):
        return t - self._q[0][1] if self._q else 0.0


class _CodelState:
    __slots__ = ("first_above", "drop_next", "count", "dropping")

    def __init__(self):
        self.first_above = None
        self.drop_next = 0.0
        self.count = 0
        self.dropping = False


class SfqScheduler:
    """Stochastic fair queueing: hash flows into buckets, serve buckets
    by deficit round robin.  With codel=True each bucket additionally
    runs the CoDel drop law on its head packet."""

    def __init__(self, n_buckets: int = SFQ_BUCKETS,
                 quantum: int = DRR_QUANTUM_BYTES, codel: bool = False,
                 codel_target: float = CODEL_TARGET_S,
                 codel_interval: float = CODEL_INTERVAL_S):
        self.n_buckets = n_buckets
        self.quantum = quantum
        self.codel = codel
        self.codel_target = codel_target
        self.codel_interval = codel_interval
        self._buckets: dict[int, collections.deque] = {}
        self._active = collections.deque()
        self._deficit: dict[int, float] = {}
        self._topped: set[int] = set()
        self._codel: dict[int, _CodelState] = {}
        self._len = 0
        self.bytes = 0
        self.codel_drops = []

    def __len__(self):
        return self._len

    def enqueue(self, pkt, t):
        idx = flow_bucket(pkt.flow_key, self.n_buckets)
        q = self._buckets.get(idx)
        if q is None:
            q = self._buckets[idx] = collections.deque()
        if not q:
            self._active.append(idx)
            self._deficit.setdefault(idx, 0.0)
        q.append((pkt, t))
        self._len += 1
        self.bytes += pkt.wire_bytes
        return None

    def overflow_drop(self, incoming_pkt, t):
        """Drop from the tail of the currently longest bucket."""
        if not self._active:
            return incoming_pkt
        idx = max(self._active, key=lambda i: len(self._buckets[i]))
        pkt, _ = self._buckets[idx].pop()
        self._len -= 1
        self.bytes -= pkt.wire_bytes
        if not self._buckets[idx]:
            self._remove_active(idx)
        return pkt

    def _remove_active(self, idx):
        try:
            self._active.remove(idx)
        except ValueError:
            pass
        self._deficit[idx] = 0.0
        self._topped.discard(idx)

    def _codel_should_drop(self, idx, sojourn, t):
        st = self._codel.get(idx)
        if st is None:
            st = self._codel[idx] = _CodelState()
        if sojourn < self.codel_target:
            st.first_above = None
            st.dropping = False
            return False
        if st.first_above is None:
            st.first_above = t + self.codel_interval
            return False
        if not st.dropping:
            if t >= st.first_above:
                st.dropping = True
                st.count = 1
                st.drop_next = t + self.codel_interval / math.sqrt(st.count)
                return True
            return False
        if t >= st.drop_next:
            st.count += 1
            st.drop_next += self.codel_interval / math.sqrt(st.count)
            return True
        return False

    def dequeue(self, t):
        guard = 2 * len(self._active) + 2
        for _ in range(guard):
            if not self._active:
                return None
            idx = self._active[0]
            q = self._buckets[idx]
            if not q:
                self._active.popleft()
                self._deficit[idx] = 0.0
                self._topped.discard(idx)
                continue
            if self.codel:
                while q and self._codel_should_drop(idx, t - q[0][1], t):
                    pkt, _ = q.popleft()
                    self._len -= 1
                    self.bytes -= pkt.wire_bytes
                    self.codel_drops.append(pkt)
                if not q:
                    continue
            if idx not in self._topped:
                self._deficit[idx] += self.quantum
                self._topped.add(idx)
            pkt, t_enq = q[0]
            if self._deficit[idx] >= pkt.wire_bytes:
                q.popleft()
                self._deficit[idx] -= pkt.wire_bytes
                self._len -= 1
                self.bytes -= pkt.wire_bytes
                if not q:
                    self._active.popleft()
                    self._deficit[idx] = 0.0
                    self._topped.discard(idx)
                return pkt, t_enq
            self._active.rotate(-1)
            self._topped.discard(idx)
        return None

    def _peek(self, t):
        for idx in self._active:
            q = self._buckets[idx]
            if not q:
                continue
            deficit = self._deficit[idx]
            if idx not in self._topped:
                deficit += self.quantum
            if deficit >= q[0][0].wire_bytes:
                return q[0]
        for idx in self._active:
            if self._buckets[idx]:
                return self._buckets[idx][0]
        return None

    def peek_size(self, t):
        head = self._peek(t)
        return head[0].wire_bytes if head else None

    def head_sojourn(self, t):
        head = self._peek(t)
        return t - head[1] if head else 0.0


class StrictPrioScheduler:
    """Two classes; class 0 is served exhaustively before class 1.
    On overflow the low class gives way to protect class 0."""

    def __init__(self):
        self._q = (collections.deque(), collections.deque())
        self._len = 0
        self.bytes = 0

    def __len__(self):
        return self._len

    def enqueue(self, pkt, t):
        cls = min(getattr(pkt, "prio_class", 0) or 0, 1)
        self._q[cls].append((pkt, t))
        self._len += 1
        self.bytes += pkt.wire_bytes
        return None

    def overflow_drop(self, incoming_pkt, t):
        cls = min(getattr(incoming_pkt, "prio_class", 0) or 0, 1)
        if cls == 0 and self._q[1]:
            pkt, _ = self._q[1].pop()
            self._len -= 1
            self.bytes -= pkt.wire_bytes
            return pkt
        return incoming_pkt

    def dequeue(self, t):
        for q in self._q:
            if q:
                pkt, t_enq = q.popleft()
                self._len -= 1
                self.bytes -= pkt.wire_bytes
                return pkt, t_enq
        return None

    def peek_size(self, t):
        for q in self._q:
            if q:
                return q[0][0].wire_bytes
        return None

    def head_sojourn(self, t):
        for q in self._q:
            if q:
                return t - q[0][1]
        return 0.0


def make_scheduler(policy: str):
    if policy == "fifo":
        return FifoQueue()
    if policy == "sfq":
        return SfqScheduler()
    if policy == "prio":
        return StrictPrioScheduler()
    if policy == "fqcodel":
        return SfqScheduler(codel=True)
    raise ValueError(f"unknown scheduler policy: {policy!r}")


class Datapath:
    """Scheduler plus pacer for one bundle at the sending edge box.

    buffer_pkts=None means unbounded (used when endhosts run a fixed
    window and the edge box is expected to hold their backlog).
    """

    def __init__(self, policy: str = "fifo", rate_bps: float = 1e9,
                 buffer_pkts: int | None = DEFAULT_BUFFER_PKTS, t: float = 0.0):
        self.scheduler = make_scheduler(policy)
        self.bucket = TokenBucket(rate_bps, t=t)
        self.buffer_pkts = buffer_pkts
        self.enqueued = 0
        self.dropped = 0
        self.emitted = 0
        self.emitted_bytes = 0

    def enqueue(self, pkt, t):
        """Returns the dropped packet on overflow (possibly pkt itself),
        else None."""
        if self.buffer_pkts is not None and len(self.scheduler) >= self.buffer_pkts:
            victim = self.scheduler.overflow_drop(pkt, t)
            self.dropped += 1
            if victim is pkt:
                return victim
            self.scheduler.enqueue(pkt, t)
            self.enqueued += 1
            return victim
        self.scheduler.enqueue(pkt, t)
        self.enqueued += 1
        return None

    def dequeue(self, t):
        size = self.scheduler.peek_size(t)
        if size is None:
            return None
        if not self.bucket.try_consume(size, t):
            return None
        entry = self.scheduler.dequeue(t)
        if entry is None:
            # codel emptied the queue between peek and serve
            self.bucket.tokens = min(self.bucket.tokens + size,
                                     self.bucket.depth_bytes)
            return None
        pkt, _ = entry
        if pkt.wire_bytes != size:
            self.bucket.tokens = min(self.bucket.tokens + size - pkt.wire_bytes,
                                     self.bucket.depth_bytes)
        self.emitted += 1
        self.emitted_bytes += pkt.wire_bytes
        return pkt

    def next_ready_s(self, t):
        """Seconds until the head packet can leave, or None if empty."""
        size = self.scheduler.peek_size(t)
        if size is None:
            return None
        return self.bucket.delay_until(size, t)

    def set_rate(self, rate_bps: float, t: float) -> None:
        self.bucket.set_rate(rate_bps, t)

    def queue_delay(self, t) -> float:
        return self.scheduler.head_sojourn(t)

    @property
    def backlog_pkts(self):
        return len(self.scheduler)

    @property
    def backlog_bytes(self):
        return self.scheduler.bytes

    def codel_drops(self):
        drops = getattr(self.scheduler, "codel_drops", None)
        if not drops:
            return []
        out = list(drops)
        drops.clear()
        self.dropped += len(out)
        return out
