"""Request-size distributions and flow statistics.

Sizes are drawn by inverting an empirical CDF given as (size_bytes,
cum_prob) anchor points, interpolating log-linearly in size between
anchors.  Flow completion times are summarized as slowdowns relative to
an unloaded transfer of the same size, in per-size bands.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from importlib import resources

SMALL_MAX_BYTES = 10_000
MEDIUM_MAX_BYTES = 1_000_000
BANDS = ("small", "medium", "large", "all")


class RequestSizeDist:
    def __init__(self, points):
        if not points:
            raise ValueError("empty size distribution")
        sizes = [float(s) for s, _ in points]
        probs = [float(p) for _, p in points]
        if any(s <= 0 for s in sizes):
            raise ValueError("sizes must be positive")
        if sorted(sizes) != sizes:
            raise ValueError("sizes must be ascending")
        if any(b < a for a, b in zip(probs, probs[1:])):
            raise ValueError("cumulative probabilities must be nondecreasing")
        if abs(probs[-1] - 1.0) > 1e-9:
            raise ValueError("last cumulative probability must be 1.0")
        self.sizes = sizes
        self.probs = probs

    @classmethod
    def from_text(cls, text: str) -> "RequestSizeDist":
        points = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected '<size> <cum_prob>'")
            points.append((float(parts[0]), float(parts[1])))
        return cls(points)

    @classmethod
    def load(cls, path) -> "RequestSizeDist":
        with open(path) as f:
            return cls.from_text(f.read())

    @classmethod
    def default(cls) -> "RequestSizeDist":
        text = resources.files("bundlenet").joinpath(
            "data/request_sizes.cdf").read_text()
        return cls.from_text(text)

    def quantile(self, u: float) -> float:
        """Inverse CDF; log-linear in size between anchors."""
        probs, sizes = self.probs, self.sizes
        if u <= probs[0]:
            return sizes[0]
        if u >= 1.0:
            return sizes[-1]
        i = bisect.bisect_left(probs, u)
        p_lo, p_hi = probs[i - 1], probs[i]
        s_lo, s_hi = sizes[i - 1], sizes[i]
        if p_hi <= p_lo or s_hi <= s_lo:
            return s_hi
        frac = (u - p_lo) / (p_hi - p_lo)
        return math.exp(math.log(s_lo) + frac * (math.log(s_hi) - math.log(s_lo)))

    def sample(self, rng) -> int:
        return max(1, int(round(self.quantile(rng.random()))))

    def mean(self) -> float:
        total = 0.0
        prev_p, prev_s = self.probs[0], self.sizes[0]
        total += prev_p * prev_s  # mass at or below the first anchor
        for p, s in zip(self.probs[1:], self.sizes[1:]):
            dp = p - prev_p
            if dp > 0:
                if s > prev_s:
                    seg_mean = (s - prev_s) / math.log(s / prev_s)
                else:
                    seg_mean = s
                total += dp * seg_mean
            prev_p, prev_s = p, s
        return total


def band_of(size_bytes: float) -> str:
    if size_bytes < SMALL_MAX_BYTES:
        return "small"
    if size_bytes <= MEDIUM_MAX_BYTES:
        return "medium"
    return "large"


def percentile(values, p: float):
    """Nearest-rank percentile; requires at least one value."""
    if not values:
        raise ValueError("no values")
    ordered = sorted(values)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[min(rank, len(ordered)) - 1]


@dataclass
class FlowRecord:
    flow_id: str
    bundle_id: int | None
    size_bytes: int
    t_start: float
    t_end: float
    prio_class: int = 0
    cc: str = "cubic"

    @property
    def fct(self) -> float:
        return self.t_end - self.t_start


def slowdown(fct: float, unloaded: float) -> float:
    if unloaded <= 0:
        raise ValueError("unloaded fct must be positive")
    return fct / unloaded


def summarize_slowdowns(records, unloaded_fn):
    """Per-band nearest-rank p50/p99 of slowdown.  unloaded_fn maps a
    FlowRecord to its unloaded FCT.  Returns {band: (n, p50, p99)} for
    bands with at least one record."""
    by_band = {b: [] for b in BANDS}
    for r in records:
        s = slowdown(r.fct, unloaded_fn(r))
        by_band[band_of(r.size_bytes)].append(s)
        by_band["all"].append(s)
    out = {}
    for band, vals in by_band.items():
        if vals:
            out[band] = (len(vals), percentile(vals, 50), percentile(vals, 99))
    return out
