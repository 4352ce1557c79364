"""Aggregate rate control for one bundle.

A delay controller (Copa-style or a simpler multiplicative rule) sets
the pacing rate from measured queueing delay.  A sinusoidal pulse is
superimposed on every rate decision; the receive-rate response to the
pulse, seen through an FFT, classifies cross traffic as elastic or not.
Elastic cross traffic switches the controller to a PI loop that holds a
small queue at the edge box and otherwise lets endhost congestion
control compete.  Heavy ack reordering disables control entirely.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

TICK_S = 0.01

PULSE_PERIOD_S = 0.2
PULSE_AMPL_FRACTION = 0.25
# the compensating down-pulse is a half sine over the remaining 3T/4 at
# a third of the amplitude, so both halves integrate to A*T/(2*pi)
PULSE_DOWN_FRACTION = 1.0 / 3.0

COPA_DELTA = 0.5
DQ_FLOOR_S = 1e-4
# the floor keeps two things alive when cross traffic crowds us out:
# the feedback stream (a zero release rate wedges the loop open) and
# the pulse shape (the trough swings PULSE_DOWN amplitude, about
# 0.083*mu, below base; a base under that clips the trough to zero and
# smears the spectral signature the elasticity test needs)
RATE_CLAMP_LO = 0.15
RATE_CLAMP_HI = 2.0
COPA_MIN_CWND_PKTS = 2.0
COPA_VELOCITY_CAP = 512.0
# standing queue the pulses themselves put in the path: each up half
# integrates to A*T/(2*pi) bits, i.e. A/mu * T/(2*pi) seconds of
# draining when A = PULSE_AMPL_FRACTION * mu.  The windowed-min
# standing filter already sees the pulse trough rather than the peak,
# so half the bound is discounted: enough that the controller does not
# chase its own pulses, without parking a large real queue in the path.
PULSE_DQ_ALLOWANCE_S = 0.5 * PULSE_AMPL_FRACTION * PULSE_PERIOD_S / (2.0 * math.pi)

BASICDELAY_GAIN = 0.5
BASICDELAY_QTARGET_FRACTION = 0.125  # of min_rtt, in-network

PI_ALPHA = 10.0
PI_BETA = 10.0
PI_QTARGET_S = 0.010

MU_WINDOW_S = 10.0

ELASTIC_WINDOW_S = 5.0
ELASTIC_MIN_PERIODS = 5
ELASTIC_THRESHOLD = 2.0
# two-factor gate on the spectral verdict.  With the link to ourselves
# the cross-rate estimate is quantization noise that tracks our own
# pulses, so a verdict needs a real cross-traffic level; and elastic
# senders can only be answering our pulses if there is queue pressure,
# so it also needs a standing queue (median over the detector window,
# which bursts cannot flip).  The queue bar sits below the delay-mode
# operating point plus margin: an elastic takeover must be caught while
# the delay controller is still absorbing it, before the collapse
# drives our release rate so low that the pulse shape degrades.
ELASTIC_MIN_CROSS_FRACTION = 0.08
ELASTIC_MIN_QUEUE_S = 0.007
# elephants answer pulses only around their drop episodes, so the
# score honestly dips for several seconds mid-fight; competitive mode
# ends only after the verdict stays inelastic for this long.  Queue
# evidence cannot extend the stay: while competing, the loop itself
# keeps the bottleneck queue standing.
ELASTIC_EXIT_HOLD_S = 10.0
# after dropping back to delay control the bottleneck queue built
# during the fight takes a while to drain, and the drain transient
# re-opens the queue gate; suppress re-entry until the loop has
# re-converged
REENTRY_REFRACTORY_S = 20.0
SIGNAL_STALE_S = 1.0

REORDER_DISABLE = 0.05
REORDER_REENABLE = 0.01
REORDER_REENABLE_HOLD_S = 5.0
DISABLED_RATE_MULT = 10.0


class ControllerMode(enum.Enum):
    DELAY_CONTROL = "delay"
    COMPETITIVE = "competitive"
    DISABLED = "disabled"


def pulse_rate(base_bps: float, amplitude_bps: float, t: float,
               period_s: float = PULSE_PERIOD_S) -> float:
    """Mean-neutral pulse around base: quarter-period up sine followed
    by a compensating low-amplitude down sine."""
    tau = t % period_s
    if tau < period_s / 4.0:
        r = base_bps + amplitude_bps * math.sin(4.0 * math.pi * tau / period_s)
    else:
        r = base_bps - amplitude_bps * PULSE_DOWN_FRACTION * math.sin(
            (4.0 * math.pi / 3.0) * (tau - period_s / 4.0) / period_s)
    return max(r, 0.0)


def cross_rate(mu_bps: float, send_rate_bps: float,
               recv_rate_bps: float) -> float:
    """Estimated cross-traffic rate at the shared bottleneck."""
    if recv_rate_bps <= 0:
        return 0.0
    return max(0.0, mu_bps * send_rate_bps / recv_rate_bps - send_rate_bps)


def mode_transition(mode: ControllerMode, elastic: bool,
                    reorder_frac: float) -> ControllerMode:
    """Instantaneous mode rule; reordering dominates elasticity."""
    if reorder_frac > REORDER_DISABLE:
        return ControllerMode.DISABLED
    if elastic:
        return ControllerMode.COMPETITIVE
    return ControllerMode.DELAY_CONTROL


class ModeFsm:
    """mode_transition plus the one piece of hysteresis: leaving
    DISABLED requires reordering below REORDER_REENABLE for
    REORDER_REENABLE_HOLD_S."""

    def __init__(self):
        self.mode = ControllerMode.DELAY_CONTROL
        self._low_reorder_since = None

    def step(self, t: float, elastic: bool, reorder_frac: float) -> ControllerMode:
        if self.mode is ControllerMode.DISABLED:
            if reorder_frac < REORDER_REENABLE:
                if self._low_reorder_since is None:
                    self._low_reorder_since = t
                if t - self._low_reorder_since >= REORDER_REENABLE_HOLD_S:
                    self.mode = ControllerMode.COMPETITIVE if elastic \
                        else ControllerMode.DELAY_CONTROL
                    self._low_reorder_since = None
            else:
                self._low_reorder_since = None
        else:
            self.mode = mode_transition(self.mode, elastic, reorder_frac)
            if self.mode is ControllerMode.DISABLED:
                self._low_reorder_since = None
        return self.mode


class MuEstimator:
    """Windowed max of receive-rate samples: the bottleneck capacity
    estimate used for clamps, pulse sizing, and the PI loop."""

    def __init__(self, window_s: float = MU_WINDOW_S):
        self.window_s = window_s
        self._samples: list[tuple[float, float]] = []
        self._last = 0.0

    def push(self, t: float, rate_bps: float) -> None:
        self._samples.append((t, rate_bps))
        cutoff = t - self.window_s
        while self._samples and self._samples[0][0] < cutoff:
            self._samples.pop(0)

    def value(self) -> float:
        if self._samples:
            self._last = max(v for _, v in self._samples)
        return self._last


class ElasticityDetector:
    """Spectral test: does the cross-rate estimate track the pulse
    frequency?  Elastic cross traffic reacts to every up-pulse, so its
    rate picks up a component at the pulse repetition rate f_p = 1/T.
    (The sine inside the up-pulse sweeps 2/T, but the response follows
    the bump envelope: queueing integrates the bump and the cross
    traffic's backoff spans most of a period, so coherent energy lands
    at the repetition rate, not the carrier.)"""

    def __init__(self, window_s: float = ELASTIC_WINDOW_S,
                 tick_s: float = TICK_S,
                 pulse_period_s: float = PULSE_PERIOD_S):
        self.tick_s = tick_s
        self.f_pulse = 1.0 / pulse_period_s
        self.min_samples = int(ELASTIC_MIN_PERIODS * pulse_period_s / tick_s)
        self.max_samples = int(window_s / tick_s)
        self._samples: list[float] = []
        self.last_score = 0.0

    def push(self, cross_rate_bps: float) -> None:
        self._samples.append(cross_rate_bps)
        if len(self._samples) > self.max_samples:
            del self._samples[:len(self._samples) - self.max_samples]

    def mean_rate(self) -> float:
        """Windowed mean of the cross-rate series, for contention checks."""
        if not self._samples:
            return 0.0
        return float(np.mean(self._samples))

    def decide(self, mu_bps: float, queueing_s: float = float("inf")) -> bool:
        n = len(self._samples)
        if n < self.min_samples or mu_bps <= 0:
            self.last_score = 0.0
            return False
        x = np.asarray(self._samples)
        mean_cross = float(x.mean())
        # remove the linear trend and taper the window: during a cross
        # traffic takeover the series ramps by tens of Mbit/s, and the
        # ramp's spectral skirt would otherwise bury the pulse band
        t = np.arange(n, dtype=float)
        coef = np.polyfit(t, x, 1)
        detrended = (x - np.polyval(coef, t)) * np.hanning(n)
        spec = np.abs(np.fft.rfft(detrended))
        df = 1.0 / (n * self.tick_s)
        i_p = round(self.f_pulse / df)
        i_2p = round(2.0 * self.f_pulse / df)
        if i_p <= 0 or i_p >= len(spec):
            self.last_score = 0.0
            return False
        # peak over the immediate neighborhood of f_p; the comparison
        # band starts past the Hann main lobe (+/-2 bins) so the peak's
        # own leakage cannot mask it
        lo = min(i_p + 3, len(spec))
        band = spec[lo:min(i_2p + 1, len(spec))]
        peak = float(spec[max(i_p - 1, 1):i_p + 2].max())
        floor = 1e-3 * n * max(1.0, float(np.abs(detrended).mean()))
        denom = float(band.max()) if band.size else 0.0
        self.last_score = peak / max(denom, 1e-12) if peak > floor else 0.0
        if mean_cross < ELASTIC_MIN_CROSS_FRACTION * mu_bps:
            return False
        if queueing_s < ELASTIC_MIN_QUEUE_S:
            return False
        return self.last_score >= ELASTIC_THRESHOLD


class CopaDelayControl:
    """Copa-style window rule: move cwnd toward rtt/(delta*dq) packets,
    stepping 1/delta packets per RTT with velocity doubling while the
    direction holds.  dq uses the standing (windowed-min) RTT so the
    controller does not chase its own pulses."""

    def __init__(self, delta: float = COPA_DELTA):
        self.delta = delta
        self.cwnd_pkts = 10.0
        self.velocity = 1.0
        self._direction = 0
        self._dir_since = None
        self._dir_windows = 0

    def reinit(self, rate_bps: float, rtt_s: float, mean_pkt_bytes: float) -> None:
        self.cwnd_pkts = max(COPA_MIN_CWND_PKTS,
                             rate_bps * rtt_s / (8.0 * mean_pkt_bytes))
        self.velocity = 1.0
        self._direction = 0
        self._dir_since = None
        self._dir_windows = 0

    def update(self, view, t: float, dt: float, mean_pkt_bytes: float,
               mu_bps: float | None = None) -> float:
        rtt = max(view.rtt, 1e-4)
        dq = max(view.rtt_standing - view.min_rtt - PULSE_DQ_ALLOWANCE_S,
                 DQ_FLOOR_S)
        target_pps = 1.0 / (self.delta * dq)
        current_pps = self.cwnd_pkts / rtt
        direction = 1 if current_pps < target_pps else -1
        if direction != self._direction:
            self._direction = direction
            self._dir_since = t
            self._dir_windows = 0
            self.velocity = 1.0
        elif self._dir_since is not None and t - self._dir_since >= rtt:
            # velocity doubles only once the direction has persisted for
            # three RTT windows, so near-equilibrium steps stay small
            self._dir_windows += 1
            self._dir_since = t
            if self._dir_windows >= 3:
                self.velocity = min(self.velocity * 2.0, COPA_VELOCITY_CAP)
        if mu_bps and view.min_rtt != float("inf"):
            # soft-landing governor: the fixed point is cwnd = BDP + 1/delta
            # packets (where rate == mu and dq == 1/(delta*cwnd/rtt)), and the
            # feedback lag is over a window, so a step larger than a fraction
            # of the remaining distance overshoots rail-to-rail
            eq = mu_bps * view.min_rtt / (8.0 * mean_pkt_bytes) + 1.0 / self.delta
            self.velocity = min(
                self.velocity,
                max(1.0, self.delta * abs(self.cwnd_pkts - eq) / 2.0))
        self.cwnd_pkts += direction * (self.velocity / self.delta) * (dt / rtt)
        self.cwnd_pkts = max(self.cwnd_pkts, COPA_MIN_CWND_PKTS)
        return self.cwnd_pkts * 8.0 * mean_pkt_bytes / rtt

    def damp(self) -> None:
        """Anti-windup: the emitted rate was clamped, so stop velocity
        from compounding while the plant cannot follow."""
        self.velocity = 1.0
        self._dir_windows = 0


class BasicDelayControl:
    """Multiplicative rule toward a small in-network queue target."""

    def __init__(self, gain: float = BASICDELAY_GAIN):
        self.gain = gain
        self.rate_bps = 1e6

    def reinit(self, rate_bps: float, rtt_s: float, mean_pkt_bytes: float) -> None:
        self.rate_bps = max(rate_bps, 1e5)

    def update(self, view, t: float, dt: float, mean_pkt_bytes: float,
               mu_bps: float | None = None) -> float:
        rtt = max(view.rtt, 1e-4)
        dq = max(view.rtt_standing - view.min_rtt, 0.0)
        q_target = 1.25 * view.min_rtt * 0.1
        self.rate_bps *= 1.0 + self.gain * (q_target - dq) / rtt
        return self.rate_bps

    def damp(self) -> None:
        pass


class PiQueueControl:
    """Holds PI_QTARGET_S of queue at the edge box while endhost
    congestion control does the competing."""

    def __init__(self):
        self.rate_bps = 0.0
        self._q_prev = None

    def reinit(self, rate_bps: float) -> None:
        self.rate_bps = rate_bps
        self._q_prev = None

    def update(self, queue_delay_s: float, dt: float, mu_bps: float) -> float:
        dq_dt = 0.0 if self._q_prev is None else (queue_delay_s - self._q_prev) / dt
        self._q_prev = queue_delay_s
        self.rate_bps += mu_bps * (PI_ALPHA * (queue_delay_s - PI_QTARGET_S)
                                   + PI_BETA * dq_dt) * dt
        # same floor as delay control: a zero release rate would stop
        # the feedback stream and wedge the loop open
        self.rate_bps = min(max(self.rate_bps, RATE_CLAMP_LO * mu_bps),
                            RATE_CLAMP_HI * mu_bps)
        return self.rate_bps


@dataclass
class ControllerDecision:
    rate_bps: float | None
    mode: ControllerMode
    base_rate_bps: float | None
    mu_bps: float
    elastic: bool
    elastic_score: float


class BundleController:
    """Per-bundle control loop, advanced once per 10 ms tick.

    Returns None for the rate until measurement produces the first full
    signal set; the caller should treat that as pass-through.
    """

    DELAY_VARIANTS = {"copa": CopaDelayControl, "basicdelay": BasicDelayControl}

    def __init__(self, variant: str = "copa", tick_s: float = TICK_S):
        if variant not in self.DELAY_VARIANTS:
            raise ValueError(f"unsupported delay-control variant: {variant!r}")
        self.variant = variant
        self.tick_s = tick_s
        self.delay_ctrl = self.DELAY_VARIANTS[variant]()
        self.pi = PiQueueControl()
        self.fsm = ModeFsm()
        self.mu = MuEstimator()
        self.detector = ElasticityDetector(tick_s=tick_s)
        self._last_t = None
        self._last_rate = None
        self._last_base = None
        self._last_cross = 0.0
        self._started = False
        self._first_signal_t = None
        self._last_elastic_t = None
        self._refractory_until = 0.0
        self._queue_hist: list[tuple[float, float]] = []

    @property
    def mode(self) -> ControllerMode:
        return self.fsm.mode

    def tick(self, t: float, view, queue_delay_s: float, reorder_frac: float,
             mean_pkt_bytes: float) -> ControllerDecision:
        dt = self.tick_s if self._last_t is None else max(t - self._last_t, 1e-6)
        self._last_t = t
        if view is None or view.recv_rate is None or view.send_rate is None:
            return ControllerDecision(None, self.fsm.mode, None, self.mu.value(),
                                      False, 0.0)
        fresh = view.age <= SIGNAL_STALE_S
        mu_prev = self.mu.value()
        cross_busy = (mu_prev > 0
                      and self.detector.mean_rate()
                      >= ELASTIC_MIN_CROSS_FRACTION * mu_prev)
        if fresh and not cross_busy \
                and self.fsm.mode is not ControllerMode.COMPETITIVE:
            # our receive rate reads the bottleneck capacity only while
            # we have the link to ourselves; with cross traffic present
            # (or mid-fight) it is just our share, and pushing it would
            # decay the estimate and shrink the pulses that the
            # elasticity test depends on
            self.mu.push(t, view.recv_rate)
        mu = self.mu.value()
        if fresh:
            self._last_cross = cross_rate(mu, view.send_rate, view.recv_rate)
        else:
            self._last_cross = 0.0
        self.detector.push(self._last_cross)
        queueing = view.rtt_standing - view.min_rtt \
            if view.min_rtt != float("inf") else 0.0
        if fresh:
            self._queue_hist.append((t, queueing))
            cutoff = t - ELASTIC_WINDOW_S
            while self._queue_hist and self._queue_hist[0][0] < cutoff:
                self._queue_hist.pop(0)
        queue_med = float(np.median([q for _, q in self._queue_hist])) \
            if self._queue_hist else 0.0
        elastic = self.detector.decide(mu, queue_med)
        if self._first_signal_t is None:
            self._first_signal_t = t
        if t - self._first_signal_t < MU_WINDOW_S:
            # until the capacity estimate has seen one full window, the
            # cross-rate series is mostly our own ramp; do not classify
            elastic = False
        if self.fsm.mode is not ControllerMode.COMPETITIVE \
                and t < self._refractory_until:
            elastic = False
        if elastic:
            self._last_elastic_t = t
        elif (self.fsm.mode is ControllerMode.COMPETITIVE
                and self._last_elastic_t is not None
                and t - self._last_elastic_t < ELASTIC_EXIT_HOLD_S):
            # elephants answer pulses only around their drop episodes;
            # bridge the quiet stretches instead of bouncing back to
            # delay control mid-fight
            elastic = True

        prev_mode = self.fsm.mode
        mode = self.fsm.step(t, elastic, reorder_frac)
        if prev_mode is ControllerMode.COMPETITIVE \
                and mode is ControllerMode.DELAY_CONTROL:
            self._refractory_until = t + REENTRY_REFRACTORY_S

        if not self._started:
            self.delay_ctrl.reinit(view.recv_rate, view.rtt, mean_pkt_bytes)
            self._started = True
        if mode is not prev_mode:
            self._on_mode_change(prev_mode, mode, view, mean_pkt_bytes, mu)

        if not fresh and self._last_base is not None:
            # idle bundle: hold the last base rate, unpulsed, rather than
            # react to stale signals.  Holding the pulsed instantaneous
            # rate could latch a trough of zero and starve the feedback
            # loop for good.
            return ControllerDecision(self._last_base, mode, self._last_base,
                                      mu, elastic, self.detector.last_score)

        if mode is ControllerMode.DISABLED:
            rate = base = DISABLED_RATE_MULT * max(mu, 1e6)
        elif mode is ControllerMode.COMPETITIVE:
            base = self.pi.update(queue_delay_s, dt, mu)
            rate = pulse_rate(base, PULSE_AMPL_FRACTION * mu, t)
        else:
            raw = self.delay_ctrl.update(view, t, dt, mean_pkt_bytes, mu)
            base = min(max(raw, RATE_CLAMP_LO * mu), RATE_CLAMP_HI * mu) \
                if mu > 0 else raw
            if base != raw:
                self.delay_ctrl.damp()
            self._sync_delay_state(base, view, mean_pkt_bytes)
            rate = pulse_rate(base, PULSE_AMPL_FRACTION * mu, t)
        self._last_rate = rate
        self._last_base = base
        return ControllerDecision(rate, mode, base, mu, elastic,
                                  self.detector.last_score)

    def _sync_delay_state(self, clamped_rate: float, view, mean_pkt_bytes: float):
        # keep internal state consistent with the clamped output so the
        # controller does not wind up outside the operating range
        if isinstance(self.delay_ctrl, BasicDelayControl):
            self.delay_ctrl.rate_bps = clamped_rate
        else:
            self.delay_ctrl.cwnd_pkts = max(
                COPA_MIN_CWND_PKTS,
                clamped_rate * max(view.rtt, 1e-4) / (8.0 * mean_pkt_bytes))

    def _on_mode_change(self, old: ControllerMode, new: ControllerMode,
                        view, mean_pkt_bytes: float, mu: float) -> None:
        carry = self._last_rate if self._last_rate else \
            (view.recv_rate if view.recv_rate else 1e6)
        if new is ControllerMode.COMPETITIVE:
            self.pi.reinit(carry)
        elif new is ControllerMode.DELAY_CONTROL:
            self.delay_ctrl.reinit(carry, view.rtt, mean_pkt_bytes)
