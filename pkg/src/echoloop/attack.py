"""The external adversarial controller: extracts feedback from the victim's
acoustic stream, maintains dynamic thresholds and period estimates, and emits
real-time frequency (Switching) and amplitude (Side-Swing) adjustments.

This module is deliberately victim-blind: its only inputs from the victim
side are acoustic sample chunks, and its only outputs are AttackCommands. It
must never import or inspect victim internals.
"""

from dataclasses import dataclass, field

import numpy as np

from .dsp import (
    DEFAULT_FRAME_LENGTH,
    DEFAULT_WMA_WEIGHTS,
    BandSpec,
    FeedbackSeries,
    FrameBuffer,
    SampleChunk,
    StreamingBandpass,
    WmaSmoother,
    band_energy,
    spectral_frame,
)


@dataclass
class SwitchingConfig:
    """Dynamic-threshold frequency-switching parameters.

    The threshold is T_h = alpha_th * K - beta_th * K^2 of the recent feedback
    peak K; a falling crossing toggles the carrier between base_carrier and
    base_carrier + step, and each round decays the step by gamma down to
    min_step.
    """

    base_carrier: float
    alpha_th: float = 0.95
    beta_th: float = 0.0
    initial_step: float = 1.5
    min_step: float = 0.85
    gamma: float = 0.9
    peak_decay: float = 0.99  # per-sample decay of the tracked peak

    def __post_init__(self):
        if not 0 < self.alpha_th <= 1:
            raise ValueError("alpha_th must be in (0, 1]")
        if self.beta_th < 0:
            raise ValueError("beta_th must be >= 0")
        if not 0 < self.min_step <= self.initial_step:
            raise ValueError("need 0 < min_step <= initial_step")
        if not 0.8 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0.8, 1.0)")
        if not 0 < self.peak_decay <= 1:
            raise ValueError("peak_decay must be in (0, 1]")


@dataclass
class SideSwingConfig:
    """Amplitude-swing parameters for rectifying the induced oscillation."""

    high_amplitude: float
    low_amplitude: float
    window_N: int = 100
    loop_delay: float = 0.093  # s

    def __post_init__(self):
        if self.window_N < 10:
            raise ValueError("window_N must be >= 10")
        if not self.high_amplitude > self.low_amplitude >= 0:
            raise ValueError("need high_amplitude > low_amplitude >= 0")
        if self.loop_delay < 0:
            raise ValueError("loop_delay must be >= 0")


@dataclass
class AttackCommand:
    """A timestamped adjustment to the injected waveform."""

    issue_time: float
    kind: str  # "frequency_switch" | "amplitude_swing"
    new_frequency: float | None = None
    new_amplitude: float | None = None

    def __post_init__(self):
        if self.new_frequency is None and self.new_amplitude is None:
            raise ValueError("command must set a frequency or an amplitude")
        if self.kind not in ("frequency_switch", "amplitude_swing"):
            raise ValueError(f"unknown command kind {self.kind!r}")


@dataclass
class SwitchEvent:
    time: float
    old_frequency: float
    new_frequency: float
    step: float


@dataclass
class LoopTelemetry:
    """Append-only observability record of one attack-loop run."""

    feedback_times: list = field(default_factory=list)
    feedback_raw: list = field(default_factory=list)
    feedback_smoothed: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    carrier_hz: list = field(default_factory=list)
    amplitude: list = field(default_factory=list)
    switch_events: list = field(default_factory=list)
    period_estimates: list = field(default_factory=list)  # (time, p0)
    commands: list = field(default_factory=list)
    chunk_duration: float = 0.0
    latency_violated: bool = False

    def feedback_series(self) -> FeedbackSeries:
        return FeedbackSeries(
            np.asarray(self.feedback_raw),
            np.asarray(self.feedback_smoothed),
            self.chunk_duration,
        )


class FeedbackExtractor:
    """Streaming feedback pipeline: band-pass -> frame -> band-energy -> WMA.

    Emits one (frame_end_time, y, y0) triple per frame duration, strictly
    causal: only samples already pushed contribute.
    """

    def __init__(self, band: BandSpec, sample_rate: float,
                 frame_length: int = DEFAULT_FRAME_LENGTH,
                 weights=DEFAULT_WMA_WEIGHTS, window_function="rectangular"):
        self.band = band
        self.frame_length = int(frame_length)
        self.chunk_duration = self.frame_length / sample_rate
        self.window_function = window_function
        self._bandpass = StreamingBandpass(band, sample_rate)
        self._frames = FrameBuffer(self.frame_length)
        self._smoother = WmaSmoother(weights)
        self._times = []
        self._raw = []
        self._smoothed = []

    def push(self, chunk: SampleChunk):
        """Consume a chunk; returns newly completed (time, y, y0) triples."""
        filtered = self._bandpass.process(chunk)
        out = []
        for frame in self._frames.push(filtered):
            sf = spectral_frame(frame, self.frame_length,
                                window_function=self.window_function)
            y = band_energy(sf, self.band)
            y0 = self._smoother.push(y)
            self._times.append(sf.frame_end_time)
            self._raw.append(y)
            self._smoothed.append(y0)
            out.append((sf.frame_end_time, y, y0))
        return out

    def series(self) -> FeedbackSeries:
        return FeedbackSeries(np.asarray(self._raw), np.asarray(self._smoothed),
                              self.chunk_duration)


def extract_feedback(chunks, band: BandSpec,
                     frame_length: int = DEFAULT_FRAME_LENGTH,
                     weights=DEFAULT_WMA_WEIGHTS,
                     window_function="rectangular") -> FeedbackSeries:
    """Offline convenience wrapper running the streaming pipeline over a
    whole recording (a SampleChunk or an iterable of contiguous chunks)."""
    if isinstance(chunks, SampleChunk):
        chunks = [chunks]
    chunks = list(chunks)
    if not chunks:
        raise ValueError("no audio to analyze")
    extractor = FeedbackExtractor(band, chunks[0].sample_rate,
                                  frame_length=frame_length, weights=weights,
                                  window_function=window_function)
    for chunk in chunks:
        extractor.push(chunk)
    return extractor.series()


def update_threshold(recent_peak: float, cfg: SwitchingConfig) -> float:
    """Dynamic switching threshold T_h = alpha*K - beta*K^2, floored at 0."""
    if recent_peak < 0:
        raise ValueError("peak must be >= 0")
    return max(cfg.alpha_th * recent_peak - cfg.beta_th * recent_peak**2, 0.0)


class SwitchingController:
    """Feedback-driven frequency switching with step decay and drift
    compensation.

    Tracks the recent feedback peak since the last switch (decayed per sample
    to survive spurious spikes) and toggles the carrier on falling threshold
    crossings. The effective center frequency is nudged by the ratio of the
    last two same-parity inter-switch intervals to track accumulated
    sampling-drift phase slip.
    """

    def __init__(self, cfg: SwitchingConfig):
        self.cfg = cfg
        self.base = cfg.base_carrier
        self.step = cfg.initial_step
        self.at_base = True
        self.peak = 0.0
        self.threshold = 0.0
        self._prev_y0 = None
        self._prev_th = 0.0
        self._armed = True
        self._switch_times = []
        self.events = []

    @property
    def current_frequency(self):
        return self.base if self.at_base else self.base + self.step

    def step_controller(self, now: float, y0: float) -> AttackCommand | None:
        """Process one new feedback sample; returns a switch command or None."""
        if self._prev_y0 is None:
            self._prev_y0 = y0
            self.peak = y0
            self._prev_th = update_threshold(self.peak, self.cfg)
            self.threshold = self._prev_th
            return None
        self.peak = max(y0, self.peak * self.cfg.peak_decay)
        th = update_threshold(self.peak, self.cfg)
        self.threshold = th
        cmd = None
        if not self._armed and y0 > self._prev_y0:
            self._armed = True
        if self._armed and self._prev_y0 >= self._prev_th and y0 < th:
            cmd = self._switch(now)
        self._prev_y0 = y0
        self._prev_th = th
        return cmd

    def _switch(self, now: float) -> AttackCommand:
        old = self.current_frequency
        self._compensate_drift(now)
        self.at_base = not self.at_base
        new = self.current_frequency
        self.events.append(SwitchEvent(now, old, new, self.step))
        self._switch_times.append(now)
        del self._switch_times[:-5]
        self.step = max(self.cfg.gamma * self.step, self.cfg.min_step)
        self.peak = self._prev_y0
        self._armed = False
        return AttackCommand(issue_time=now, kind="frequency_switch",
                             new_frequency=new)

    def _compensate_drift(self, now: float):
        # same-parity intervals straddle one full toggle cycle each, so their
        # ratio drifts with the accumulated sampling-interval slip
        times = self._switch_times + [now]
        if len(times) < 5:
            return
        i_new = times[-1] - times[-3]
        i_old = times[-3] - times[-5]
        if i_old <= 0 or i_new <= 0:
            return
        adjust = self.step * (1.0 - i_new / i_old)
        limit = self.step / 2.0
        self.base += float(np.clip(adjust, -limit, limit))


def switching_step(controller: SwitchingController, now: float,
                   y0: float) -> AttackCommand | None:
    """Functional alias for one controller update per new feedback sample."""
    return controller.step_controller(now, y0)


def estimate_period(feedback: FeedbackSeries, window_N: int = 100):
    """Oscillation period from threshold crossings of the recent window.

    The threshold is the mean of the last ``window_N`` smoothed samples; the
    period is the mean spacing of same-direction crossings, in seconds.
    Returns None when fewer than two same-direction crossings exist (callers
    must defer Side-Swing scheduling until a period is available).
    """
    y = np.asarray(feedback.smoothed)[-window_N:]
    if len(y) < 4:
        return None
    th = y.mean()
    above = y > th
    up = np.flatnonzero(~above[:-1] & above[1:])
    down = np.flatnonzero(above[:-1] & ~above[1:])
    crossings = up if len(up) >= len(down) else down
    if len(crossings) < 2:
        return None
    return float(np.mean(np.diff(crossings)) * feedback.chunk_duration)


def side_swing_schedule(t_0: float, p_0: float, cfg: SideSwingConfig,
                        direction: int = 1, now: float | None = None):
    """Generator of alternating amplitude commands at
    T_0 + k*p_0/2 - T_offset (k = 1, 2, ...), with T_offset = p_0/4 +
    loop_delay.

    ``t_0`` is the most recent threshold-crossing time; ``direction`` selects
    which half-cycles receive the high amplitude (+1: the half-cycle starting
    at the crossing; -1: the opposite one).
    """
    if p_0 <= 0:
        raise ValueError("p_0 must be positive")
    if now is not None and now - t_0 > p_0:
        raise ValueError(
            f"stale T_0: crossing at {t_0} s is older than one period "
            f"({p_0} s) before now={now} s; re-synchronize first"
        )
    t_offset = p_0 / 4.0 + cfg.loop_delay
    first_high = direction > 0

    def commands():
        k = 1
        while True:
            high = first_high if k % 2 == 1 else not first_high
            yield AttackCommand(
                issue_time=t_0 + k * p_0 / 2.0 - t_offset,
                kind="amplitude_swing",
                new_amplitude=cfg.high_amplitude if high else cfg.low_amplitude,
            )
            k += 1

    return commands()


class SideSwingController:
    """Phase-locked amplitude swinging that steers the feedback level.

    Goals are relative: "up" swings the amplitude so the rectified
    perturbation drives the actuation level (observed through y0) higher,
    "down" drives it back toward the noise floor, "hold" keeps it near the
    level where the hold was commanded. Each up/down goal hard re-anchors
    the toggle comb to an upward crossing of the band level's running mean
    and then servos it onto later crossings. Crossings mark the phase of
    the |heading| oscillation as seen through the band level -- a frame
    that folds in the (unobservable) spin direction -- so in that frame a
    fixed comb parity always damps and its complement always pumps; no
    parity search is needed, only light probe-driven recovery when an
    anchor lands on a noise crossing.
    """

    PROBE_CYCLES = 3.0
    SETTLE_TIME = 1.2  # s before a comb change shows in the feedback
    TREND_SIGNIFICANCE = 0.05
    SUSPEND_CLIMB = 2.0  # min level growth before "up" can pause as saturated
    DOWN_FLOOR = 0.25
    RESUME_FRACTION = 0.75  # resume pumping when the level sags below this
    PERIOD_BLEND = 0.2  # weight of each new period measurement
    PERIOD_TRUST = 0.12  # max relative deviation from the nominal period
    CROSS_GAIN = 0.3  # phase-lock gain of the toggle comb onto crossings
    PIN_TIMEOUT = 2.5  # periods without a crossing => feedback is pinned
    DAMP_PARITY = 0  # comb parity that damps in the crossing-anchored frame
    MAX_DOWN_FLIPS = 1  # corrective parity flips allowed per "down" goal
    CLIMB_CAP = 1.9  # stop pumping once the level has grown this much: it
    # leaves the feedback well below the motor limit, where a later
    # slow-down still sees a live oscillation to anchor against
    OSC_FLOOR = 0.12  # oscillation amplitude relative to the level below
    # which the motor is at its limit: the level scale compresses near the
    # limit, but the visible oscillation collapses as the speed peaks clip
    # (measured ratio: >=0.16 while free, 0.07-0.09 once clipping)

    def __init__(self, cfg: SideSwingConfig, chunk_duration: float,
                 nominal_period: float | None = None):
        self.cfg = cfg
        self.chunk_duration = chunk_duration
        self.nominal_period = nominal_period
        # the attacker picked the carrier offset, so the nominal oscillation
        # period is known up front; measurements refine it from there
        self.p0 = nominal_period
        self.goal = None
        self._times = []
        self._y0 = []
        self._t0 = None  # last upward crossing of the short running mean
        self._last_cross = None
        self._toggle_k = 0
        self._parity = 0  # 0: high amplitude right after an upward crossing
        self._fall_probes = 0
        self._rise_probes = 0
        self._need_anchor = False
        self._down_flips = 0
        self._goal_start = None
        self._goal_start_level = None
        self._probe_deadline = None
        self._prev_probe_level = None
        self._flat_probes = 0
        self._committed = False  # probe confirmed progress toward the goal
        self._doubled = False
        self._suspended = False  # goal met for now; swing paused
        self._level_max = 0.0
        self._constant_emitted = False
        self.period_log = []

    # -- goal management -------------------------------------------------

    def set_goal(self, goal: str, now: float):
        if goal not in ("up", "down", "hold"):
            raise ValueError(f"unknown goal {goal!r}")
        self.goal = goal
        self._goal_start = now
        horizon = self.PROBE_CYCLES * self.p0 if self.p0 else None
        self._goal_start_level = self._recent_level(horizon=horizon)
        self._prev_probe_level = self._goal_start_level
        self._level_max = self._goal_start_level
        self._suspended = False
        self._committed = False
        self._constant_emitted = False
        self._flat_probes = 0
        if goal in ("up", "down"):
            self._fall_probes = 0
            self._rise_probes = 0
            self._down_flips = 0
            # re-anchor the comb on the next observed crossing and pick the
            # parity outright. Crossings mark the phase of the |heading|
            # oscillation as seen through the band level, a frame that
            # already folds in the (unobservable) spin direction -- so in
            # the anchored frame one fixed parity damps and its complement
            # pumps, for any seed, and no parity search is needed.
            self._parity = self.DAMP_PARITY if goal == "down" \
                else 1 - self.DAMP_PARITY
            if self._last_cross is not None and self.p0 is not None \
                    and now - self._last_cross < self.p0:
                # a crossing just went by: anchor to it directly instead of
                # idling up to a full period waiting for the next one
                self._t0 = self._last_cross
                self._toggle_k = 0
                self._need_anchor = False
            else:
                self._need_anchor = True
            if self.p0 is not None:
                self._probe_deadline = now + self.PROBE_CYCLES * self.p0
            else:
                self._probe_deadline = None

    # -- feedback ingestion ----------------------------------------------

    def step_controller(self, now: float, y0: float) -> list:
        """Process one feedback sample; returns commands to issue."""
        self._times.append(now)
        self._y0.append(y0)
        self._update_period(now)
        self._update_crossings(now)
        if self.goal is None or self.p0 is None or self._t0 is None:
            return []
        if self.goal == "hold":
            # a constant amplitude mostly holds the speed but lets it sag
            # slowly; regulate around the level where the hold was commanded
            # by borrowing the pump/damp combs inside a small deadband
            ref = self._goal_start_level
            lvl = self._recent_level(horizon=2 * self.p0)
            if ref and self._t0 is not None and lvl < 0.99 * ref:
                self._parity = 1 - self.DAMP_PARITY
                return self._due_toggles(now)
            return self._constant_amplitude(now)
        if self._last_cross is not None and \
                now - self._last_cross > self.PIN_TIMEOUT * self.p0:
            # the oscillation has vanished from the feedback: the victim's
            # motor is pinned at its limit and the band level carries no
            # phase information
            if self._probe_deadline is not None:
                self._probe_deadline = max(self._probe_deadline,
                                           now + self.PROBE_CYCLES * self.p0)
            # toggling blind only winds the heading deeper, so emit a
            # steady amplitude and wait for the victim to unwind far enough
            # that crossings reappear
            return self._constant_amplitude(now)
        m = max(2, int(round(self.p0 / self.chunk_duration)))
        osc = float(np.ptp(self._y0[-m:])) if len(self._y0) >= m else 0.0
        level_now = self._recent_level()
        collapsing = osc > 0.0 and osc < self.OSC_FLOOR * max(level_now, 1e-12)
        if self.goal == "up" and not self._suspended:
            start = max(self._goal_start_level or 0.0, 1e-9)
            capped = level_now > self.CLIMB_CAP * start
            if capped or (collapsing and level_now > 1.5 * start):
                # enough: stop pumping before the motor pins and the heading
                # winds past its command limit (deep windup would make the
                # later slow-down blind and glacial)
                self._suspended = True
                self._level_max = level_now
        self._check_probe(now)
        if self.goal == "down" and self._down_floor_reached():
            self._suspended = True
        if self._suspended:
            return self._constant_amplitude(now)
        return self._due_toggles(now)

    # -- internals --------------------------------------------------------

    def _recent_level(self, horizon=None):
        if not self._y0:
            return 0.0
        n = len(self._y0)
        if horizon is None:
            horizon = self.p0 if self.p0 else 1.0
        k = max(1, min(n, int(round(horizon / self.chunk_duration))))
        return float(np.mean(self._y0[-k:]))

    def _level_between(self, t_lo, t_hi):
        """Mean feedback level over the time window [t_lo, t_hi]."""
        times = np.asarray(self._times)
        lo = np.searchsorted(times, t_lo)
        hi = np.searchsorted(times, t_hi, side="right")
        if hi <= lo:
            return None
        return float(np.mean(self._y0[lo:hi]))

    def _update_period(self, now):
        n = len(self._y0)
        if n < self.cfg.window_N or n % max(self.cfg.window_N // 4, 1):
            return
        series = FeedbackSeries(np.asarray(self._y0), np.asarray(self._y0),
                                self.chunk_duration)
        est = estimate_period(series, self.cfg.window_N)
        if est is None:
            return
        if self.nominal_period is not None and est < 0.75 * self.nominal_period:
            # |level| feedback rectifies a zero-mean oscillation to twice the
            # frequency; fold the estimate back using the attacker-side hint
            est *= 2.0
        if self.p0 is None:
            self.p0 = est
        else:
            self.p0 += self.PERIOD_BLEND * (est - self.p0)
        if self.nominal_period is not None:
            lo = (1.0 - self.PERIOD_TRUST) * self.nominal_period
            hi = (1.0 + self.PERIOD_TRUST) * self.nominal_period
            self.p0 = float(np.clip(self.p0, lo, hi))
        self.period_log.append((now, self.p0))
        if self._probe_deadline is None and self.goal in ("up", "down") \
                and self._goal_start is not None:
            self._probe_deadline = now + self.PROBE_CYCLES * self.p0

    def _update_crossings(self, now):
        if self.p0 is None or len(self._y0) < 3:
            return
        m = max(2, int(round(self.p0 / self.chunk_duration)))
        if len(self._y0) < m + 1:
            return
        window = np.asarray(self._y0[-m:])
        mean_prev = np.mean(self._y0[-m - 1:-1])
        mean_now = float(np.mean(window))
        # a crossing only counts if the band level is actually oscillating;
        # otherwise measurement noise around a flat level produces a stream
        # of phantom crossings
        if np.ptp(window) < 0.02 * max(mean_now, 1e-12):
            return
        prev, cur = self._y0[-2], self._y0[-1]
        if prev <= mean_prev and cur > mean_now:
            if self._last_cross is None or now - self._last_cross > 0.4 * self.p0:
                if self._t0 is None or self._need_anchor:
                    self._t0 = now
                    self._toggle_k = 0
                    self._need_anchor = False
                else:
                    # nudge the comb toward the crossing instead of hard
                    # re-anchoring, so single noisy crossings cannot slew
                    # the toggle phase. The error folds modulo the full
                    # period: the comb stays glued to the anchored frame in
                    # which the parity keeps its pump/damp meaning, instead
                    # of drifting out of phase as small period errors
                    # accumulate over a phase.
                    err = (now - self._t0) % self.p0
                    if err > self.p0 / 2.0:
                        err -= self.p0
                    self._t0 += self.CROSS_GAIN * err
                self._last_cross = now

    def _check_probe(self, now):
        """Periodic trend check driving a small per-goal state machine.

        The anchored comb parity already points the right way, so the probes
        only watch for trouble: an "up" that keeps falling re-anchors (the
        anchor landed on a noise crossing), an "up" that stays flat without
        a period hint doubles the bootstrap period once (rectified feedback
        halves the apparent period), and a "down" that rises across two
        consecutive probes gets one corrective parity flip. A confirmed
        "up" that plateaus after a substantial climb is treated as
        saturated: swinging pauses so the victim's heading does not wind
        far past its command limit, and resumes if the level sags.
        """
        if self._probe_deadline is None or now < self._probe_deadline:
            return
        # the ratchet takes roughly a loop delay plus the motor and smoothing
        # lags to show in y0, so the trend compares a window just after the
        # last parity decision took effect with the freshest window
        mark = self._probe_deadline - self.PROBE_CYCLES * self.p0
        settle = self.SETTLE_TIME
        level = self._level_between(now - self.p0, now)
        baseline = self._level_between(mark + settle, mark + settle + self.p0)
        if level is None or baseline is None:
            level = self._recent_level(horizon=self.p0)
            baseline = self._prev_probe_level if self._prev_probe_level is not None \
                else (self._goal_start_level or 0.0)
        trend = level - baseline
        scale = max(level, baseline, 1e-12)
        rising = trend > self.TREND_SIGNIFICANCE * scale
        falling = trend < -self.TREND_SIGNIFICANCE * scale
        self._level_max = max(self._level_max, level)
        if self.goal == "up":
            if self._suspended:
                if level < self.RESUME_FRACTION * self._level_max:
                    self._suspended = False
                    self._level_max = level
            elif rising:
                self._committed = True
                self._flat_probes = 0
                self._fall_probes = 0
            elif falling:
                # the anchored pump parity should never produce a sustained
                # fall, so the anchor most likely landed on a noise crossing;
                # grab a fresh one. The first falling probe is forgiven:
                # right after a goal change the level can still be sinking
                # from the previous goal's momentum.
                self._fall_probes += 1
                if self._fall_probes > 1:
                    self._need_anchor = True
                    self._committed = False
                    self._flat_probes = 0
                    self._fall_probes = 0
            elif self._committed and self._level_max > self.SUSPEND_CLIMB * max(
                    self._goal_start_level or 0.0, 1e-9):
                self._suspended = True  # pumped to saturation
            else:
                # flat before a real climb: pumping takes a few periods to
                # bite, so mostly wait; after two flat probes in a row fall
                # back to doubling the period once when no attacker-side
                # period hint exists (|level| feedback of a zero-mean
                # oscillation is rectified to twice the frequency, so the
                # bootstrap estimate can come out at half the true period)
                self._committed = False
                self._flat_probes += 1
                if self._flat_probes >= 2:
                    if not self._doubled and self.nominal_period is None:
                        self.p0 *= 2.0
                        self._doubled = True
                    else:
                        self._need_anchor = True
                    self._flat_probes = 0
        else:  # down
            # the comb is hard re-anchored to a crossing at the goal change,
            # and in that frame the damping parity is invariant: crossings
            # mark the phase of the folded |heading| oscillation, which
            # absorbs the (unobservable) spin direction. So the probes stay
            # almost hands-off -- reacting to single noisy probes is how a
            # correct comb gets thrashed away. Only a rise sustained across
            # two consecutive probes (the comb has demonstrably lost its
            # anti-phase grip) warrants one corrective flip.
            if falling:
                self._committed = True
                self._rise_probes = 0
            elif rising:
                self._rise_probes += 1
                if self._rise_probes >= 2 and \
                        self._down_flips < self.MAX_DOWN_FLIPS:
                    self._parity = 1 - self._parity
                    self._down_flips += 1
                    self._committed = False
                    self._rise_probes = 0
            else:
                self._rise_probes = 0
        self._prev_probe_level = level
        self._probe_deadline = now + self.PROBE_CYCLES * self.p0

    def _down_floor_reached(self):
        if self._goal_start_level is None or self._goal_start_level <= 0:
            return False
        return self._recent_level() < self.DOWN_FLOOR * self._goal_start_level

    def _constant_amplitude(self, now):
        if self._constant_emitted:
            return []
        self._constant_emitted = True
        return [AttackCommand(issue_time=now + self.cfg.loop_delay,
                              kind="amplitude_swing",
                              new_amplitude=self.cfg.high_amplitude)]

    def _due_toggles(self, now):
        """Emit scheduled toggles landing within the next feedback interval."""
        self._constant_emitted = False
        # rebase the comb origin forward by whole periods (parity-preserving)
        # so the k counter stays small and p0 refinements act locally
        if now > self._t0 + self.p0:
            self._t0 += int((now - self._t0) // self.p0) * self.p0
            self._toggle_k = 0
        t_offset = self.p0 / 4.0 + self.cfg.loop_delay
        horizon = now + self.cfg.loop_delay + self.chunk_duration
        out = []
        k = self._toggle_k + 1
        while True:
            t_k = self._t0 + k * self.p0 / 2.0 - t_offset
            if t_k > horizon:
                break
            if t_k >= now + self.cfg.loop_delay:
                high = (k % 2 == 1) == (self._parity == 0)
                out.append(AttackCommand(
                    issue_time=t_k,
                    kind="amplitude_swing",
                    new_amplitude=self.cfg.high_amplitude if high
                    else self.cfg.low_amplitude,
                ))
            k += 1
            self._toggle_k = k - 1
        return out
