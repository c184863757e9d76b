"""Closed-loop orchestration: wires a victim plant's acoustic output into the
feedback extractor and routes attack commands back into the shared injection
waveform, in deterministic lockstep.

The attack side only ever sees acoustic chunks through :class:`VictimHandle`
and only ever acts through :class:`AttackCommand`; victim state stays on the
victim side of the handle.
"""

from dataclasses import dataclass, field

import numpy as np

from .attack import (
    AttackCommand,
    FeedbackExtractor,
    LoopTelemetry,
    SideSwingConfig,
    SideSwingController,
    SwitchingConfig,
    SwitchingController,
)
from .dsp import (
    DEFAULT_FRAME_LENGTH,
    DEFAULT_WMA_WEIGHTS,
    AttackWaveformSpec,
    BandSpec,
    FrequencyProgram,
    PiecewiseProgram,
)
from .victim import ConfigError, VictimPlant

MODES = ("observe", "oscillate", "switching", "side_swing", "procedure")


@dataclass
class AttackLoopConfig:
    """Attack-side configuration of one closed-loop run."""

    mode: str
    band: BandSpec
    carrier: float | None = None  # injected carrier for oscillate/side-swing
    amplitude: float = 1.0
    injection_start: float = 2.0
    ramp_time: float = 1.5  # smooth turn-on to avoid a heading step offset
    control_start: float = 8.0
    duration: float = 30.0
    frame_length: int = DEFAULT_FRAME_LENGTH
    wma_weights: tuple = DEFAULT_WMA_WEIGHTS
    window_function: str = "rectangular"
    loop_delay: float = 0.093
    switching: SwitchingConfig | None = None
    side_swing: SideSwingConfig | None = None
    nominal_alias: float | None = None  # attacker's nominal aliased frequency, Hz
    procedure: list = field(default_factory=list)  # [(goal, duration), ...]

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode != "observe":
            if self.mode == "switching":
                if self.switching is None:
                    raise ConfigError("switching mode needs a SwitchingConfig")
            elif self.carrier is None:
                raise ConfigError(f"mode {self.mode!r} needs a carrier frequency")
        if self.mode in ("side_swing", "procedure") and self.side_swing is None:
            raise ConfigError(f"mode {self.mode!r} needs a SideSwingConfig")
        if self.mode == "procedure" and not self.procedure:
            raise ConfigError("procedure mode needs a non-empty phase list")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.loop_delay < 0:
            raise ConfigError("loop_delay must be >= 0")


def build_attack_waveform(cfg: AttackLoopConfig) -> AttackWaveformSpec | None:
    """Injection waveform for a run: silent until injection_start, then a
    raised-cosine stepped amplitude ramp up to the target level.

    The smooth turn-on keeps the integral of the induced rate near zero, so
    the victim's heading picks up no step offset from the moment the carrier
    appears (it would otherwise depend on the unknown transduction phase).
    """
    if cfg.mode == "observe":
        return None
    carrier = cfg.carrier
    if carrier is None:
        carrier = cfg.switching.base_carrier
    amplitude = PiecewiseProgram(0.0)
    if cfg.ramp_time > 0:
        step = 0.02
        n_steps = max(int(round(cfg.ramp_time / step)), 1)
        for i in range(1, n_steps + 1):
            frac = 0.5 * (1.0 - np.cos(np.pi * i / n_steps))
            amplitude.set_at(cfg.injection_start + i * step, cfg.amplitude * frac)
    else:
        amplitude.set_at(cfg.injection_start, cfg.amplitude)
    return AttackWaveformSpec(
        amplitude=amplitude,
        frequency=FrequencyProgram(carrier),
        initial_phase=0.0,
    )


class VictimHandle:
    """Black-box port of a running plant: acoustic chunks out, commands in."""

    def __init__(self, plant: VictimPlant):
        self._plant = plant

    @property
    def now(self):
        return self._plant.now

    @property
    def acoustic_rate(self):
        return self._plant.cfg.acoustic_rate

    @property
    def block_duration(self):
        return self._plant.block_duration

    def advance_block(self):
        return self._plant.advance_block()

    def apply_command(self, cmd: AttackCommand) -> float:
        """Mutate the shared injection waveform; returns the effective time
        (commands can only shape the not-yet-sampled future)."""
        attack = self._plant.attack
        if attack is None:
            raise ConfigError("victim run has no injection waveform to adjust")
        t = max(cmd.issue_time, self._plant.now)
        if cmd.new_frequency is not None:
            t = max(t, attack.frequency.last_breakpoint_time)
            attack.set_frequency(t, cmd.new_frequency)
        if cmd.new_amplitude is not None:
            t = max(t, attack.amplitude.last_breakpoint_time)
            attack.set_amplitude(t, cmd.new_amplitude)
        return t


def _goal_schedule(cfg: AttackLoopConfig):
    if cfg.mode == "side_swing":
        return [(cfg.control_start, "up")]
    schedule = []
    t = cfg.control_start
    goal_names = {"spin_up": "up", "hold": "hold", "slow_down": "down"}
    for goal, duration in cfg.procedure:
        schedule.append((t, goal_names.get(goal, goal)))
        t += duration
    return schedule


def run_attack_loop(plant: VictimPlant, cfg: AttackLoopConfig, audio_sink=None):
    """Execute the closed loop in deterministic lockstep.

    Returns (LoopTelemetry, VictimTrace). The plant must have been built with
    the waveform from :func:`build_attack_waveform` for this config.
    ``audio_sink``, if given, receives every emitted acoustic chunk (e.g. for
    WAV export).
    """
    handle = VictimHandle(plant)
    extractor = FeedbackExtractor(cfg.band, handle.acoustic_rate,
                                  frame_length=cfg.frame_length,
                                  weights=cfg.wma_weights,
                                  window_function=cfg.window_function)
    telemetry = LoopTelemetry(chunk_duration=extractor.chunk_duration)

    switching = None
    side_swing = None
    if cfg.mode == "switching":
        switching = SwitchingController(cfg.switching)
    elif cfg.mode in ("side_swing", "procedure"):
        hint = 1.0 / abs(cfg.nominal_alias) if cfg.nominal_alias else None
        side_swing = SideSwingController(cfg.side_swing, extractor.chunk_duration,
                                         nominal_period=hint)
    goals = _goal_schedule(cfg) if side_swing is not None else []
    next_goal = 0

    attack = plant.attack
    blocks = int(round(cfg.duration / handle.block_duration))
    for _ in range(blocks):
        chunk = handle.advance_block()
        if audio_sink is not None:
            audio_sink(chunk)
        for t, y, y0 in extractor.push(chunk):
            commands = []
            threshold = 0.0
            if switching is not None and t >= cfg.control_start:
                cmd = switching.step_controller(t, y0)
                threshold = switching.threshold
                if cmd is not None:
                    commands.append(cmd)
            if side_swing is not None:
                while next_goal < len(goals) and t >= goals[next_goal][0]:
                    side_swing.set_goal(goals[next_goal][1], t)
                    next_goal += 1
                # the controller ingests feedback from the very first frame
                # (periods and crossings lock before the first goal arrives);
                # it emits no commands until a goal is set
                commands.extend(side_swing.step_controller(t, y0))
            for cmd in commands:
                issue = max(cmd.issue_time, t + cfg.loop_delay)
                cmd.issue_time = handle.apply_command(
                    AttackCommand(issue, cmd.kind, cmd.new_frequency,
                                  cmd.new_amplitude))
                telemetry.commands.append(cmd)
            telemetry.feedback_times.append(t)
            telemetry.feedback_raw.append(y)
            telemetry.feedback_smoothed.append(y0)
            telemetry.thresholds.append(threshold)
            if attack is not None:
                telemetry.carrier_hz.append(float(attack.frequency_at(t)))
                telemetry.amplitude.append(float(attack.amplitude_at(t)))
            else:
                telemetry.carrier_hz.append(0.0)
                telemetry.amplitude.append(0.0)

    if switching is not None:
        telemetry.switch_events = switching.events
    if side_swing is not None:
        telemetry.period_estimates = side_swing.period_log
    return telemetry, plant.trace()


def replay_commands(plant: VictimPlant, commands, duration: float):
    """Re-apply a recorded command log against a fresh victim.

    With identical seeds and configuration this reproduces the closed-loop
    victim trace exactly, which makes command logs usable as regression
    fixtures.
    """
    handle = VictimHandle(plant)
    pending = sorted(commands, key=lambda c: c.issue_time)
    i = 0
    blocks = int(round(duration / handle.block_duration))
    for _ in range(blocks):
        horizon = handle.now + handle.block_duration
        while i < len(pending) and pending[i].issue_time <= horizon:
            handle.apply_command(pending[i])
            i += 1
        handle.advance_block()
    return plant.trace()
