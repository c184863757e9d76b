"""The black-box victim: a gyroscope-driven kinematics controller and motor,
with a sensor digitization model that folds an out-of-band resonant carrier
into the sensing band under sampling-interval drift, and an acoustic
emanation synthesizer whose in-band energy tracks motor power.

The plant runs in fixed-step lockstep: sample -> control -> actuate -> emit.
All randomness (sampling drift, transduction phase, background noise) comes
from seeded generators, so runs are bit-reproducible.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .dsp import TWO_PI, BandSpec, SampleChunk

DEG_PER_REV = 360.0


class ConfigError(ValueError):
    """Raised for inconsistent plant or sampler configuration."""


@dataclass
class TransductionModel:
    """How an acoustic carrier becomes a spurious angular-rate signal.

    The gain curve is a Lorentzian resonance peak; carriers farther than
    ``band_halfwidths`` half-widths from the center couple not at all. The
    initial phase of the induced signal is drawn once per run and is unknown
    to the attacker by construction.
    """

    resonant_center: float = 19400.0
    half_width: float = 200.0
    peak_gain: float = 25.0  # deg/s induced per unit carrier amplitude at resonance
    band_halfwidths: float = 5.0
    initial_phase: float = 0.0

    def induced_amplitude(self, carrier_freq, carrier_amplitude):
        """Induced rate amplitude A0 (deg/s) for a carrier at the given
        frequency and drive amplitude."""
        f = np.asarray(carrier_freq, dtype=np.float64)
        detune = (f - self.resonant_center) / self.half_width
        gain = self.peak_gain / (1.0 + detune**2)
        gain = np.where(np.abs(detune) > self.band_halfwidths, 0.0, gain)
        return gain * np.asarray(carrier_amplitude, dtype=np.float64)


class DriftProcess:
    """Per-sample sampling-interval drift: white jitter plus a random-walk bias.

    Values are seconds of deviation from the nominal sampling period. The
    accumulated sum of the drift perturbs the phase of the aliased signal,
    amplified by the harmonic index of the carrier, so even nanosecond-scale
    deviations matter.
    """

    def __init__(self, jitter_std=5e-9, walk_std=1e-12, seed=0):
        self.jitter_std = float(jitter_std)
        self.walk_std = float(walk_std)
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._bias = 0.0

    def draw(self, n):
        """Next n drift values delta[i], in stream order."""
        jitter = (
            self._rng.normal(0.0, self.jitter_std, n)
            if self.jitter_std > 0
            else np.zeros(n)
        )
        if self.walk_std > 0:
            walk = self._bias + np.cumsum(self._rng.normal(0.0, self.walk_std, n))
            self._bias = walk[-1]
        else:
            walk = np.full(n, self._bias)
        return jitter + walk


class ZeroDrift(DriftProcess):
    """Ideal sampler: delta[i] == 0."""

    def __init__(self):
        super().__init__(jitter_std=0.0, walk_std=0.0)


class GyroSamplerModel:
    """Digitizes the true angular rate plus the transduced attack carrier at
    drifted sampling instants t_i = sum(1/F_S0 + delta[j])."""

    def __init__(self, nominal_rate=1000.0, drift: DriftProcess | None = None,
                 transduction: TransductionModel | None = None):
        if nominal_rate <= 0:
            raise ConfigError("nominal_rate must be positive")
        self.nominal_rate = float(nominal_rate)
        self.drift = drift if drift is not None else ZeroDrift()
        self.transduction = transduction if transduction is not None else TransductionModel()
        self._index = 0  # samples taken so far
        self._cum_drift = 0.0

    @property
    def sample_index(self):
        return self._index

    def next_sample_times(self, n):
        """Advance the sampler by n samples; returns their drifted instants."""
        delta = self.drift.draw(n)
        # keep sampling intervals positive and ordered
        limit = 0.45 / self.nominal_rate
        np.clip(delta, -limit, limit, out=delta)
        cum = self._cum_drift + np.cumsum(delta)
        idx = self._index + 1 + np.arange(n)
        times = idx / self.nominal_rate + cum
        self._index += n
        self._cum_drift = cum[-1]
        return times

    def sample_block(self, attack, true_rates, n):
        """Digitize n consecutive samples; true_rates is scalar or length n."""
        t = self.next_sample_times(n)
        base = np.broadcast_to(np.asarray(true_rates, dtype=np.float64), (n,))
        if attack is None:
            return base.copy(), t
        a0 = self.transduction.induced_amplitude(
            attack.frequency_at(t), attack.amplitude_at(t)
        )
        induced = a0 * np.sin(attack.phase_at(t) + self.transduction.initial_phase)
        return base + induced, t

    def sample(self, attack, true_rate):
        values, _ = self.sample_block(attack, true_rate, 1)
        return float(values[0])


def sample_gyro(model: GyroSamplerModel, attack, true_rate, sample_index):
    """One digitized sensor value; ``sample_index`` must advance by exactly 1
    per call on a given model instance."""
    if sample_index != model.sample_index:
        raise ValueError(
            f"sample_index {sample_index} out of order; model is at "
            f"{model.sample_index}"
        )
    return model.sample(attack, true_rate)


@dataclass
class VictimState:
    """Victim status at one simulation instant."""

    time: float = 0.0
    true_rate: float = 0.0  # deg/s
    perceived_heading: float = 0.0  # deg
    motor_command: float = 0.0  # dimensionless, clamped to [-1, 1]
    motor_speed: float = 0.0  # rpm, signed
    torque: float = 0.0  # N*m


@dataclass
class PlantConfig:
    """Victim plant parameters: heading controller, motor lag, and the
    acoustic emanation model."""

    controller_gain: float = 10.0  # rpm per degree of heading
    motor_time_constant: float = 0.08  # s
    max_speed: float = 300.0  # rpm
    motor_torque: float = 0.1  # N*m, constant load torque
    emanation_band: BandSpec = field(default_factory=lambda: BandSpec(14600.0, 16900.0))
    emanation_power_ratio: float = 1000.0  # alpha_p: motor power / acoustic power
    noise_floor: float = 1e-3  # background noise amplitude (std)
    acoustic_rate: float = 44100.0  # Hz
    emanation_tones: int = 5

    def __post_init__(self):
        for name in ("controller_gain", "motor_time_constant", "max_speed",
                     "motor_torque", "emanation_power_ratio", "noise_floor",
                     "acoustic_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        self.emanation_band.validate_for_rate(self.acoustic_rate)


def motor_power(torque, speed_rpm):
    """Mechanical output power in watts: P = tau * rpm * 2*pi / 60."""
    return torque * np.abs(speed_rpm) * TWO_PI / 60.0


def step_controller(state: VictimState, sensor_value, dt, cfg: PlantConfig) -> VictimState:
    """Integrate the sensed rate into the heading and set the motor command."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    heading = state.perceived_heading + sensor_value * dt
    command = float(np.clip(cfg.controller_gain * heading / cfg.max_speed, -1.0, 1.0))
    return replace(state, perceived_heading=heading, motor_command=command,
                   time=state.time + dt)


def step_motor(state: VictimState, dt, cfg: PlantConfig) -> VictimState:
    """First-order relaxation of the motor speed toward command * max_speed."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = dt / cfg.motor_time_constant
    target = state.motor_command * cfg.max_speed
    speed = state.motor_speed + a * (target - state.motor_speed)
    speed = float(np.clip(speed, -cfg.max_speed, cfg.max_speed))
    return replace(state, motor_speed=speed, torque=cfg.motor_torque)


class EmanationSynth:
    """Streams the acoustic signature of the motor: seeded background noise
    plus a tonal stack inside the emanation band.

    Total tonal power equals motor power / alpha_p (so in-band energy follows
    P = tau * rpm * 2*pi / 60), and the tones slide upward within the band as
    |speed| rises, giving the speed-dependent spectral structure."""

    def __init__(self, cfg: PlantConfig, seed=0):
        self.cfg = cfg
        self._rng = np.random.default_rng(seed)
        n = cfg.emanation_tones
        self._weights = 1.0 / (1.0 + np.arange(n))
        self._weights /= self._weights.sum()
        self._positions = np.linspace(0.08, 0.55, n)  # band-relative, at speed 0
        self._phases = self._rng.uniform(0.0, TWO_PI, n)
        self._index = 0

    def tone_frequencies(self, speed):
        band = self.cfg.emanation_band
        span = band.high_cut - band.low_cut
        shift = 0.35 * min(abs(speed) / self.cfg.max_speed, 1.0)
        return band.low_cut + span * (self._positions + shift)

    def render(self, speed, n_samples) -> SampleChunk:
        cfg = self.cfg
        p_s = motor_power(cfg.motor_torque, speed) / cfg.emanation_power_ratio
        amps = np.sqrt(2.0 * p_s * self._weights)
        freqs = self.tone_frequencies(speed)
        k = np.arange(1, n_samples + 1) / cfg.acoustic_rate
        phases = self._phases[:, None] + TWO_PI * freqs[:, None] * k[None, :]
        samples = amps @ np.sin(phases)
        samples += self._rng.normal(0.0, cfg.noise_floor, n_samples)
        self._phases = np.mod(
            self._phases + TWO_PI * freqs * (n_samples / cfg.acoustic_rate), TWO_PI
        )
        chunk = SampleChunk(samples, cfg.acoustic_rate, self._index)
        self._index += n_samples
        return chunk


def emit_acoustics(state: VictimState, dt, cfg: PlantConfig,
                   synth: EmanationSynth | None = None) -> SampleChunk:
    """Acoustic samples covering dt seconds of the current motor state.

    dt must align to a whole number of acoustic samples. Pass a persistent
    synth to keep tone phases continuous across calls.
    """
    n = dt * cfg.acoustic_rate
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(
            f"dt={dt} s is not an integer number of samples at "
            f"{cfg.acoustic_rate} Hz"
        )
    if synth is None:
        synth = EmanationSynth(cfg)
    return synth.render(state.motor_speed, int(round(n)))


@dataclass
class VictimTrace:
    """Per-step state trace of one run (arrays share the time axis)."""

    time: np.ndarray
    true_rate: np.ndarray
    sensor: np.ndarray
    heading: np.ndarray
    command: np.ndarray
    speed: np.ndarray


class TrueRateProfile:
    """Piecewise-constant true angular rate X(t) driving the victim."""

    def __init__(self, points=((0.0, 0.0),)):
        times = [p[0] for p in points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("true-rate profile times must be increasing")
        self._times = np.asarray(times, dtype=np.float64)
        self._rates = np.asarray([p[1] for p in points], dtype=np.float64)

    def __call__(self, t):
        idx = np.clip(np.searchsorted(self._times, t, side="right") - 1, 0,
                      len(self._times) - 1)
        return self._rates[idx]


class VictimPlant:
    """Lockstep victim simulation advancing in fixed acoustic-aligned blocks.

    Each block covers ``block_steps`` gyro samples at the nominal rate and
    emits the matching stretch of acoustic samples. The per-step recurrence
    (heading integration, command clamp, first-order motor) is evaluated
    vectorized but in exact per-step order, so results match the scalar
    single-step operators.
    """

    def __init__(self, cfg: PlantConfig, model: GyroSamplerModel,
                 attack=None, true_rate=None, noise_seed=0):
        self.cfg = cfg
        self.model = model
        self.attack = attack
        self.true_rate = true_rate if true_rate is not None else TrueRateProfile()
        self.dt = 1.0 / model.nominal_rate
        self.block_steps = self._commensurate_block(model.nominal_rate, cfg.acoustic_rate)
        self._acoustic_per_block = int(round(
            self.block_steps * cfg.acoustic_rate / model.nominal_rate))
        self.synth = EmanationSynth(cfg, seed=noise_seed)
        self.state = VictimState(torque=cfg.motor_torque)
        self._steps_done = 0
        self._trace = {k: [] for k in
                       ("time", "true_rate", "sensor", "heading", "command", "speed")}

    @staticmethod
    def _commensurate_block(gyro_rate, acoustic_rate):
        for k in range(1, 1001):
            n = k * acoustic_rate / gyro_rate
            if abs(n - round(n)) < 1e-9:
                return k
        raise ConfigError(
            f"gyro rate {gyro_rate} Hz and acoustic rate {acoustic_rate} Hz "
            "share no block of <= 1000 steps; choose commensurate rates"
        )

    @property
    def now(self):
        """Nominal simulation time reached so far."""
        return self._steps_done * self.dt

    @property
    def block_duration(self):
        return self.block_steps * self.dt

    def advance_block(self) -> SampleChunk:
        """Run one block of sample->control->actuate steps; returns the
        acoustic chunk emitted over the block."""
        n = self.block_steps
        dt = self.dt
        t_nominal = (self._steps_done + 1 + np.arange(n)) * dt
        rates = np.broadcast_to(self.true_rate(t_nominal), (n,))
        sensor, _ = self.model.sample_block(self.attack, rates, n)

        heading = self.state.perceived_heading + np.cumsum(sensor * dt)
        command = np.clip(self.cfg.controller_gain * heading / self.cfg.max_speed,
                          -1.0, 1.0)
        a = dt / self.cfg.motor_time_constant
        zi = np.array([(1.0 - a) * self.state.motor_speed])
        speed, _ = lfilter([a * self.cfg.max_speed], [1.0, -(1.0 - a)], command, zi=zi)
        np.clip(speed, -self.cfg.max_speed, self.cfg.max_speed, out=speed)

        self.state = VictimState(
            time=t_nominal[-1],
            true_rate=float(rates[-1]),
            perceived_heading=float(heading[-1]),
            motor_command=float(command[-1]),
            motor_speed=float(speed[-1]),
            torque=self.cfg.motor_torque,
        )
        self._steps_done += n
        tr = self._trace
        tr["time"].append(t_nominal)
        tr["true_rate"].append(np.asarray(rates, dtype=np.float64).copy())
        tr["sensor"].append(sensor)
        tr["heading"].append(heading)
        tr["command"].append(command)
        tr["speed"].append(speed)

        block_speed = float(np.mean(speed))
        return self.synth.render(block_speed, self._acoustic_per_block)

    def trace(self) -> VictimTrace:
        tr = {k: (np.concatenate(v) if v else np.empty(0))
              for k, v in self._trace.items()}
        return VictimTrace(**tr)


def run_victim(cfg: PlantConfig, model: GyroSamplerModel, attack=None,
               duration=1.0, true_rate=None, noise_seed=0):
    """Fixed-step lockstep run of the victim alone.

    Returns (VictimTrace, list of acoustic SampleChunks). Fully deterministic
    given the model and noise seeds.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    plant = VictimPlant(cfg, model, attack=attack, true_rate=true_rate,
                        noise_seed=noise_seed)
    blocks = int(round(duration / plant.block_duration))
    if blocks < 1:
        raise ConfigError("duration shorter than one simulation block")
    chunks = [plant.advance_block() for _ in range(blocks)]
    return plant.trace(), chunks
