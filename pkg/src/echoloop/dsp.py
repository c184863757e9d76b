"""Stream-oriented DSP building blocks shared by the victim emanation path and
the feedback extractor: phase-continuous sinusoid synthesis from piecewise
frequency/amplitude programs, streaming Butterworth band-pass filtering,
fixed-length spectral framing, band-energy reduction and weighted
moving-average smoothing.

Everything operates on double-precision samples. Streaming operators carry
explicit state objects; one state instance belongs to exactly one stream.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfilt, sosfreqz

TWO_PI = 2.0 * np.pi

DEFAULT_FRAME_LENGTH = 4096
DEFAULT_WMA_WEIGHTS = (6.0 / 18.0, 5.0 / 18.0, 4.0 / 18.0, 3.0 / 18.0)


class ProgramError(ValueError):
    """Raised for malformed piecewise control programs."""


@dataclass
class SampleChunk:
    """A contiguous block of real samples from one stream.

    ``start_sample_index`` counts samples since the stream origin, so
    consecutive chunks of a stream tile the index axis without gaps.
    """

    samples: np.ndarray
    sample_rate: float
    start_sample_index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or len(self.samples) == 0:
            raise ValueError("chunk must hold a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("chunk contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def end_sample_index(self):
        return self.start_sample_index + len(self.samples)

    @property
    def start_time(self):
        return self.start_sample_index / self.sample_rate

    @property
    def end_time(self):
        return self.end_sample_index / self.sample_rate


class PiecewiseProgram:
    """Piecewise-constant function of time with strictly increasing breakpoints.

    Used for amplitude programs; values before the first breakpoint equal the
    first value.
    """

    def __init__(self, value, start_time=0.0):
        self._check_value(float(value))
        self._times = [float(start_time)]
        self._values = [float(value)]
        self._arrays = None

    @property
    def breakpoints(self):
        return list(zip(self._times, self._values))

    @property
    def last_breakpoint_time(self):
        return self._times[-1]

    def set_at(self, t, value):
        """Append a breakpoint; ``t`` must not precede the last one."""
        t = float(t)
        value = float(value)
        if t < self._times[-1]:
            raise ProgramError(
                f"breakpoint at t={t} precedes last breakpoint t={self._times[-1]}"
            )
        self._check_value(value)
        if t == self._times[-1]:
            self._values[-1] = value
            self._on_replace_last(value)
        else:
            self._on_append(t, value)
            self._times.append(t)
            self._values.append(value)
        self._arrays = None

    def _check_value(self, value):
        if value < 0:
            raise ProgramError("amplitude must be non-negative")

    def _on_append(self, t, value):
        pass

    def _on_replace_last(self, value):
        pass

    def _segment_indices(self, t):
        times, _ = self._as_arrays()
        idx = np.searchsorted(times, t, side="right") - 1
        return np.clip(idx, 0, len(times) - 1)

    def _as_arrays(self):
        if self._arrays is None:
            self._arrays = (np.asarray(self._times), np.asarray(self._values))
        return self._arrays

    def value_at(self, t):
        _, values = self._as_arrays()
        return values[self._segment_indices(t)]


class FrequencyProgram(PiecewiseProgram):
    """Piecewise-constant frequency program tracking the exact phase integral.

    The cumulative phase 2*pi*integral(f) is carried at every breakpoint with
    compensated summation, so frequency switches never reset or jump the
    phase: switching frequencies injects phase offsets only through the change
    in phase slope.
    """

    def __init__(self, frequency, start_time=0.0):
        self._cumphase = [0.0]
        self._comp = 0.0  # Kahan compensation for the running phase sum
        super().__init__(frequency, start_time=start_time)

    def _check_value(self, value):
        if value <= 0:
            raise ProgramError("frequency must be positive")

    def _on_append(self, t, value):
        inc = TWO_PI * self._values[-1] * (t - self._times[-1])
        y = inc - self._comp
        total = self._cumphase[-1] + y
        self._comp = (total - self._cumphase[-1]) - y
        self._cumphase.append(total)

    def _on_replace_last(self, value):
        pass  # phase up to the breakpoint is unaffected

    def phase_at(self, t):
        """Phase 2*pi*integral(f) accumulated from the program start to t."""
        times, values = self._as_arrays()
        cum = np.asarray(self._cumphase)
        idx = self._segment_indices(t)
        return cum[idx] + TWO_PI * values[idx] * (np.asarray(t) - times[idx])


@dataclass
class AttackWaveformSpec:
    """Time-varying amplitude/frequency program for the injected carrier."""

    amplitude: PiecewiseProgram
    frequency: FrequencyProgram
    initial_phase: float = 0.0

    @classmethod
    def constant(cls, frequency, amplitude=1.0, initial_phase=0.0):
        return cls(
            amplitude=PiecewiseProgram(amplitude),
            frequency=FrequencyProgram(frequency),
            initial_phase=float(initial_phase),
        )

    def amplitude_at(self, t):
        return self.amplitude.value_at(t)

    def frequency_at(self, t):
        return self.frequency.value_at(t)

    def phase_at(self, t):
        return self.frequency.phase_at(t)

    def set_frequency(self, t, frequency):
        self.frequency.set_at(t, frequency)

    def set_amplitude(self, t, amplitude):
        self.amplitude.set_at(t, amplitude)


def synthesize_waveform(spec, sample_rate, start_index, length):
    """Render ``length`` samples of A(t)*sin(phase(t) + phi0) at the given rate.

    Phase is continuous across chunk boundaries and across frequency-program
    breakpoints; sample i sits at time (start_index + i) / sample_rate.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    t = (start_index + np.arange(length)) / sample_rate
    samples = spec.amplitude_at(t) * np.sin(spec.phase_at(t) + spec.initial_phase)
    return SampleChunk(samples, sample_rate, start_index)


@dataclass(frozen=True)
class BandSpec:
    """Pass band [low_cut, high_cut] plus the Butterworth order used for it."""

    low_cut: float
    high_cut: float
    filter_order: int = 4

    def __post_init__(self):
        if not 0 < self.low_cut < self.high_cut:
            raise ValueError("need 0 < low_cut < high_cut")
        if self.filter_order < 1:
            raise ValueError("filter_order must be >= 1")

    def validate_for_rate(self, sample_rate):
        if self.high_cut >= sample_rate / 2:
            raise ValueError(
                f"band [{self.low_cut}, {self.high_cut}] exceeds Nyquist of "
                f"{sample_rate} Hz stream"
            )


class StreamingBandpass:
    """Butterworth band-pass (second-order sections) with state carried across
    consecutive chunks of one stream. Do not share an instance between streams.
    """

    def __init__(self, band: BandSpec, sample_rate: float):
        band.validate_for_rate(sample_rate)
        self.band = band
        self.sample_rate = float(sample_rate)
        self.sos = butter(
            band.filter_order,
            [band.low_cut, band.high_cut],
            btype="bandpass",
            fs=sample_rate,
            output="sos",
        )
        self._zi = np.zeros((self.sos.shape[0], 2))
        self._next_index = None

    def process(self, chunk: SampleChunk) -> SampleChunk:
        if chunk.sample_rate != self.sample_rate:
            raise ValueError("chunk sample rate does not match filter stream")
        if self._next_index is not None and chunk.start_sample_index != self._next_index:
            raise ValueError(
                f"non-contiguous chunk: expected start index {self._next_index}, "
                f"got {chunk.start_sample_index}"
            )
        out, self._zi = sosfilt(self.sos, chunk.samples, zi=self._zi)
        self._next_index = chunk.end_sample_index
        return SampleChunk(out, chunk.sample_rate, chunk.start_sample_index)

    def response_at(self, freqs):
        """Designed magnitude response |H(f)| at the given frequencies (Hz)."""
        _, h = sosfreqz(
            self.sos, worN=np.atleast_1d(np.asarray(freqs, dtype=float)),
            fs=self.sample_rate,
        )
        return np.abs(h)


def bandpass(chunk: SampleChunk, band: BandSpec) -> SampleChunk:
    """One-shot band-pass of a single chunk (fresh filter state)."""
    return StreamingBandpass(band, chunk.sample_rate).process(chunk)


@dataclass
class SpectralFrame:
    """Magnitude spectrum of one fixed-length window of a stream."""

    magnitudes: np.ndarray
    bin_width: float
    frame_end_time: float

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        if np.any(self.magnitudes < 0) or not np.all(np.isfinite(self.magnitudes)):
            raise ValueError("magnitudes must be finite and non-negative")

    @property
    def bin_centers(self):
        return np.arange(len(self.magnitudes)) * self.bin_width


def spectral_frame(window: SampleChunk, frame_length: int = DEFAULT_FRAME_LENGTH,
                   window_function: str = "rectangular") -> SpectralFrame:
    """Magnitude spectrum of exactly one frame of ``frame_length`` samples.

    Rectangular window by default (keeps the band-sum feature and Parseval
    bookkeeping exact); "hann" is available as an alternative.
    """
    if len(window) != frame_length:
        raise ValueError(
            f"window length {len(window)} != configured frame length {frame_length}"
        )
    x = window.samples
    if window_function == "hann":
        x = x * np.hanning(len(x))
    elif window_function != "rectangular":
        raise ValueError(f"unknown window function {window_function!r}")
    mags = np.abs(np.fft.rfft(x))
    return SpectralFrame(
        magnitudes=mags,
        bin_width=window.sample_rate / frame_length,
        frame_end_time=window.end_sample_index / window.sample_rate,
    )


def band_energy(frame: SpectralFrame, band: BandSpec) -> float:
    """Sum of spectral magnitudes over bins whose centers fall in the band."""
    centers = frame.bin_centers
    mask = (centers >= band.low_cut) & (centers <= band.high_cut)
    if not np.any(mask):
        raise ValueError(
            f"band [{band.low_cut}, {band.high_cut}] Hz covers no spectral bin "
            f"(bin width {frame.bin_width} Hz)"
        )
    return float(np.sum(frame.magnitudes[mask]))


def weighted_moving_average(values, weights=DEFAULT_WMA_WEIGHTS):
    """Causal weighted moving average with renormalized warm-up.

    weights[0] multiplies the newest sample. The warm-up prefix, where fewer
    than len(weights) samples exist, is averaged with the available weights
    renormalized so early output is unbiased.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ValueError("weights must be non-empty")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if w.sum() <= 0:
        raise ValueError("weights must not all be zero")
    w = w / w.sum()
    y = np.asarray(values, dtype=np.float64)
    out = np.convolve(y, w)[: len(y)]
    warm = min(len(w) - 1, len(y))
    for n in range(warm):
        avail = w[: n + 1]
        out[n] = np.dot(avail, y[n::-1]) / avail.sum()
    return out


class WmaSmoother:
    """Streaming form of :func:`weighted_moving_average` (one value at a time)."""

    def __init__(self, weights=DEFAULT_WMA_WEIGHTS):
        w = np.asarray(weights, dtype=np.float64)
        if w.size == 0:
            raise ValueError("weights must be non-empty")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        self.weights = w / w.sum()
        self._history = []

    def push(self, value):
        self._history.insert(0, float(value))
        del self._history[len(self.weights):]
        avail = self.weights[: len(self._history)]
        return float(np.dot(avail, self._history) / avail.sum())


@dataclass
class FeedbackSeries:
    """Raw and smoothed band-energy series sampled once per frame duration.

    Entry n covers the window ending at (n + 1) * chunk_duration relative to
    the stream origin.
    """

    raw: np.ndarray
    smoothed: np.ndarray
    chunk_duration: float
    start_time: float = 0.0

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        self.smoothed = np.asarray(self.smoothed, dtype=np.float64)
        if len(self.raw) != len(self.smoothed):
            raise ValueError("raw and smoothed series must have equal length")
        if self.chunk_duration <= 0:
            raise ValueError("chunk_duration must be positive")

    def __len__(self):
        return len(self.raw)

    @property
    def times(self):
        """Frame-end times of each entry."""
        return self.start_time + (np.arange(len(self.raw)) + 1) * self.chunk_duration


class FrameBuffer:
    """Accumulates stream samples and yields non-overlapping fixed frames."""

    def __init__(self, frame_length: int = DEFAULT_FRAME_LENGTH):
        self.frame_length = int(frame_length)
        self._pending = []
        self._pending_len = 0
        self._start_index = None
        self._rate = None

    def push(self, chunk: SampleChunk):
        """Add a chunk; returns a list of complete SampleChunk frames."""
        if self._rate is None:
            self._rate = chunk.sample_rate
            self._start_index = chunk.start_sample_index
        elif chunk.sample_rate != self._rate:
            raise ValueError("sample rate changed mid-stream")
        self._pending.append(chunk.samples)
        self._pending_len += len(chunk.samples)
        if self._pending_len < self.frame_length:
            return []
        data = np.concatenate(self._pending)
        frames = []
        offset = 0
        while len(data) - offset >= self.frame_length:
            frames.append(
                SampleChunk(
                    data[offset : offset + self.frame_length],
                    self._rate,
                    self._start_index + offset,
                )
            )
            offset += self.frame_length
        self._pending = [data[offset:]] if offset < len(data) else []
        self._pending_len = len(data) - offset
        self._start_index += offset
        return frames
