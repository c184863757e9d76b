"""File interfaces: WAV import/export for acoustic streams and CSV dumps for
feedback, victim traces, and controller telemetry."""

import csv

import numpy as np
from scipy.io import wavfile

from .dsp import FeedbackSeries, SampleChunk


class UnsupportedAudioError(ValueError):
    """Raised for audio encodings the reader does not handle."""


def read_wav(path) -> SampleChunk:
    """Read a WAV file into a SampleChunk.

    Supports PCM 16-bit and float-32, mono; stereo collapses to the channel
    mean. Integer samples are scaled to [-1, 1).
    """
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedAudioError(
            f"unsupported WAV sample format {data.dtype}; "
            "supported formats: PCM 16-bit, IEEE float-32"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise UnsupportedAudioError("only mono or stereo WAV files are supported")
    return SampleChunk(samples, float(rate), 0)


def write_wav(path, chunks, sample_rate=None):
    """Write an acoustic stream (one chunk or a list) as float-32 WAV."""
    if isinstance(chunks, SampleChunk):
        chunks = [chunks]
    if not chunks:
        raise ValueError("no samples to write")
    rate = sample_rate or chunks[0].sample_rate
    data = np.concatenate([c.samples for c in chunks]).astype(np.float32)
    wavfile.write(path, int(round(rate)), data)


def write_feedback_csv(path, series: FeedbackSeries):
    """Dump a feedback series as (frame_end_time_s, y_raw, y_smoothed) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_end_time_s", "y_raw", "y_smoothed"])
        for t, y, y0 in zip(series.times, series.raw, series.smoothed):
            writer.writerow([f"{t:.9g}", f"{y:.12g}", f"{y0:.12g}"])


def read_feedback_csv(path) -> FeedbackSeries:
    times, raw, smoothed = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            times.append(float(row["frame_end_time_s"]))
            raw.append(float(row["y_raw"]))
            smoothed.append(float(row["y_smoothed"]))
    if len(times) >= 2:
        t_c = times[1] - times[0]
    elif times:
        t_c = times[0]
    else:
        raise ValueError("empty feedback CSV")
    return FeedbackSeries(np.array(raw), np.array(smoothed), t_c,
                          start_time=times[0] - t_c)


def write_trace_csv(path, trace):
    """Dump a victim state trace with the documented column set."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["time_s", "true_rate_dps", "sensor_dps", "heading_deg",
             "command", "speed_rpm"]
        )
        for row in zip(trace.time, trace.true_rate, trace.sensor,
                       trace.heading, trace.command, trace.speed):
            writer.writerow([f"{v:.12g}" for v in row])


def read_trace_csv(path):
    """Read a victim trace CSV back into a VictimTrace."""
    from .victim import VictimTrace

    cols = {k: [] for k in ("time_s", "true_rate_dps", "sensor_dps",
                            "heading_deg", "command", "speed_rpm")}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k in cols:
                cols[k].append(float(row[k]))
    if not cols["time_s"]:
        raise ValueError("empty trace CSV")
    return VictimTrace(*(np.array(cols[k]) for k in cols))


def write_telemetry_csv(path, telemetry):
    """Dump loop telemetry: feedback, threshold, events, and injection state."""
    events = {}
    for ev in telemetry.switch_events:
        events[round(ev.time, 9)] = f"switch:{ev.old_frequency:.6g}->{ev.new_frequency:.6g}"
    for cmd in telemetry.commands:
        if cmd.kind == "amplitude_swing":
            events.setdefault(round(cmd.issue_time, 9), f"swing:{cmd.new_amplitude:.6g}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["time_s", "y_raw", "y_smoothed", "T_h", "event", "carrier_hz", "amplitude"]
        )
        for i, t in enumerate(telemetry.feedback_times):
            writer.writerow(
                [
                    f"{t:.9g}",
                    f"{telemetry.feedback_raw[i]:.12g}",
                    f"{telemetry.feedback_smoothed[i]:.12g}",
                    f"{telemetry.thresholds[i]:.12g}",
                    events.get(round(t, 9), ""),
                    f"{telemetry.carrier_hz[i]:.9g}",
                    f"{telemetry.amplitude[i]:.9g}",
                ]
            )


def read_telemetry_csv(path):
    """Read a telemetry CSV back into a LoopTelemetry (feedback columns only;
    events are not reconstructed into controller objects)."""
    from .attack import LoopTelemetry

    telemetry = LoopTelemetry()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            telemetry.feedback_times.append(float(row["time_s"]))
            telemetry.feedback_raw.append(float(row["y_raw"]))
            telemetry.feedback_smoothed.append(float(row["y_smoothed"]))
            telemetry.thresholds.append(float(row["T_h"]))
            telemetry.carrier_hz.append(float(row["carrier_hz"]))
            telemetry.amplitude.append(float(row["amplitude"]))
    if len(telemetry.feedback_times) >= 2:
        telemetry.chunk_duration = (telemetry.feedback_times[1]
                                    - telemetry.feedback_times[0])
    return telemetry
