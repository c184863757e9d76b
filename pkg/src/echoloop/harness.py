"""Scenario runner and offline analysis front door: loads scenario configs,
executes closed-loop runs, computes run metrics, and persists all artifacts
(trace/telemetry/feedback CSVs, command logs, reports) atomically.
"""

import json
import os
import shutil
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np
import yaml

from . import io as elio
from .attack import AttackCommand, SideSwingConfig, SwitchingConfig, extract_feedback
from .dsp import DEFAULT_FRAME_LENGTH, DEFAULT_WMA_WEIGHTS, BandSpec, spectral_frame, FrameBuffer
from .loop import AttackLoopConfig, build_attack_waveform, replay_commands, run_attack_loop
from .victim import (
    ConfigError,
    DriftProcess,
    GyroSamplerModel,
    PlantConfig,
    TransductionModel,
    TrueRateProfile,
    VictimPlant,
)

TWO_PI = 2.0 * np.pi

VICTIM_DEFAULTS = {
    "nominal_rate": 1000.0,
    "jitter_std": 5.0e-9,
    "walk_std": 1.0e-12,
    "resonant_center": 19000.0,
    "half_width": 200.0,
    "peak_gain": 25.0,
    "controller_gain": 10.0,
    "motor_time_constant": 0.08,
    "max_speed": 300.0,
    "motor_torque": 0.1,
    "emanation_low": 14600.0,
    "emanation_high": 16900.0,
    "emanation_power_ratio": 1000.0,
    "noise_floor": 1.0e-3,
    "acoustic_rate": 44100.0,
    "true_rate_profile": [[0.0, 0.0]],
}

ATTACK_DEFAULTS = {
    "mode": "observe",
    "carrier": None,
    "amplitude": 1.0,
    "injection_start": 2.0,
    "ramp_time": 1.5,
    "control_start": 8.0,
    "band_low": 14600.0,
    "band_high": 16900.0,
    "filter_order": 4,
    "frame_length": DEFAULT_FRAME_LENGTH,
    "window_function": "rectangular",
    "loop_delay": 0.093,
    "nominal_alias": None,
}

SWITCHING_DEFAULTS = {
    "base_carrier": None,
    "alpha_th": 0.95,
    "beta_th": 0.0,
    "initial_step": 1.5,
    "min_step": 0.85,
    "gamma": 0.9,
    "peak_decay": 0.99,
}

SIDE_SWING_DEFAULTS = {
    "window_N": 100,
    "high_amplitude": 1.0,
    "low_amplitude": 0.6,
}

PROCEDURE_GOALS = ("spin_up", "hold", "slow_down")


@dataclass
class Scenario:
    """One reproducible experiment: victim + attack configuration + schedule."""

    name: str
    seed: int
    duration: float
    victim: dict
    attack: dict
    procedure: list = field(default_factory=list)
    export_wav: bool = False

    def resolved(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "duration": self.duration,
            "export_wav": self.export_wav,
            "victim": dict(self.victim),
            "attack": {k: (dict(v) if isinstance(v, dict) else v)
                       for k, v in self.attack.items()},
            "procedure": [list(p) for p in self.procedure],
        }


@dataclass
class RunReport:
    scenario: str
    seed: int
    metrics: dict
    artifacts: dict
    config: dict


def _merge_section(section, raw, defaults, path):
    out = dict(defaults)
    if raw is None:
        return out
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key, value in raw.items():
        if key not in defaults:
            raise ConfigError(
                f"{path}.{key}: unknown key (allowed: {sorted(defaults)})"
            )
        out[key] = value
    return out


def load_scenario(source) -> Scenario:
    """Parse and validate a scenario config (path or mapping).

    Unknown keys are rejected with field-level diagnostics; defaults fill
    everything not specified.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            raw = yaml.safe_load(fh)
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError("scenario config must be a mapping")
    allowed_top = {"name", "seed", "duration", "victim", "attack", "procedure",
                   "export_wav"}
    for key in raw:
        if key not in allowed_top:
            raise ConfigError(f"{key}: unknown top-level key (allowed: "
                              f"{sorted(allowed_top)})")
    for key in ("name", "duration"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    victim = _merge_section("victim", raw.get("victim"), VICTIM_DEFAULTS, "victim")
    attack_raw = dict(raw.get("attack") or {})
    switching_raw = attack_raw.pop("switching", None)
    side_swing_raw = attack_raw.pop("side_swing", None)
    attack = _merge_section("attack", attack_raw, ATTACK_DEFAULTS, "attack")
    attack["switching"] = _merge_section("attack.switching", switching_raw,
                                         SWITCHING_DEFAULTS, "attack.switching")
    attack["side_swing"] = _merge_section("attack.side_swing", side_swing_raw,
                                          SIDE_SWING_DEFAULTS, "attack.side_swing")

    procedure = []
    for i, entry in enumerate(raw.get("procedure") or []):
        if not isinstance(entry, dict) or set(entry) != {"goal", "duration"}:
            raise ConfigError(f"procedure[{i}]: expected {{goal, duration}}")
        if entry["goal"] not in PROCEDURE_GOALS:
            raise ConfigError(
                f"procedure[{i}].goal: {entry['goal']!r} not in {PROCEDURE_GOALS}"
            )
        if entry["duration"] <= 0:
            raise ConfigError(f"procedure[{i}].duration must be positive")
        procedure.append((entry["goal"], float(entry["duration"])))

    duration = float(raw["duration"])
    if duration <= 0:
        raise ConfigError("duration must be positive")
    if procedure and attack["mode"] == "procedure":
        total = sum(d for _, d in procedure)
        if attack["control_start"] + total > duration + 1e-9:
            raise ConfigError("procedure phases extend past the run duration")

    return Scenario(
        name=str(raw["name"]),
        seed=int(raw.get("seed", 0)),
        duration=duration,
        victim=victim,
        attack=attack,
        procedure=procedure,
        export_wav=bool(raw.get("export_wav", False)),
    )


def bundled_scenario_names():
    root = resources.files("echoloop").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_bundled_scenario(name) -> Scenario:
    path = resources.files("echoloop").joinpath("scenarios", f"{name}.yaml")
    if not path.is_file():
        raise ConfigError(
            f"unknown bundled scenario {name!r}; available: "
            f"{bundled_scenario_names()}"
        )
    return load_scenario(yaml.safe_load(path.read_text()))


def build_run(scenario: Scenario, seed=None):
    """Instantiate the plant and loop config for a scenario.

    Returns (plant, loop_cfg). Seed streams for sampling drift, transduction
    phase, and acoustic noise are spawned from the scenario seed.
    """
    seed = scenario.seed if seed is None else seed
    drift_seed, phase_seed, noise_seed = np.random.SeedSequence(seed).spawn(3)
    v = scenario.victim
    a = scenario.attack

    phi0 = float(np.random.default_rng(phase_seed).uniform(0.0, TWO_PI))
    transduction = TransductionModel(
        resonant_center=v["resonant_center"],
        half_width=v["half_width"],
        peak_gain=v["peak_gain"],
        initial_phase=phi0,
    )
    drift = DriftProcess(jitter_std=v["jitter_std"], walk_std=v["walk_std"],
                         seed=drift_seed)
    model = GyroSamplerModel(nominal_rate=v["nominal_rate"], drift=drift,
                             transduction=transduction)
    plant_cfg = PlantConfig(
        controller_gain=v["controller_gain"],
        motor_time_constant=v["motor_time_constant"],
        max_speed=v["max_speed"],
        motor_torque=v["motor_torque"],
        emanation_band=BandSpec(v["emanation_low"], v["emanation_high"]),
        emanation_power_ratio=v["emanation_power_ratio"],
        noise_floor=v["noise_floor"],
        acoustic_rate=v["acoustic_rate"],
    )
    profile = TrueRateProfile([tuple(p) for p in v["true_rate_profile"]])

    switching = None
    if a["mode"] == "switching":
        sw = dict(a["switching"])
        if sw["base_carrier"] is None:
            raise ConfigError("attack.switching.base_carrier is required "
                              "for switching mode")
        switching = SwitchingConfig(**sw)
    side_swing = None
    if a["mode"] in ("side_swing", "procedure"):
        ss = dict(a["side_swing"])
        ss["loop_delay"] = a["loop_delay"]
        side_swing = SideSwingConfig(**ss)

    loop_cfg = AttackLoopConfig(
        mode=a["mode"],
        band=BandSpec(a["band_low"], a["band_high"], a["filter_order"]),
        carrier=a["carrier"],
        amplitude=a["amplitude"],
        injection_start=a["injection_start"],
        ramp_time=a["ramp_time"],
        control_start=a["control_start"],
        duration=scenario.duration,
        frame_length=a["frame_length"],
        window_function=a["window_function"],
        loop_delay=a["loop_delay"],
        switching=switching,
        side_swing=side_swing,
        nominal_alias=a["nominal_alias"],
        procedure=scenario.procedure,
    )
    waveform = build_attack_waveform(loop_cfg)
    plant = VictimPlant(plant_cfg, model, attack=waveform, true_rate=profile,
                        noise_seed=noise_seed)
    return plant, loop_cfg


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.std(x) == 0 or np.std(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def dominant_frequency(times, values):
    """Frequency of the largest non-DC DFT component of a uniform series."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 8:
        return None
    dt = float(np.mean(np.diff(times)))
    spectrum = np.abs(np.fft.rfft(values - values.mean()))
    spectrum[0] = 0.0
    k = int(np.argmax(spectrum))
    return k / (len(values) * dt)


def _smoothed_abs_speed(trace, window_s=2.0):
    dt = float(np.mean(np.diff(trace.time)))
    w = max(int(round(window_s / dt)), 1)
    kernel = np.ones(w) / w
    return np.convolve(np.abs(trace.speed), kernel, mode="same"), dt


def phase_conformance(trace, phases, window_s=2.0, slope_margin=0.6,
                      slope_frac=0.02, acquisition_grace=3.5):
    """Per-phase fraction of time where the smoothed |speed| matches the
    phase goal: moving in the commanded direction, or holding a level
    already displaced in that direction from where the phase began
    (spin_up: rising or risen, slow_down: falling or fallen, hold: flat).

    The first ``acquisition_grace`` seconds of each phase are excluded: the
    controller needs a few feedback periods after a goal change to probe the
    plant's response before its actions take effect, and phase edges inside
    the smoothing window would otherwise blur adjacent goals together."""
    sm, dt = _smoothed_abs_speed(trace, window_s)
    k = max(int(round(slope_margin / dt)), 1)
    slope = np.empty_like(sm)
    slope[k:-k] = (sm[2 * k:] - sm[:-2 * k]) / (2 * k * dt)
    slope[:k] = slope[k]
    slope[-k:] = slope[-k - 1]
    peak = max(np.max(np.abs(trace.speed)), 1e-9)
    thr = slope_frac * peak
    out = {}
    for idx, (goal, t_start, t_end) in enumerate(phases):
        lo = t_start + max(window_s / 2 + slope_margin, acquisition_grace)
        hi = t_end - (window_s / 2 + slope_margin)
        mask = (trace.time >= lo) & (trace.time <= hi)
        if not np.any(mask):
            out[f"phase{idx}_{goal}"] = None
            continue
        s = slope[mask]
        sm_m = sm[mask]
        # reference level: where the speed stood when the phase was
        # commanded (displacement from here is what the phase achieved)
        i_ref = min(np.searchsorted(trace.time, t_start), len(sm) - 1)
        ref = max(sm[i_ref], 1.0)
        if goal == "spin_up":
            # conforming while rising, or while holding a level clearly
            # above where the phase started (progress already made and
            # retained counts: the climb may saturate or arrive in a burst)
            ok = (s > thr) | (sm_m > 1.10 * ref + 5.0)
        elif goal == "slow_down":
            ok = (s < -thr) | (sm_m < 0.90 * ref - 5.0)
        else:  # hold
            ok = np.abs(s) < thr
        out[f"phase{idx}_{goal}"] = float(np.mean(ok))
    return out


def compute_metrics(trace, telemetry=None, phases=None, analysis_start=0.0):
    """Run metrics: feedback/speed correlation, final-half directionality,
    dominant oscillation frequency, procedure phase conformance."""
    metrics = {}
    t = trace.time
    metrics["unreliable"] = bool(t[-1] - t[0] < 2.0) if len(t) else True
    window = t >= analysis_start
    speed = trace.speed[window]
    times = t[window]
    if len(speed) == 0:
        return metrics

    half = speed[len(speed) // 2:]
    mean_half = float(np.mean(half))
    peak = float(np.max(np.abs(speed))) if len(speed) else 0.0
    metrics["final_mean_speed_rpm"] = mean_half
    metrics["peak_speed_rpm"] = peak
    metrics["mean_speed_rpm"] = float(np.mean(speed))
    sign = np.sign(mean_half) if mean_half != 0 else 1.0
    metrics["directionality"] = float(np.mean(np.sign(half) == sign)) \
        if len(half) else None

    freq = dominant_frequency(times, speed)
    metrics["dominant_frequency_hz"] = freq

    if telemetry is not None and len(telemetry.feedback_times):
        ft = np.asarray(telemetry.feedback_times)
        fy = np.asarray(telemetry.feedback_smoothed)
        fmask = ft >= analysis_start
        rpm_at_frames = np.interp(ft[fmask], t, np.abs(trace.speed))
        corr = pearson(fy[fmask], rpm_at_frames)
        metrics["feedback_speed_correlation"] = corr
        if corr is None:
            metrics["correlation_undefined"] = True
    if phases:
        metrics.update(phase_conformance(trace, phases))
    return metrics


def heading_monotonicity(trace, phases, window_s=2.5, retreat_frac=0.1,
                         acquisition_grace=3.0):
    """Per up/down phase fraction of time the cycle-averaged heading stays
    monotone in the commanded direction: within ``retreat_frac`` of the
    phase's total travel from its running extreme. Spin_up drives the
    heading away from zero (a plateau once the motor command saturates
    still conforms), slow_down drives it toward zero (overshooting through
    zero continues in the commanded direction, so it conforms too). Hold
    phases are skipped (None)."""
    dt = float(np.mean(np.diff(trace.time)))
    w = max(int(round(window_s / dt)), 1)
    kernel = np.ones(w) / w
    sm = np.convolve(trace.heading, kernel, mode="same")
    out = {}
    for idx, (goal, t_start, t_end) in enumerate(phases):
        if goal == "hold":
            out[f"phase{idx}_{goal}"] = None
            continue
        lo = t_start + max(window_s / 2, acquisition_grace)
        hi = t_end - window_s / 2
        mask = (trace.time >= lo) & (trace.time <= hi)
        sm_m = sm[mask]
        if len(sm_m) < 2:
            out[f"phase{idx}_{goal}"] = None
            continue
        if goal == "spin_up":
            direction = np.sign(sm_m[-1]) or 1.0
        else:  # slow_down: toward (and possibly through) zero
            direction = -(np.sign(sm_m[0]) or 1.0)
        z = sm_m * direction
        tol = retreat_frac * max(float(np.ptp(z)), 1e-9)
        out[f"phase{idx}_{goal}"] = float(
            np.mean(z > np.maximum.accumulate(z) - tol))
    return out


def absolute_phases(scenario: Scenario):
    """Procedure phases as (goal, t_start, t_end) in run time."""
    t = scenario.attack["control_start"]
    out = []
    for goal, duration in scenario.procedure:
        out.append((goal, t, t + duration))
        t += duration
    return out


def run_scenario(scenario, out_dir, seed=None) -> RunReport:
    """Execute a scenario and persist all artifacts atomically.

    Artifacts land in ``out_dir/<scenario-name>/``; the directory appears only
    after every declared artifact has been written.
    """
    if isinstance(scenario, (str, os.PathLike)):
        scenario = load_scenario(scenario)
    run_seed = scenario.seed if seed is None else int(seed)
    plant, loop_cfg = build_run(scenario, seed=run_seed)
    audio = [] if scenario.export_wav else None
    sink = audio.append if audio is not None else None
    telemetry, trace = run_attack_loop(plant, loop_cfg, audio_sink=sink)

    phases = absolute_phases(scenario) if scenario.procedure else None
    analysis_start = scenario.attack["control_start"] \
        if scenario.attack["mode"] != "observe" else 0.0
    metrics = compute_metrics(trace, telemetry, phases=phases,
                              analysis_start=analysis_start)
    if scenario.attack["mode"] == "switching":
        metrics["switch_count"] = len(telemetry.switch_events)
        metrics["step_sizes_hz"] = [ev.step for ev in telemetry.switch_events]

    final_dir = os.path.join(out_dir, scenario.name)
    tmp_dir = os.path.join(out_dir, f".{scenario.name}.tmp")
    if os.path.exists(tmp_dir):
        shutil.rmtree(tmp_dir)
    os.makedirs(tmp_dir)
    try:
        artifacts = {}

        def emit(key, filename, writer):
            path = os.path.join(tmp_dir, filename)
            writer(path)
            artifacts[key] = os.path.join(final_dir, filename)

        emit("trace", "trace.csv", lambda p: elio.write_trace_csv(p, trace))
        emit("telemetry", "telemetry.csv",
             lambda p: elio.write_telemetry_csv(p, telemetry))
        emit("feedback", "feedback.csv",
             lambda p: elio.write_feedback_csv(p, telemetry.feedback_series()))
        emit("commands", "commands.json",
             lambda p: _write_command_log(p, telemetry.commands))
        if audio is not None:
            emit("audio", "acoustic.wav", lambda p: elio.write_wav(p, audio))

        report = RunReport(
            scenario=scenario.name,
            seed=run_seed,
            metrics=metrics,
            artifacts=artifacts,
            config=scenario.resolved(),
        )
        with open(os.path.join(tmp_dir, "report.json"), "w") as fh:
            json.dump(asdict(report), fh, indent=2, default=_json_default)
        artifacts["report"] = os.path.join(final_dir, "report.json")

        if os.path.exists(final_dir):
            shutil.rmtree(final_dir)
        os.replace(tmp_dir, final_dir)
    except BaseException:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        raise
    return report


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_command_log(path, commands):
    rows = [
        {"issue_time": c.issue_time, "kind": c.kind,
         "new_frequency": c.new_frequency, "new_amplitude": c.new_amplitude}
        for c in commands
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)


def read_command_log(path):
    with open(path) as fh:
        rows = json.load(fh)
    return [AttackCommand(r["issue_time"], r["kind"], r["new_frequency"],
                          r["new_amplitude"]) for r in rows]


def replay_scenario(scenario: Scenario, commands, seed=None):
    """Re-run a scenario's victim against a recorded command log."""
    plant, loop_cfg = build_run(scenario, seed=seed)
    return replay_commands(plant, commands, loop_cfg.duration)


def analyze_recording(path, band: BandSpec,
                      frame_length: int = DEFAULT_FRAME_LENGTH,
                      weights=DEFAULT_WMA_WEIGHTS,
                      window_function="rectangular",
                      feedback_csv=None, spectral_csv=None):
    """Offline feedback extraction from a WAV recording.

    Returns the FeedbackSeries; optionally writes the feedback CSV and a
    per-frame spectral summary (spectrogram data) for plotting.
    """
    chunk = elio.read_wav(path)
    band.validate_for_rate(chunk.sample_rate)
    series = extract_feedback(chunk, band, frame_length=frame_length,
                              weights=weights, window_function=window_function)
    if feedback_csv:
        elio.write_feedback_csv(feedback_csv, series)
    if spectral_csv:
        _write_spectral_summary(spectral_csv, chunk, band, frame_length)
    return series


def _write_spectral_summary(path, chunk, band, frame_length, n_bands=64):
    import csv as _csv

    buf = FrameBuffer(frame_length)
    frames = buf.push(chunk)
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        edges = np.linspace(0.0, chunk.sample_rate / 2.0, n_bands + 1)
        header = ["frame_end_time_s", "band_energy", "peak_freq_hz"]
        header += [f"mag_{int(lo)}_{int(hi)}_hz" for lo, hi in
                   zip(edges[:-1], edges[1:])]
        writer.writerow(header)
        for frame in frames:
            sf = spectral_frame(frame, frame_length)
            centers = sf.bin_centers
            mask = (centers >= band.low_cut) & (centers <= band.high_cut)
            peak = centers[int(np.argmax(sf.magnitudes))]
            coarse = [float(np.sum(sf.magnitudes[(centers >= lo) & (centers < hi)]))
                      for lo, hi in zip(edges[:-1], edges[1:])]
            writer.writerow(
                [f"{sf.frame_end_time:.9g}", f"{np.sum(sf.magnitudes[mask]):.9g}",
                 f"{peak:.9g}"] + [f"{v:.6g}" for v in coarse]
            )
