"""Closed-loop acoustic sensor-spoofing simulation toolkit.

Four layers:

* :mod:`echoloop.dsp` — signal primitives: piecewise waveform programs,
  streaming band-pass / framing / band-energy / smoothing.
* :mod:`echoloop.victim` — the simulated victim: drifting gyro sampler with
  out-of-band transduction, heading controller, motor, acoustic emanations.
* :mod:`echoloop.attack` — the victim-blind adversarial controller:
  feedback extraction, threshold switching, side-swing amplitude control.
* :mod:`echoloop.loop` / :mod:`echoloop.harness` — closed-loop orchestration,
  scenarios, metrics, and artifact I/O.
"""

from .attack import (
    AttackCommand,
    FeedbackExtractor,
    LoopTelemetry,
    SideSwingConfig,
    SideSwingController,
    SwitchEvent,
    SwitchingConfig,
    SwitchingController,
    estimate_period,
    extract_feedback,
    side_swing_schedule,
    switching_step,
    update_threshold,
)
from .dsp import (
    DEFAULT_FRAME_LENGTH,
    DEFAULT_WMA_WEIGHTS,
    AttackWaveformSpec,
    BandSpec,
    FeedbackSeries,
    FrameBuffer,
    FrequencyProgram,
    PiecewiseProgram,
    SampleChunk,
    SpectralFrame,
    StreamingBandpass,
    WmaSmoother,
    band_energy,
    bandpass,
    spectral_frame,
    synthesize_waveform,
    weighted_moving_average,
)
from .harness import (
    RunReport,
    Scenario,
    analyze_recording,
    bundled_scenario_names,
    build_run,
    compute_metrics,
    load_bundled_scenario,
    load_scenario,
    replay_scenario,
    run_scenario,
)
from .loop import (
    AttackLoopConfig,
    VictimHandle,
    build_attack_waveform,
    replay_commands,
    run_attack_loop,
)
from .victim import (
    ConfigError,
    DriftProcess,
    EmanationSynth,
    GyroSamplerModel,
    PlantConfig,
    TransductionModel,
    TrueRateProfile,
    VictimPlant,
    VictimState,
    VictimTrace,
    ZeroDrift,
    emit_acoustics,
    motor_power,
    run_victim,
    sample_gyro,
    step_controller,
    step_motor,
)

__version__ = "0.1.0"
