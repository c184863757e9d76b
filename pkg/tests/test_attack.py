"""Unit tests for the attacker-side feedback pipeline and controllers."""

import subprocess
import sys

import numpy as np
import pytest

from echoloop.attack import (
    AttackCommand,
    FeedbackExtractor,
    SideSwingConfig,
    SideSwingController,
    SwitchingConfig,
    SwitchingController,
    estimate_period,
    extract_feedback,
    side_swing_schedule,
    switching_step,
    update_threshold,
)
from echoloop.dsp import BandSpec, FeedbackSeries, SampleChunk

TWO_PI = 2.0 * np.pi


def test_attack_module_is_victim_blind():
    """The controller module must not import victim or orchestration code:
    its only victim-side inputs are acoustic chunks."""
    import ast
    import echoloop.attack as attack_mod

    tree = ast.parse(open(attack_mod.__file__).read())
    imported = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            imported += [a.name for a in node.names]
        elif isinstance(node, ast.ImportFrom):
            imported.append(node.module or "")
    for name in imported:
        assert "victim" not in name and "loop" not in name \
            and "harness" not in name, f"forbidden import {name!r}"


class TestConfigs:
    def test_switching_validation(self):
        with pytest.raises(ValueError):
            SwitchingConfig(base_carrier=19000.0, alpha_th=1.5)
        with pytest.raises(ValueError):
            SwitchingConfig(base_carrier=19000.0, beta_th=-1.0)
        with pytest.raises(ValueError):
            SwitchingConfig(base_carrier=19000.0, min_step=2.0,
                            initial_step=1.5)
        with pytest.raises(ValueError):
            SwitchingConfig(base_carrier=19000.0, gamma=0.5)

    def test_side_swing_validation(self):
        with pytest.raises(ValueError):
            SideSwingConfig(high_amplitude=0.5, low_amplitude=0.6)
        with pytest.raises(ValueError):
            SideSwingConfig(high_amplitude=1.0, low_amplitude=0.6, window_N=5)
        with pytest.raises(ValueError):
            SideSwingConfig(high_amplitude=1.0, low_amplitude=0.6,
                            loop_delay=-0.1)

    def test_command_validation(self):
        with pytest.raises(ValueError):
            AttackCommand(0.0, "frequency_switch")
        with pytest.raises(ValueError):
            AttackCommand(0.0, "teleport", new_frequency=1.0)


class TestThreshold:
    def test_linear_and_quadratic_terms(self):
        cfg = SwitchingConfig(base_carrier=19000.0, alpha_th=0.9, beta_th=0.0)
        assert update_threshold(50.0, cfg) == 45.0
        cfg_q = SwitchingConfig(base_carrier=19000.0, alpha_th=0.9,
                                beta_th=0.01)
        assert update_threshold(50.0, cfg_q) == 45.0 - 25.0

    def test_floored_at_zero(self):
        cfg = SwitchingConfig(base_carrier=19000.0, alpha_th=0.9, beta_th=1.0)
        assert update_threshold(50.0, cfg) == 0.0

    def test_rejects_negative_peak(self):
        cfg = SwitchingConfig(base_carrier=19000.0)
        with pytest.raises(ValueError):
            update_threshold(-1.0, cfg)


class TestSwitchingController:
    def _drive(self, ctrl, series):
        cmds = []
        for i, y0 in enumerate(series):
            cmd = switching_step(ctrl, float(i) * 0.1, y0)
            if cmd is not None:
                cmds.append(cmd)
        return cmds

    def test_toggles_on_falling_threshold_crossing(self):
        ctrl = SwitchingController(SwitchingConfig(base_carrier=19000.0))
        assert ctrl.current_frequency == 19000.0
        cmds = self._drive(ctrl, [100.0, 110.0, 60.0])
        assert len(cmds) == 1
        assert cmds[0].new_frequency == 19000.0 + 1.5

    def test_rearms_only_after_feedback_rises(self):
        ctrl = SwitchingController(SwitchingConfig(base_carrier=19000.0))
        # keep falling after the first switch: no further switch until a rise
        cmds = self._drive(ctrl, [100.0, 110.0, 60.0, 50.0, 40.0])
        assert len(cmds) == 1
        # rising back above the threshold re-arms; the next fall switches
        cmds = self._drive(ctrl, [110.0, 30.0])
        assert len(cmds) == 1

    def test_step_decays_per_switch(self):
        ctrl = SwitchingController(SwitchingConfig(base_carrier=19000.0))
        self._drive(ctrl, [100.0, 120.0, 50.0] * 4)
        steps = [ev.step for ev in ctrl.events]
        assert steps[:3] == [1.5, 0.9 * 1.5, 0.9 * 0.9 * 1.5]

    def test_drift_compensation_is_bounded(self):
        cfg = SwitchingConfig(base_carrier=19000.0)
        ctrl = SwitchingController(cfg)
        self._drive(ctrl, [100.0, 120.0, 50.0] * 20)
        total_shift = abs(ctrl.base - cfg.base_carrier)
        assert total_shift <= sum(ev.step / 2.0 for ev in ctrl.events)


class TestPeriodEstimate:
    def _series(self, y):
        return FeedbackSeries(np.asarray(y), np.asarray(y), 0.1)

    def test_recovers_sinusoid_period(self):
        t = np.arange(100) * 0.1
        y = 10.0 + np.sin(TWO_PI * t / 2.5)
        p = estimate_period(self._series(y))
        assert p == pytest.approx(2.5, rel=0.05)

    def test_needs_enough_crossings(self):
        assert estimate_period(self._series([1.0, 2.0])) is None
        assert estimate_period(self._series(np.linspace(0, 1, 50))) is None

    def test_uses_recent_window_only(self):
        t = np.arange(300) * 0.1
        y = np.where(t < 20.0, 10.0 + np.sin(TWO_PI * t / 5.0),
                     10.0 + np.sin(TWO_PI * t / 1.0))
        p = estimate_period(self._series(y), window_N=80)
        assert p == pytest.approx(1.0, rel=0.1)


class TestSideSwingSchedule:
    def test_toggle_times_and_alternation(self):
        cfg = SideSwingConfig(high_amplitude=1.0, low_amplitude=0.6,
                              loop_delay=0.05)
        gen = side_swing_schedule(2.0, 1.0, cfg)
        cmds = [next(gen) for _ in range(3)]
        assert [c.issue_time for c in cmds] == pytest.approx(
            [2.0 + 0.5 - 0.3, 2.0 + 1.0 - 0.3, 2.0 + 1.5 - 0.3])
        assert [c.new_amplitude for c in cmds] == [1.0, 0.6, 1.0]

    def test_direction_flips_parity(self):
        cfg = SideSwingConfig(high_amplitude=1.0, low_amplitude=0.6)
        assert next(side_swing_schedule(0.0, 1.0, cfg, direction=-1)
                    ).new_amplitude == 0.6

    def test_rejects_stale_crossing(self):
        cfg = SideSwingConfig(high_amplitude=1.0, low_amplitude=0.6)
        with pytest.raises(ValueError):
            side_swing_schedule(0.0, 1.0, cfg, now=5.0)
        with pytest.raises(ValueError):
            side_swing_schedule(0.0, 0.0, cfg)


class TestFeedbackExtractor:
    def _tone_chunks(self, f0, fs=44100.0, n_chunks=10, chunk_len=4410):
        t0 = 0
        out = []
        for _ in range(n_chunks):
            t = (t0 + np.arange(chunk_len)) / fs
            out.append(SampleChunk(np.sin(TWO_PI * f0 * t), fs, t0))
            t0 += chunk_len
        return out

    def test_streaming_matches_offline(self):
        band = BandSpec(14600.0, 16900.0)
        chunks = self._tone_chunks(15750.0)
        extractor = FeedbackExtractor(band, 44100.0)
        for chunk in chunks:
            extractor.push(chunk)
        stream = extractor.series()
        offline = extract_feedback(chunks, band)
        assert np.array_equal(stream.raw, offline.raw)
        assert np.array_equal(stream.smoothed, offline.smoothed)

    def test_one_triple_per_frame(self):
        band = BandSpec(14600.0, 16900.0)
        extractor = FeedbackExtractor(band, 44100.0, frame_length=4096)
        emitted = []
        total = 0
        for chunk in self._tone_chunks(15750.0):
            emitted.extend(extractor.push(chunk))
            total += len(chunk)
        assert len(emitted) == total // 4096
        times = [t for t, _, _ in emitted]
        assert np.allclose(np.diff(times), 4096 / 44100.0, atol=1e-12)

    def test_in_band_tone_dominates_out_of_band(self):
        band = BandSpec(14600.0, 16900.0)
        inband = extract_feedback(self._tone_chunks(15750.0), band)
        outband = extract_feedback(self._tone_chunks(5000.0), band)
        assert np.mean(inband.raw) > 50 * np.mean(outband.raw)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            extract_feedback([], BandSpec(14600.0, 16900.0))


class TestSideSwingController:
    def test_emits_nothing_before_goal(self):
        cfg = SideSwingConfig(high_amplitude=1.0, low_amplitude=0.6)
        ctrl = SideSwingController(cfg, chunk_duration=0.1,
                                   nominal_period=1.25)
        t = np.arange(200) * 0.1
        y = 100.0 + 30.0 * np.sin(TWO_PI * t / 1.25)
        for ti, yi in zip(t, y):
            assert ctrl.step_controller(float(ti), float(yi)) == []

    def test_locks_toggles_to_oscillation(self):
        cfg = SideSwingConfig(high_amplitude=1.0, low_amplitude=0.6,
                              loop_delay=0.0)
        ctrl = SideSwingController(cfg, chunk_duration=0.1,
                                   nominal_period=1.25)
        t = np.arange(400) * 0.1
        y = 100.0 + 30.0 * np.sin(TWO_PI * t / 1.25)
        cmds = []
        for ti, yi in zip(t, y):
            if ti == 5.0:
                ctrl.set_goal("up", float(ti))
            cmds.extend(ctrl.step_controller(float(ti), float(yi)))
        swings = [c for c in cmds if c.kind == "amplitude_swing"]
        assert len(swings) > 10
        # commands alternate between the two amplitudes at half-period spacing
        amps = [c.new_amplitude for c in swings]
        assert set(amps) == {1.0, 0.6}
        gaps = np.diff([c.issue_time for c in swings])
        assert np.median(gaps) == pytest.approx(1.25 / 2.0, rel=0.15)
