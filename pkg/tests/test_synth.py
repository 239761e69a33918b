"""Waveform synthesis, artifact injection, scenarios, and serialization."""

import numpy as np
import pytest

from needlestack import synth
from needlestack.synth import (
    EventKind,
    LineKind,
    ScenarioScript,
    ScriptEvent,
    SynthConfig,
    generate_baseline,
    generate_scenario,
    inject_confounder,
    inject_line_access,
)

from conftest import make_tiny_script


class TestBaseline:
    def test_noise_free_mean_near_config_mean(self):
        cfg = SynthConfig(mean_pressure=80.0, noise_std=0.0)
        stream = generate_baseline(cfg, 10)
        assert stream.n_samples == 1250
        assert abs(float(stream.samples.mean()) - 80.0) < 1.0

    def test_sample_count_rounds_duration(self):
        stream = generate_baseline(SynthConfig(), 12.345)
        assert stream.n_samples == round(12.345 * 125)

    def test_deterministic_per_seed(self):
        cfg = SynthConfig(rng_seed=42)
        a = generate_baseline(cfg, 30)
        b = generate_baseline(cfg, 30)
        assert np.array_equal(a.samples, b.samples)

    def test_different_seed_differs(self):
        a = generate_baseline(SynthConfig(rng_seed=1), 10)
        b = generate_baseline(SynthConfig(rng_seed=2), 10)
        assert not np.array_equal(a.samples, b.samples)

    def test_autocorrelation_peak_matches_heart_rate(self):
        # 120 bpm -> 0.5 s beats -> lag 62.5 samples at 125 Hz
        stream = generate_baseline(SynthConfig(heart_rate_bpm=120.0), 60)
        x = stream.samples.astype(np.float64)
        x -= x.mean()
        acf = np.correlate(x, x, mode="full")[x.size - 1 :]
        lag = 40 + int(np.argmax(acf[40:90]))
        assert lag in (62, 63)

    def test_rejects_short_duration(self):
        with pytest.raises(ValueError):
            generate_baseline(SynthConfig(), 0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(sample_rate_hz=0)
        with pytest.raises(ValueError):
            SynthConfig(noise_std=-1.0)
        with pytest.raises(ValueError):
            SynthConfig(pulse_amplitude=0.0)
        with pytest.raises(ValueError):
            SynthConfig(respiratory_modulation=1.0)


class TestInjectLineAccess:
    def setup_method(self):
        self.stream = generate_baseline(SynthConfig(rng_seed=3), 300)

    def test_label_matches_requested_interval(self):
        _, label = inject_line_access(self.stream, 12500, 30, 180.0)
        assert (label.start_idx, label.end_idx) == (12500, 16250)
        assert label.kind is EventKind.LINE_ACCESS

    def test_peak_reaches_plateau(self):
        out, label = inject_line_access(self.stream, 12500, 30, 180.0)
        region = out.samples[label.start_idx : label.end_idx]
        assert float(region.max()) >= 0.9 * 180.0

    def test_plateau_quieter_than_clean_signal(self):
        out, label = inject_line_access(self.stream, 12500, 30, 180.0)
        n = label.end_idx - label.start_idx
        plateau = out.samples[label.start_idx + n // 4 : label.end_idx - n // 4]
        clean = self.stream.samples[20000 : 20000 + plateau.size]
        assert float(np.std(plateau)) < float(np.std(clean))

    def test_modifies_only_the_interval(self):
        out, label = inject_line_access(self.stream, 12500, 30, 180.0)
        assert np.array_equal(out.samples[: label.start_idx],
                              self.stream.samples[: label.start_idx])
        assert np.array_equal(out.samples[label.end_idx :],
                              self.stream.samples[label.end_idx :])
        assert not np.array_equal(out.samples[label.start_idx : label.end_idx],
                                  self.stream.samples[label.start_idx : label.end_idx])

    def test_input_stream_untouched(self):
        before = self.stream.samples.copy()
        inject_line_access(self.stream, 12500, 30, 180.0)
        assert np.array_equal(self.stream.samples, before)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            inject_line_access(self.stream, self.stream.n_samples - 100, 30, 180.0)

    def test_duration_limits(self):
        with pytest.raises(ValueError):
            inject_line_access(self.stream, 1000, 5.0, 180.0)
        with pytest.raises(ValueError):
            inject_line_access(self.stream, 1000, 301.0, 180.0)

    def test_overlap_with_existing_rejected(self):
        _, label = inject_line_access(self.stream, 12500, 30, 180.0)
        with pytest.raises(ValueError):
            inject_line_access(self.stream, 13000, 30, 180.0, existing=[label])


class TestInjectConfounder:
    def setup_method(self):
        self.stream = generate_baseline(SynthConfig(rng_seed=4), 120)

    def test_flush_label(self):
        _, label = inject_confounder(self.stream, 0, EventKind.FLUSH, 3)
        assert (label.start_idx, label.end_idx) == (0, 375)
        assert label.kind is EventKind.FLUSH

    def test_flatline_has_zero_variance(self):
        out, label = inject_confounder(self.stream, 5000, EventKind.FLATLINE, 20)
        seg = out.samples[label.start_idx : label.end_idx].astype(np.float64)
        assert float(np.var(seg)) == 0.0

    def test_motion_variance_exceeds_clean(self):
        out, label = inject_confounder(self.stream, 5000, EventKind.MOTION, 20)
        burst = out.samples[label.start_idx : label.end_idx]
        clean = self.stream.samples[9000 : 9000 + burst.size]
        assert float(np.var(burst)) > 4.0 * float(np.var(clean))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            inject_confounder(self.stream, 0, EventKind.LINE_ACCESS, 30)

    def test_flush_must_be_brief(self):
        with pytest.raises(ValueError):
            inject_confounder(self.stream, 0, EventKind.FLUSH, 6.0)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            inject_confounder(self.stream, self.stream.n_samples - 10,
                              EventKind.MOTION, 10)


class TestScenario:
    def test_empty_script_has_no_labels(self):
        script = ScenarioScript(
            bed_id="b", line_kind=LineKind.ALINE, duration_s=60,
            config=SynthConfig(),
        )
        stream, labels = generate_scenario(script)
        assert labels == []
        assert stream.n_samples == 60 * 125

    def test_event_count_preserved(self):
        events = [
            ScriptEvent("line_access", at_s=60.0 + 120.0 * i, duration_s=20.0)
            for i in range(5)
        ]
        script = ScenarioScript(
            bed_id="b", line_kind=LineKind.ALINE, duration_s=700,
            config=SynthConfig(), events=events,
        )
        _, labels = generate_scenario(script)
        kinds = [l.kind for l in labels]
        assert kinds.count(EventKind.LINE_ACCESS) == 5

    def test_poisson_count_matches_independent_resimulation(self):
        # 24 h scenario; the oracle reruns the seeded sampler directly.
        duration = 24 * 3600.0
        rng = np.random.default_rng(7)
        accesses = synth.sample_line_access_times(duration, 1.0, rng)
        events = [
            ScriptEvent("line_access", at_s=at, duration_s=dur)
            for at, dur in accesses
        ]
        script = ScenarioScript(
            bed_id="b", line_kind=LineKind.ALINE, duration_s=duration,
            config=SynthConfig(noise_std=1.0, rng_seed=7), events=events,
        )
        _, labels = generate_scenario(script)

        oracle = synth.sample_line_access_times(duration, 1.0,
                                                np.random.default_rng(7))
        assert len(labels) == len(oracle)
        assert len(labels) > 0

    def test_unsorted_events_rejected(self):
        events = [
            ScriptEvent("line_access", at_s=500.0, duration_s=20.0),
            ScriptEvent("flush", at_s=100.0, duration_s=2.0),
        ]
        script = ScenarioScript("b", LineKind.ALINE, 1000, SynthConfig(), events)
        with pytest.raises(ValueError):
            generate_scenario(script)

    def test_same_kind_overlap_rejected(self):
        events = [
            ScriptEvent("line_access", at_s=100.0, duration_s=60.0),
            ScriptEvent("line_access", at_s=130.0, duration_s=30.0),
        ]
        script = ScenarioScript("b", LineKind.ALINE, 1000, SynthConfig(), events)
        with pytest.raises(ValueError):
            generate_scenario(script)

    def test_event_past_end_rejected(self):
        events = [ScriptEvent("motion", at_s=55.0, duration_s=10.0)]
        script = ScenarioScript("b", LineKind.ALINE, 60, SynthConfig(), events)
        with pytest.raises(ValueError):
            generate_scenario(script)

    def test_gap_events_recorded_not_labeled(self):
        events = [ScriptEvent("gap", at_s=100.0, duration_s=30.0)]
        script = ScenarioScript("b", LineKind.ALINE, 300, SynthConfig(), events)
        stream, labels = generate_scenario(script)
        assert labels == []
        assert stream.gaps == [(12500, 16250)]
        assert float(np.var(stream.samples[12500:16250])) == 0.0

    def test_deterministic_streams_and_labels(self):
        script = make_tiny_script(seed=21)
        s1, l1 = generate_scenario(script)
        s2, l2 = generate_scenario(script)
        assert np.array_equal(s1.samples, s2.samples)
        assert l1 == l2

    def test_label_fidelity_and_separability(self):
        script = make_tiny_script(seed=13)
        baseline = synth.generate_scenario_baseline(script)
        stream, labels = generate_scenario(script)
        covered = np.zeros(stream.n_samples, dtype=bool)
        for iv in labels:
            covered[iv.start_idx : iv.end_idx] = True
        # outside every labeled interval the waveform is untouched
        assert np.array_equal(stream.samples[~covered], baseline.samples[~covered])

        # line-access intervals deviate from baseline far more than clean
        deltas = np.abs(stream.samples.astype(np.float64)
                        - baseline.samples.astype(np.float64))
        la = [iv for iv in labels if iv.kind is EventKind.LINE_ACCESS]
        assert la
        inside = np.concatenate([deltas[iv.start_idx : iv.end_idx] for iv in la])
        clean_dev = np.abs(stream.samples[~covered].astype(np.float64)
                           - float(baseline.samples.mean()))
        assert inside.mean() > clean_dev.mean()


class TestSerialization:
    def test_stream_round_trip(self, tmp_path):
        script = make_tiny_script(seed=9)
        script.events.insert(0, ScriptEvent("gap", at_s=10.0, duration_s=5.0))
        stream, _ = generate_scenario(script)
        path = tmp_path / "wave.nstk"
        synth.save_stream(stream, path)
        back = synth.load_stream(path)
        assert back.bed_id == stream.bed_id
        assert back.line_kind == stream.line_kind
        assert back.start_epoch == stream.start_epoch
        assert back.sample_rate_hz == stream.sample_rate_hz
        assert back.gaps == stream.gaps
        assert np.array_equal(back.samples, stream.samples)

    def test_serialized_bytes_deterministic(self, tmp_path):
        script = make_tiny_script(seed=9)
        a, b = tmp_path / "a", tmp_path / "b"
        synth.save_stream(generate_scenario(script)[0], a)
        synth.save_stream(generate_scenario(script)[0], b)
        assert a.read_bytes() == b.read_bytes()

    def test_stream_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nstk"
        path.write_bytes(b"NOPE!" + b"\0" * 64)
        with pytest.raises(ValueError):
            synth.load_stream(path)

    def test_labels_round_trip(self, tmp_path):
        _, labels = generate_scenario(make_tiny_script(seed=9))
        path = tmp_path / "labels.csv"
        synth.save_labels(labels, path)
        assert synth.load_labels(path) == labels
        header = path.read_text().splitlines()[0]
        assert header == "event_id,kind,start_idx,end_idx"


class TestScriptFiles:
    def test_round_trip(self, tmp_path):
        script = make_tiny_script(seed=3)
        path = tmp_path / "scenario.txt"
        synth.save_script(script, path)
        back = synth.load_script(path)
        assert back.bed_id == script.bed_id
        assert back.line_kind == script.line_kind
        assert back.duration_s == script.duration_s
        assert back.config == script.config
        assert back.events == script.events

    def test_hand_written_script(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text(
            "bed_id = icu-7\n"
            "line_kind = CLine\n"
            "duration_s = 600\n"
            "mean_pressure = 8\n"
            "pulse_amplitude = 4\n"
            "rng_seed = 5\n"
            "\n"
            "[events]\n"
            "line_access  at_s=200  duration_s=30  plateau=20\n"
            "flush  at_s=400  duration_s=2\n"
        )
        script = synth.load_script(path)
        assert script.bed_id == "icu-7"
        assert script.config.mean_pressure == 8
        assert len(script.events) == 2
        stream, labels = generate_scenario(script)
        assert len(labels) == 2

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text("bed_id = x\nline_kind = ALine\nduration_s = 60\nbogus = 1\n")
        with pytest.raises(ValueError, match="bogus"):
            synth.load_script(path)

    def test_unknown_event_kind_rejected(self, tmp_path):
        path = tmp_path / "scenario.txt"
        path.write_text(
            "bed_id = x\nline_kind = ALine\nduration_s = 60\n"
            "[events]\nexplosion at_s=1 duration_s=2\n"
        )
        with pytest.raises(ValueError, match="explosion"):
            synth.load_script(path)
