"""Window normalization, extraction/labeling, and splits."""

import numpy as np
import pytest

from needlestack import dataset, synth
from needlestack.dataset import (
    NormalizationHistoryTooShort,
    SplitClassMissing,
    WindowInstance,
    extract_training_windows,
    normalize_window,
    split_dataset,
)
from needlestack.synth import EventKind, ScenarioScript, ScriptEvent, SynthConfig

from conftest import make_tiny_script


class TestNormalize:
    def test_constant_history_yields_zeros(self):
        raw = np.full(1250, 80.0)
        hist = np.full(7500, 80.0)
        out = normalize_window(raw, hist)
        assert np.all(out == 0.0)

    def test_known_mean_and_std(self):
        rng = np.random.default_rng(0)
        hist = rng.normal(80.0, 5.0, 75_000)
        hist = (hist - hist.mean()) / hist.std() * 5.0 + 80.0  # exact moments
        out = normalize_window(np.array([90.0]), hist)
        assert out[0] == pytest.approx(2.0, abs=1e-9)

    def test_seeded_stream_normalizes_to_unit_scale(self):
        stream = synth.generate_baseline(SynthConfig(rng_seed=8), 1500)
        hist = stream.samples[:75_000]
        out = normalize_window(stream.samples[75_000:150_000], hist)
        assert -0.05 < float(out.mean()) < 0.05
        assert 0.9 < float(out.std()) < 1.1

    def test_history_too_short(self):
        with pytest.raises(NormalizationHistoryTooShort):
            normalize_window(np.zeros(10), np.zeros(7499))

    def test_long_history_trimmed_to_ten_minutes(self):
        hist = np.concatenate([np.full(10_000, 500.0), np.full(75_000, 80.0)])
        out = normalize_window(np.array([80.0]), hist)
        assert out[0] == 0.0  # the 500 mmHg prefix is out of context

    def test_idempotence_on_normalized_data(self):
        stream = synth.generate_baseline(SynthConfig(rng_seed=2), 120)
        y = normalize_window(stream.samples, stream.samples)
        out = normalize_window(y, y)
        assert abs(float(out.mean())) < 1e-6
        assert abs(float(out.std()) - 1.0) < 1e-6


def _clean_stream(minutes, seed=0):
    return synth.generate_baseline(SynthConfig(rng_seed=seed), minutes * 60)


class TestExtract:
    def test_clean_stream_window_count(self):
        # 20 minutes, 60 s windows, first 10 minutes reserved as warm-up
        stream = _clean_stream(20)
        windows = extract_training_windows(stream, [], 7500)
        assert len(windows) == 10
        assert all(w.y == 0 for w in windows)
        assert windows[0].start_idx == 75_000

    def test_window_inside_event_is_positive(self):
        script = ScenarioScript(
            bed_id="b", line_kind=synth.LineKind.ALINE, duration_s=1500,
            config=SynthConfig(),
            events=[ScriptEvent("line_access", at_s=660.0, duration_s=120.0)],
        )
        stream, labels = synth.generate_scenario(script)
        windows = extract_training_windows(stream, labels, 7500)
        by_start = {w.start_idx: w for w in windows}
        # the 60 s tile at 690 s sits fully inside the 660..780 s event
        assert by_start[690 * 125].y == 1

    def test_positive_count_matches_bruteforce_overlap_oracle(self):
        wave, labels = synth.generate_scenario(make_tiny_script(seed=17))
        w = 1250
        windows = extract_training_windows(wave, labels, w, warmup_s=120.0)

        la = [(l.start_idx, l.end_idx) for l in labels
              if l.kind is EventKind.LINE_ACCESS]
        expected = 0
        for win in windows:
            s, e = win.start_idx, win.start_idx + w
            hit = False
            for ls, le in la:
                ov = min(e, le) - max(s, ls)
                if ov > 0 and ov >= min(0.5 * (le - ls), 0.5 * w):
                    hit = True
            expected += hit
        assert sum(win.y for win in windows) == expected
        assert expected > 0

    def test_confounder_windows_are_hard_negatives(self):
        script = ScenarioScript(
            bed_id="b", line_kind=synth.LineKind.ALINE, duration_s=1500,
            config=SynthConfig(),
            events=[ScriptEvent("motion", at_s=660.0, duration_s=30.0)],
        )
        stream, labels = synth.generate_scenario(script)
        windows = extract_training_windows(stream, labels, 7500)
        flagged = [w for w in windows if w.confounder_overlap]
        assert flagged and all(w.y == 0 for w in flagged)

    def test_gap_windows_dropped(self):
        script = ScenarioScript(
            bed_id="b", line_kind=synth.LineKind.ALINE, duration_s=1500,
            config=SynthConfig(),
            events=[ScriptEvent("gap", at_s=660.0, duration_s=30.0)],
        )
        stream, labels = synth.generate_scenario(script)
        windows = extract_training_windows(stream, labels, 7500)
        # both the tile covering the gap and every tile whose ten-minute
        # context touches it disappear
        starts = {w.start_idx for w in windows}
        assert 660 * 125 not in {s for s in starts if s <= 660 * 125 < s + 7500}
        for w in windows:
            ctx_lo = w.start_idx - 75_000
            assert not (ctx_lo < 690 * 125 and 660 * 125 < w.start_idx + 7500)

    def test_tiling_is_ordered_and_disjoint(self):
        wave, labels = synth.generate_scenario(make_tiny_script(seed=17))
        windows = extract_training_windows(wave, labels, 1250, warmup_s=120.0)
        starts = [w.start_idx for w in windows]
        assert starts == sorted(starts)
        assert all(b - a >= 1250 for a, b in zip(starts, starts[1:]))

    def test_negative_ratio_keeps_positives_and_confounders(self):
        wave, labels = synth.generate_scenario(make_tiny_script(seed=17))
        full = extract_training_windows(wave, labels, 1250, warmup_s=120.0)
        curated = extract_training_windows(
            wave, labels, 1250, warmup_s=120.0, negative_ratio=2.0,
            rng=np.random.default_rng(1),
        )
        n_pos = sum(w.y for w in full)
        assert sum(w.y for w in curated) == n_pos
        assert sum(1 for w in curated if w.confounder_overlap) == sum(
            1 for w in full if w.confounder_overlap
        )
        assert len(curated) <= len(full)

    def test_unsupported_window_size(self):
        with pytest.raises(ValueError):
            extract_training_windows(_clean_stream(20), [], 1000)

    def test_stream_too_short(self):
        with pytest.raises(ValueError):
            extract_training_windows(_clean_stream(5), [], 7500)


def _fake_windows(n_pos, n_neg):
    out = []
    for i in range(n_pos + n_neg):
        out.append(
            WindowInstance(
                x=np.zeros(4, dtype=np.float32), y=1 if i < n_pos else 0,
                source_bed="b", start_idx=i * 1250, window_size_samples=1250,
            )
        )
    return out


class TestSplit:
    def test_stratified_counts(self):
        split = split_dataset(_fake_windows(50, 50), seed=0)
        assert sum(w.y for w in split.test) == 10
        assert sum(1 - w.y for w in split.test) == 10
        assert len(split.val) == 16
        assert len(split.train) == 64

    def test_deterministic_membership(self):
        windows = _fake_windows(30, 70)
        a = split_dataset(windows, seed=3)
        b = split_dataset(windows, seed=3)
        key = lambda group: [(w.source_bed, w.start_idx) for w in group]
        assert key(a.train) == key(b.train)
        assert key(a.val) == key(b.val)
        assert key(a.test) == key(b.test)

    def test_partition_property(self):
        windows = _fake_windows(33, 67)
        split = split_dataset(windows, seed=1)
        ids = lambda group: {(w.source_bed, w.start_idx) for w in group}
        train, val, test = ids(split.train), ids(split.val), ids(split.test)
        assert train | val | test == ids(windows)
        assert not (train & val or train & test or val & test)

    def test_single_class_rejected(self):
        with pytest.raises(SplitClassMissing):
            split_dataset(_fake_windows(0, 50), seed=0)

    def test_too_few_windows_rejected(self):
        with pytest.raises(ValueError):
            split_dataset(_fake_windows(3, 3), seed=0)

    def test_static_folds_distinct(self):
        windows = _fake_windows(40, 60)
        folds = dataset.static_folds(windows, n_folds=10, seed=0)
        assert len(folds) == 10
        seeds = {f.split_seed for f in folds}
        assert len(seeds) == 10


class TestSerialization:
    def test_round_trip(self, tmp_path, tiny_windows):
        path = tmp_path / "windows.nsds"
        dataset.save_windows(tiny_windows[:25], path)
        back = dataset.load_windows(path)
        assert len(back) == 25
        for a, b in zip(tiny_windows[:25], back):
            assert a.y == b.y
            assert a.source_bed == b.source_bed
            assert a.start_idx == b.start_idx
            assert a.confounder_overlap == b.confounder_overlap
            assert np.array_equal(a.x, b.x)

    def test_summary_counts(self, tmp_path):
        split = split_dataset(_fake_windows(50, 50), seed=0)
        rows = dataset.split_summary(split)
        assert rows[2] == {"split": "test", "n_positive": 10, "n_negative": 10}
        path = tmp_path / "summary.csv"
        dataset.save_split_summary_csv(split, path)
        assert path.read_text().splitlines()[0] == "split,n_positive,n_negative"
