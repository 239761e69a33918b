"""Shared fixtures: a small labeled scenario and a model trained on it.

The tiny scenario uses 10 s windows and short artifacts so the full
synthesize/extract/train chain stays fast enough for unit tests.
"""

import numpy as np
import pytest

from needlestack import dataset, model, synth

TINY_WINDOW = 1250  # 10 s


def make_tiny_script(bed_id="bed-01", seed=11, duration_s=1800,
                     line_kind=synth.LineKind.ALINE):
    return synth.random_scenario_script(
        bed_id, line_kind, duration_s, seed=seed,
        line_access_per_hour=30.0, confounder_per_hour=25.0,
        margin_s=120.0, line_access_duration_range_s=(10.0, 40.0),
    )


@pytest.fixture(scope="session")
def tiny_scenario():
    wave, labels = synth.generate_scenario(make_tiny_script())
    assert sum(1 for l in labels if l.kind is synth.EventKind.LINE_ACCESS) >= 5
    return wave, labels


@pytest.fixture(scope="session")
def tiny_windows(tiny_scenario):
    wave, labels = tiny_scenario
    windows = dataset.extract_training_windows(
        wave, labels, TINY_WINDOW, warmup_s=120.0
    )
    assert sum(w.y for w in windows) >= 10
    return windows


@pytest.fixture(scope="session")
def tiny_trained(tiny_windows):
    """A trained 10 s model plus its splits; shared by model/stream tests."""
    splits = dataset.split_dataset(tiny_windows, seed=5)
    params, history = model.train(
        splits,
        model.ArchConfig(conv1_filters=8, conv2_filters=16),
        model.TrainConfig(batch_size=32, max_epochs=15, early_stop_patience=5,
                          rng_seed=7),
    )
    return params, splits, history


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
