"""needlestack: line-access artifact detection for blood-pressure waveforms.

Pipeline stages, one module each:

- :mod:`needlestack.synth` -- seeded synthetic waveforms with labeled artifacts
- :mod:`needlestack.dataset` -- normalized training windows and splits
- :mod:`needlestack.model` -- the numpy 1D CNN classifier and trainer
- :mod:`needlestack.stream` -- multi-bed sliding-window inference and the log
- :mod:`needlestack.postprocess` -- Gaussian smoothing, thresholds, events
- :mod:`needlestack.evaluation` -- static/interval metrics and calibration
- :mod:`needlestack.report` -- bed summaries and utilization aggregates
"""

from . import dataset, evaluation, model, postprocess, report, stream, synth
from .dataset import (
    DatasetSplit,
    WindowInstance,
    extract_training_windows,
    normalize_window,
    split_dataset,
)
from .evaluation import (
    CalibrationResult,
    ConfusionCounts,
    calibrate_threshold,
    classify_windows,
    retrospective_metrics,
    static_metrics,
)
from .model import (
    ArchConfig,
    CnnParams,
    TrainConfig,
    forward,
    init_params,
    load_model,
    predict_batch,
    save_model,
    train,
)
from .postprocess import (
    EventInterval,
    SmoothedPrediction,
    gaussian_kernel,
    merge_events,
    smooth,
    threshold,
    tile_predictions,
)
from .report import Acuity, BedSummary, LineSession, bed_summary, period_aggregate, render
from .stream import (
    InferenceRun,
    PredictionRecord,
    SlidingConfig,
    read_log,
    slide,
    stream_infer,
)
from .synth import (
    EventKind,
    LabeledInterval,
    LineKind,
    ScenarioScript,
    SynthConfig,
    WaveformStream,
    generate_baseline,
    generate_scenario,
    inject_confounder,
    inject_line_access,
)

__version__ = "0.1.0"
