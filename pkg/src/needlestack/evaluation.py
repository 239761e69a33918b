"""Static and interval-based evaluation plus threshold calibration.

Static metrics score held-out labeled windows one to one. Streaming
predictions instead get the interval schema: a positive decision window
overlapping a truth event is a true positive; a positive window far
(beyond the tolerance) from every event is a false positive; positives
inside the tolerance zone are discarded rather than counted, since event
boundaries are not labeled precisely; negatives are true negatives unless
they overlap an event that no window caught, in which case the miss counts
once per event. Calibration grid-searches the decision threshold for the
best F1 on four of five contiguous folds and reports metrics on the fifth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .postprocess import SmoothedPrediction

FAR_TOLERANCE_S = 30.0
CALIBRATION_GRID_LO = 0.5
CALIBRATION_GRID_HI = 1.0
CALIBRATION_GRID_STEP = 0.01

Interval = tuple[int, int]


class CalibrationFoldDegenerate(ValueError):
    """A calibration fold contains no truth events."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.tn + other.tn, self.fn + other.fn,
        )


class Disposition(Enum):
    TP = "tp"
    FP = "fp"
    TN = "tn"
    FN = "fn"
    DISCARDED = "discarded"


def metrics_from_counts(counts: ConfusionCounts) -> dict[str, float | None]:
    """Standard confusion-matrix metrics; a metric whose denominator is
    zero is reported as None, never as 0."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    total = tp + fp + tn + fn

    def ratio(num, den):
        return num / den if den > 0 else None

    return {
        "accuracy": ratio(tp + tn, total),
        "precision": ratio(tp, tp + fp),
        "recall": ratio(tp, tp + fn),
        "fpr": ratio(fp, fp + tn),
    }


def f1_from_counts(counts: ConfusionCounts) -> float:
    den = 2 * counts.tp + counts.fp + counts.fn
    return 2.0 * counts.tp / den if den > 0 else 0.0


def static_metrics(predicted, truth) -> dict[str, float | None]:
    """Per-window metrics on held-out labeled windows."""
    p = np.asarray(predicted).astype(int)
    y = np.asarray(truth).astype(int)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {y.shape} labels")
    if p.size == 0:
        raise ValueError("empty inputs")
    counts = ConfusionCounts(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )
    return metrics_from_counts(counts)


def _validate_intervals(intervals: Sequence[Interval], what: str):
    for s, e in intervals:
        if s >= e:
            raise ValueError(f"malformed {what} interval [{s}, {e})")


def _overlaps(a: Interval, b: Interval) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def _gap_s(a: Interval, b: Interval, rate: int) -> float:
    if _overlaps(a, b):
        return 0.0
    return max(b[0] - a[1], a[0] - b[1]) / rate


def classify_windows_detailed(
    positive_windows: Sequence[Interval],
    negative_windows: Sequence[Interval],
    truth_intervals: Sequence[Interval],
    *,
    far_s: float = FAR_TOLERANCE_S,
    sample_rate_hz: int = 125,
) -> tuple[ConfusionCounts, list[Disposition], list[Disposition]]:
    """Interval schema with per-window dispositions.

    Returns the counts plus one disposition per positive and per negative
    window (in input order), so every window is dispositioned exactly once.
    The ``fn`` count is per missed truth event, not per overlapping
    negative window.
    """
    positive_windows = [(int(s), int(e)) for s, e in positive_windows]
    negative_windows = [(int(s), int(e)) for s, e in negative_windows]
    truth = [(int(s), int(e)) for s, e in truth_intervals]
    _validate_intervals(positive_windows, "positive window")
    _validate_intervals(negative_windows, "negative window")
    _validate_intervals(truth, "truth")

    caught = [False] * len(truth)
    for w in positive_windows:
        for j, t in enumerate(truth):
            if _overlaps(w, t):
                caught[j] = True

    pos_disp: list[Disposition] = []
    for w in positive_windows:
        if any(_overlaps(w, t) for t in truth):
            pos_disp.append(Disposition.TP)
        elif all(_gap_s(w, t, sample_rate_hz) > far_s for t in truth):
            pos_disp.append(Disposition.FP)
        else:
            pos_disp.append(Disposition.DISCARDED)  # tolerance zone

    neg_disp: list[Disposition] = []
    missed_with_window = [False] * len(truth)
    for w in negative_windows:
        overlapped = [j for j, t in enumerate(truth) if _overlaps(w, t)]
        if not overlapped or all(caught[j] for j in overlapped):
            neg_disp.append(Disposition.TN)
        else:
            neg_disp.append(Disposition.FN)
            for j in overlapped:
                if not caught[j]:
                    missed_with_window[j] = True

    counts = ConfusionCounts(
        tp=sum(d is Disposition.TP for d in pos_disp),
        fp=sum(d is Disposition.FP for d in pos_disp),
        tn=sum(d is Disposition.TN for d in neg_disp),
        fn=sum(missed_with_window),
    )
    return counts, pos_disp, neg_disp


def classify_windows(
    positive_windows: Sequence[Interval],
    negative_windows: Sequence[Interval],
    truth_intervals: Sequence[Interval],
    *,
    far_s: float = FAR_TOLERANCE_S,
    sample_rate_hz: int = 125,
) -> ConfusionCounts:
    counts, _, _ = classify_windows_detailed(
        positive_windows, negative_windows, truth_intervals,
        far_s=far_s, sample_rate_hz=sample_rate_hz,
    )
    return counts


def retrospective_metrics(counts: ConfusionCounts) -> dict[str, float | None]:
    """Metrics over interval-schema counts."""
    return metrics_from_counts(counts)


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationResult:
    fold_id: int
    theta_star: float
    f1_at_theta_star: float
    metrics: dict
    counts: ConfusionCounts


def default_threshold_grid() -> np.ndarray:
    n = int(round((CALIBRATION_GRID_HI - CALIBRATION_GRID_LO) / CALIBRATION_GRID_STEP))
    return np.round(CALIBRATION_GRID_LO + CALIBRATION_GRID_STEP * np.arange(n + 1), 10)


def decision_windows(
    tiles: Sequence[SmoothedPrediction], window_samples: int, theta: float
) -> tuple[list[Interval], list[Interval]]:
    """Split smoothed tiles into positive/negative decision windows at a
    threshold (strictly greater-than)."""
    half = window_samples // 2
    pos, neg = [], []
    for t in tiles:
        iv = (t.center_idx - half, t.center_idx + half)
        (pos if t.probability > theta else neg).append(iv)
    return pos, neg


def fold_bounds(period: Interval, n_folds: int) -> list[Interval]:
    """Contiguous, equal-duration (within one sample) partition of a period."""
    lo, hi = period
    edges = [lo + int(round(i * (hi - lo) / n_folds)) for i in range(n_folds + 1)]
    return [(edges[i], edges[i + 1]) for i in range(n_folds)]


def _counts_at_theta(
    tiles_by_bed: Mapping[str, list[SmoothedPrediction]],
    truth_by_bed: Mapping[str, list[Interval]],
    window_samples: int,
    theta: float,
    far_s: float,
    sample_rate_hz: int,
) -> ConfusionCounts:
    total = ConfusionCounts()
    for bed, tiles in tiles_by_bed.items():
        pos, neg = decision_windows(tiles, window_samples, theta)
        total = total + classify_windows(
            pos, neg, truth_by_bed.get(bed, []),
            far_s=far_s, sample_rate_hz=sample_rate_hz,
        )
    return total


def calibrate_threshold(
    smoothed_by_bed: Mapping[str, Sequence[SmoothedPrediction]],
    truth_by_bed: Mapping[str, Sequence[Interval]],
    window_samples: int,
    *,
    period: Interval,
    n_folds: int = 5,
    grid: np.ndarray | None = None,
    far_s: float = FAR_TOLERANCE_S,
    sample_rate_hz: int = 125,
) -> list[CalibrationResult]:
    """Per-fold threshold calibration over a continuous period.

    The period splits into ``n_folds`` contiguous equal-duration folds
    (tiles assigned by center, events by overlap; all beds share the
    timeline). For each fold, the threshold maximizing F1 on the other
    folds is chosen from the grid (ties go to the smaller threshold) and
    the held fold is scored at that threshold. A fold containing no truth
    event raises :class:`CalibrationFoldDegenerate`.
    """
    if grid is None:
        grid = default_threshold_grid()
    grid = np.asarray(grid, dtype=np.float64)
    bounds = fold_bounds(period, n_folds)

    tiles_in_fold: list[dict[str, list[SmoothedPrediction]]] = []
    truth_in_fold: list[dict[str, list[Interval]]] = []
    for lo, hi in bounds:
        tiles_in_fold.append(
            {
                bed: [t for t in tiles if lo <= t.center_idx < hi]
                for bed, tiles in smoothed_by_bed.items()
            }
        )
        truth_in_fold.append(
            {
                bed: [iv for iv in truth if _overlaps(iv, (lo, hi))]
                for bed, truth in truth_by_bed.items()
            }
        )

    degenerate = [
        i for i, fold_truth in enumerate(truth_in_fold)
        if sum(len(v) for v in fold_truth.values()) == 0
    ]
    if degenerate:
        raise CalibrationFoldDegenerate(
            f"folds {degenerate} contain no truth events over {bounds}"
        )

    results = []
    for i in range(n_folds):
        calib_tiles: dict[str, list[SmoothedPrediction]] = {}
        calib_truth: dict[str, list[Interval]] = {}
        for j in range(n_folds):
            if j == i:
                continue
            for bed, tiles in tiles_in_fold[j].items():
                calib_tiles.setdefault(bed, []).extend(tiles)
            for bed, truth in truth_in_fold[j].items():
                for iv in truth:
                    if iv not in calib_truth.setdefault(bed, []):
                        calib_truth[bed].append(iv)

        f1s = np.array(
            [
                f1_from_counts(
                    _counts_at_theta(
                        calib_tiles, calib_truth, window_samples, float(theta),
                        far_s, sample_rate_hz,
                    )
                )
                for theta in grid
            ]
        )
        best = int(np.argmax(f1s))  # first max: ties resolve to the smaller theta
        theta_star = float(grid[best])
        eval_counts = _counts_at_theta(
            tiles_in_fold[i], truth_in_fold[i], window_samples, theta_star,
            far_s, sample_rate_hz,
        )
        results.append(
            CalibrationResult(
                fold_id=i,
                theta_star=theta_star,
                f1_at_theta_star=float(f1s[best]),
                metrics=retrospective_metrics(eval_counts),
                counts=eval_counts,
            )
        )
    return results


# ---------------------------------------------------------------------------
# Reporting helpers
# ---------------------------------------------------------------------------

_METRIC_ORDER = ("accuracy", "precision", "recall", "fpr")


def metrics_csv(rows: Sequence[dict], path: str | Path, *, label: str = "fold"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label, *_METRIC_ORDER])
        for i, row in enumerate(rows):
            writer.writerow(
                [i] + ["" if row.get(m) is None else f"{row[m]:.6f}"
                       for m in _METRIC_ORDER]
            )


def format_metrics_table(rows: Sequence[dict], *, title: str = "") -> str:
    """Mean +/- std of each metric across folds, as percentages."""
    lines = []
    if title:
        lines.append(title)
    header = "  ".join(f"{m:>12s}" for m in _METRIC_ORDER)
    lines.append(header)
    cells = []
    for m in _METRIC_ORDER:
        vals = [row[m] for row in rows if row.get(m) is not None]
        if not vals:
            cells.append(f"{'absent':>12s}")
        else:
            mean = 100.0 * float(np.mean(vals))
            std = 100.0 * float(np.std(vals))
            cells.append(f"{mean:6.1f}+/-{std:4.1f}")
    lines.append("  ".join(f"{c:>12s}" for c in cells))
    return "\n".join(lines)
