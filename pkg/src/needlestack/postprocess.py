"""Collapse overlapping window probabilities into per-position scores and
discrete events.

Sliding-window inference scores each region of waveform several times. A
Gaussian kernel centered on a position averages the raw probabilities of
every window whose center falls within half a window of it, weighting by
distance; thresholding the averaged score and merging nearby positives
yields the countable events that feed evaluation and reporting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .stream import PredictionRecord

DEFAULT_MERGE_GAP_S = 30.0


@dataclass(frozen=True)
class SmoothedPrediction:
    """Kernel-weighted average probability at one center position."""

    center_idx: int
    probability: float
    contributing_count: int


@dataclass(frozen=True)
class EventInterval:
    """One merged positive region; the unit counted in reports."""

    bed_id: str
    start_idx: int
    end_idx: int
    peak_probability: float
    event_count_key: str
    start_epoch: float
    end_epoch: float

    def __post_init__(self):
        if self.start_idx >= self.end_idx:
            raise ValueError("event must satisfy start_idx < end_idx")


def gaussian_kernel(t, t_c, sigma: float):
    """Normal density centered at ``t_c`` with standard deviation ``sigma``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-((t - t_c) ** 2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))


def _record_centers(records: Sequence[PredictionRecord], window_samples: int) -> np.ndarray:
    return np.array(
        [r.window_start_idx + window_samples // 2 for r in records], dtype=np.int64
    )


def _check_one_bed(records: Sequence[PredictionRecord]):
    beds = {r.bed_id for r in records}
    if len(beds) > 1:
        raise ValueError(f"smoothing runs per bed; got records from {sorted(beds)}")


def smooth_at_centers(
    records: Sequence[PredictionRecord],
    centers: Sequence[int],
    sigma: float,
    window_samples: int,
) -> list[SmoothedPrediction]:
    """Weighted-average probability at arbitrary center positions.

    Each output averages the raw probabilities of the records whose own
    centers lie within ``window_samples / 2`` of the target, weighted by a
    Gaussian in the center distance; the weight normalization keeps the
    result inside [min, max] of the contributors. Centers with no
    contributing record are omitted.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not records:
        raise ValueError("prediction log is empty")
    _check_one_bed(records)
    rc = _record_centers(records, window_samples)
    if np.any(np.diff(rc) < 0):
        raise ValueError("records must be ordered by window start")
    probs = np.array([r.probability for r in records], dtype=np.float64)
    half = window_samples / 2.0

    out: list[SmoothedPrediction] = []
    for c in centers:
        lo = int(np.searchsorted(rc, c - half, side="left"))
        hi = int(np.searchsorted(rc, c + half, side="right"))
        if hi <= lo:
            continue
        w = gaussian_kernel(rc[lo:hi], c, sigma)
        p = probs[lo:hi]
        a = float(np.dot(w, p) / np.sum(w))
        a = float(np.clip(a, p.min(), p.max()))
        out.append(
            SmoothedPrediction(
                center_idx=int(c), probability=a, contributing_count=hi - lo
            )
        )
    return out


def smooth(
    records: Sequence[PredictionRecord],
    sigma: float,
    window_samples: int,
) -> list[SmoothedPrediction]:
    """Smoothed probability at every record's own center (one bed's log)."""
    if not records:
        raise ValueError("prediction log is empty")
    centers = _record_centers(records, window_samples)
    return smooth_at_centers(records, centers, sigma, window_samples)


def tile_predictions(
    records: Sequence[PredictionRecord],
    window_samples: int,
    sigma: float,
    *,
    region: tuple[int, int] | None = None,
) -> list[SmoothedPrediction]:
    """One smoothed prediction per non-overlapping window tile of the region.

    This is the per-interval score used by retrospective evaluation: tiles
    are [lo + k*W, lo + (k+1)*W) and each gets the kernel-weighted average
    of the raw windows overlapping it. Tiles with no contributing records
    (gaps, warm-up) produce no prediction.
    """
    if not records:
        raise ValueError("prediction log is empty")
    if region is None:
        lo = min(r.window_start_idx for r in records)
        hi = max(r.window_start_idx + window_samples for r in records)
    else:
        lo, hi = region
    centers = np.arange(lo + window_samples // 2, hi - window_samples // 2 + 1,
                        window_samples, dtype=np.int64)
    return smooth_at_centers(records, centers, sigma, window_samples)


def threshold(smoothed: Sequence[SmoothedPrediction], theta: float) -> np.ndarray:
    """Binary decision per position: 1 where probability strictly exceeds
    ``theta``."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must be in [0, 1]")
    return np.array([s.probability > theta for s in smoothed], dtype=bool)


def merge_events(
    smoothed: Sequence[SmoothedPrediction],
    decisions: np.ndarray,
    *,
    bed_id: str,
    window_samples: int,
    max_gap_s: float = DEFAULT_MERGE_GAP_S,
    sample_rate_hz: int = 125,
    start_epoch: float = 0.0,
) -> list[EventInterval]:
    """Merge consecutive positive positions into discrete events.

    Positions whose centers are within ``max_gap_s`` of each other join one
    event spanning the first window start to the last window end.
    """
    decisions = np.asarray(decisions, dtype=bool)
    if decisions.shape[0] != len(smoothed):
        raise ValueError("decisions must align with smoothed predictions")
    half = window_samples // 2
    max_gap = max_gap_s * sample_rate_hz

    events: list[EventInterval] = []
    group: list[SmoothedPrediction] = []

    def close_group():
        if not group:
            return
        start = group[0].center_idx - half
        end = group[-1].center_idx + half
        s_epoch = start_epoch + start / sample_rate_hz
        events.append(
            EventInterval(
                bed_id=bed_id,
                start_idx=start,
                end_idx=end,
                peak_probability=max(g.probability for g in group),
                event_count_key=datetime.fromtimestamp(
                    s_epoch, tz=timezone.utc
                ).strftime("%Y-%m-%d"),
                start_epoch=s_epoch,
                end_epoch=start_epoch + end / sample_rate_hz,
            )
        )
        group.clear()

    for s, positive in zip(smoothed, decisions):
        if not positive:
            continue
        if group and s.center_idx - group[-1].center_idx > max_gap:
            close_group()
        group.append(s)
    close_group()
    return events


def save_smoothed_csv(smoothed: Sequence[SmoothedPrediction], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["center_idx", "probability", "contributing_count"])
        for s in smoothed:
            writer.writerow([s.center_idx, s.probability, s.contributing_count])


def save_events_csv(events: Sequence[EventInterval], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["bed_id", "start_idx", "end_idx", "peak_probability",
             "event_count_key", "start_epoch", "end_epoch"]
        )
        for ev in events:
            writer.writerow(
                [ev.bed_id, ev.start_idx, ev.end_idx, ev.peak_probability,
                 ev.event_count_key, ev.start_epoch, ev.end_epoch]
            )


def load_events_csv(path: str | Path) -> list[EventInterval]:
    events = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            events.append(
                EventInterval(
                    bed_id=row["bed_id"],
                    start_idx=int(row["start_idx"]),
                    end_idx=int(row["end_idx"]),
                    peak_probability=float(row["peak_probability"]),
                    event_count_key=row["event_count_key"],
                    start_epoch=float(row["start_epoch"]),
                    end_epoch=float(row["end_epoch"]),
                )
            )
    return events
