"""Training-window construction from labeled streams.

Turns a labeled waveform into fixed-length, zero-mean/unit-variance windows
with binary labels, then splits them into stratified train/val/test sets.
Each window is normalized against the ten minutes of signal preceding it,
which keeps the artifact's size relative to the patient's own baseline.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .synth import EventKind, LabeledInterval, WaveformStream

WINDOW_SIZES = (1250, 2500, 3750, 7500, 12500, 15000)  # 10/20/30/60/100/120 s at 125 Hz
CONTEXT_SAMPLES = 75_000  # ten minutes at 125 Hz
MIN_HISTORY_SAMPLES = 7_500  # one minute: the streaming cold-start floor
STD_FLOOR = 1e-3  # mmHg; keeps flatline contexts from dividing by ~0

DATASET_MAGIC = b"NSTKDSET"
_DATASET_VERSION = 1


class NormalizationHistoryTooShort(ValueError):
    """History shorter than the one-minute minimum."""


class SplitClassMissing(ValueError):
    """Dataset split requires both classes to be present."""


@dataclass
class WindowInstance:
    """One normalized training example."""

    x: np.ndarray
    y: int
    source_bed: str
    start_idx: int
    window_size_samples: int
    confounder_overlap: bool = False


@dataclass
class DatasetSplit:
    train: list[WindowInstance]
    val: list[WindowInstance]
    test: list[WindowInstance]
    split_seed: int

    def all_windows(self) -> list[WindowInstance]:
        return [*self.train, *self.val, *self.test]


def normalize_window(raw: np.ndarray, history: np.ndarray) -> np.ndarray:
    """Scale ``raw`` by the mean/std of ``history`` (its preceding signal).

    ``history`` may be up to ten minutes; anything longer is trimmed to its
    trailing ten minutes. Shorter than one minute raises
    :class:`NormalizationHistoryTooShort`. A constant history engages the
    std floor instead of erroring.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 1 or history.shape[0] < MIN_HISTORY_SAMPLES:
        raise NormalizationHistoryTooShort(
            f"need at least {MIN_HISTORY_SAMPLES} history samples, "
            f"got {history.shape[0] if history.ndim == 1 else history.shape}"
        )
    if history.shape[0] > CONTEXT_SAMPLES:
        history = history[-CONTEXT_SAMPLES:]
    mean = float(history.mean())
    std = max(float(history.std()), STD_FLOOR)
    return (np.asarray(raw, dtype=np.float64) - mean) / std


def _overlap_len(a_start, a_end, b_start, b_end):
    return max(0, min(a_end, b_end) - max(a_start, b_start))


def window_label(
    start: int, end: int, line_access: Sequence[LabeledInterval]
) -> int:
    """y = 1 when the window covers enough of some line-access event.

    "Enough" is half the event's duration or half the window, whichever is
    the smaller absolute demand; short artifacts only need their own half
    covered, long ones need half the window.
    """
    w = end - start
    for iv in line_access:
        ov = _overlap_len(start, end, iv.start_idx, iv.end_idx)
        if ov <= 0:
            continue
        if ov >= min(0.5 * iv.n_samples, 0.5 * w):
            return 1
    return 0


def extract_training_windows(
    stream: WaveformStream,
    labels: Sequence[LabeledInterval],
    window_samples: int,
    *,
    warmup_s: float = 600.0,
    negative_ratio: float | None = None,
    rng: np.random.Generator | None = None,
) -> list[WindowInstance]:
    """Tile the stream into non-overlapping normalized windows.

    The first ``warmup_s`` seconds are reserved as normalization context.
    Windows whose span or context touches a stream gap are dropped.
    Confounder-overlapping windows are always kept as y=0 hard negatives.

    ``negative_ratio`` caps clean negatives at ``ratio * n_positives``
    (confounder negatives are never dropped), mirroring a curated
    class-balanced training set. The subsample is seeded via ``rng``.
    """
    if window_samples not in WINDOW_SIZES:
        raise ValueError(
            f"unsupported window size {window_samples}; expected one of {WINDOW_SIZES}"
        )
    rate = stream.sample_rate_hz
    warmup_n = int(round(warmup_s * rate))
    total = stream.n_samples
    if total < window_samples + warmup_n:
        raise ValueError(
            f"stream too short: {total} samples < warm-up {warmup_n} + window "
            f"{window_samples}"
        )

    line_access = [iv for iv in labels if iv.kind is EventKind.LINE_ACCESS]
    confounders = [iv for iv in labels if iv.kind is not EventKind.LINE_ACCESS]

    kept: list[tuple[int, int, bool]] = []  # (start, y, confounder_overlap)
    for start in range(warmup_n, total - window_samples + 1, window_samples):
        end = start + window_samples
        ctx_lo = start - min(start, CONTEXT_SAMPLES)
        if any(g_s < end and ctx_lo < g_e for g_s, g_e in stream.gaps):
            continue
        y = window_label(start, end, line_access)
        conf = any(
            _overlap_len(start, end, iv.start_idx, iv.end_idx) > 0
            for iv in confounders
        )
        kept.append((start, y, conf))

    if negative_ratio is not None:
        n_pos = sum(1 for _, y, _ in kept if y == 1)
        target_clean = max(
            0,
            int(round(negative_ratio * n_pos))
            - sum(1 for _, y, c in kept if y == 0 and c),
        )
        clean_idx = [i for i, (_, y, c) in enumerate(kept) if y == 0 and not c]
        if len(clean_idx) > target_clean:
            if rng is None:
                rng = np.random.default_rng(0)
            chosen = set(
                rng.choice(len(clean_idx), size=target_clean, replace=False).tolist()
            )
            drop = {clean_idx[i] for i in range(len(clean_idx)) if i not in chosen}
            kept = [t for i, t in enumerate(kept) if i not in drop]

    samples = stream.samples
    out: list[WindowInstance] = []
    for start, y, conf in kept:
        hist = samples[max(0, start - CONTEXT_SAMPLES) : start]
        x = normalize_window(samples[start : start + window_samples], hist)
        out.append(
            WindowInstance(
                x=x.astype(np.float32),
                y=y,
                source_bed=stream.bed_id,
                start_idx=start,
                window_size_samples=window_samples,
                confounder_overlap=conf,
            )
        )
    return out


def split_dataset(
    windows: Sequence[WindowInstance],
    seed: int,
    *,
    val_fraction: float = 0.16,
    test_fraction: float = 0.20,
) -> DatasetSplit:
    """Stratified train/val/test split (default 64/16/20), deterministic
    per seed. Requires both classes and at least ten windows."""
    if len(windows) < 10:
        raise ValueError(f"need at least 10 windows to split, got {len(windows)}")
    pos = [w for w in windows if w.y == 1]
    neg = [w for w in windows if w.y == 0]
    if not pos or not neg:
        raise SplitClassMissing("both classes must be present to split")

    rng = np.random.default_rng(seed)
    train: list[WindowInstance] = []
    val: list[WindowInstance] = []
    test: list[WindowInstance] = []
    for group in (pos, neg):
        order = rng.permutation(len(group))
        n_test = int(round(test_fraction * len(group)))
        n_val = int(round(val_fraction * len(group)))
        test.extend(group[i] for i in order[:n_test])
        val.extend(group[i] for i in order[n_test : n_test + n_val])
        train.extend(group[i] for i in order[n_test + n_val :])
    return DatasetSplit(train=train, val=val, test=test, split_seed=seed)


def static_folds(
    windows: Sequence[WindowInstance], n_folds: int = 10, seed: int = 0
) -> list[DatasetSplit]:
    """Repeated stratified splits for mean/std reporting across folds."""
    fold_seeds = np.random.SeedSequence(seed).generate_state(n_folds)
    return [split_dataset(windows, int(s)) for s in fold_seeds]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_windows(windows: Sequence[WindowInstance], path: str | Path):
    """Length-prefixed binary records of normalized windows."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<HI", _DATASET_VERSION, len(windows)))
        for w in windows:
            bed = w.source_bed.encode("utf-8")
            payload = (
                struct.pack("<H", len(bed))
                + bed
                + struct.pack(
                    "<QIBB", w.start_idx, w.window_size_samples, w.y,
                    int(w.confounder_overlap),
                )
                + np.ascontiguousarray(w.x, dtype="<f4").tobytes()
            )
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def load_windows(path: str | Path) -> list[WindowInstance]:
    with open(path, "rb") as fh:
        if fh.read(len(DATASET_MAGIC)) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a needlestack dataset file")
        version, count = struct.unpack("<HI", fh.read(6))
        if version != _DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        out = []
        for _ in range(count):
            (plen,) = struct.unpack("<I", fh.read(4))
            payload = fh.read(plen)
            if len(payload) != plen:
                raise ValueError(f"{path}: truncated dataset file")
            (bed_len,) = struct.unpack_from("<H", payload, 0)
            off = 2
            bed = payload[off : off + bed_len].decode("utf-8")
            off += bed_len
            start_idx, wsize, y, conf = struct.unpack_from("<QIBB", payload, off)
            off += 14
            x = np.frombuffer(payload, dtype="<f4", offset=off).astype(np.float32)
            out.append(
                WindowInstance(
                    x=x,
                    y=int(y),
                    source_bed=bed,
                    start_idx=int(start_idx),
                    window_size_samples=int(wsize),
                    confounder_overlap=bool(conf),
                )
            )
    return out


def split_summary(split: DatasetSplit) -> list[dict]:
    rows = []
    for name, group in (("train", split.train), ("val", split.val), ("test", split.test)):
        n_pos = sum(w.y for w in group)
        rows.append({"split": name, "n_positive": n_pos, "n_negative": len(group) - n_pos})
    return rows


def save_split_summary_csv(split: DatasetSplit, path: str | Path):
    rows = split_summary(split)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["split", "n_positive", "n_negative"])
        writer.writeheader()
        writer.writerows(rows)
