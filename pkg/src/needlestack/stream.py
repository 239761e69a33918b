"""Sliding-window streaming inference over multi-bed waveform replays.

Each bed runs as an independent lane: a rolling ten-minute normalization
context (ring buffer with incrementally maintained statistics), window
extraction at a fixed step size, batched classifier calls, and an
append-only prediction log with per-record checksums. An error on one bed
never disturbs another bed's records.
"""

from __future__ import annotations

import csv
import logging
import struct
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dataset import CONTEXT_SAMPLES, MIN_HISTORY_SAMPLES, STD_FLOOR, WINDOW_SIZES
from .model import CnnParams, predict_batch
from .synth import LINE_KIND_CODE, LINE_KIND_FROM_CODE, LineKind, WaveformStream

logger = logging.getLogger(__name__)

LOG_MAGIC = b"NSTKLOG1"
_RECORD_STRUCT = struct.Struct("<16sBQIdd")
_BED_ID_BYTES = 16


class StreamTooShort(ValueError):
    """Stream shorter than one window."""


class LogFormatError(ValueError):
    """Prediction log header is not recognizable."""


@dataclass(frozen=True)
class SlidingConfig:
    window_samples: int
    step_samples: int = 1250  # ten seconds at 125 Hz
    batch_windows: int = 256

    def __post_init__(self):
        if self.window_samples not in WINDOW_SIZES:
            raise ValueError(
                f"unsupported window size {self.window_samples}; "
                f"expected one of {WINDOW_SIZES}"
            )
        if not 1 <= self.step_samples <= self.window_samples:
            raise ValueError("step must satisfy 1 <= step <= window")
        if self.batch_windows < 1:
            raise ValueError("batch_windows must be at least 1")


@dataclass(frozen=True)
class PredictionRecord:
    bed_id: str
    line_kind: LineKind
    window_start_idx: int
    window_samples: int
    probability: float
    wall_time_epoch: float


def slide(stream_length: int, window_samples: int, step_samples: int) -> np.ndarray:
    """Window start indices k*S for k = 0 .. floor((T-W)/S).

    The last window always fits inside the stream. Raises
    :class:`StreamTooShort` when the stream cannot hold even one window.
    """
    if window_samples < 1 or step_samples < 1:
        raise ValueError("window and step must be positive")
    if stream_length < window_samples:
        raise StreamTooShort(
            f"stream of {stream_length} samples cannot fit a {window_samples}-sample window"
        )
    k_max = (stream_length - window_samples) // step_samples
    return np.arange(k_max + 1, dtype=np.int64) * step_samples


class RollingStats:
    """Ring buffer of the most recent samples with incremental mean/variance.

    Additions and evictions update compensated running sums; the sums are
    rebuilt exactly from the buffer once per full buffer turnover, so drift
    cannot accumulate over long streams.
    """

    def __init__(self, capacity: int = CONTEXT_SAMPLES):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._buf = np.zeros(capacity, dtype=np.float64)
        self._write = 0
        self.count = 0
        self._sum = 0.0
        self._sum_c = 0.0
        self._sumsq = 0.0
        self._sumsq_c = 0.0
        self._since_rebuild = 0

    @staticmethod
    def _kahan(total: float, comp: float, delta: float) -> tuple[float, float]:
        y = delta - comp
        t = total + y
        comp = (t - total) - y
        return t, comp

    def _slices(self, start: int, n: int):
        start %= self.capacity
        first = min(n, self.capacity - start)
        yield self._buf[start : start + first]
        if n > first:
            yield self._buf[: n - first]

    def _rebuild(self):
        parts = list(self._slices(self._write - self.count, self.count))
        self._sum = float(sum(float(np.sum(p)) for p in parts))
        self._sumsq = float(sum(float(np.sum(np.square(p))) for p in parts))
        self._sum_c = self._sumsq_c = 0.0
        self._since_rebuild = 0

    def push(self, values: np.ndarray):
        x = np.asarray(values, dtype=np.float64).ravel()
        if x.size >= self.capacity:
            x = x[-self.capacity :]
            self._buf[:] = x
            self._write = 0
            self.count = self.capacity
            self._rebuild()
            return
        m = x.size
        if m == 0:
            return
        evict = self.count + m - self.capacity
        if evict > 0:
            for part in self._slices(self._write - self.count, evict):
                self._sum, self._sum_c = self._kahan(self._sum, self._sum_c, -float(np.sum(part)))
                self._sumsq, self._sumsq_c = self._kahan(
                    self._sumsq, self._sumsq_c, -float(np.sum(np.square(part)))
                )
            self.count -= evict
        pos = self._write
        first = min(m, self.capacity - pos)
        self._buf[pos : pos + first] = x[:first]
        if m > first:
            self._buf[: m - first] = x[first:]
        self._write = (pos + m) % self.capacity
        self.count += m
        self._sum, self._sum_c = self._kahan(self._sum, self._sum_c, float(np.sum(x)))
        self._sumsq, self._sumsq_c = self._kahan(
            self._sumsq, self._sumsq_c, float(np.sum(np.square(x)))
        )
        self._since_rebuild += m
        if self._since_rebuild >= self.capacity:
            self._rebuild()

    @property
    def mean(self) -> float:
        if self.count == 0:
            raise ValueError("no samples pushed yet")
        return self._sum / self.count

    @property
    def variance(self) -> float:
        mu = self.mean
        return max(self._sumsq / self.count - mu * mu, 0.0)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass
class InferenceRun:
    """Outcome of a (possibly multi-bed) replay."""

    records: dict[str, list[PredictionRecord]] = field(default_factory=dict)
    gap_skips: dict[str, int] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def all_records(self) -> list[PredictionRecord]:
        out: list[PredictionRecord] = []
        for bed in sorted(self.records):
            out.extend(self.records[bed])
        return out


def _infer_bed(
    params: CnnParams,
    stream: WaveformStream,
    cfg: SlidingConfig,
    writer: "PredictionLogWriter | None",
    wall_clock: Callable[[], float],
) -> tuple[list[PredictionRecord], int]:
    w = cfg.window_samples
    samples = stream.samples
    starts = slide(stream.n_samples, w, cfg.step_samples)
    gaps = sorted(stream.gaps)
    stats = RollingStats(CONTEXT_SAMPLES)

    records: list[PredictionRecord] = []
    batch: list[np.ndarray] = []
    batch_starts: list[int] = []
    pushed = 0
    gap_skips = 0

    def flush():
        if not batch:
            return
        probs = predict_batch(params, np.stack(batch), batch_size=cfg.batch_windows)
        now = wall_clock()
        new = [
            PredictionRecord(
                bed_id=stream.bed_id,
                line_kind=stream.line_kind,
                window_start_idx=s,
                window_samples=w,
                probability=float(p),
                wall_time_epoch=now,
            )
            for s, p in zip(batch_starts, probs)
        ]
        records.extend(new)
        if writer is not None:
            writer.append(new)
        batch.clear()
        batch_starts.clear()

    for s in starts:
        s = int(s)
        if s > pushed:
            stats.push(samples[pushed:s])
            pushed = s
        if stats.count < MIN_HISTORY_SAMPLES:
            continue  # normalization warm-up
        ctx_lo = s - stats.count
        if any(g_lo < s + w and ctx_lo < g_hi for g_lo, g_hi in gaps):
            gap_skips += 1
            continue
        mean = stats.mean
        std = max(stats.std, STD_FLOOR)
        x = (samples[s : s + w].astype(np.float64) - mean) / std
        batch.append(x.astype(params.dtype))
        batch_starts.append(s)
        if len(batch) >= cfg.batch_windows:
            flush()
    flush()
    return records, gap_skips


def stream_infer(
    params: CnnParams,
    sources: Mapping[str, WaveformStream],
    cfg: SlidingConfig,
    *,
    log_path: str | Path | None = None,
    max_workers: int | None = None,
    wall_clock: Callable[[], float] = time.time,
) -> InferenceRun:
    """Replay one or more bed streams through the classifier.

    Beds are independent lanes; with ``max_workers`` > 1 they run in
    parallel threads sharing the read-only parameters. A failure on one bed
    is recorded in ``errors`` and leaves the other beds untouched. When a
    ``log_path`` is given, records are appended (checksummed framing) as
    they are produced; per-bed record order is preserved.
    """
    if cfg.window_samples != params.window_samples:
        raise ValueError(
            f"model expects {params.window_samples}-sample windows but the "
            f"sliding config asks for {cfg.window_samples}"
        )
    run = InferenceRun()
    writer = PredictionLogWriter(log_path) if log_path is not None else None

    def lane(bed: str):
        return _infer_bed(params, sources[bed], cfg, writer, wall_clock)

    beds = list(sources)
    try:
        if max_workers is not None and max_workers > 1 and len(beds) > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                futures = {bed: pool.submit(lane, bed) for bed in beds}
            for bed, fut in futures.items():
                try:
                    run.records[bed], run.gap_skips[bed] = fut.result()
                except Exception as exc:
                    run.errors[bed] = f"{type(exc).__name__}: {exc}"
        else:
            for bed in beds:
                try:
                    run.records[bed], run.gap_skips[bed] = lane(bed)
                except Exception as exc:
                    run.errors[bed] = f"{type(exc).__name__}: {exc}"
    finally:
        if writer is not None:
            writer.close()
    return run


# ---------------------------------------------------------------------------
# Append-only prediction log
# ---------------------------------------------------------------------------


def _pack_record(rec: PredictionRecord) -> bytes:
    bed = rec.bed_id.encode("utf-8")
    if len(bed) > _BED_ID_BYTES:
        raise ValueError(f"bed_id {rec.bed_id!r} exceeds {_BED_ID_BYTES} bytes")
    payload = _RECORD_STRUCT.pack(
        bed.ljust(_BED_ID_BYTES, b"\x00"),
        LINE_KIND_CODE[rec.line_kind],
        rec.window_start_idx,
        rec.window_samples,
        rec.probability,
        rec.wall_time_epoch,
    )
    return struct.pack("<I", len(payload)) + payload + struct.pack(
        "<I", zlib.crc32(payload)
    )


def _unpack_record(payload: bytes) -> PredictionRecord:
    bed, kind, start, w, prob, wall = _RECORD_STRUCT.unpack(payload)
    return PredictionRecord(
        bed_id=bed.rstrip(b"\x00").decode("utf-8"),
        line_kind=LINE_KIND_FROM_CODE[kind],
        window_start_idx=int(start),
        window_samples=int(w),
        probability=float(prob),
        wall_time_epoch=float(wall),
    )


class PredictionLogWriter:
    """Thread-safe appender for the framed, checksummed prediction log."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "ab")
        if new:
            self._fh.write(LOG_MAGIC)
            self._fh.flush()

    def append(self, records: Iterable[PredictionRecord]):
        data = b"".join(_pack_record(r) for r in records)
        with self._lock:
            self._fh.write(data)
            self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def append_log(path: str | Path, records: Iterable[PredictionRecord]):
    with PredictionLogWriter(path) as writer:
        writer.append(records)


def read_log(path: str | Path) -> list[PredictionRecord]:
    """Read records in append order.

    A truncated final frame or a checksum mismatch ends the read at the
    last valid record with a warning; everything before it is returned.
    """
    records: list[PredictionRecord] = []
    with open(path, "rb") as fh:
        magic = fh.read(len(LOG_MAGIC))
        if magic != LOG_MAGIC:
            raise LogFormatError(f"{path}: bad log magic {magic!r}")
        while True:
            head = fh.read(4)
            if len(head) < 4:
                if head:
                    logger.warning("%s: truncated frame header; stopping", path)
                break
            (plen,) = struct.unpack("<I", head)
            payload = fh.read(plen)
            tail = fh.read(4)
            if len(payload) < plen or len(tail) < 4:
                logger.warning("%s: truncated final record; stopping", path)
                break
            (crc,) = struct.unpack("<I", tail)
            if crc != zlib.crc32(payload) or plen != _RECORD_STRUCT.size:
                logger.warning("%s: checksum mismatch; truncating here", path)
                break
            records.append(_unpack_record(payload))
    return records


def export_log_csv(log_path: str | Path, csv_path: str | Path):
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["bed_id", "line_kind", "start_idx", "window_samples", "probability",
             "wall_time"]
        )
        for rec in read_log(log_path):
            writer.writerow(
                [rec.bed_id, rec.line_kind.value, rec.window_start_idx,
                 rec.window_samples, rec.probability, rec.wall_time_epoch]
            )


def records_for_bed(
    records: Sequence[PredictionRecord], bed_id: str
) -> list[PredictionRecord]:
    return [r for r in records if r.bed_id == bed_id]
