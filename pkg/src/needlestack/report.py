"""Clinical-style utilization reports over detected line-access events.

Two views: a morning-rounds bed summary (which lines are in, for how long,
accesses in the last 24 hours, time of last access) and biweekly per-patient
aggregates (total events and events/hour, stratified by bed acuity). A
"patient" is approximated by one line session on one bed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Sequence

from .postprocess import EventInterval
from .synth import LineKind

DAY_S = 86_400.0
DOCUMENTATION_MIN_PER_EVENT = 1.0


class Acuity(str, Enum):
    HIGH = "High"
    STANDARD = "Standard"


@dataclass(frozen=True)
class LineSession:
    """One line's insertion-to-removal span on a bed. ``end_epoch`` None
    means the line is still in."""

    bed_id: str
    line_kind: LineKind
    start_epoch: float
    end_epoch: float | None = None
    acuity: Acuity = Acuity.STANDARD

    def active_at(self, when: float) -> bool:
        return self.start_epoch <= when and (self.end_epoch is None or self.end_epoch > when)

    def bounded_end(self, fallback: float) -> float:
        return fallback if self.end_epoch is None else self.end_epoch


@dataclass(frozen=True)
class BedSummary:
    bed_id: str
    line_durations_h: dict[str, float]  # line kind -> hours in as of the report
    accesses_last_24h: int
    last_access_epoch: float | None
    acuity: Acuity

    @property
    def lines_present(self) -> set[str]:
        return set(self.line_durations_h)


@dataclass(frozen=True)
class PeriodAggregate:
    period_start: float
    period_end: float
    patient: str  # bed_id/session ordinal
    acuity: Acuity
    total_events: int
    monitored_hours: float
    events_per_hour: float


def bed_summary(
    events: Sequence[EventInterval],
    sessions: Sequence[LineSession],
    as_of: float,
) -> list[BedSummary]:
    """Per-bed snapshot at ``as_of`` for beds with an active line.

    The 24-hour access count uses a half-open window (as_of - 24h, as_of]
    over event end times; an event ending exactly 24 hours ago is excluded.
    """
    beds = sorted({s.bed_id for s in sessions if s.active_at(as_of)})
    out = []
    for bed in beds:
        active = [s for s in sessions if s.bed_id == bed and s.active_at(as_of)]
        durations = {
            s.line_kind.value: (as_of - s.start_epoch) / 3600.0 for s in active
        }
        bed_events = [e for e in events if e.bed_id == bed and e.end_epoch <= as_of]
        recent = [e for e in bed_events if e.end_epoch > as_of - DAY_S]
        last = max((e.end_epoch for e in bed_events), default=None)
        out.append(
            BedSummary(
                bed_id=bed,
                line_durations_h=durations,
                accesses_last_24h=len(recent),
                last_access_epoch=last,
                acuity=active[0].acuity,
            )
        )
    return out


def period_aggregate(
    events: Sequence[EventInterval],
    sessions: Sequence[LineSession],
    bucket_days: int = 14,
) -> list[PeriodAggregate]:
    """Per-(session, bucket) event totals and events/hour.

    Buckets are ``bucket_days`` long, anchored at the earliest session
    start, and cover through the latest session end / event. A session
    contributes to a bucket only where they overlap (monitored hours > 0).
    Events count into the bucket containing their end time, within the
    session that covers them.
    """
    if not sessions:
        return []
    bucket_s = bucket_days * DAY_S
    origin = min(s.start_epoch for s in sessions)
    horizon = max(
        [s.bounded_end(origin) for s in sessions]
        + [e.end_epoch for e in events]
        + [origin]
    )
    n_buckets = max(1, int(-(-(horizon - origin) // bucket_s)))  # ceil

    session_labels = {}
    per_bed_counter: dict[str, int] = {}
    for s in sorted(sessions, key=lambda s: (s.bed_id, s.start_epoch)):
        ordinal = per_bed_counter.get(s.bed_id, 0) + 1
        per_bed_counter[s.bed_id] = ordinal
        session_labels[id(s)] = f"{s.bed_id}/{ordinal}"

    out = []
    for k in range(n_buckets):
        b_lo = origin + k * bucket_s
        b_hi = b_lo + bucket_s
        for s in sessions:
            s_end = s.bounded_end(horizon)
            monitored = max(0.0, min(s_end, b_hi) - max(s.start_epoch, b_lo)) / 3600.0
            if monitored <= 0:
                continue
            n = sum(
                1
                for e in events
                if e.bed_id == s.bed_id
                and b_lo <= e.end_epoch < b_hi
                and s.start_epoch <= e.end_epoch <= s_end
            )
            out.append(
                PeriodAggregate(
                    period_start=b_lo,
                    period_end=b_hi,
                    patient=session_labels[id(s)],
                    acuity=s.acuity,
                    total_events=n,
                    monitored_hours=monitored,
                    events_per_hour=n / monitored,
                )
            )
    return out


def documentation_minutes_saved(n_events: int) -> float:
    """Documentation time replaced by automated detection (one minute per
    recorded access)."""
    return n_events * DOCUMENTATION_MIN_PER_EVENT


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_FORMATS = ("text", "csv", "plotdata")


def _fmt_epoch(epoch: float | None) -> str:
    if epoch is None:
        return "-"
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%d %H:%M")


def _render_summaries_text(items: Sequence[BedSummary], include_time_saved: bool) -> str:
    header = (
        f"{'bed':<10} {'lines':<16} {'duration_h':<18} "
        f"{'accesses_24h':>12} {'last_access':<17} {'acuity':<8}"
    )
    lines = [header]
    for s in items:
        kinds = ",".join(sorted(s.line_durations_h)) or "-"
        durs = ",".join(
            f"{s.line_durations_h[k]:.1f}" for k in sorted(s.line_durations_h)
        ) or "-"
        lines.append(
            f"{s.bed_id:<10} {kinds:<16} {durs:<18} "
            f"{s.accesses_last_24h:>12d} {_fmt_epoch(s.last_access_epoch):<17} "
            f"{s.acuity.value:<8}"
        )
    if include_time_saved:
        total = sum(s.accesses_last_24h for s in items)
        lines.append(
            f"documentation time saved (last 24h): "
            f"{documentation_minutes_saved(total):.0f} min across {total} events"
        )
    return "\n".join(lines)


def _render_aggregates_text(items: Sequence[PeriodAggregate]) -> str:
    header = (
        f"{'period_start':<17} {'patient':<14} {'acuity':<9} "
        f"{'events':>7} {'hours':>9} {'events_per_hour':>16}"
    )
    lines = [header]
    for a in items:
        lines.append(
            f"{_fmt_epoch(a.period_start):<17} {a.patient:<14} {a.acuity.value:<9} "
            f"{a.total_events:>7d} {a.monitored_hours:>9.1f} {a.events_per_hour:>16.4f}"
        )
    return "\n".join(lines)


def _summary_rows(items: Sequence[BedSummary]) -> list[dict]:
    rows = []
    for s in items:
        for kind in sorted(s.line_durations_h):
            rows.append(
                {
                    "bed_id": s.bed_id,
                    "line_kind": kind,
                    "duration_h": f"{s.line_durations_h[kind]:.4f}",
                    "accesses_last_24h": s.accesses_last_24h,
                    "last_access_epoch": "" if s.last_access_epoch is None
                    else s.last_access_epoch,
                    "acuity": s.acuity.value,
                }
            )
    return rows


def _aggregate_rows(items: Sequence[PeriodAggregate]) -> list[dict]:
    return [
        {
            "period_start": a.period_start,
            "period_end": a.period_end,
            "patient": a.patient,
            "acuity": a.acuity.value,
            "total_events": a.total_events,
            "monitored_hours": f"{a.monitored_hours:.4f}",
            "events_per_hour": f"{a.events_per_hour:.6f}",
        }
        for a in items
    ]


_SUMMARY_FIELDS = ["bed_id", "line_kind", "duration_h", "accesses_last_24h",
                   "last_access_epoch", "acuity"]
_AGGREGATE_FIELDS = ["period_start", "period_end", "patient", "acuity",
                     "total_events", "monitored_hours", "events_per_hour"]


def render(
    items: Sequence[BedSummary] | Sequence[PeriodAggregate],
    fmt: str = "text",
    *,
    include_time_saved: bool = False,
) -> str:
    """Render summaries or aggregates as a text table, CSV, or plot-ready
    CSV. Empty input yields a header-only document."""
    if fmt not in _FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {_FORMATS}")
    items = list(items)
    is_aggregate = bool(items) and isinstance(items[0], PeriodAggregate)

    if fmt == "text":
        if is_aggregate:
            return _render_aggregates_text(items)
        return _render_summaries_text(items, include_time_saved)

    # csv and plotdata are both CSV; plotdata flattens to per-line /
    # per-point rows that plotting tools ingest directly, which the
    # row-builders already produce.
    buf = io.StringIO()
    if is_aggregate:
        writer = csv.DictWriter(buf, fieldnames=_AGGREGATE_FIELDS)
        writer.writeheader()
        writer.writerows(_aggregate_rows(items))
    else:
        writer = csv.DictWriter(buf, fieldnames=_SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(_summary_rows(items))
    return buf.getvalue()


def save_sessions_csv(sessions: Sequence[LineSession], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bed_id", "line_kind", "start_epoch", "end_epoch", "acuity"])
        for s in sessions:
            writer.writerow(
                [s.bed_id, s.line_kind.value, s.start_epoch,
                 "" if s.end_epoch is None else s.end_epoch, s.acuity.value]
            )


def load_sessions_csv(path: str | Path) -> list[LineSession]:
    sessions = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sessions.append(
                LineSession(
                    bed_id=row["bed_id"],
                    line_kind=LineKind(row["line_kind"]),
                    start_epoch=float(row["start_epoch"]),
                    end_epoch=float(row["end_epoch"]) if row["end_epoch"] else None,
                    acuity=Acuity(row["acuity"]),
                )
            )
    return sessions
