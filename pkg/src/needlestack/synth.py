"""Synthetic blood-pressure waveform generation with labeled artifact injection.

Produces seeded, reproducible pressure streams (125 Hz) for arterial and
central venous lines, with injectable line-access artifacts (the
rise/plateau/drop "sharkfin" shape) and confounder disturbances (motion,
flush, cuff inflation, flatline). Every injected event comes back with an
exact ground-truth interval, so downstream window labeling never has to
guess.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SAMPLE_RATE_DEFAULT = 125
RESP_RATE_HZ = 0.3  # fixed breathing rate, 18 breaths/min

STREAM_MAGIC = b"NSTK1"

_BEAT_TABLE_SIZE = 8192
_CHUNK = 1 << 22  # samples per synthesis chunk; keeps float64 temporaries small


class LineKind(str, Enum):
    ALINE = "ALine"
    CLINE = "CLine"


class EventKind(str, Enum):
    LINE_ACCESS = "LineAccess"
    MOTION = "Motion"
    FLUSH = "Flush"
    CUFF_INFLATION = "CuffInflation"
    FLATLINE = "Flatline"


CONFOUNDER_KINDS = (
    EventKind.MOTION,
    EventKind.FLUSH,
    EventKind.CUFF_INFLATION,
    EventKind.FLATLINE,
)

LINE_ACCESS_MIN_S = 10.0
LINE_ACCESS_MAX_S = 300.0
FLUSH_MAX_S = 5.0


@dataclass(frozen=True)
class SynthConfig:
    """Waveform generator settings. Defaults approximate an arterial line."""

    sample_rate_hz: int = SAMPLE_RATE_DEFAULT
    mean_pressure: float = 80.0
    pulse_amplitude: float = 40.0
    heart_rate_bpm: float = 120.0
    respiratory_modulation: float = 0.1
    noise_std: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.pulse_amplitude <= 0:
            raise ValueError("pulse_amplitude must be positive")
        if self.heart_rate_bpm <= 0:
            raise ValueError("heart_rate_bpm must be positive")
        if not 0.0 <= self.respiratory_modulation < 1.0:
            raise ValueError("respiratory_modulation must be in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def cvp_config(rng_seed: int = 0) -> SynthConfig:
    """A central-venous-pressure variant (low mean, small pulse)."""
    return SynthConfig(mean_pressure=8.0, pulse_amplitude=4.0, rng_seed=rng_seed)


@dataclass
class WaveformStream:
    """Uniformly sampled pressure series for one bed/line.

    Sample i occurs at ``start_epoch + i / sample_rate_hz``. ``gaps`` lists
    half-open [start, end) sample ranges where the line was disconnected;
    sample values inside gaps are zero-filled placeholders.
    """

    bed_id: str
    line_kind: LineKind
    start_epoch: int
    sample_rate_hz: int
    samples: np.ndarray
    gaps: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def time_of(self, idx: int) -> float:
        return self.start_epoch + idx / self.sample_rate_hz

    def copy(self) -> "WaveformStream":
        return WaveformStream(
            bed_id=self.bed_id,
            line_kind=self.line_kind,
            start_epoch=self.start_epoch,
            sample_rate_hz=self.sample_rate_hz,
            samples=self.samples.copy(),
            gaps=list(self.gaps),
        )


@dataclass(frozen=True)
class LabeledInterval:
    """Ground-truth event [start_idx, end_idx) with its artifact kind."""

    event_id: str
    kind: EventKind
    start_idx: int
    end_idx: int

    def __post_init__(self):
        if self.start_idx >= self.end_idx:
            raise ValueError("interval must satisfy start_idx < end_idx")

    @property
    def n_samples(self) -> int:
        return self.end_idx - self.start_idx


def _beat_table() -> np.ndarray:
    """One beat of pulse morphology, tabulated over phase [0, 1).

    Two harmonics under an exponential decay envelope, mean-removed so a
    whole beat averages to zero, scaled to unit peak-to-trough.
    """
    phase = np.arange(_BEAT_TABLE_SIZE) / _BEAT_TABLE_SIZE
    shape = np.exp(-2.2 * phase) * (
        np.sin(2 * np.pi * phase) + 0.35 * np.sin(4 * np.pi * phase + 0.6)
    )
    shape -= shape.mean()
    shape /= shape.max() - shape.min()
    return shape


_BEAT = _beat_table()


def _pulse_values(start: int, count: int, config: SynthConfig) -> np.ndarray:
    """Deterministic noise-free waveform (pulse + respiration) for samples
    [start, start+count), as float64."""
    i = np.arange(start, start + count, dtype=np.int64)
    t = i / config.sample_rate_hz
    beats = t * (config.heart_rate_bpm / 60.0)
    phase_idx = ((beats % 1.0) * _BEAT_TABLE_SIZE).astype(np.intp) % _BEAT_TABLE_SIZE
    out = config.mean_pressure + config.pulse_amplitude * _BEAT[phase_idx]
    if config.respiratory_modulation > 0:
        resp_amp = config.respiratory_modulation * config.pulse_amplitude
        out += resp_amp * np.sin(2 * np.pi * RESP_RATE_HZ * t)
    return out


def generate_baseline(
    config: SynthConfig,
    duration_s: float,
    *,
    bed_id: str = "bed-00",
    line_kind: LineKind = LineKind.ALINE,
    start_epoch: int = 0,
) -> WaveformStream:
    """Generate a clean artifact-free stream.

    Deterministic for a fixed config (the noise draw depends only on
    ``config.rng_seed``). Duration below one second is rejected.
    """
    if duration_s < 1:
        raise ValueError("duration_s must be at least 1 second")
    n = int(round(duration_s * config.sample_rate_hz))
    samples = np.empty(n, dtype=np.float32)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        samples[lo:hi] = _pulse_values(lo, hi - lo, config)
    if config.noise_std > 0:
        rng = np.random.default_rng(config.rng_seed)
        noise = rng.standard_normal(n, dtype=np.float32)
        noise *= np.float32(config.noise_std)
        samples += noise
    return WaveformStream(
        bed_id=bed_id,
        line_kind=line_kind,
        start_epoch=start_epoch,
        sample_rate_hz=config.sample_rate_hz,
        samples=samples,
    )


def _check_bounds(stream: WaveformStream, at_idx: int, n: int, kind: EventKind):
    if at_idx < 0 or at_idx + n > stream.n_samples:
        raise ValueError(
            f"{kind.value} interval [{at_idx}, {at_idx + n}) exceeds stream "
            f"bounds (length {stream.n_samples})"
        )


def _check_overlap(
    existing: Iterable[LabeledInterval], kind: EventKind, start: int, end: int
):
    for iv in existing:
        if iv.kind is kind and start < iv.end_idx and iv.start_idx < end:
            raise ValueError(
                f"{kind.value} interval [{start}, {end}) overlaps existing "
                f"{iv.event_id} [{iv.start_idx}, {iv.end_idx})"
            )


def _local_stats(samples: np.ndarray, at_idx: int, rate: int) -> tuple[float, float]:
    """Mean/std of the ten seconds adjacent to an injection site."""
    w = 10 * rate
    if at_idx >= w:
        seg = samples[at_idx - w : at_idx]
    else:
        seg = samples[at_idx : at_idx + w]
    return float(np.mean(seg)), float(np.std(seg))


def _write_line_access(
    samples: np.ndarray,
    rate: int,
    at_idx: int,
    n: int,
    plateau_pressure: float,
    pulse_amplitude: float,
    rng: np.random.Generator,
):
    """Overwrite samples[at_idx:at_idx+n) with a rise/plateau/drop artifact."""
    rise_n = max(2, int(round(min(2.5, 0.12 * n / rate) * rate)))
    drop_n = max(2, int(round(0.4 * rate)))
    plat_n = n - rise_n - drop_n
    start_val = float(samples[at_idx])
    end_val = float(samples[at_idx + n - 1])

    rise = np.linspace(start_val, plateau_pressure, rise_n)
    rise += rng.normal(0.0, 0.02 * pulse_amplitude, rise_n)

    # Damped plateau: slight sag, residual pulsation well below the normal
    # pulse envelope, light measurement noise.
    sag = plateau_pressure * (1.0 - 0.04 * np.linspace(0.0, 1.0, plat_n))
    ripple_idx = (
        (np.arange(plat_n) * (2.0 / rate) * _BEAT_TABLE_SIZE).astype(np.intp)
        % _BEAT_TABLE_SIZE
    )
    plateau = sag + 0.05 * pulse_amplitude * _BEAT[ripple_idx]
    plateau += rng.normal(0.0, 0.02 * pulse_amplitude, plat_n)

    drop = np.linspace(float(plateau[-1]), end_val, drop_n)

    seg = np.concatenate([rise, plateau, drop]).astype(np.float32)
    samples[at_idx : at_idx + n] = seg


def inject_line_access(
    stream: WaveformStream,
    at_idx: int,
    duration_s: float,
    plateau_pressure: float,
    *,
    existing: Sequence[LabeledInterval] = (),
    rng: np.random.Generator | None = None,
) -> tuple[WaveformStream, LabeledInterval]:
    """Inject one line-access artifact and return the exact truth interval.

    The input stream is not modified. ``existing`` intervals are checked so
    two line-access events can never overlap.
    """
    if not LINE_ACCESS_MIN_S <= duration_s <= LINE_ACCESS_MAX_S:
        raise ValueError(
            f"line-access duration must be in [{LINE_ACCESS_MIN_S:.0f}, "
            f"{LINE_ACCESS_MAX_S:.0f}] s, got {duration_s}"
        )
    rate = stream.sample_rate_hz
    n = int(round(duration_s * rate))
    _check_bounds(stream, at_idx, n, EventKind.LINE_ACCESS)
    _check_overlap(existing, EventKind.LINE_ACCESS, at_idx, at_idx + n)
    if rng is None:
        rng = np.random.default_rng(0)

    out = stream.copy()
    _, local_std = _local_stats(out.samples, at_idx, rate)
    # Infer the pulse scale from the signal itself so CVP and ABP streams
    # both get proportionate artifacts.
    pulse_amplitude = max(4.0 * local_std, 1e-3)
    _write_line_access(out.samples, rate, at_idx, n, plateau_pressure, pulse_amplitude, rng)
    label = LabeledInterval(
        event_id=f"{EventKind.LINE_ACCESS.value}-{at_idx}",
        kind=EventKind.LINE_ACCESS,
        start_idx=at_idx,
        end_idx=at_idx + n,
    )
    return out, label


def _write_confounder(
    samples: np.ndarray,
    rate: int,
    at_idx: int,
    n: int,
    kind: EventKind,
    rng: np.random.Generator,
):
    seg = samples[at_idx : at_idx + n]
    local_mean, local_std = _local_stats(samples, at_idx, rate)
    scale = max(local_std, 1e-3)
    if kind is EventKind.MOTION:
        seg += rng.normal(0.0, 3.0 * scale, n).astype(np.float32)
    elif kind is EventKind.FLUSH:
        seg[:] = np.float32(local_mean + 10.0 * scale)
        seg += rng.normal(0.0, 0.2 * scale, n).astype(np.float32)
    elif kind is EventKind.CUFF_INFLATION:
        hump = 6.0 * scale * np.sin(np.pi * np.linspace(0.0, 1.0, n)) ** 2
        seg += hump.astype(np.float32)
    elif kind is EventKind.FLATLINE:
        seg[:] = np.float32(local_mean)
    else:  # pragma: no cover - guarded by caller
        raise ValueError(f"unknown confounder kind {kind!r}")


def inject_confounder(
    stream: WaveformStream,
    at_idx: int,
    kind: EventKind,
    duration_s: float,
    *,
    existing: Sequence[LabeledInterval] = (),
    rng: np.random.Generator | None = None,
) -> tuple[WaveformStream, LabeledInterval]:
    """Inject a non-line-access disturbance, labeled with its kind.

    These intervals become hard negatives for the dataset builder.
    """
    if kind not in CONFOUNDER_KINDS:
        raise ValueError(f"unknown confounder kind {kind!r}")
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if kind is EventKind.FLUSH and duration_s >= FLUSH_MAX_S:
        raise ValueError(f"flush spikes are brief: duration must be < {FLUSH_MAX_S} s")
    rate = stream.sample_rate_hz
    n = int(round(duration_s * rate))
    if n < 1:
        raise ValueError("duration too short for one sample")
    _check_bounds(stream, at_idx, n, kind)
    _check_overlap(existing, kind, at_idx, at_idx + n)
    if rng is None:
        rng = np.random.default_rng(0)

    out = stream.copy()
    _write_confounder(out.samples, rate, at_idx, n, kind, rng)
    label = LabeledInterval(
        event_id=f"{kind.value}-{at_idx}",
        kind=kind,
        start_idx=at_idx,
        end_idx=at_idx + n,
    )
    return out, label


# ---------------------------------------------------------------------------
# Scenario scripts
# ---------------------------------------------------------------------------

_SCRIPT_EVENT_KINDS = {
    "line_access": EventKind.LINE_ACCESS,
    "motion": EventKind.MOTION,
    "flush": EventKind.FLUSH,
    "cuff_inflation": EventKind.CUFF_INFLATION,
    "flatline": EventKind.FLATLINE,
    "gap": None,
}


@dataclass(frozen=True)
class ScriptEvent:
    """One scripted injection. ``kind`` is a key of the event table above;
    ``plateau_pressure`` applies to line_access only."""

    kind: str
    at_s: float
    duration_s: float
    plateau_pressure: float | None = None

    def __post_init__(self):
        if self.kind not in _SCRIPT_EVENT_KINDS:
            raise ValueError(f"unknown scenario event kind {self.kind!r}")
        if self.at_s < 0 or self.duration_s <= 0:
            raise ValueError("event must have at_s >= 0 and duration_s > 0")


@dataclass
class ScenarioScript:
    """A full labeled-stream recipe: baseline config plus an event list."""

    bed_id: str
    line_kind: LineKind
    duration_s: float
    config: SynthConfig
    events: list[ScriptEvent] = field(default_factory=list)
    start_epoch: int = 0


def _validate_script(script: ScenarioScript):
    last_at = -1.0
    by_kind: dict[str, float] = {}
    for ev in script.events:
        if ev.at_s < last_at:
            raise ValueError("script events must be sorted by at_s")
        last_at = ev.at_s
        if ev.at_s + ev.duration_s > script.duration_s:
            raise ValueError(
                f"event at {ev.at_s}s runs past the scenario end ({script.duration_s}s)"
            )
        prev_end = by_kind.get(ev.kind)
        if prev_end is not None and ev.at_s < prev_end:
            raise ValueError(f"{ev.kind} events overlap at {ev.at_s}s")
        by_kind[ev.kind] = ev.at_s + ev.duration_s


def generate_scenario(
    script: ScenarioScript,
) -> tuple[WaveformStream, list[LabeledInterval]]:
    """Build baseline plus all scripted injections in one pass.

    Deterministic: the waveform noise comes from ``script.config.rng_seed``
    and each injection draws from its own child generator spawned from the
    same seed.
    """
    _validate_script(script)
    stream = generate_scenario_baseline(script)
    rate = stream.sample_rate_hz
    labels: list[LabeledInterval] = []
    children = np.random.SeedSequence(script.config.rng_seed).spawn(
        max(1, len(script.events))
    )
    for ev, seed in zip(script.events, children):
        at = int(round(ev.at_s * rate))
        n = int(round(ev.duration_s * rate))
        rng = np.random.default_rng(seed)
        if ev.kind == "gap":
            stream.samples[at : at + n] = 0.0
            stream.gaps.append((at, at + n))
            continue
        kind = _SCRIPT_EVENT_KINDS[ev.kind]
        _check_bounds(stream, at, n, kind)
        if kind is EventKind.LINE_ACCESS:
            plateau = ev.plateau_pressure
            if plateau is None:
                plateau = script.config.mean_pressure + 2.6 * script.config.pulse_amplitude
            _check_overlap(labels, kind, at, at + n)
            _write_line_access(
                stream.samples, rate, at, n, plateau, script.config.pulse_amplitude, rng
            )
        else:
            _check_overlap(labels, kind, at, at + n)
            _write_confounder(stream.samples, rate, at, n, kind, rng)
        labels.append(
            LabeledInterval(
                event_id=f"{kind.value}-{at}",
                kind=kind,
                start_idx=at,
                end_idx=at + n,
            )
        )
    labels.sort(key=lambda iv: iv.start_idx)
    return stream, labels


def generate_scenario_baseline(script: ScenarioScript) -> WaveformStream:
    return generate_baseline(
        script.config,
        script.duration_s,
        bed_id=script.bed_id,
        line_kind=script.line_kind,
        start_epoch=script.start_epoch,
    )


# ---------------------------------------------------------------------------
# Seeded event samplers
# ---------------------------------------------------------------------------


def sample_line_access_times(
    duration_s: float,
    rate_per_hour: float,
    rng: np.random.Generator,
    *,
    margin_s: float = 700.0,
    min_gap_s: float = 60.0,
    duration_range_s: tuple[float, float] = (LINE_ACCESS_MIN_S, LINE_ACCESS_MAX_S),
) -> list[tuple[float, float]]:
    """Homogeneous Poisson placement of line-access events.

    Returns (at_s, duration_s) pairs. Events falling inside the start/end
    margins or overlapping the previous event (plus ``min_gap_s``) are
    dropped, so the result is ready to script. The draw order is fixed
    (exponential gap, then duration), which lets callers re-run the sampler
    as an independent oracle for the event count.
    """
    events: list[tuple[float, float]] = []
    t = margin_s
    last_end = -np.inf
    while True:
        t += float(rng.exponential(3600.0 / rate_per_hour))
        dur = float(rng.uniform(*duration_range_s))
        if t + dur > duration_s - margin_s:
            break
        if t < last_end + min_gap_s:
            continue
        events.append((t, dur))
        last_end = t + dur
    return events


_CONFOUNDER_DURATIONS = {
    EventKind.MOTION: (5.0, 60.0),
    EventKind.FLUSH: (1.0, 4.5),
    EventKind.CUFF_INFLATION: (30.0, 90.0),
    EventKind.FLATLINE: (10.0, 120.0),
}


def sample_confounder_events(
    duration_s: float,
    rate_per_hour: float,
    rng: np.random.Generator,
    *,
    blocked: Sequence[tuple[float, float]] = (),
    margin_s: float = 700.0,
    min_gap_s: float = 60.0,
) -> list[ScriptEvent]:
    """Poisson placement of confounders, avoiding ``blocked`` (start, end)
    spans and each other."""
    kinds = list(_CONFOUNDER_DURATIONS)
    occupied = [(s - min_gap_s, e + min_gap_s) for s, e in blocked]
    events: list[ScriptEvent] = []
    t = margin_s
    while True:
        t += float(rng.exponential(3600.0 / rate_per_hour))
        kind = kinds[int(rng.integers(len(kinds)))]
        lo, hi = _CONFOUNDER_DURATIONS[kind]
        dur = float(rng.uniform(lo, hi))
        if t + dur > duration_s - margin_s:
            break
        span = (t - min_gap_s, t + dur + min_gap_s)
        if any(span[0] < e and s < span[1] for s, e in occupied):
            continue
        kind_key = {v: k for k, v in _SCRIPT_EVENT_KINDS.items() if v is not None}[kind]
        events.append(ScriptEvent(kind=kind_key, at_s=t, duration_s=dur))
        occupied.append((t, t + dur))
    return events


def random_scenario_script(
    bed_id: str,
    line_kind: LineKind,
    duration_s: float,
    seed: int,
    *,
    line_access_per_hour: float = 0.5,
    confounder_per_hour: float = 1.0,
    config: SynthConfig | None = None,
    start_epoch: int = 0,
    margin_s: float = 700.0,
    line_access_duration_range_s: tuple[float, float] = (
        LINE_ACCESS_MIN_S, LINE_ACCESS_MAX_S,
    ),
) -> ScenarioScript:
    """Assemble a seeded scenario with Poisson-placed events of every kind."""
    if config is None:
        base = SynthConfig() if line_kind is LineKind.ALINE else cvp_config()
        config = replace(base, rng_seed=seed)
    ss = np.random.SeedSequence(seed)
    la_rng, conf_rng, plat_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    accesses = sample_line_access_times(
        duration_s, line_access_per_hour, la_rng,
        margin_s=margin_s, duration_range_s=line_access_duration_range_s,
    )
    events = [
        ScriptEvent(
            kind="line_access",
            at_s=at,
            duration_s=dur,
            plateau_pressure=config.mean_pressure
            + float(plat_rng.uniform(2.2, 3.2)) * config.pulse_amplitude,
        )
        for at, dur in accesses
    ]
    blocked = [(at, at + dur) for at, dur in accesses]
    events.extend(
        sample_confounder_events(
            duration_s, confounder_per_hour, conf_rng,
            blocked=blocked, margin_s=margin_s,
        )
    )
    events.sort(key=lambda ev: ev.at_s)
    return ScenarioScript(
        bed_id=bed_id,
        line_kind=line_kind,
        duration_s=duration_s,
        config=config,
        events=events,
        start_epoch=start_epoch,
    )


# ---------------------------------------------------------------------------
# Scenario script files (human-editable key-value format)
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = {
    "sample_rate_hz": int,
    "mean_pressure": float,
    "pulse_amplitude": float,
    "heart_rate_bpm": float,
    "respiratory_modulation": float,
    "noise_std": float,
    "rng_seed": int,
}


def save_script(script: ScenarioScript, path: str | Path):
    lines = [
        "# needlestack scenario",
        f"bed_id = {script.bed_id}",
        f"line_kind = {script.line_kind.value}",
        f"duration_s = {script.duration_s}",
        f"start_epoch = {script.start_epoch}",
    ]
    for name in _CONFIG_FIELDS:
        lines.append(f"{name} = {getattr(script.config, name)}")
    lines.append("")
    lines.append("[events]")
    for ev in script.events:
        parts = [ev.kind, f"at_s={ev.at_s}", f"duration_s={ev.duration_s}"]
        if ev.plateau_pressure is not None:
            parts.append(f"plateau={ev.plateau_pressure}")
        lines.append("  ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def load_script(path: str | Path) -> ScenarioScript:
    """Parse a scenario file written by :func:`save_script` (or by hand)."""
    header: dict[str, str] = {}
    events: list[ScriptEvent] = []
    in_events = False
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[events]":
            in_events = True
            continue
        if not in_events:
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
        else:
            tokens = line.split()
            kind = tokens[0]
            kv = {}
            for tok in tokens[1:]:
                if "=" not in tok:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {tok!r}")
                k, _, v = tok.partition("=")
                kv[k] = float(v)
            if kind not in _SCRIPT_EVENT_KINDS:
                raise ValueError(f"{path}:{lineno}: unknown event kind {kind!r}")
            try:
                events.append(
                    ScriptEvent(
                        kind=kind,
                        at_s=kv.pop("at_s"),
                        duration_s=kv.pop("duration_s"),
                        plateau_pressure=kv.pop("plateau", None),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing event field {exc}") from None
            if kv:
                raise ValueError(f"{path}:{lineno}: unknown event fields {sorted(kv)}")

    cfg_kwargs = {}
    for name, cast in _CONFIG_FIELDS.items():
        if name in header:
            cfg_kwargs[name] = cast(header.pop(name))
    try:
        bed_id = header.pop("bed_id")
        line_kind = LineKind(header.pop("line_kind"))
        duration_s = float(header.pop("duration_s"))
    except KeyError as exc:
        raise ValueError(f"{path}: missing required field {exc}") from None
    start_epoch = int(header.pop("start_epoch", "0"))
    if header:
        raise ValueError(f"{path}: unknown fields {sorted(header)}")
    return ScenarioScript(
        bed_id=bed_id,
        line_kind=line_kind,
        duration_s=duration_s,
        config=SynthConfig(**cfg_kwargs),
        events=events,
        start_epoch=start_epoch,
    )


# ---------------------------------------------------------------------------
# Stream / label serialization
# ---------------------------------------------------------------------------

LINE_KIND_CODE = {LineKind.ALINE: 0, LineKind.CLINE: 1}
LINE_KIND_FROM_CODE = {v: k for k, v in LINE_KIND_CODE.items()}


def save_stream(stream: WaveformStream, path: str | Path):
    """Binary stream format: "NSTK1" magic, sample_rate, start_epoch, length,
    then bed/line/gap metadata, then little-endian float32 samples."""
    bed = stream.bed_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(
            struct.pack(
                "<IqQ", stream.sample_rate_hz, stream.start_epoch, stream.n_samples
            )
        )
        fh.write(struct.pack("<H", len(bed)))
        fh.write(bed)
        fh.write(struct.pack("<B", LINE_KIND_CODE[stream.line_kind]))
        fh.write(struct.pack("<I", len(stream.gaps)))
        for s, e in stream.gaps:
            fh.write(struct.pack("<QQ", s, e))
        fh.write(np.ascontiguousarray(stream.samples, dtype="<f4").tobytes())


def load_stream(path: str | Path) -> WaveformStream:
    with open(path, "rb") as fh:
        magic = fh.read(len(STREAM_MAGIC))
        if magic != STREAM_MAGIC:
            raise ValueError(f"{path}: not a needlestack stream (bad magic {magic!r})")
        rate, start_epoch, n = struct.unpack("<IqQ", fh.read(20))
        (bed_len,) = struct.unpack("<H", fh.read(2))
        bed_id = fh.read(bed_len).decode("utf-8")
        (kind_code,) = struct.unpack("<B", fh.read(1))
        (n_gaps,) = struct.unpack("<I", fh.read(4))
        gaps = [struct.unpack("<QQ", fh.read(16)) for _ in range(n_gaps)]
        data = fh.read(4 * n)
        if len(data) != 4 * n:
            raise ValueError(f"{path}: truncated stream file")
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
    return WaveformStream(
        bed_id=bed_id,
        line_kind=LINE_KIND_FROM_CODE[kind_code],
        start_epoch=start_epoch,
        sample_rate_hz=rate,
        samples=samples,
        gaps=[(int(s), int(e)) for s, e in gaps],
    )


def save_labels(labels: Sequence[LabeledInterval], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "kind", "start_idx", "end_idx"])
        for iv in labels:
            writer.writerow([iv.event_id, iv.kind.value, iv.start_idx, iv.end_idx])


def load_labels(path: str | Path) -> list[LabeledInterval]:
    labels = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(
                LabeledInterval(
                    event_id=row["event_id"],
                    kind=EventKind(row["kind"]),
                    start_idx=int(row["start_idx"]),
                    end_idx=int(row["end_idx"]),
                )
            )
    return labels
