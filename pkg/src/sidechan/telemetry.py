"""Attacker-side telemetry: perf counter CSV and /proc/stat activity traces.

Tier 1 needs nothing but coarse per-core jiffy counters: a sustained busy run
on the victim core is the inference burst, and its wall-clock length is the
time feature. Tier 2 adds one hardware counter (LLC misses) read from
field-separated perf output.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (ConfigurationError, MissingEvent, NotCountedError, ParseError,
                     SegmentationError, UnsupportedEvent)
from .hwmodel import Observation

DEFAULT_LLC_EVENT = "LLC-load-misses"
DEFAULT_CORE = "cpu4"
NOT_COUNTED_TEXT = "<not counted>"
NOT_SUPPORTED_TEXT = "<not supported>"
USER_HZ = 100


class _NotCounted:
    """Sentinel for a counter that was never scheduled on the PMU."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOT_COUNTED"

    def __reduce__(self):
        return (_NotCounted, ())


NOT_COUNTED = _NotCounted()


@dataclass(frozen=True)
class PerfRecord:
    value: object  # int, float or NOT_COUNTED
    unit: str | None
    event: str
    run_time_ns: int | None = None
    pct_running: float | None = None

    def __post_init__(self):
        if not self.event:
            raise ConfigurationError("perf record needs an event name")
        if self.value is not NOT_COUNTED:
            if isinstance(self.value, bool) or not isinstance(self.value, (int, float)):
                raise ConfigurationError(f"bad counter value {self.value!r}")
            if not math.isfinite(self.value) or self.value < 0:
                raise ConfigurationError(f"counter value must be finite and >= 0, got {self.value}")

    @property
    def counted(self) -> bool:
        return self.value is not NOT_COUNTED


def _check_delimiter(delimiter: str) -> str:
    if not isinstance(delimiter, str) or len(delimiter) != 1 or not (
            delimiter.isprintable() or delimiter == "\t"):
        raise ConfigurationError(f"delimiter must be one printable character, got {delimiter!r}")
    if delimiter in "#<>" or delimiter.isalnum():
        raise ConfigurationError(f"delimiter {delimiter!r} clashes with perf field syntax")
    return delimiter


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return bytes(data).decode("utf-8")
    return data


def _parse_number(text: str):
    # counts are integers; time-like events (task-clock) print decimals
    if re.fullmatch(r"\d+", text):
        return int(text)
    value = float(text)
    if not math.isfinite(value) or value < 0:
        raise ValueError(text)
    return value


def parse_perf_csv(data, delimiter: str = ",", source=None) -> list[PerfRecord]:
    """Parse field-separated perf-stat output (``perf stat -x,``)."""
    _check_delimiter(delimiter)
    records = []
    for lineno, raw in enumerate(_as_text(data).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(delimiter)
        if len(fields) < 3:
            raise ParseError(f"expected at least 3 fields, got {len(fields)}", lineno, source)
        value_text, unit, event = fields[0].strip(), fields[1].strip(), fields[2].strip()
        if not event:
            raise ParseError("empty event name", lineno, source)
        if value_text == NOT_SUPPORTED_TEXT:
            raise UnsupportedEvent(event, lineno, source)
        if value_text == NOT_COUNTED_TEXT:
            value = NOT_COUNTED
        else:
            try:
                value = _parse_number(value_text)
            except ValueError:
                raise ParseError(f"bad counter value {value_text!r}", lineno, source) from None
        run_time = pct = None
        try:
            if len(fields) > 3 and fields[3].strip():
                run_time = int(fields[3])
            if len(fields) > 4 and fields[4].strip():
                pct = float(fields[4])
        except ValueError:
            raise ParseError("bad run-time or percentage field", lineno, source) from None
        records.append(PerfRecord(value, unit or None, event, run_time, pct))
    return records


def format_perf_csv(records: Iterable[PerfRecord], delimiter: str = ",") -> str:
    """Inverse of :func:`parse_perf_csv` for the fields it keeps."""
    _check_delimiter(delimiter)
    lines = []
    for r in records:
        value = NOT_COUNTED_TEXT if r.value is NOT_COUNTED else repr(r.value)
        fields = [value, r.unit or "", r.event]
        if r.run_time_ns is not None or r.pct_running is not None:
            fields.append("" if r.run_time_ns is None else str(r.run_time_ns))
            fields.append("" if r.pct_running is None else repr(r.pct_running))
        lines.append(delimiter.join(fields))
    return "".join(line + "\n" for line in lines)


# /proc/stat

JIFFY_FIELDS = ("user", "nice", "system", "idle", "iowait", "irq", "softirq", "steal")


@dataclass(frozen=True)
class CpuTimes:
    user: int
    nice: int
    system: int
    idle: int
    iowait: int
    irq: int
    softirq: int
    steal: int

    def total(self) -> int:
        return sum(getattr(self, f) for f in JIFFY_FIELDS)

    def idle_like(self) -> int:
        return self.idle + self.iowait

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, f) for f in JIFFY_FIELDS)


@dataclass(frozen=True)
class ProcStatSample:
    timestamp_s: float
    per_cpu: dict

    def cpu(self, label: str) -> CpuTimes:
        try:
            return self.per_cpu[label]
        except KeyError:
            raise SegmentationError(f"unknown core {label!r} at t={self.timestamp_s}") from None


@dataclass(frozen=True)
class ActivityInterval:
    start_s: float
    end_s: float
    core: str
    mean_busy: float

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise SegmentationError("interval must end after it starts")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


_CPU_LINE = re.compile(r"cpu(\d+)$")


def parse_procstat(data, timestamp_s: float, source=None, first_line: int = 1) -> ProcStatSample:
    """Read the per-core jiffy counters out of one /proc/stat snapshot."""
    per_cpu = {}
    for offset, raw in enumerate(_as_text(data).splitlines()):
        fields = raw.split()
        if not fields or not _CPU_LINE.match(fields[0]):
            continue  # aggregate "cpu" line, intr, ctxt, ...
        lineno = first_line + offset
        if len(fields) < 1 + len(JIFFY_FIELDS):
            raise ParseError(f"{fields[0]} has {len(fields) - 1} counters, need 8", lineno, source)
        try:
            values = [int(v) for v in fields[1:1 + len(JIFFY_FIELDS)]]
        except ValueError:
            raise ParseError(f"non-integer counter on {fields[0]}", lineno, source) from None
        if min(values) < 0:
            raise ParseError(f"negative counter on {fields[0]}", lineno, source)
        per_cpu[fields[0]] = CpuTimes(*values)
    if not per_cpu:
        raise ParseError("snapshot has no per-cpu lines", first_line, source)
    return ProcStatSample(float(timestamp_s), per_cpu)


_HEADER = re.compile(r"===\s*(\S+)\s*===$")


def parse_procstat_trace(data, source=None) -> list[ProcStatSample]:
    """Parse concatenated snapshots, each introduced by ``=== <timestamp_s> ===``."""
    samples = []
    stamp = None
    start = 0
    body: list[str] = []

    def flush():
        if stamp is not None:
            samples.append(parse_procstat("\n".join(body), stamp, source, start))

    for lineno, raw in enumerate(_as_text(data).splitlines(), start=1):
        m = _HEADER.match(raw.strip())
        if m:
            flush()
            try:
                stamp = float(m.group(1))
            except ValueError:
                raise ParseError(f"bad timestamp {m.group(1)!r}", lineno, source) from None
            if not math.isfinite(stamp):
                raise ParseError("timestamp must be finite", lineno, source)
            start, body = lineno + 1, []
        elif stamp is None:
            if raw.strip():
                raise ParseError("content before the first snapshot header", lineno, source)
        else:
            body.append(raw)
    flush()
    if not samples:
        raise ParseError("trace contains no snapshots", None, source)
    return samples


def format_procstat_snapshot(sample: ProcStatSample) -> str:
    lines = [f"=== {sample.timestamp_s!r} ==="]
    cpus = sorted(sample.per_cpu, key=lambda k: int(k[3:]))
    agg = [sum(sample.per_cpu[c].as_tuple()[i] for c in cpus) for i in range(len(JIFFY_FIELDS))]
    lines.append("cpu  " + " ".join(str(v) for v in agg) + " 0 0")
    for c in cpus:
        lines.append(c + " " + " ".join(str(v) for v in sample.per_cpu[c].as_tuple()) + " 0 0")
    return "\n".join(lines) + "\n"


def busy_fraction(prev: CpuTimes, cur: CpuTimes) -> float:
    """``1 - (d_idle + d_iowait) / d_total`` between two readings of one core."""
    deltas = [b - a for a, b in zip(prev.as_tuple(), cur.as_tuple())]
    if min(deltas) < 0:
        raise SegmentationError("jiffy counters went backwards")
    total = sum(deltas)
    if total == 0:
        return 0.0
    idle = deltas[JIFFY_FIELDS.index("idle")] + deltas[JIFFY_FIELDS.index("iowait")]
    return 1.0 - idle / total


def segment_activity(samples: Sequence[ProcStatSample], core: str = DEFAULT_CORE,
                     busy_threshold: float = 0.8, min_duration_s: float = 2.0
                     ) -> list[ActivityInterval]:
    """Maximal runs of busy sampling gaps on ``core``, at least ``min_duration_s`` long.

    The partly busy gaps on either side of a run are credited to it by their
    busy share, so a burst that starts or ends between two samples is still
    measured to within jiffy resolution when the core is fully busy.
    """
    if not 0 < busy_threshold < 1:
        raise ConfigurationError("busy_threshold must lie in (0, 1)")
    if min_duration_s < 0:
        raise ConfigurationError("min_duration_s must be >= 0")
    if len(samples) < 2:
        raise SegmentationError(f"need at least 2 samples, got {len(samples)}")
    readings = [s.cpu(core) for s in samples]
    for a, b in zip(samples, samples[1:]):
        if not b.timestamp_s > a.timestamp_s:
            raise SegmentationError(
                f"timestamps must strictly increase ({a.timestamp_s} then {b.timestamp_s})")

    times = [s.timestamp_s for s in samples]
    busy = [busy_fraction(a, b) for a, b in zip(readings, readings[1:])]
    gaps = len(busy)

    def edge(i):
        # busy share of a boundary gap, credited to the adjacent burst
        return busy[i] * (times[i + 1] - times[i]) if 0 <= i < gaps else 0.0

    intervals = []
    i = 0
    while i < gaps:
        if busy[i] <= busy_threshold:
            i += 1
            continue
        first = i
        while i < gaps and busy[i] > busy_threshold:
            i += 1
        busy_time = sum(edge(k) for k in range(first - 1, i + 1))
        start_s = times[first] - edge(first - 1)
        end_s = times[i] + edge(i)
        if end_s - start_s >= min_duration_s:
            intervals.append(ActivityInterval(start_s, end_s, core,
                                              min(busy_time / (end_s - start_s), 1.0)))
    return intervals


def to_observation(records: Sequence[PerfRecord], interval: ActivityInterval,
                   llc_event: str = DEFAULT_LLC_EVENT) -> Observation:
    matching = [r for r in records if r.event == llc_event]
    if not matching:
        raise MissingEvent(f"no records for event {llc_event!r}")
    if any(not r.counted for r in matching):
        raise NotCountedError(f"event {llc_event!r} was not counted; trial is unusable")
    return Observation(interval.duration_s, float(math.fsum(r.value for r in matching)))


def ingest(perf_records: Sequence[PerfRecord], samples: Sequence[ProcStatSample],
           llc_event: str = DEFAULT_LLC_EVENT, core: str = DEFAULT_CORE,
           busy_threshold: float = 0.8, min_duration_s: float = 2.0) -> list[Observation]:
    """Pair detected bursts with counter readings by trial order.

    With a single burst every matching record is summed into it. With several,
    the file must hold exactly one ``llc_event`` record per burst.
    """
    intervals = segment_activity(samples, core, busy_threshold, min_duration_s)
    if not intervals:
        raise SegmentationError(f"no activity bursts detected on {core}")
    matching = [r for r in perf_records if r.event == llc_event]
    if len(intervals) == 1:
        return [to_observation(matching or perf_records, intervals[0], llc_event)]
    if len(matching) != len(intervals):
        raise SegmentationError(
            f"{len(intervals)} bursts but {len(matching)} {llc_event!r} records")
    return [to_observation([r], iv, llc_event) for r, iv in zip(matching, intervals)]


# observation CSV

OBSERVATION_HEADER = ("trial", "time_s", "llc_misses", "label")


@dataclass(frozen=True)
class ObservationRow:
    trial: int
    observation: Observation
    label: str = ""


def observations_csv(rows: Iterable[ObservationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OBSERVATION_HEADER)
    for r in rows:
        w.writerow([r.trial, repr(r.observation.time_s), repr(r.observation.llc_misses), r.label])
    return buf.getvalue()


def read_observations_csv(data, source=None) -> list[ObservationRow]:
    """Read any CSV carrying at least ``trial,time_s,llc_misses``; extra columns are ignored."""
    reader = csv.reader(io.StringIO(_as_text(data)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty observation file", 1, source) from None
    missing = [c for c in OBSERVATION_HEADER[:3] if c not in header]
    if missing:
        raise ParseError(f"missing columns {missing}", 1, source)
    idx = {name: header.index(name) for name in OBSERVATION_HEADER if name in header}
    rows = []
    for lineno, fields in enumerate(reader, start=2):
        if not fields or not any(f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(fields)}", lineno, source)
        try:
            obs = Observation(float(fields[idx["time_s"]]), float(fields[idx["llc_misses"]]))
            trial = int(fields[idx["trial"]])
        except (ValueError, ArithmeticError) as exc:
            raise ParseError(str(exc), lineno, source) from None
        label = fields[idx["label"]].strip() if "label" in idx else ""
        rows.append(ObservationRow(trial, obs, label))
    return rows


# simulator export


@dataclass(frozen=True)
class TraceExport:
    procstat: str
    perf: str


def export_trace(observations: Sequence[Observation], core: str = DEFAULT_CORE,
                 period_s: float = 1.0, idle_gap_s: float = 5.0, align_edges: bool = True,
                 llc_event: str = DEFAULT_LLC_EVENT, n_cpus: int = 8,
                 delimiter: str = ",") -> TraceExport:
    """Render simulated trials as the two files a real attacker would collect.

    Bursts run back to back on ``core`` separated by ``idle_gap_s`` of idle
    time, sampled every ``period_s``. With ``align_edges`` the sampler also
    snapshots at every burst edge (an edge-triggered poller), so the recovered
    durations match the simulated times; without it they are quantised to
    the sampling period.
    """
    if period_s <= 0 or idle_gap_s < period_s:
        raise ConfigurationError("need period_s > 0 and idle_gap_s >= period_s")
    labels = [f"cpu{i}" for i in range(n_cpus)]
    if core not in labels:
        raise ConfigurationError(f"core {core!r} is not among cpu0..cpu{n_cpus - 1}")

    bursts = []
    t = float(idle_gap_s)
    for obs in observations:
        # integer starts keep end - start as close to the simulated time as floats allow
        start = float(math.ceil(t))
        bursts.append((start, start + obs.time_s))
        t = start + obs.time_s + idle_gap_s
    horizon = t

    stamps = {k * period_s for k in range(int(math.floor(horizon / period_s)) + 1)}
    if align_edges:
        ends = sorted(b for _, b in bursts)
        # a periodic snapshot a few jiffies before an edge would see no ticks
        for s in list(stamps):
            k = bisect.bisect_right(ends, s)
            if k < len(ends) and ends[k] - s < 2.0 / USER_HZ:
                stamps.discard(s)
        for a, b in bursts:
            stamps.update((a, b))
    stamps = sorted(stamps)

    def jiffies(x):
        return int(round(x * USER_HZ))

    out = io.StringIO()
    done, j = 0, 0  # busy jiffies of finished bursts
    for s in stamps:
        while j < len(bursts) and bursts[j][1] <= s:
            done += jiffies(bursts[j][1]) - jiffies(bursts[j][0])
            j += 1
        total = jiffies(s)
        user = done
        if j < len(bursts) and bursts[j][0] < s:
            user += total - jiffies(bursts[j][0])
        per_cpu = {}
        for label in labels:
            if label == core:
                per_cpu[label] = CpuTimes(user, 0, 0, total - user, 0, 0, 0, 0)
            else:
                per_cpu[label] = CpuTimes(0, 0, 0, total, 0, 0, 0, 0)
        out.write(format_procstat_snapshot(ProcStatSample(s, per_cpu)))

    records = [PerfRecord(obs.llc_misses, None, llc_event,
                          int(round(obs.time_s * 1e9)), 100.0) for obs in observations]
    return TraceExport(out.getvalue(), format_perf_csv(records, delimiter))
