from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sidechan.errors import (ConfigurationError, MissingEvent, NotCountedError, ParseError,
                             SegmentationError, UnsupportedEvent)
from sidechan.hwmodel import Observation
from sidechan.telemetry import (NOT_COUNTED, ActivityInterval, CpuTimes, ObservationRow,
                                PerfRecord, ProcStatSample, busy_fraction, export_trace,
                                format_perf_csv, format_procstat_snapshot, ingest,
                                observations_csv, parse_perf_csv, parse_procstat,
                                parse_procstat_trace, read_observations_csv, segment_activity,
                                to_observation)

DATA = Path(__file__).parent / "data"


class TestPerfCsv:
    def test_count_line(self):
        (r,) = parse_perf_csv("16543210987,,LLC-load-misses,110000123456,100.00\n")
        assert r == PerfRecord(16543210987, None, "LLC-load-misses", 110000123456, 100.0)
        assert r.counted

    def test_decimal_value_with_unit(self):
        (r,) = parse_perf_csv("2512.41,msec,task-clock,2512410000,100.00")
        assert r.value == 2512.41 and r.unit == "msec"

    def test_not_counted(self):
        (r,) = parse_perf_csv("<not counted>,,LLC-load-misses,0,0.00")
        assert r.value is NOT_COUNTED and not r.counted

    def test_not_supported(self):
        with pytest.raises(UnsupportedEvent) as info:
            parse_perf_csv("# header\n<not supported>,,LLC-load-misses,0,0.00\n", source="p.csv")
        assert info.value.line == 2

    def test_comments_and_blank_lines_skipped(self):
        text = "# started on Mon\n\n5,,cycles\n"
        assert parse_perf_csv(text) == [PerfRecord(5, None, "cycles")]

    def test_custom_delimiter(self):
        (r,) = parse_perf_csv("42;;LLC-load-misses;10;50.00", delimiter=";")
        assert (r.value, r.pct_running) == (42, 50.0)

    @pytest.mark.parametrize("line,lineno", [
        ("12,,", 2), ("abc,,cycles", 2), ("-5,,cycles", 2), ("5,,cycles,xx", 2), ("5,", 2),
    ])
    def test_malformed(self, line, lineno):
        with pytest.raises(ParseError) as info:
            parse_perf_csv("1,,cycles\n" + line, source="perf.csv")
        assert info.value.line == lineno
        assert "perf.csv" in str(info.value)

    @pytest.mark.parametrize("delim", ["", "ab", "a", "#", "\n"])
    def test_bad_delimiter(self, delim):
        with pytest.raises(ConfigurationError):
            parse_perf_csv("1,,cycles", delimiter=delim)

    @given(st.lists(st.tuples(
        st.one_of(st.integers(0, 10**15), st.floats(0, 1e9, allow_nan=False), st.just(NOT_COUNTED)),
        st.sampled_from([None, "msec", "ns"]),
        st.sampled_from(["LLC-load-misses", "cycles", "cache-misses:u"]),
        st.one_of(st.none(), st.integers(0, 10**13)),
        st.one_of(st.none(), st.floats(0, 100, allow_nan=False)),
    ), max_size=20), st.sampled_from([",", ";", "|", "\t"]))
    def test_round_trip(self, rows, delim):
        records = [PerfRecord(*r) for r in rows]
        assert parse_perf_csv(format_perf_csv(records, delim), delim) == records


def _cpu(user, idle, iowait=0):
    return CpuTimes(user, 0, 0, idle, iowait, 0, 0, 0)


class TestProcStat:
    SNAPSHOT = ("cpu  10 0 5 100 2 0 0 0 0 0\n"
                "cpu0 4 0 2 50 1 0 0 0 0 0\n"
                "cpu1 6 0 3 50 1 0 0 0 0 0\n"
                "intr 12345 0 0\nctxt 999\n")

    def test_snapshot(self):
        s = parse_procstat(self.SNAPSHOT, 3.0)
        assert s.timestamp_s == 3.0
        assert set(s.per_cpu) == {"cpu0", "cpu1"}
        assert s.cpu("cpu1").as_tuple() == (6, 0, 3, 50, 1, 0, 0, 0)
        assert s.cpu("cpu1").total() == 60
        assert s.cpu("cpu1").idle_like() == 51

    def test_unknown_core(self):
        with pytest.raises(SegmentationError):
            parse_procstat(self.SNAPSHOT, 0.0).cpu("cpu9")

    @pytest.mark.parametrize("bad", ["cpu0 1 2 3\n", "cpu0 1 2 3 x 5 6 7 8\n", "intr 5\n"])
    def test_malformed_snapshot(self, bad):
        with pytest.raises(ParseError):
            parse_procstat(bad, 0.0)

    def test_trace(self):
        text = "=== 0.0 ===\n" + self.SNAPSHOT + "=== 1.5 ===\n" + self.SNAPSHOT
        samples = parse_procstat_trace(text)
        assert [s.timestamp_s for s in samples] == [0.0, 1.5]

    def test_trace_errors_carry_line_numbers(self):
        with pytest.raises(ParseError) as info:
            parse_procstat_trace("=== 0 ===\ncpu0 1 1 1 1 1 1 1 1\n=== 1 ===\ncpu0 1 1\n", "t.trace")
        assert info.value.line == 4
        with pytest.raises(ParseError):
            parse_procstat_trace("cpu0 1 1 1 1 1 1 1 1\n")
        with pytest.raises(ParseError):
            parse_procstat_trace("=== soon ===\n")

    def test_empty_trace(self):
        with pytest.raises(ParseError):
            parse_procstat_trace("")

    def test_format_round_trip(self):
        sample = ProcStatSample(12.25, {"cpu0": _cpu(3, 4), "cpu10": _cpu(1, 2), "cpu2": _cpu(0, 9)})
        (back,) = parse_procstat_trace(format_procstat_snapshot(sample))
        assert back == sample


class TestBusyFraction:
    def test_examples(self):
        assert busy_fraction(_cpu(0, 0), _cpu(100, 0)) == 1.0
        assert busy_fraction(_cpu(0, 0), _cpu(25, 75)) == 0.25
        assert busy_fraction(_cpu(0, 0), _cpu(50, 25, 25)) == 0.5

    def test_no_elapsed_jiffies(self):
        assert busy_fraction(_cpu(5, 5), _cpu(5, 5)) == 0.0

    def test_counters_backwards(self):
        with pytest.raises(SegmentationError):
            busy_fraction(_cpu(10, 10), _cpu(9, 20))


def _trace(busy_windows, horizon, period=1.0, core="cpu4"):
    samples = []
    for k in range(int(round(horizon / period)) + 1):
        t = k * period
        busy = sum(max(0.0, min(t, b) - a) for a, b in busy_windows)
        user = int(round(busy * 100))
        samples.append(ProcStatSample(t, {core: _cpu(user, int(round(t * 100)) - user),
                                          "cpu0": _cpu(0, int(round(t * 100)))}))
    return samples


class TestSegmentation:
    def test_single_burst(self):
        (iv,) = segment_activity(_trace([(10.0, 120.0)], 200.0))
        assert iv.duration_s == pytest.approx(110.0, abs=1.0)
        assert iv.core == "cpu4" and iv.mean_busy > 0.8

    def test_unaligned_burst_within_one_period(self):
        (iv,) = segment_activity(_trace([(10.4, 120.7)], 200.0))
        assert abs(iv.duration_s - 110.3) <= 1.0
        # the partly busy edge gaps are credited, so this is exact to a jiffy
        assert (iv.start_s, iv.end_s) == pytest.approx((10.4, 120.7), abs=0.02)

    def test_two_bursts(self):
        ivs = segment_activity(_trace([(5, 55), (70, 181)], 200.0))
        assert [(iv.start_s, iv.end_s) for iv in ivs] == [(5, 55), (70, 181)]

    def test_all_idle(self):
        assert segment_activity(_trace([], 50.0)) == []

    def test_short_blips_dropped(self):
        assert segment_activity(_trace([(10, 11)], 30.0), min_duration_s=2.0) == []
        assert len(segment_activity(_trace([(10, 11)], 30.0), min_duration_s=0.5)) == 1

    def test_other_core_ignored(self):
        assert segment_activity(_trace([(10, 20)], 30.0, core="cpu4"), core="cpu0") == []

    def test_non_monotone_counters(self):
        samples = _trace([(2, 8)], 10.0)
        samples[5] = ProcStatSample(5.0, {"cpu4": _cpu(0, 0), "cpu0": _cpu(0, 500)})
        with pytest.raises(SegmentationError):
            segment_activity(samples)

    def test_non_increasing_timestamps(self):
        samples = _trace([(2, 8)], 10.0)
        samples[3] = ProcStatSample(1.0, samples[3].per_cpu)
        with pytest.raises(SegmentationError):
            segment_activity(samples)

    def test_too_few_samples(self):
        with pytest.raises(SegmentationError):
            segment_activity(_trace([], 0.0))

    @pytest.mark.parametrize("threshold", [0.0, 1.0])
    def test_threshold_domain(self, threshold):
        with pytest.raises(ConfigurationError):
            segment_activity(_trace([], 5.0), busy_threshold=threshold)


class TestToObservation:
    IV = ActivityInterval(0.0, 49.0, "cpu4", 1.0)

    def test_known_row(self):
        recs = [PerfRecord(1000, None, "cycles"), PerfRecord(17_200_000_000, None, "LLC-load-misses")]
        assert to_observation(recs, self.IV) == Observation(49.0, 17.2e9)

    def test_missing_event(self):
        with pytest.raises(MissingEvent):
            to_observation([PerfRecord(1, None, "cycles")], self.IV)

    def test_not_counted(self):
        with pytest.raises(NotCountedError):
            to_observation([PerfRecord(NOT_COUNTED, None, "LLC-load-misses")], self.IV)

    def test_custom_event_name(self):
        recs = [PerfRecord(7, None, "cache-misses")]
        assert to_observation(recs, self.IV, "cache-misses").llc_misses == 7.0


def test_fixture_pair():
    perf = parse_perf_csv((DATA / "perf_two_trials.csv").read_text())
    samples = parse_procstat_trace((DATA / "procstat_two_trials.trace").read_text())
    assert ingest(perf, samples) == [Observation(2.5, 1523400012.0), Observation(3.0, 1871200345.0)]


def test_ingest_record_count_mismatch():
    samples = _trace([(5, 15), (20, 30)], 40.0)
    with pytest.raises(SegmentationError):
        ingest([PerfRecord(1, None, "LLC-load-misses")] * 3, samples)
    with pytest.raises(SegmentationError):
        ingest([PerfRecord(1, None, "LLC-load-misses")], _trace([], 40.0))


def test_ingest_single_burst_sums_records():
    samples = _trace([(5, 15)], 20.0)
    recs = [PerfRecord(3, None, "LLC-load-misses"), PerfRecord(4, None, "LLC-load-misses")]
    assert ingest(recs, samples) == [Observation(10.0, 7.0)]


class TestExport:
    def observations(self, n=50, seed=0):
        rng = np.random.default_rng(seed)
        return [Observation(float(t), float(c))
                for t, c in zip(rng.uniform(40, 120, n), rng.uniform(16e9, 18.5e9, n))]

    def test_aligned_round_trip_is_exact(self):
        obs = self.observations()
        ex = export_trace(obs)
        back = ingest(parse_perf_csv(ex.perf), parse_procstat_trace(ex.procstat))
        assert len(back) == len(obs)
        for a, b in zip(obs, back):
            assert b.time_s == pytest.approx(a.time_s, abs=1e-9)
            assert b.llc_misses == a.llc_misses

    def test_periodic_sampling_within_one_period(self):
        obs = self.observations(20, seed=3)
        ex = export_trace(obs, period_s=1.0, align_edges=False)
        back = ingest(parse_perf_csv(ex.perf), parse_procstat_trace(ex.procstat))
        assert len(back) == len(obs)
        assert max(abs(a.time_s - b.time_s) for a, b in zip(obs, back)) <= 1.0

    def test_other_core_and_delimiter(self):
        obs = self.observations(3)
        ex = export_trace(obs, core="cpu2", delimiter=";", llc_event="cache-misses")
        back = ingest(parse_perf_csv(ex.perf, ";"), parse_procstat_trace(ex.procstat),
                      llc_event="cache-misses", core="cpu2")
        assert [b.llc_misses for b in back] == [o.llc_misses for o in obs]

    def test_bad_arguments(self):
        with pytest.raises(ConfigurationError):
            export_trace(self.observations(2), core="cpu99")
        with pytest.raises(ConfigurationError):
            export_trace(self.observations(2), period_s=0)


class TestObservationCsv:
    def test_round_trip(self):
        rows = [ObservationRow(0, Observation(49.123, 1.7e10), "ChestXRay"),
                ObservationRow(1, Observation(111.5, 1.69e10), "")]
        assert read_observations_csv(observations_csv(rows)) == rows

    def test_extra_columns_ignored(self):
        text = "trial,condition,label,time_s,llc_misses,x\n3,idle,A,50.0,1e9,zz\n"
        assert read_observations_csv(text) == [ObservationRow(3, Observation(50.0, 1e9), "A")]

    def test_errors(self):
        with pytest.raises(ParseError):
            read_observations_csv("")
        with pytest.raises(ParseError):
            read_observations_csv("trial,time_s\n1,2\n")
        with pytest.raises(ParseError) as info:
            read_observations_csv("trial,time_s,llc_misses\n1,2,3\n2,x,3\n", source="o.csv")
        assert info.value.line == 3
