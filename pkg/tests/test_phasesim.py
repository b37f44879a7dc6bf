import pytest
from pydantic import ValidationError

from app.core.errors import DomainError, RealTimeViolation
from app.core.phasesim import (
    PhaseTimeline,
    Segment,
    duty_bin,
    duty_cycle,
    export_timeline,
    simulate_cycle,
)
from app.core.sigio import SignalSpec, schedule_acquisition


def hcl_schedule():
    ecg = SignalSpec(name="ecg", sample_rate=256, bits_per_sample=16, channels=3)
    return schedule_acquisition([ecg], 15.0, buffer_bytes=768)


def fast_schedule():
    sig = SignalSpec(name="x", sample_rate=1000, bits_per_sample=16, channels=1)
    return schedule_acquisition([sig], 1.0, buffer_bytes=256)


def test_hcl_timeline_conserves_window():
    timeline = simulate_cycle(hcl_schedule(), 7_400_000, clock_hz=120e6)
    assert sum(s.duration_s for s in timeline.segments) == pytest.approx(15.0)
    assert timeline.processing_cycles == 7_400_000
    assert timeline.seconds_in("acquisition") == pytest.approx(30 * 768 / 1e6)
    report = duty_cycle(timeline)
    assert report.ratio == pytest.approx(7.4e6 / 120e6 / 15.0)
    assert report.bin == "low"


def test_segments_are_contiguous():
    timeline = simulate_cycle(hcl_schedule(), 7_400_000, clock_hz=120e6)
    assert timeline.segments[0].phase == "processing"
    assert timeline.segments[0].start_s == 0.0
    for previous, current in zip(timeline.segments, timeline.segments[1:]):
        assert current.start_s == pytest.approx(previous.end_s)


def test_transfers_during_processing_are_absorbed():
    timeline = simulate_cycle(fast_schedule(), 500_000, clock_hz=1e6)
    acquisitions = [s for s in timeline.segments if s.phase == "acquisition"]
    assert len(acquisitions) == 5
    assert all(s.start_s >= 0.5 for s in acquisitions)


def test_per_batch_processing():
    timeline = simulate_cycle(hcl_schedule(), 7_400_000, clock_hz=120e6, per_batch=True)
    processing = [s for s in timeline.segments if s.phase == "processing"]
    assert len(processing) == 30
    assert timeline.processing_cycles == 7_400_000
    assert duty_cycle(timeline).ratio == pytest.approx(7.4e6 / 120e6 / 15.0)


def test_per_batch_chunk_crossing_window_end_wraps():
    # 8 fills with a partial last batch; the chunk after the fill at 0.896 s runs past 1.0 s
    timeline = simulate_cycle(fast_schedule(), 900_000, clock_hz=1e6, per_batch=True)
    assert timeline.processing_seconds == pytest.approx(0.9)
    assert timeline.processing_cycles == 900_000
    assert duty_cycle(timeline).ratio == pytest.approx(0.9)
    first = timeline.segments[0]
    assert first.phase == "processing"
    assert first.duration_s == pytest.approx(0.1125 + 0.0085)
    assert timeline.segments[-1].phase == "processing"
    assert timeline.segments[-1].end_s == pytest.approx(1.0)
    for previous, current in zip(timeline.segments, timeline.segments[1:]):
        assert current.start_s == pytest.approx(previous.end_s)


def test_real_time_violations():
    with pytest.raises(RealTimeViolation):
        simulate_cycle(hcl_schedule(), 15 * 120_000_000 + 1000, clock_hz=120e6)
    with pytest.raises(RealTimeViolation):
        simulate_cycle(fast_schedule(), 1_100_000, clock_hz=1e6, per_batch=True)


def test_processing_fills_window():
    timeline = simulate_cycle(fast_schedule(), 1_000_000, clock_hz=1e6)
    report = duty_cycle(timeline)
    assert report.ratio == 1.0
    assert report.bin == "very high"


def test_idle_only_cycle():
    timeline = simulate_cycle(fast_schedule(), 0, clock_hz=1e6)
    assert timeline.processing_seconds == 0.0
    assert duty_cycle(timeline).bin == "very low"


def test_bad_arguments():
    with pytest.raises(DomainError):
        simulate_cycle(fast_schedule(), 10, clock_hz=-1.0)
    with pytest.raises(DomainError):
        simulate_cycle(fast_schedule(), -1, clock_hz=1e6)


@pytest.mark.parametrize(
    "ratio, expected",
    [(0.0, "very low"), (0.000999, "very low"), (0.001, "low"), (0.01, "medium"),
     (0.15, "high"), (0.5999, "high"), (0.6, "very high"), (1.0, "very high")],
)
def test_duty_bin_edges(ratio, expected):
    assert duty_bin(ratio) == expected


def test_segment_and_timeline_validation():
    with pytest.raises(ValidationError):
        Segment(phase="idle", start_s=0.0, duration_s=1.0, cycles=10)
    with pytest.raises(ValidationError):
        Segment(phase="idle", start_s=0.0, duration_s=-1.0)
    with pytest.raises(ValidationError):
        PhaseTimeline(segments=[Segment(phase="idle", start_s=0.0, duration_s=0.5)], window_seconds=1.0,
                      clock_hz=1e6)


def test_export_timeline(tmp_path):
    timeline = simulate_cycle(hcl_schedule(), 7_400_000, clock_hz=120e6)
    path = export_timeline(timeline, tmp_path / "timeline.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "phase,start_s,duration_s,cycles"
    assert len(lines) == len(timeline.segments) + 1
    assert lines[1].startswith("processing,0.0,")
    assert lines[1].endswith(",7400000")
