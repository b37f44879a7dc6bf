"""Idle / acquisition / processing timeline of one acquisition window.

Steady state: processing of the previous window starts at t=0 (right after
the final buffer transfer of that window) and the rest of the cycle is
deep-sleep idle, interrupted by a DMA transfer at every buffer-full instant.
Transfers overlapping processing happen while the core is awake and are
absorbed into the processing segment.
"""

from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, model_validator

from app.core.config import config
from app.core.errors import DomainError, RealTimeViolation
from app.core.sigio import AcquisitionSchedule
from app.core.storage import write_csv

Phase = Literal["idle", "acquisition", "processing"]
DutyBin = Literal["very low", "low", "medium", "high", "very high"]

TIMELINE_TOLERANCE = 1e-9

# Upper bounds (exclusive) of every bin but the last
DUTY_BINS: Tuple[Tuple[float, str], ...] = ((0.001, "very low"), (0.01, "low"), (0.15, "medium"), (0.6, "high"))


class Segment(BaseModel):
    model_config = ConfigDict(frozen=True)

    phase: Phase
    start_s: float
    duration_s: float
    cycles: Optional[int] = None

    @model_validator(mode="after")
    def _check(self):
        if self.duration_s < 0:
            raise ValueError("segment durations are non-negative")
        if self.cycles is not None and self.phase != "processing":
            raise ValueError("only processing segments carry cycles")
        return self

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


class PhaseTimeline(BaseModel):
    model_config = ConfigDict(frozen=True)

    segments: List[Segment]
    window_seconds: float
    clock_hz: float

    @model_validator(mode="after")
    def _check_conservation(self):
        total = sum(s.duration_s for s in self.segments)
        if abs(total - self.window_seconds) > TIMELINE_TOLERANCE:
            raise ValueError(f"segment durations sum to {total}, window is {self.window_seconds}")
        return self

    def seconds_in(self, phase: Phase) -> float:
        return sum(s.duration_s for s in self.segments if s.phase == phase)

    @property
    def processing_seconds(self) -> float:
        return self.seconds_in("processing")

    @property
    def processing_cycles(self) -> int:
        return sum(s.cycles or 0 for s in self.segments)

    def summary(self) -> dict:
        return {
            "window_seconds": self.window_seconds,
            "clock_hz": self.clock_hz,
            "idle_s": self.seconds_in("idle"),
            "acquisition_s": self.seconds_in("acquisition"),
            "processing_s": self.processing_seconds,
            "segments": len(self.segments),
        }


class DutyCycleReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    ratio: float
    bin: DutyBin


def duty_bin(ratio: float) -> str:
    """Half-open bins: [0, 0.001) very low ... [0.6, 1] very high."""
    for upper, name in DUTY_BINS:
        if ratio < upper:
            return name
    return "very high"


def _subtract(interval: Tuple[float, float], busy: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    pieces = [interval]
    for b0, b1 in busy:
        nxt = []
        for a0, a1 in pieces:
            if b1 <= a0 or b0 >= a1:
                nxt.append((a0, a1))
                continue
            if a0 < b0:
                nxt.append((a0, b0))
            if b1 < a1:
                nxt.append((b1, a1))
        pieces = nxt
    return [(a0, a1) for a0, a1 in pieces if a1 - a0 > 0]


def simulate_cycle(schedule: AcquisitionSchedule, processing_cycles: int, clock_hz: Optional[float] = None,
                   spi_hz: Optional[float] = None, per_batch: bool = False) -> PhaseTimeline:
    """Lay out one window; ``per_batch`` splits processing into one chunk after each transfer."""
    clock_hz = clock_hz or config.REFERENCE_CLOCK_HZ
    spi_hz = spi_hz or config.SPI_CLOCK_HZ
    if clock_hz <= 0 or spi_hz <= 0:
        raise DomainError("clock frequencies must be positive")
    if processing_cycles < 0:
        raise DomainError("processing cycles must be non-negative")
    window = schedule.window_seconds
    busy_s = processing_cycles / clock_hz
    if busy_s > window + TIMELINE_TOLERANCE:
        raise RealTimeViolation(f"processing takes {busy_s:.6g} s, window is {window:.6g} s")
    busy_s = min(busy_s, window)

    fills = schedule.fill_instants()
    transfer_rate = spi_hz / 8.0

    processing: List[Tuple[float, float, int]] = []
    if busy_s > 0:
        if per_batch and len(fills) > 1:
            chunk = busy_s / len(fills)
            if chunk > schedule.batch_period + TIMELINE_TOLERANCE:
                raise RealTimeViolation(f"per-batch processing takes {chunk:.6g} s, batch period is "
                                        f"{schedule.batch_period:.6g} s")
            share = processing_cycles // len(fills)
            # the final batch's chunk wraps to the start of the next window
            first_end = chunk
            first_cycles = processing_cycles - share * (len(fills) - 1)
            for t, _ in fills[:-1]:
                end = t + chunk
                if end <= window:
                    processing.append((t, end, share))
                    continue
                # a chunk crossing the window end finishes right after the wrapped final chunk
                overflow = end - window
                moved = int(round(share * overflow / chunk))
                processing.append((t, window, share - moved))
                first_end += overflow
                first_cycles += moved
            processing.insert(0, (0.0, first_end, first_cycles))
            processing.sort()
            for (_, a1, _), (b0, _, _) in zip(processing, processing[1:]):
                if a1 > b0 + TIMELINE_TOLERANCE:
                    raise RealTimeViolation(f"per-batch processing ending at {a1:.6g} s overruns the chunk "
                                            f"starting at {b0:.6g} s")
        else:
            processing.append((0.0, busy_s, processing_cycles))
    busy = [(p0, p1) for p0, p1, _ in processing]

    acquisitions: List[Tuple[float, float]] = []
    previous_end = 0.0
    for t, nbytes in fills:
        start = max(t - nbytes / transfer_rate, previous_end, 0.0)
        acquisitions.extend(_subtract((start, t), busy))
        previous_end = t

    events = [(p0, p1, "processing", cycles) for p0, p1, cycles in processing if p1 > p0]
    events += [(a0, a1, "acquisition", None) for a0, a1 in acquisitions]
    events.sort(key=lambda e: e[0])

    segments: List[Segment] = []
    cursor = 0.0
    for start, end, phase, cycles in events:
        if start > cursor:
            segments.append(Segment(phase="idle", start_s=cursor, duration_s=start - cursor))
        segments.append(Segment(phase=phase, start_s=start, duration_s=end - start, cycles=cycles))
        cursor = end
    if window > cursor:
        segments.append(Segment(phase="idle", start_s=cursor, duration_s=window - cursor))
    return PhaseTimeline(segments=segments, window_seconds=window, clock_hz=clock_hz)


def duty_cycle(timeline: PhaseTimeline) -> DutyCycleReport:
    """Processing time over window time; acquisition runs with the core asleep."""
    ratio = min(1.0, max(0.0, timeline.processing_seconds / timeline.window_seconds))
    return DutyCycleReport(ratio=ratio, bin=duty_bin(ratio))


def export_timeline(timeline: PhaseTimeline, path: Union[str, Path]) -> Path:
    rows = [
        {
            "phase": s.phase,
            "start_s": repr(s.start_s),
            "duration_s": repr(s.duration_s),
            "cycles": "" if s.cycles is None else s.cycles,
        }
        for s in timeline.segments
    ]
    return write_csv(rows, path, ["phase", "start_s", "duration_s", "cycles"])
