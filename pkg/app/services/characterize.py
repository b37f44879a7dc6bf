"""Five-metric characterization of a pipeline run and its comparison with the reference table."""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field

from app.core.config import config
from app.core.errors import DataError, DomainError, RealTimeViolation, StateError
from app.core.instrument import KernelContext
from app.core.logger import logger
from app.core.phasesim import PhaseTimeline, duty_cycle, simulate_cycle
from app.core.power import PlatformEnergyRecord, load_energy_table
from app.core.reference import ReferenceMetrics, load_reference_metrics
from app.services.pipelines import Pipeline, WindowResult

# Relative tolerance on the input bandwidth per app; every other app must match exactly
BANDWIDTH_TOLERANCE = {"CoughDet": 0.02}

REFERENCE_MEASURED = "reference-measured"
DESK_COMPUTED = "desk-computed"


@dataclass
class RunArtifacts:
    """Counters and ledger of the windows a pipeline has processed."""

    ctx: KernelContext
    results: List[WindowResult] = field(default_factory=list)

    @property
    def windows(self) -> int:
        return len(self.results)


class AppMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    app: str
    main_category: str
    main_operations: str
    duty_ratio: Optional[float] = None
    duty_bin: Optional[str] = None
    duty_source: Optional[str] = None
    processing_cycles: Optional[int] = None
    clock_hz: float
    real_time: bool = True
    input_bandwidth: Optional[int] = None
    static_kib: float
    dynamic_kib: float
    provenance: Dict[str, str] = Field(default_factory=dict)


class MetricCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    app: str
    metric: str
    computed: Optional[str] = None
    reference: Optional[str] = None
    agrees: bool
    note: str = ""


def _bits(arithmetic: str) -> int:
    return 16 if arithmetic.endswith("16") else 32


def main_operations_label(category: str, arithmetic: str) -> str:
    bits = _bits(arithmetic)
    labels = {
        "branches": "Branches",
        "fxp_mul": f"{bits}-bit FXP multiplications",
        "fxp_mac": f"{bits}-bit FXP MAC",
        "fp_mul": "32-bit FP multiplications",
        "fp_mac": "32-bit FP MAC",
        "loads_stores": "Loads/stores",
    }
    return labels[category]


def dominant_kernel_share(artifacts: RunArtifacts) -> Dict[str, float]:
    """Share of all counted operations per stage."""
    ctx = artifacts.ctx
    total = ctx.counters.total()
    if total == 0:
        raise StateError("no operations recorded")
    return {stage: counters.total() / total for stage, counters in ctx.stage_counters.items()}


def reference_cycles(app: str, records: Optional[Sequence[PlatformEnergyRecord]] = None,
                     platform: Optional[str] = None) -> Optional[int]:
    """Measured processing cycles of an app on the reference platform, if the table has them."""
    platform = platform or config.REFERENCE_PLATFORM
    if records is None:
        try:
            records = load_energy_table()
        except DataError as e:
            logger.warning(f"Energy table unusable, falling back to desk op counts: {e}")
            return None
    for r in records:
        if r.app == app and r.platform == platform:
            return int(round(r.mcycles * 1e6))
    return None


def phase_timeline(pipeline: Pipeline, processing_cycles: int, clock_hz: Optional[float] = None,
                   per_batch: bool = False) -> Optional[PhaseTimeline]:
    """Timeline of one window; None for apps without acquisition."""
    schedule = pipeline.schedule()
    if schedule is None:
        return None
    return simulate_cycle(schedule, processing_cycles, clock_hz, per_batch=per_batch)


def characterize(pipeline: Pipeline, artifacts: RunArtifacts, clock_hz: Optional[float] = None,
                 records: Optional[Sequence[PlatformEnergyRecord]] = None, use_reference: bool = True,
                 per_batch: bool = False) -> AppMetrics:
    """Main operations, duty cycle, input bandwidth, static and dynamic data of a completed run.

    Duty cycles use the reference platform's measured cycles when the energy
    table has them and the run's own operation count per window otherwise.
    """
    if not artifacts.results:
        raise StateError(f"{pipeline.app_id}: no completed window to characterize")
    ctx = artifacts.ctx
    category = ctx.counters.dominant()
    if category is None:
        raise StateError(f"{pipeline.app_id}: no operations recorded")
    clock_hz = clock_hz or config.REFERENCE_CLOCK_HZ

    cycles = reference_cycles(pipeline.app_id, records) if use_reference else None
    source = REFERENCE_MEASURED
    if cycles is None:
        cycles = ctx.counters.total() // artifacts.windows
        source = DESK_COMPUTED

    ratio = bin_name = None
    real_time = True
    if pipeline.schedule() is not None:
        try:
            report = duty_cycle(phase_timeline(pipeline, cycles, clock_hz, per_batch))
            ratio, bin_name = report.ratio, report.bin
        except RealTimeViolation as e:
            logger.warning(f"{pipeline.app_id}: {e}")
            ratio, bin_name, real_time = 1.0, "very high", False

    ledger = ctx.ledger
    return AppMetrics(
        app=pipeline.app_id,
        main_category=category,
        main_operations=main_operations_label(category, ctx.arithmetic),
        duty_ratio=ratio,
        duty_bin=bin_name,
        duty_source=source if ratio is not None else None,
        processing_cycles=cycles,
        clock_hz=clock_hz,
        real_time=real_time,
        input_bandwidth=pipeline.input_bandwidth(),
        static_kib=ledger.static_bytes / 1024,
        dynamic_kib=ledger.dynamic_peak_bytes / 1024,
        provenance={
            "main_operations": DESK_COMPUTED,
            "duty_cycle": source,
            "input_bandwidth": DESK_COMPUTED,
            "static_data": f"{DESK_COMPUTED} (proxy)",
            "dynamic_data": DESK_COMPUTED,
        },
    )


def _check_bandwidth(m: AppMetrics, ref: ReferenceMetrics) -> MetricCheck:
    computed, expected = m.input_bandwidth, ref.input_bandwidth
    if computed is None or expected is None:
        return MetricCheck(app=m.app, metric="input_bandwidth", computed=None if computed is None else str(computed),
                           reference=None if expected is None else str(expected), agrees=computed == expected)
    tolerance = BANDWIDTH_TOLERANCE.get(m.app, 0.0)
    agrees = abs(computed - expected) <= tolerance * expected
    note = ""
    if agrees and computed != expected:
        note = f"within {tolerance:.0%} of the table value; the table value is not the sum of the sensor rates"
    return MetricCheck(app=m.app, metric="input_bandwidth", computed=str(computed), reference=str(expected),
                       agrees=agrees, note=note)


def compare_reference(metrics: Sequence[AppMetrics],
                      reference: Optional[Mapping[str, ReferenceMetrics]] = None) -> List[MetricCheck]:
    """Check bandwidth, duty bin and main-operation category against the reference table."""
    reference = reference if reference is not None else load_reference_metrics()
    checks = []
    for m in metrics:
        ref = reference.get(m.app)
        if ref is None:
            raise DomainError(f"no reference metrics for {m.app}")
        checks.append(_check_bandwidth(m, ref))
        checks.append(MetricCheck(app=m.app, metric="duty_bin", computed=m.duty_bin, reference=ref.duty_bin,
                                  agrees=m.duty_bin == ref.duty_bin))
        checks.append(MetricCheck(app=m.app, metric="main_operations", computed=m.main_category,
                                  reference=ref.main_category, agrees=m.main_category == ref.main_category,
                                  note=ref.main_operations))
    for miss in (c for c in checks if not c.agrees):
        logger.warning(f"{miss.app}: {miss.metric} is {miss.computed}, reference says {miss.reference}")
    return checks


def misses(checks: Sequence[MetricCheck]) -> List[MetricCheck]:
    return [c for c in checks if not c.agrees]
