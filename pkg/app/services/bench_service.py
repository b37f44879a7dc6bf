"""Benchmark services shared by the CLI and the public API."""

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from app.core.config import config
from app.core.errors import ConfigError, DomainError
from app.core.logger import logger
from app.core.models import save_model
from app.core.phasesim import PhaseTimeline, export_timeline
from app.core.power import (
    PLATFORMS,
    ClaimCheck,
    PhaseShares,
    PlatformEnergyRecord,
    check_claims,
    compare_platforms,
    energy_breakdown,
    load_energy_table,
    project_energy,
    records_for,
    win_counts,
)
from app.core.reference import APP_IDS, resolve_app
from app.core.sigio import load_window_dir
from app.core.storage import GoldenStore, write_csv
from app.core.train import LayerTrace, SampleBatch, bpfree_train_epoch, save_loss_trace
from app.services.characterize import (
    AppMetrics,
    RunArtifacts,
    characterize,
    dominant_kernel_share,
    phase_timeline,
    reference_cycles,
)
from app.services.pipelines import BpFreePipeline, Pipeline, build_app, load_app_config

PathLike = Union[str, Path]

COMPARE_CSV_FIELDS = ["app", "platform", "rank", "total_mJ", "idle_share", "acq_share", "proc_share"]


class RunReport(BaseModel):
    schema_version: str
    app: str
    config_hash: str
    seed: int
    input: str
    outputs: List[Dict[str, Any]]
    metrics: AppMetrics
    timeline: Optional[Dict[str, Any]] = None
    counters: Dict[str, int]
    stage_shares: Dict[str, float]
    provenance: Dict[str, str]
    wall_time_s: Optional[float] = None
    golden_match: Optional[bool] = None

    def to_json(self) -> str:
        # optional run extras are left out when absent so reports stay byte-identical
        exclude = {name for name in ("wall_time_s", "golden_match") if getattr(self, name) is None}
        return self.model_dump_json(indent=2, exclude=exclude)


class AppComparison(BaseModel):
    model_config = ConfigDict(frozen=True)

    app: str
    winner: str
    ranking: List[Tuple[str, float]]
    breakdown: Dict[str, PhaseShares]
    ratios: Dict[str, float]


class CompareReport(BaseModel):
    schema_version: str
    apps: List[AppComparison]
    win_counts: Dict[str, int]
    claims: List[ClaimCheck] = Field(default_factory=list)
    provenance: str = "reference-measured"


class TrainReport(BaseModel):
    epochs: int
    trace: List[Dict[str, Any]]
    trace_path: Optional[str] = None
    model_path: Optional[str] = None


def resolve_apps(apps: Optional[Sequence[str]]) -> List[str]:
    """Canonical app ids; None or ``all`` selects every app."""
    if not apps or list(apps) == ["all"]:
        return list(APP_IDS)
    resolved = []
    for name in apps:
        app = resolve_app(name)
        if app is None:
            raise ConfigError(f"unknown app: {name!r} (known: {', '.join(APP_IDS)})")
        resolved.append(app)
    return resolved


def _pipeline(app: str, config_path: Optional[PathLike]) -> Pipeline:
    return build_app(load_app_config(config_path, app_id=app))


def _inputs(pipeline: Pipeline, input_dir: Optional[PathLike], seed: int):
    if input_dir is None:
        return pipeline.synthesize_input(seed), "synthetic"
    if not pipeline.specs:
        raise ConfigError(f"{pipeline.app_id} takes no acquired input")
    return load_window_dir(pipeline.specs, input_dir, pipeline.config.window_seconds), str(input_dir)


def run_app(app: str, config_path: Optional[PathLike] = None, input_dir: Optional[PathLike] = None,
            seed: Optional[int] = None, clock_hz: Optional[float] = None, timing: bool = False,
            golden: bool = False, per_batch: bool = False,
            records: Optional[Sequence[PlatformEnergyRecord]] = None) -> RunReport:
    """Process one window of an app and characterize it."""
    seed = config.DEFAULT_SEED if seed is None else seed
    pipeline = _pipeline(app, config_path)
    inputs, source = _inputs(pipeline, input_dir, seed)

    ctx = pipeline.new_context()
    started = time.perf_counter()
    result = pipeline.process_window(inputs, ctx)
    elapsed = time.perf_counter() - started
    artifacts = RunArtifacts(ctx=ctx, results=[result])
    metrics = characterize(pipeline, artifacts, clock_hz=clock_hz, records=records, per_batch=per_batch)

    timeline = None
    if metrics.real_time and metrics.processing_cycles is not None:
        tl = phase_timeline(pipeline, metrics.processing_cycles, metrics.clock_hz, per_batch)
        timeline = tl.summary() if tl is not None else None

    outputs = [result.model_dump(mode="json")]
    golden_match = None
    if golden:
        name = f"synthetic_seed{seed}" if input_dir is None else "input"
        golden_match = GoldenStore().check_or_record(pipeline.app_id, name, outputs)
        if not golden_match:
            logger.warning(f"{pipeline.app_id}: outputs differ from the golden record")

    logger.info(f"{pipeline.app_id}: {result.label} ({metrics.main_operations}, duty {metrics.duty_bin})")
    return RunReport(
        schema_version=config.REPORT_SCHEMA_VERSION,
        app=pipeline.app_id,
        config_hash=pipeline.config.config_hash(),
        seed=seed,
        input=source,
        outputs=outputs,
        metrics=metrics,
        timeline=timeline,
        counters=ctx.counters.as_dict(),
        stage_shares=dominant_kernel_share(artifacts),
        provenance=metrics.provenance,
        wall_time_s=elapsed if timing else None,
        golden_match=golden_match,
    )


def run_many(apps: Sequence[str], jobs: Optional[int] = None, **kwargs) -> List[RunReport]:
    """Run independent apps, ``jobs`` at a time; reports come back in input order."""
    jobs = max(1, jobs or config.MAX_JOBS)
    apps = list(apps)
    if jobs == 1 or len(apps) == 1:
        return [run_app(app, **kwargs) for app in tqdm(apps, desc="Running apps", disable=len(apps) < 2)]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        futures = [executor.submit(run_app, app, **kwargs) for app in apps]
        for _ in tqdm(as_completed(futures), total=len(futures), desc="Running apps"):
            pass
        return [f.result() for f in futures]


def characterize_apps(apps: Optional[Sequence[str]] = None, jobs: Optional[int] = None,
                      **kwargs) -> List[AppMetrics]:
    return [report.metrics for report in run_many(resolve_apps(apps), jobs=jobs, **kwargs)]


def _check_platforms(platforms: Optional[Sequence[str]]) -> Optional[List[str]]:
    if platforms is None:
        return None
    platforms = list(platforms)
    if not platforms:
        raise ConfigError("the platform filter is empty")
    unknown = [p for p in platforms if p not in PLATFORMS]
    if unknown:
        raise ConfigError(f"unknown platforms: {', '.join(unknown)} (known: {', '.join(PLATFORMS)})")
    return platforms


def compare(apps: Optional[Sequence[str]] = None, platforms: Optional[Sequence[str]] = None,
            table: Optional[PathLike] = None, csv_path: Optional[PathLike] = None) -> CompareReport:
    """Rankings, pairwise ratios and phase breakdowns from the energy table."""
    platforms = _check_platforms(platforms)
    records = load_energy_table(table)
    if platforms is not None:
        records = [r for r in records if r.platform in platforms]
    comparisons = []
    for app in resolve_apps(apps):
        comparison = compare_platforms(records, app)
        breakdown = energy_breakdown(records_for(records, app), app)
        comparisons.append(AppComparison(app=app, winner=comparison.winner, ranking=comparison.ranking,
                                         breakdown=breakdown, ratios=comparison.ratios()))
    claims = check_claims(records) if platforms is None and apps is None else []
    report = CompareReport(schema_version=config.REPORT_SCHEMA_VERSION, apps=comparisons,
                           win_counts=win_counts(records), claims=claims)
    if csv_path is not None:
        export_comparison(report, csv_path)
    return report


def export_comparison(report: CompareReport, path: PathLike) -> Path:
    """One row per (app, platform), ready for plotting."""
    rows = []
    for c in report.apps:
        for rank, (platform, total) in enumerate(c.ranking, start=1):
            shares = c.breakdown[platform]
            rows.append({"app": c.app, "platform": platform, "rank": rank, "total_mJ": repr(total),
                         "idle_share": repr(shares.idle), "acq_share": repr(shares.acquisition),
                         "proc_share": repr(shares.processing)})
    return write_csv(rows, path, COMPARE_CSV_FIELDS)


def phases(app: str, config_path: Optional[PathLike] = None, clock_hz: Optional[float] = None,
           per_batch: bool = False, processing_cycles: Optional[int] = None,
           output: Optional[PathLike] = None) -> PhaseTimeline:
    """Timeline of one window from the reference cycles (or an explicit cycle count)."""
    pipeline = _pipeline(app, config_path)
    cycles = processing_cycles if processing_cycles is not None else reference_cycles(pipeline.app_id)
    if cycles is None:
        raise DomainError(f"{pipeline.app_id}: no reference cycles; pass a cycle count")
    timeline = phase_timeline(pipeline, cycles, clock_hz, per_batch)
    if timeline is None:
        raise DomainError(f"{pipeline.app_id} has no acquisition phase")
    if output is not None:
        export_timeline(timeline, output)
        logger.info(f"Timeline written to {output}")
    return timeline


def project(app: str, platform: str, duty_scale: float = 1.0, clock_scale: float = 1.0,
            clock_hz: Optional[float] = None, table: Optional[PathLike] = None,
            config_path: Optional[PathLike] = None) -> Tuple[PlatformEnergyRecord, PlatformEnergyRecord]:
    """(measured, projected) record of an app on one platform."""
    _check_platforms([platform])
    cfg = load_app_config(config_path, app_id=app)
    if cfg.window_seconds is None:
        raise DomainError(f"{cfg.app_id} has no acquisition window to project over")
    record = records_for(load_energy_table(table), cfg.app_id, [platform])[0]
    return record, project_energy(record, cfg.window_seconds, duty_scale, clock_scale, clock_hz)


def train(config_path: Optional[PathLike] = None, epochs: int = 1, seed: Optional[int] = None,
          trace_out: Optional[PathLike] = None, model_out: Optional[PathLike] = None) -> TrainReport:
    """BP-free training epochs on a synthetic batch, with optional trace CSV and model output."""
    if epochs < 1:
        raise DomainError("epochs must be at least 1")
    seed = config.DEFAULT_SEED if seed is None else seed
    pipeline = _pipeline("BPfree", config_path)
    if not isinstance(pipeline, BpFreePipeline):
        raise ConfigError(f"{config_path} does not configure BPfree")
    batch: SampleBatch = pipeline.synthesize_input(seed)
    ctx = pipeline.new_context()
    model = pipeline.model
    trace: List[LayerTrace] = []
    for epoch in tqdm(range(epochs), desc="Training", disable=epochs < 2):
        result = bpfree_train_epoch(model, batch, float(pipeline.params["eta"]),
                                    margin=float(pipeline.params["margin"]), ctx=ctx)
        model = result.model
        trace.extend(result.trace)
        logger.info(f"Epoch {epoch + 1}/{epochs}: layer losses {[round(t.loss_after, 6) for t in result.trace]}")
    if trace_out is not None:
        save_loss_trace(trace, trace_out)
    if model_out is not None:
        save_model(model, model_out)
    return TrainReport(
        epochs=epochs,
        trace=[{"layer": t.layer, "loss_before": t.loss_before, "loss_after": t.loss_after, "eta": t.eta,
                "backoff_steps": t.backoff_steps, "updated": t.updated} for t in trace],
        trace_path=None if trace_out is None else str(trace_out),
        model_path=None if model_out is None else str(model_out),
    )
