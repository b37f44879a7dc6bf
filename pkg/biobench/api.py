from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Union

from app.core.config import config
from app.services import bench_service
from app.services.bench_service import CompareReport, RunReport, TrainReport
from app.services.characterize import AppMetrics

PathLike = Union[str, Path]


def _apply_overrides(
    clock_hz: Optional[float] = None,
    adc_buffer_bytes: Optional[int] = None,
    data_dir: Optional[PathLike] = None,
    jobs: Optional[int] = None,
) -> None:
    """Override the global runtime config in-place.

    Precedence: direct params (if provided) > environment variables (already loaded).
    """
    if clock_hz is not None:
        config.REFERENCE_CLOCK_HZ = float(clock_hz)
    if adc_buffer_bytes is not None:
        config.ADC_BUFFER_BYTES = int(adc_buffer_bytes)
    if data_dir is not None:
        config.DATA_DIR = Path(data_dir)
    if jobs is not None:
        config.MAX_JOBS = int(jobs)


def run(
    app: str,
    *,
    config_path: Optional[PathLike] = None,
    input_dir: Optional[PathLike] = None,
    seed: Optional[int] = None,
    clock_hz: Optional[float] = None,
    adc_buffer_bytes: Optional[int] = None,
    data_dir: Optional[PathLike] = None,
    per_batch: bool = False,
) -> RunReport:
    """Process one window of an app (synthetic input unless ``input_dir`` is given) and characterize it.

    - Loads ``configs/<app>.json`` unless ``config_path`` is given
    - ``clock_hz``, ``adc_buffer_bytes`` and ``data_dir`` override the runtime config
    """
    _apply_overrides(clock_hz, adc_buffer_bytes, data_dir, None)
    return bench_service.run_app(app, config_path=config_path, input_dir=input_dir, seed=seed, per_batch=per_batch)


def characterize(
    apps: Optional[Sequence[str]] = None,
    *,
    clock_hz: Optional[float] = None,
    adc_buffer_bytes: Optional[int] = None,
    data_dir: Optional[PathLike] = None,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
) -> List[AppMetrics]:
    """Metrics for the given apps, every app by default."""
    _apply_overrides(clock_hz, adc_buffer_bytes, data_dir, jobs)
    return bench_service.characterize_apps(apps, seed=seed)


def compare(
    apps: Optional[Sequence[str]] = None,
    *,
    platforms: Optional[Sequence[str]] = None,
    table: Optional[PathLike] = None,
    data_dir: Optional[PathLike] = None,
    csv_path: Optional[PathLike] = None,
) -> CompareReport:
    _apply_overrides(None, None, data_dir, None)
    return bench_service.compare(apps, platforms=platforms, table=table, csv_path=csv_path)


def train(
    *,
    config_path: Optional[PathLike] = None,
    epochs: int = 1,
    seed: Optional[int] = None,
    trace_out: Optional[PathLike] = None,
    model_out: Optional[PathLike] = None,
) -> TrainReport:
    return bench_service.train(config_path, epochs=epochs, seed=seed, trace_out=trace_out, model_out=model_out)
