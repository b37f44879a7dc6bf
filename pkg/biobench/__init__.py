"""biobench public API.

This package re-exports the core classes from the internal `app` package
to provide a stable import path for users when installed as a package.
"""

from app.core.config import Config, config  # noqa: F401
from app.core.errors import BenchError, ConfigError, DataError, DomainError, RealTimeViolation  # noqa: F401
from app.core.instrument import KernelContext, MemoryLedger, OpCounters  # noqa: F401
from app.core.phasesim import PhaseTimeline, duty_cycle, simulate_cycle  # noqa: F401
from app.core.power import PlatformEnergyRecord, compare_platforms, load_energy_table  # noqa: F401
from app.core.sigio import SampleBuffer, SignalSpec, input_bandwidth, schedule_acquisition  # noqa: F401
from app.services.characterize import AppMetrics  # noqa: F401
from app.services.pipelines import AppConfig, Pipeline, build_app, load_app_config  # noqa: F401
from .api import characterize, compare, run, train  # noqa: F401

__all__ = [
    "Config",
    "config",
    "BenchError",
    "ConfigError",
    "DataError",
    "DomainError",
    "RealTimeViolation",
    "KernelContext",
    "MemoryLedger",
    "OpCounters",
    "PhaseTimeline",
    "duty_cycle",
    "simulate_cycle",
    "PlatformEnergyRecord",
    "compare_platforms",
    "load_energy_table",
    "SampleBuffer",
    "SignalSpec",
    "input_bandwidth",
    "schedule_acquisition",
    "AppMetrics",
    "AppConfig",
    "Pipeline",
    "build_app",
    "load_app_config",
    "characterize",
    "compare",
    "run",
    "train",
]
