"""Reference characterization of the eight applications, shipped as ``app_metrics.csv``."""

import csv
from pathlib import Path
from typing import Dict, Optional, Union

from pydantic import BaseModel, ConfigDict

from app.core.config import config
from app.core.errors import DataError
from app.core.instrument import CATEGORIES

APP_IDS = ("HCL", "SeizDetSVM", "SeizDetCNN", "CWM", "GCL", "CoughDet", "ECL", "BPfree")

# Lower-case aliases accepted on the command line
APP_ALIASES = {app.lower(): app for app in APP_IDS}
APP_ALIASES.update({"svm": "SeizDetSVM", "cnn": "SeizDetCNN", "cough": "CoughDet"})


class ReferenceMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    app: str
    main_operations: str
    main_category: str
    duty_bin: Optional[str] = None
    input_bandwidth: Optional[int] = None
    static_kib: float
    dynamic_kib: float


def resolve_app(name: str) -> Optional[str]:
    """Canonical app id for a case-insensitive name or alias."""
    if name in APP_IDS:
        return name
    return APP_ALIASES.get(name.lower())


def load_reference_metrics(path: Union[str, Path, None] = None) -> Dict[str, ReferenceMetrics]:
    path = Path(path) if path is not None else config.reference_metrics_path
    if not path.exists():
        raise DataError(f"reference metrics not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if line.strip() and not line.startswith("#")]
    metrics = {}
    for lineno, row in enumerate(csv.DictReader(lines), start=2):
        try:
            if row["main_category"] not in CATEGORIES:
                raise ValueError(f"unknown category {row['main_category']!r}")
            metrics[row["app"]] = ReferenceMetrics(
                app=row["app"],
                main_operations=row["main_operations"],
                main_category=row["main_category"],
                duty_bin=None if row["duty_bin"] == "-" else row["duty_bin"],
                input_bandwidth=None if row["input_bandwidth"] == "-" else int(row["input_bandwidth"]),
                static_kib=float(row["static_kib"]),
                dynamic_kib=float(row["dynamic_kib"]),
            )
        except (KeyError, ValueError) as e:
            raise DataError(str(e), row=lineno, context=row.get("app")) from e
    return metrics
