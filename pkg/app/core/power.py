"""Per-platform energy and cycle records: loading, breakdowns, rankings and what-if projections."""

import csv
import math
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, model_validator

from app.core.config import config
from app.core.errors import DataError, DomainError
from app.core.logger import logger

PLATFORMS = ("RP2040", "STM32L4R5ZI", "Apollo3Blue", "GAP8", "GAP9")
SUM_TOLERANCE_MJ = 0.001
ENERGY_COLUMNS = ["platform", "app", "mcycles", "idle_mJ", "acq_mJ", "proc_mJ", "total_mJ"]

PlatformName = Literal["RP2040", "STM32L4R5ZI", "Apollo3Blue", "GAP8", "GAP9"]

# Published textual ratios: (app, cheaper platform, costlier platform, stated factor)
PUBLISHED_CLAIMS: Tuple[Tuple[str, str, str, float], ...] = (
    ("SeizDetSVM", "STM32L4R5ZI", "GAP9", 22.0),
    ("SeizDetCNN", "GAP9", "STM32L4R5ZI", 23.5),
)


class PlatformEnergyRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    platform: PlatformName
    app: str
    mcycles: float
    idle_mj: Optional[float] = None
    acq_mj: Optional[float] = None
    proc_mj: float
    total_mj: float

    @model_validator(mode="after")
    def _check(self):
        for name in ("mcycles", "idle_mj", "acq_mj", "proc_mj", "total_mj"):
            value = getattr(self, name)
            if value is not None and (value < 0 or not math.isfinite(value)):
                raise ValueError(f"{name} must be a non-negative number")
        if abs(self.total_mj - self.component_sum) > SUM_TOLERANCE_MJ + 1e-9:
            raise ValueError(f"total {self.total_mj} differs from phase sum {self.component_sum:.3f}")
        return self

    @property
    def component_sum(self) -> float:
        return (self.idle_mj or 0.0) + (self.acq_mj or 0.0) + self.proc_mj


class PlatformProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    platform: PlatformName
    board: str
    manufacturer: str
    processor: str
    cores: int
    fpu: bool
    ram_kib: int
    flash_mb: float
    flash_onchip: bool
    cluster_processor: Optional[str] = None
    cluster_cores: Optional[int] = None
    cluster_fpu: Optional[bool] = None
    cluster_ram_kib: Optional[int] = None


class PhaseShares(BaseModel):
    model_config = ConfigDict(frozen=True)

    idle: float
    acquisition: float
    processing: float


class PlatformComparison(BaseModel):
    model_config = ConfigDict(frozen=True)

    app: str
    ranking: List[Tuple[str, float]]

    @property
    def winner(self) -> str:
        return self.ranking[0][0]

    def total(self, platform: str) -> float:
        for name, total in self.ranking:
            if name == platform:
                return total
        raise DomainError(f"{platform} has no record for {self.app}")

    def ratio(self, a: str, b: str) -> float:
        """How many times more energy b uses than a."""
        return self.total(b) / self.total(a)

    def ratios(self) -> Dict[str, float]:
        names = [name for name, _ in self.ranking]
        return {f"{a}/{b}": self.ratio(a, b) for a in names for b in names if a != b}


class ClaimCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    app: str
    cheaper: str
    costlier: str
    stated: float
    computed: float
    agrees: bool


def _read_rows(path: Path) -> Tuple[List[str], List[Tuple[int, Dict[str, str]]]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [(i, line) for i, line in enumerate(f, start=1) if line.strip() and not line.startswith("#")]
    if not lines:
        raise DataError(f"{path}: no header row")
    reader = csv.reader([line for _, line in lines])
    header = [h.strip() for h in next(reader)]
    rows = []
    for (lineno, _), cells in zip(lines[1:], reader):
        if len(cells) != len(header):
            raise DataError(f"{len(cells)} cells, header has {len(header)}", row=lineno, context=str(path.name))
        rows.append((lineno, dict(zip(header, (c.strip() for c in cells)))))
    return header, rows


def _optional_float(value: str, lineno: int, context: str) -> Optional[float]:
    if value == "-":
        return None
    try:
        return float(value)
    except ValueError as e:
        raise DataError(f"non-numeric value {value!r}", row=lineno, context=context) from e


def load_energy_table(path: Union[str, Path, None] = None) -> List[PlatformEnergyRecord]:
    """Read the energy CSV; fully unmeasured rows are skipped, phase-sum violations raise DataError."""
    path = Path(path) if path is not None else config.energy_table_path
    if not path.exists():
        raise DataError(f"energy table not found: {path}")
    header, rows = _read_rows(path)
    if header != ENERGY_COLUMNS:
        raise DataError(f"unexpected columns {header}, expected {ENERGY_COLUMNS}", context=path.name)

    records: List[PlatformEnergyRecord] = []
    seen = set()
    for lineno, row in rows:
        context = f"{row['platform']}/{row['app']}"
        values = {k: _optional_float(row[k], lineno, context) for k in ENERGY_COLUMNS[2:]}
        if all(v is None for v in values.values()):
            logger.debug(f"{context}: not measured, skipped")
            continue
        if row["platform"] not in PLATFORMS:
            raise DataError(f"unknown platform {row['platform']!r}", row=lineno, context=context)
        if values["proc_mJ"] is None or values["total_mJ"] is None or values["mcycles"] is None:
            raise DataError("cycles, processing and total energy are required", row=lineno, context=context)
        if (row["platform"], row["app"]) in seen:
            raise DataError("duplicate platform/app row", row=lineno, context=context)
        seen.add((row["platform"], row["app"]))
        phase_sum = sum(v or 0.0 for k, v in values.items() if k in ("idle_mJ", "acq_mJ", "proc_mJ"))
        if abs(values["total_mJ"] - phase_sum) > SUM_TOLERANCE_MJ + 1e-9:
            raise DataError(f"total {values['total_mJ']} != idle+acq+proc {phase_sum:.3f}", row=lineno,
                            context=context)
        if any(v < 0 for v in values.values() if v is not None):
            raise DataError("negative value", row=lineno, context=context)
        records.append(PlatformEnergyRecord(
            platform=row["platform"], app=row["app"], mcycles=values["mcycles"], idle_mj=values["idle_mJ"],
            acq_mj=values["acq_mJ"], proc_mj=values["proc_mJ"], total_mj=values["total_mJ"],
        ))
    logger.debug(f"Loaded {len(records)} energy records from {path}")
    return records


def _parse_bool(value: str) -> Optional[bool]:
    if value == "-":
        return None
    return value.lower() in ("yes", "true", "1")


def load_platforms(path: Union[str, Path, None] = None) -> List[PlatformProfile]:
    path = Path(path) if path is not None else config.platforms_table_path
    if not path.exists():
        raise DataError(f"platform table not found: {path}")
    _, rows = _read_rows(path)
    profiles = []
    for lineno, row in rows:
        try:
            profiles.append(PlatformProfile(
                platform=row["platform"], board=row["board"], manufacturer=row["manufacturer"],
                processor=row["processor"], cores=int(row["cores"]), fpu=_parse_bool(row["fpu"]),
                ram_kib=int(row["ram_kib"]), flash_mb=float(row["flash_mb"]),
                flash_onchip=_parse_bool(row["flash_onchip"]),
                cluster_processor=None if row["cluster_processor"] == "-" else row["cluster_processor"],
                cluster_cores=None if row["cluster_cores"] == "-" else int(row["cluster_cores"]),
                cluster_fpu=_parse_bool(row["cluster_fpu"]),
                cluster_ram_kib=None if row["cluster_ram_kib"] == "-" else int(row["cluster_ram_kib"]),
            ))
        except (KeyError, ValueError) as e:
            raise DataError(str(e), row=lineno, context=row.get("platform")) from e
    return profiles


def records_for(records: Iterable[PlatformEnergyRecord], app: str,
                platforms: Optional[Sequence[str]] = None) -> List[PlatformEnergyRecord]:
    selected = [r for r in records if r.app == app and (platforms is None or r.platform in platforms)]
    if not selected:
        raise DomainError(f"no energy records for app {app!r}")
    return selected


def energy_breakdown(records: Iterable[PlatformEnergyRecord], app: str) -> Dict[str, PhaseShares]:
    """Phase shares of each platform's energy; unmeasured phases count as 0."""
    shares = {}
    for r in records_for(records, app):
        total = r.component_sum
        if total <= 0:
            raise DomainError(f"{r.platform}/{app} has zero energy")
        shares[r.platform] = PhaseShares(idle=(r.idle_mj or 0.0) / total, acquisition=(r.acq_mj or 0.0) / total,
                                         processing=r.proc_mj / total)
    return shares


def compare_platforms(records: Iterable[PlatformEnergyRecord], app: str,
                      platforms: Optional[Sequence[str]] = None) -> PlatformComparison:
    """Ascending total-energy ranking; equal totals order by platform name."""
    selected = records_for(records, app, platforms)
    if len(selected) < 2:
        raise DomainError(f"{app}: need at least 2 platforms to compare, have {len(selected)}")
    ranking = sorted(((r.platform, r.total_mj) for r in selected), key=lambda item: (item[1], item[0]))
    return PlatformComparison(app=app, ranking=ranking)


def project_energy(record: PlatformEnergyRecord, window_seconds: float, duty_scale: float = 1.0,
                   clock_scale: float = 1.0, clock_hz: Optional[float] = None) -> PlatformEnergyRecord:
    """What-if record: processing energy scales with ``duty_scale``; idle energy with the remaining idle time.

    The active time is the record's cycles at ``clock_hz``, stretched by
    ``duty_scale`` and shortened by ``clock_scale``.
    """
    if duty_scale <= 0 or clock_scale <= 0:
        raise DomainError("scale factors must be positive")
    if window_seconds <= 0:
        raise DomainError("window_seconds must be positive")
    clock_hz = clock_hz or config.REFERENCE_CLOCK_HZ
    active = record.mcycles * 1e6 / clock_hz
    projected_active = active * duty_scale / clock_scale
    if projected_active > window_seconds:
        raise DomainError(f"projected processing {projected_active:.6g} s exceeds the {window_seconds} s window")

    idle = record.idle_mj
    if idle is not None:
        if active >= window_seconds:
            raise DomainError("base record has no idle time to scale")
        idle = idle * (window_seconds - projected_active) / (window_seconds - active)
    proc = record.proc_mj * duty_scale
    total = (idle or 0.0) + (record.acq_mj or 0.0) + proc
    return PlatformEnergyRecord(platform=record.platform, app=record.app, mcycles=record.mcycles * duty_scale,
                                idle_mj=idle, acq_mj=record.acq_mj, proc_mj=proc, total_mj=total)


def cycle_ratio(records: Iterable[PlatformEnergyRecord], app: str, a: str, b: str) -> float:
    """Processing cycles of b over those of a."""
    by_platform = {r.platform: r for r in records_for(records, app, [a, b])}
    if a not in by_platform or b not in by_platform:
        raise DomainError(f"{app}: missing record for {a if a not in by_platform else b}")
    return by_platform[b].mcycles / by_platform[a].mcycles


def dominant_phase(records: Iterable[PlatformEnergyRecord], app: str) -> Dict[str, str]:
    result = {}
    for platform, shares in energy_breakdown(records, app).items():
        parts = {"idle": shares.idle, "acquisition": shares.acquisition, "processing": shares.processing}
        result[platform] = max(parts, key=parts.get)
    return result


def winners(records: Iterable[PlatformEnergyRecord]) -> Dict[str, str]:
    """Lowest-energy platform per app."""
    records = list(records)
    apps = dict.fromkeys(r.app for r in records)
    return {app: compare_platforms(records, app).winner for app in apps
            if len(records_for(records, app)) >= 2}


def win_counts(records: Iterable[PlatformEnergyRecord]) -> Dict[str, int]:
    counts = Counter(winners(records).values())
    return {platform: counts.get(platform, 0) for platform in PLATFORMS}


def _geomean(values: Sequence[float]) -> float:
    return math.exp(sum(math.log(v) for v in values) / len(values))


def fpu_penalty(records: Iterable[PlatformEnergyRecord], profiles: Sequence[PlatformProfile],
                arithmetic_by_app: Mapping[str, str], baseline: Optional[str] = None) -> Dict[str, Dict[str, float]]:
    """Cycle inflation vs the baseline platform on floating- and fixed-point apps.

    ``penalty`` is the geometric-mean inflation on FP apps divided by that on
    FXP apps; only platforms whose main core lacks an FPU are reported.
    """
    records = list(records)
    baseline = baseline or config.REFERENCE_PLATFORM
    result = {}
    for profile in profiles:
        if profile.fpu or profile.platform == baseline:
            continue
        groups: Dict[str, List[float]] = {"fp": [], "fxp": []}
        for app, arithmetic in arithmetic_by_app.items():
            try:
                groups["fp" if arithmetic.startswith("fp") else "fxp"].append(
                    cycle_ratio(records, app, baseline, profile.platform))
            except DomainError:
                continue
        if groups["fp"] and groups["fxp"]:
            fp, fxp = _geomean(groups["fp"]), _geomean(groups["fxp"])
            result[profile.platform] = {"fp": fp, "fxp": fxp, "penalty": fp / fxp}
    return result


def check_claims(records: Iterable[PlatformEnergyRecord], tolerance: float = 0.05) -> List[ClaimCheck]:
    """Recompute published energy ratios from the table; ``agrees`` within a relative tolerance."""
    records = list(records)
    checks = []
    for app, cheaper, costlier, stated in PUBLISHED_CLAIMS:
        computed = compare_platforms(records, app, [cheaper, costlier]).ratio(cheaper, costlier)
        agrees = abs(computed - stated) <= tolerance * stated
        if not agrees:
            logger.warning(f"{app}: stated {stated}x for {costlier} vs {cheaper}, table gives {computed:.2f}x")
        checks.append(ClaimCheck(app=app, cheaper=cheaper, costlier=costlier, stated=stated, computed=computed,
                                 agrees=agrees))
    return checks
