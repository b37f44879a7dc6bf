import os
from pathlib import Path

from dotenv import load_dotenv

ROOT_DIR = Path(__file__).parent.parent.parent


def reload_env():
    """Reload variables from the project's .env file."""
    env_path = ROOT_DIR / ".env"
    load_dotenv(env_path, override=True)


reload_env()


def parse_log_max_size(val):
    """
    Normalise the log rotation size into a loguru-compatible string.

    Accepted inputs:
    - "10MB" -> "10 MB"
    - "10 MB" -> "10 MB" (unchanged)
    - 10485760 -> "10 MB" (bytes to MB)
    - "10485760" -> "10 MB"
    """
    if val is None:
        return "10 MB"

    if isinstance(val, (int, float)) or (isinstance(val, str) and val.strip().isdigit()):
        bytes_val = int(str(val).strip())
        mb_val = max(1, bytes_val // (1024 * 1024))
        return f"{mb_val} MB"

    val = str(val).strip().upper()

    if val.endswith(("KB", "MB", "GB")) and " " not in val:
        for unit in ("KB", "MB", "GB"):
            if val.endswith(unit):
                size = val[:-len(unit)].strip()
                if size.isdigit():
                    return f"{size} {unit}"

    for unit in ("KB", "MB", "GB"):
        if f" {unit}" in val:
            return val

    return "10 MB"


def _env_path(name: str, default: Path) -> Path:
    value = os.getenv(name, "").split("#")[0].strip()
    return Path(value) if value else default


class Config:
    """Runtime settings; a fresh instance re-reads the environment."""

    def __init__(self):
        # Asset directories
        self.DATA_DIR = _env_path("BIOBENCH_DATA", ROOT_DIR / "data")
        self.CONFIG_DIR = _env_path("BIOBENCH_CONFIGS", ROOT_DIR / "configs")
        self.GOLDEN_DIR = _env_path("BIOBENCH_GOLDEN", ROOT_DIR / "golden")
        self.SCHEMA_DIR = _env_path("BIOBENCH_SCHEMAS", ROOT_DIR / "schemas")
        self.FIXTURES_DIR = _env_path("BIOBENCH_FIXTURES", ROOT_DIR / "fixtures")
        # Asset file names inside DATA_DIR
        self.ENERGY_TABLE = os.getenv("BIOBENCH_ENERGY_TABLE", "platform_energy.csv")
        self.PLATFORMS_TABLE = os.getenv("BIOBENCH_PLATFORMS_TABLE", "platforms.csv")
        self.REFERENCE_METRICS = os.getenv("BIOBENCH_REFERENCE_METRICS", "app_metrics.csv")
        # Simulation
        self.REFERENCE_CLOCK_HZ = float(os.getenv("BIOBENCH_CLOCK_HZ", "120e6"))
        self.SPI_CLOCK_HZ = float(os.getenv("BIOBENCH_SPI_HZ", "8e6"))
        self.ADC_BUFFER_BYTES = int(os.getenv("BIOBENCH_ADC_BUFFER", "768"))
        self.REFERENCE_PLATFORM = os.getenv("BIOBENCH_REFERENCE_PLATFORM", "STM32L4R5ZI")
        # Runs
        self.DEFAULT_SEED = int(os.getenv("BIOBENCH_SEED", "7"))
        self.MAX_JOBS = int(os.getenv("BIOBENCH_JOBS", "1"))
        self.REPORT_SCHEMA_VERSION = "1.0"
        # Logging
        self.LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
        self.LOG_FILE = os.getenv("LOG_FILE", "logs/biobench.log")
        self.LOG_MAX_SIZE = parse_log_max_size(os.getenv("LOG_MAX_SIZE", "10 MB"))
        self.LOG_BACKUP_COUNT = int(os.getenv("LOG_BACKUP_COUNT", 5))

    def data_file(self, name: str) -> Path:
        return self.DATA_DIR / name

    @property
    def energy_table_path(self) -> Path:
        return self.data_file(self.ENERGY_TABLE)

    @property
    def platforms_table_path(self) -> Path:
        return self.data_file(self.PLATFORMS_TABLE)

    @property
    def reference_metrics_path(self) -> Path:
        return self.data_file(self.REFERENCE_METRICS)


config = Config()


def reload_config() -> Config:
    """Rebuild the shared config in place after environment changes."""
    reload_env()
    fresh = Config()
    config.__dict__.update(fresh.__dict__)
    return config
