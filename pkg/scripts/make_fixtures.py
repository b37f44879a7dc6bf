import argparse
import sys
from pathlib import Path

# project root on the import path
project_root = str(Path(__file__).parent.parent)
sys.path.append(project_root)

from app.core.config import config  # noqa: E402
from app.core.logger import logger  # noqa: E402
from app.core.reference import APP_IDS, resolve_app  # noqa: E402
from app.core.sigio import SampleBuffer, store_signal  # noqa: E402
from app.services.pipelines import build_app  # noqa: E402


def make_fixture(app_id: str, output_dir: Path, seed: int, fmt: str) -> int:
    """Store the synthetic input window of one app as ``<signal>.csv`` files."""
    pipeline = build_app(app_id)
    if not pipeline.specs:
        logger.info(f"{app_id}: no acquired input, skipped")
        return 0
    inputs = pipeline.synthesize_input(seed)
    target = output_dir / app_id.lower()
    written = 0
    for buffer in inputs:
        if not isinstance(buffer, SampleBuffer):
            continue
        suffix = "csv" if fmt == "csv" else "raw"
        path = store_signal(buffer, target / f"{buffer.spec.name}.{suffix}", fmt)
        logger.info(f"{app_id}: wrote {path}")
        written += 1
    return written


def main():
    parser = argparse.ArgumentParser(description="Write synthetic input windows as fixture directories")
    parser.add_argument("apps", nargs="*", help="App ids (default: all with acquired input)")
    parser.add_argument("--output-dir", default=str(config.FIXTURES_DIR), help="Fixture root")
    parser.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
    parser.add_argument("--format", default="csv", choices=["csv", "raw_le"])
    args = parser.parse_args()

    apps = []
    for name in args.apps or APP_IDS:
        app = resolve_app(name)
        if app is None:
            parser.error(f"unknown app: {name}")
        apps.append(app)

    total = sum(make_fixture(app, Path(args.output_dir), args.seed, args.format) for app in apps)
    logger.info(f"{total} fixture files written to {args.output_dir}")


if __name__ == "__main__":
    main()
