import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from app.core.errors import BenchError, ConfigError
from app.core.logger import configure_logging, logger
from app.services import bench_service
from app.services.characterize import AppMetrics, compare_reference, misses

METRIC_FIELDS = ["app", "main_operations", "main_category", "duty_ratio", "duty_bin", "duty_source",
                 "input_bandwidth", "static_kib", "dynamic_kib"]


def _split(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    return [s.strip() for s in value.split(",") if s.strip()]


def _metric_row(m: AppMetrics) -> Dict[str, object]:
    row = m.model_dump()
    return {k: "" if row[k] is None else row[k] for k in METRIC_FIELDS}


def _csv(rows: List[Dict[str, object]], fieldnames: List[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _render(table_or_text) -> str:
    if isinstance(table_or_text, str):
        return table_or_text
    console = Console(file=io.StringIO(), width=140, color_system=None)
    console.print(table_or_text)
    return console.file.getvalue()


def _metrics_table(metrics: List[AppMetrics], title: str) -> Table:
    table = Table(title=title)
    for column in ("App", "Main operations", "Duty cycle", "Input bandwidth (B/s)", "Static (KiB, proxy)",
                   "Dynamic (KiB)"):
        table.add_column(column)
    for m in metrics:
        duty = "-" if m.duty_bin is None else f"{m.duty_bin} ({m.duty_ratio:.4g})"
        bandwidth = "-" if m.input_bandwidth is None else str(m.input_bandwidth)
        table.add_row(m.app, m.main_operations, duty, bandwidth, f"{m.static_kib:.1f}", f"{m.dynamic_kib:.1f}")
    return table


def cmd_run(args) -> str:
    report = bench_service.run_app(args.app, config_path=args.config, input_dir=args.input, seed=args.seed,
                                   clock_hz=args.clock, timing=args.timing, golden=args.golden,
                                   per_batch=args.per_batch)
    if args.format == "json":
        return report.to_json() + "\n"
    row = {"label": report.outputs[0]["label"], "config_hash": report.config_hash, **_metric_row(report.metrics)}
    if args.format == "csv":
        return _csv([row], ["app", "label", *METRIC_FIELDS[1:], "config_hash"])
    table = _metrics_table([report.metrics], f"{report.app}: {row['label']}")
    shares = Table(title="Stage shares of counted operations")
    shares.add_column("Stage")
    shares.add_column("Share")
    for stage, share in sorted(report.stage_shares.items(), key=lambda item: -item[1]):
        shares.add_row(stage, f"{share:.3f}")
    return _render(table) + _render(shares)


def cmd_characterize(args) -> str:
    metrics = bench_service.characterize_apps(args.apps or None, jobs=args.jobs, clock_hz=args.clock,
                                              seed=args.seed, per_batch=args.per_batch)
    checks = compare_reference(metrics) if args.reference else []
    if args.format == "json":
        doc = {"metrics": [m.model_dump(mode="json") for m in metrics],
               "reference_checks": [c.model_dump(mode="json") for c in checks]}
        return json.dumps(doc, indent=2) + "\n"
    if args.format == "csv":
        return _csv([_metric_row(m) for m in metrics], METRIC_FIELDS)
    out = _render(_metrics_table(metrics, "Benchmark applications: characterization by metrics"))
    if checks:
        missed = misses(checks)
        table = Table(title=f"Reference comparison: {len(checks) - len(missed)}/{len(checks)} agree")
        for column in ("App", "Metric", "Computed", "Reference", "Agrees", "Note"):
            table.add_column(column)
        for c in checks:
            table.add_row(c.app, c.metric, str(c.computed), str(c.reference), "yes" if c.agrees else "NO", c.note)
        out += _render(table)
    return out


def cmd_compare(args) -> str:
    report = bench_service.compare(_split(args.apps), platforms=_split(args.platforms), table=args.table,
                                   csv_path=args.csv)
    if args.format == "json":
        return report.model_dump_json(indent=2) + "\n"
    if args.format == "csv":
        rows = []
        for c in report.apps:
            for rank, (platform, total) in enumerate(c.ranking, start=1):
                rows.append({"app": c.app, "platform": platform, "rank": rank, "total_mJ": total})
        return _csv(rows, ["app", "platform", "rank", "total_mJ"])
    out = ""
    for c in report.apps:
        table = Table(title=f"{c.app}: winner {c.winner}")
        for column in ("Platform", "Total (mJ)", "Idle", "Acquisition", "Processing"):
            table.add_column(column)
        for platform, total in c.ranking:
            s = c.breakdown[platform]
            table.add_row(platform, f"{total:.3f}", f"{s.idle:.1%}", f"{s.acquisition:.1%}", f"{s.processing:.1%}")
        out += _render(table)
    for claim in report.claims:
        status = "agrees" if claim.agrees else "DISAGREES"
        out += (f"{claim.app}: stated {claim.stated}x ({claim.costlier} vs {claim.cheaper}), "
                f"table gives {claim.computed:.2f}x, {status}\n")
    return out


def cmd_phases(args) -> str:
    timeline = bench_service.phases(args.app, config_path=args.config, clock_hz=args.clock,
                                    per_batch=args.per_batch, processing_cycles=args.cycles, output=args.output)
    if args.format == "json":
        return timeline.model_dump_json(indent=2) + "\n"
    rows = [{"phase": s.phase, "start_s": repr(s.start_s), "duration_s": repr(s.duration_s),
             "cycles": "" if s.cycles is None else s.cycles} for s in timeline.segments]
    return _csv(rows, ["phase", "start_s", "duration_s", "cycles"])


def cmd_project(args) -> str:
    base, projected = bench_service.project(args.app, args.platform, duty_scale=args.duty_scale,
                                            clock_scale=args.clock_scale, clock_hz=args.clock, table=args.table,
                                            config_path=args.config)
    if args.format == "json":
        doc = {"measured": base.model_dump(mode="json"), "projected": projected.model_dump(mode="json")}
        return json.dumps(doc, indent=2) + "\n"
    rows = [{"record": name, **r.model_dump(mode="json")} for name, r in (("measured", base), ("projected", projected))]
    return _csv(rows, ["record", "platform", "app", "mcycles", "idle_mj", "acq_mj", "proc_mj", "total_mj"])


def cmd_train(args) -> str:
    report = bench_service.train(args.config, epochs=args.epochs, seed=args.seed, trace_out=args.trace_out,
                                 model_out=args.model_out)
    return report.model_dump_json(indent=2) + "\n"


COMMANDS: Dict[str, Callable] = {
    "run": cmd_run,
    "characterize": cmd_characterize,
    "compare": cmd_compare,
    "phases": cmd_phases,
    "project": cmd_project,
    "train": cmd_train,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biobench",
                                     description="Biomedical TinyML benchmark suite: run, characterize, compare.")
    parser.add_argument("--log-level", default=None, help="Log level (DEBUG, INFO, WARNING, ...)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats=("json", "csv", "text"), default="text"):
        p.add_argument("--format", default=default, choices=list(formats), help="Report format")
        p.add_argument("-o", "--output", default=None, help="Write the report to a file instead of stdout")

    run = sub.add_parser("run", help="Process one window of an app and characterize it")
    run.add_argument("app", help="App id (HCL, SeizDetSVM, SeizDetCNN, CWM, GCL, CoughDet, ECL, BPfree)")
    run.add_argument("--config", default=None, help="App config JSON (default: configs/<app>.json)")
    source = run.add_mutually_exclusive_group()
    source.add_argument("--input", default=None, help="Fixture directory with <signal>.csv files")
    source.add_argument("--synthetic", action="store_true", help="Use the app's synthetic input (default)")
    run.add_argument("--seed", type=int, default=None, help="Seed for synthetic input")
    run.add_argument("--clock", type=float, default=None, help="Reference clock in Hz")
    run.add_argument("--per-batch", action="store_true", help="Process after every buffer transfer")
    run.add_argument("--timing", action="store_true", help="Add wall time to the report")
    run.add_argument("--golden", action="store_true", help="Record or check golden outputs")
    common(run, default="json")

    char = sub.add_parser("characterize", help="Metric table for one or all apps")
    char.add_argument("apps", nargs="*", help="App ids (default: all)")
    char.add_argument("--jobs", type=int, default=None, help="Apps run in parallel")
    char.add_argument("--seed", type=int, default=None)
    char.add_argument("--clock", type=float, default=None, help="Reference clock in Hz")
    char.add_argument("--per-batch", action="store_true")
    char.add_argument("--reference", action="store_true", help="Compare with the reference metrics table")
    common(char)

    cmp_ = sub.add_parser("compare", help="Platform rankings, ratios and phase breakdowns")
    cmp_.add_argument("--apps", default=None, help="Comma-separated app ids (default: all)")
    cmp_.add_argument("--platforms", default=None, help="Comma-separated platforms (default: all)")
    cmp_.add_argument("--table", default=None, help="Energy table CSV (default: data/platform_energy.csv)")
    cmp_.add_argument("--csv", default=None, help="Also write a plot-ready CSV")
    common(cmp_)

    ph = sub.add_parser("phases", help="Idle/acquisition/processing timeline of one window")
    ph.add_argument("app")
    ph.add_argument("--config", default=None)
    ph.add_argument("--clock", type=float, default=None)
    ph.add_argument("--cycles", type=int, default=None, help="Processing cycles (default: reference cycles)")
    ph.add_argument("--per-batch", action="store_true")
    ph.add_argument("--format", default="csv", choices=["json", "csv"])
    ph.add_argument("-o", "--output", default=None, help="Timeline CSV path")

    proj = sub.add_parser("project", help="What-if energy of an app on one platform")
    proj.add_argument("app")
    proj.add_argument("platform")
    proj.add_argument("--duty-scale", type=float, default=1.0)
    proj.add_argument("--clock-scale", type=float, default=1.0)
    proj.add_argument("--clock", type=float, default=None)
    proj.add_argument("--table", default=None)
    proj.add_argument("--config", default=None)
    common(proj, formats=("json", "csv"), default="csv")

    tr = sub.add_parser("train", help="BP-free training epochs of the seizure CNN")
    tr.add_argument("--config", default=None)
    tr.add_argument("--epochs", type=int, default=1)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--trace-out", default=None, help="Loss trace CSV path")
    tr.add_argument("--model-out", default=None, help="Trained model JSON path")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        configure_logging(args.log_level)

    try:
        text = COMMANDS[args.command](args)
    except BenchError as e:
        logger.error(f"{args.command}: {e}")
        print(f"biobench: error: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command}: {e}")
        print(f"biobench: invalid value: {e}", file=sys.stderr)
        return ConfigError.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        logger.exception(f"{args.command}: numeric failure")
        print(f"biobench: numeric error: {e}", file=sys.stderr)
        return 3

    output = getattr(args, "output", None)
    if output and args.command != "phases":
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")
        logger.info(f"Report written to {output}")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
