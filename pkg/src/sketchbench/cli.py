"""Single entry point: run the pipeline, build datasets, evaluate, re-report.

Exit codes: 0 success (for ``run``: Accepted), 1 usage/config/data error,
2 pipeline Failed (``run`` only).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .agents import SketchTask, load_sketch
from .config import HarnessConfig, load_config
from .dataset import (
    build_corpus,
    changes_from_query,
    load_split,
    sketch_code_from_query,
)
from .pipeline import (
    ConfigError,
    Outcome,
    RunLogError,
    load_run_log,
    persist_run,
    run_pipeline,
)
from .report import ALL_METRICS, ReportError, build_report, render_table, report_to_json
from .sidecar_client import SidecarClient
from .verify import CompileStatus, compile_code, rasterize, toolchain_versions


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"sketchbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the sketch-to-diagram pipeline on one sketch")
    run.add_argument("--sketch", required=True, type=Path)
    run.add_argument("--instructions", required=True, action="append")
    run.add_argument("--edits", action="append", default=[])
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)

    dataset = sub.add_parser("dataset", help="dataset tooling")
    dataset_sub = dataset.add_subparsers(dest="dataset_command", required=True)
    build = dataset_sub.add_parser("build", help="build the benchmark corpus from .tex sources")
    build.add_argument("--src", required=True, type=Path)
    build.add_argument("--out", required=True, type=Path)
    build.add_argument("--split-seed", type=int, default=None)
    build.add_argument("--config", type=Path, default=None)

    evaluate = sub.add_parser("eval", help="run the pipeline over a dataset split and score it")
    evaluate.add_argument("--dataset", required=True, type=Path)
    evaluate.add_argument("--task", required=True, choices=("s2c", "c2c"))
    evaluate.add_argument("--config", required=True, type=Path)
    evaluate.add_argument("--out", required=True, type=Path)
    evaluate.add_argument("--metrics", default=None, help="comma-separated subset of: " + ",".join(ALL_METRICS))
    evaluate.add_argument("--jobs", type=int, default=None)

    report = sub.add_parser("report", help="recompute a report from a persisted run log")
    report.add_argument("--from", dest="from_log", required=True, type=Path)
    report.add_argument("--out", required=True, type=Path)
    report.add_argument("--metrics", default=None)

    return parser


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    task = SketchTask(
        task_id=args.sketch.stem,
        instructions=tuple(args.instructions),
        sketch_png=load_sketch(args.sketch),
        edit_instructions=tuple(args.edits),
    )
    record = run_pipeline(task, cfg.pipeline_config(args.out / "artifacts"))
    persist_run(record, args.out / "run_log.jsonl")
    code = record.metric_code()
    if code is not None:
        (args.out / "final.tex").write_text(code.source, encoding="utf-8")
    if record.diagram_path is not None:
        print(f"diagram: {record.diagram_path}")
    if record.outcome is Outcome.ACCEPTED:
        print(f"accepted after {len(record.attempts)} attempt(s)")
        return 0
    print(f"failed: {record.reason}", file=sys.stderr)
    return 2


def cmd_dataset_build(args) -> int:
    if args.config is not None:
        builder = load_config(args.config).builder_config(seed=args.split_seed)
    else:
        from .dataset import BuilderConfig

        builder = BuilderConfig(seed=args.split_seed or 0)
    stats = build_corpus(args.src, args.out, builder)
    total = sum(cell["sample_count"] for cell in stats.cells.values())
    print(f"built {total} records from {stats.meta['sources']} sources into {args.out}")
    return 0


def _resolve_split(dataset: Path, task: str) -> Path:
    if dataset.is_dir():
        return dataset / f"test_{task}.jsonl"
    return dataset


def _task_from_record(record: dict, task: str, dataset_root: Path) -> SketchTask:
    if task == "s2c":
        image_path = Path(record["image_path"])
        if not image_path.is_absolute():
            image_path = dataset_root / image_path
        return SketchTask(
            task_id=record["id"],
            instructions=(record["query"],),
            sketch_png=load_sketch(image_path),
        )
    code = sketch_code_from_query(record["query"]) or record["query"]
    changes = changes_from_query(record["query"])
    return SketchTask(
        task_id=record["id"],
        instructions=(record["query"],),
        initial_code=code,
        edit_instructions=(changes,),
    )


def _render_reference(answer: str, cfg: HarnessConfig, ref_dir: Path, sample_id: str) -> str | None:
    """Render the ground-truth answer for image metrics (latex mode only)."""
    if cfg.compiler_kind != "latex":
        return None
    result = compile_code(answer, ref_dir, cfg.compiler)
    if result.status is not CompileStatus.SUCCESS or result.artifact is None:
        return None
    try:
        img = rasterize(result.artifact, cfg.compiler.dpi, cfg.compiler)
    except Exception:
        return None
    out = ref_dir / f"{sample_id}.png"
    img.save(out, format="PNG")
    return str(out)


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    split_path = _resolve_split(args.dataset, args.task)
    if not split_path.exists():
        print(f"dataset split not found: {split_path}", file=sys.stderr)
        return 1
    records = load_split(split_path)
    if not records:
        print(f"dataset split is empty: {split_path}", file=sys.stderr)
        return 1
    dataset_root = split_path.parent

    out_path = args.out
    out_dir = out_path.parent if out_path.parent != Path("") else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_path.with_suffix(".runlog.jsonl")
    if log_path.exists():
        log_path.unlink()

    metrics = args.metrics.split(",") if args.metrics else list(ALL_METRICS)
    metrics = [m.strip() for m in metrics if m.strip()]
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        print(f"unknown metrics: {sorted(unknown)}", file=sys.stderr)
        return 1

    sidecar_versions = None
    if cfg.sidecar_url:
        health = SidecarClient(cfg.sidecar_url).health()
        if health:
            sidecar_versions = health.get("versions")

    header = {
        "v": 1,
        "kind": "header",
        "task": args.task,
        "config_hash": cfg.config_hash,
        "harness_version": __version__,
        "metrics": metrics,
        "toolchain": toolchain_versions(cfg.compiler),
        "sidecar_url": cfg.sidecar_url,
        "sidecar_model_versions": sidecar_versions,
    }
    persist_run(header, log_path)

    pipeline_cfg = cfg.pipeline_config(out_dir / "artifacts")
    jobs = args.jobs or cfg.pipeline_table.get("jobs") or os.cpu_count() or 1
    ref_dir = out_dir / "ref_images"
    ref_dir.mkdir(parents=True, exist_ok=True)

    def run_one(record: dict) -> None:
        task = _task_from_record(record, args.task, dataset_root)
        run_record = run_pipeline(task, pipeline_cfg)
        reference_image = _render_reference(record["answer"], cfg, ref_dir, record["id"])
        persist_run(
            run_record,
            log_path,
            extra={
                "sample": {
                    "id": record["id"],
                    "kind": record["kind"],
                    "answer": record["answer"],
                    "reference_image": reference_image,
                }
            },
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run_one, records))
    else:
        for record in records:
            run_one(record)

    report = build_report(load_run_log(log_path), metrics=metrics, sidecar_url=cfg.sidecar_url)
    out_path.write_text(report_to_json(report), encoding="utf-8")
    table = render_table(report)
    out_path.with_suffix(".txt").write_text(table, encoding="utf-8")
    print(table, end="")
    for warning in report["meta"]["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    docs = load_run_log(args.from_log)
    metrics = args.metrics.split(",") if args.metrics else None
    report = build_report(docs, metrics=metrics)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(report_to_json(report), encoding="utf-8")
    print(render_table(report), end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1

    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "dataset":
            return cmd_dataset_build(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "report":
            return cmd_report(args)
    except (ConfigError, ReportError, RunLogError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
