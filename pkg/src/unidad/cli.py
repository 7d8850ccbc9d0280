"""Command-line interface for the ``unidad`` subcommands.

Each training command writes one self-contained run directory::

    manifest.json   resolved config with its hash, plus timings
    config.txt      the resolved config in ``key = value`` form
    metrics.csv     the training log
    checkpoint.udad final models
    samples.svg     scatter of final generations over the few-shot set
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, parse_config
from .datasets import make_benchmark
from .diffusion import build_schedule
from .evaluation import REPORT_COLUMNS, MetricsReport
from .svg import emit_scatter_svg
from .training import (PIPELINES, EvalContext, MissingCheckpointError, PipelineResult,
                       get_denoiser, get_student, models_checkpoint, pretrain_source,
                       run_pipeline, write_metrics_csv)

DEFAULT_ROOT = "runs"
FINAL_SAMPLES = 1000
SWEEP_AXES = {
    "a": ("a", [0.0, 0.25, 0.5, 0.75, 1.0]),
    "nfe": ("nfe", [1, 2, 3, 4]),
    "k": ("k_shot", [1, 5, 10]),
    "gan_family": ("gan_family", ["hinge", "bce", "lsgan", "wgan"]),
    "heads": ("multi_head", [True, False]),
}
LAYOUT = {"manifest": "manifest.json", "config": "config.txt", "metrics": "metrics.csv",
          "checkpoint": "checkpoint.udad", "plot": "samples.svg"}


class CliError(Exception):
    pass


def _out_root() -> Path:
    return Path(os.environ.get("UDAD_OUT_ROOT", DEFAULT_ROOT))


def _resolve_config(args) -> TrainConfig:
    changes = {}
    if getattr(args, "benchmark", None):
        changes["benchmark"] = args.benchmark
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return parse_config(args.config, **changes) if args.config else TrainConfig(**changes)


def _run_dir(args, name: str, config: TrainConfig) -> Path:
    if args.out:
        return Path(args.out)
    return _out_root() / f"{name}-{config.benchmark}-s{config.seed}-{config.content_hash()[:8]}"


def _final_report(result: PipelineResult, config: TrainConfig, bench):
    schedule = build_schedule(config.T)
    ctx = EvalContext.build(bench, config.k_shot, FINAL_SAMPLES, config.seed)
    samples = result.sample(ctx, schedule)
    return ctx, samples, ctx.report(samples)


def _write_run(run_dir: Path, command: str, config: TrainConfig, log: list[dict], models: dict,
               samples: np.ndarray, ctx: EvalContext, report: MetricsReport, started: float,
               extra: dict | None = None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / LAYOUT["config"]).write_text(config.to_text())
    write_metrics_csv(log, run_dir / LAYOUT["metrics"])
    meta = {"command": command, "config_hash": config.content_hash()}
    save_checkpoint(models_checkpoint(models, meta), run_dir / LAYOUT["checkpoint"])
    emit_scatter_svg(samples, {"exemplars": ctx.exemplars, "centers": ctx.source_centers},
                     run_dir / LAYOUT["plot"], title=f"{command} {config.benchmark} seed={config.seed}")
    manifest = {
        "command": command,
        "version": __version__,
        "config": {k: v for k, v in vars(config).items()},
        "config_hash": config.content_hash(),
        "layout": LAYOUT,
        "final": report.as_dict(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "seconds": round(time.time() - started, 3),
    }
    manifest.update(extra or {})
    (run_dir / LAYOUT["manifest"]).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_source(path, config: TrainConfig, bench):
    if path is None:
        return pretrain_source(config, bench)
    ckpt = load_checkpoint(path)
    if "source" not in ckpt.meta.get("models", {}):
        raise CliError(f"{path}: checkpoint has no source teacher")
    return get_denoiser(ckpt, "source")


def cmd_pretrain(args) -> int:
    started = time.time()
    config = _resolve_config(args)
    bench = make_benchmark(config.benchmark)
    model = pretrain_source(config, bench)
    result = PipelineResult("pretrain-source", [], teacher=model)
    ctx, samples, report = _final_report(result, config, bench)
    log = [{"step": config.pretrain_iterations, **report.as_dict()}]
    run_dir = _run_dir(args, "pretrain", config)
    _write_run(run_dir, "pretrain-source", config, log, {"source": model}, samples, ctx, report, started)
    print(",".join(report.row()))
    print(run_dir)
    return 0


def _train_one(config: TrainConfig, pipeline: str, run_dir: Path, source_path,
               student_path=None, target_path=None) -> MetricsReport:
    started = time.time()
    bench = make_benchmark(config.benchmark)
    source = _load_source(source_path, config, bench)
    student = get_student(load_checkpoint(student_path)) if student_path else None
    target = get_denoiser(load_checkpoint(target_path), "target") if target_path else None
    result = run_pipeline(pipeline, config, bench, source, student_ckpt=student, target_ckpt=target)
    ctx, samples, report = _final_report(result, config, bench)
    models = {"source": source}
    if result.student is not None:
        models["student"] = result.student
    if result.teacher is not None:
        models["target"] = result.teacher
    elif result.state is not None and result.state.target is not None:
        models["target"] = result.state.target
    _write_run(run_dir, pipeline, config, result.log, models, samples, ctx, report, started,
               {"pipeline": pipeline, "source_checkpoint": str(source_path) if source_path else None})
    return report


def cmd_run(args) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, args.pipeline, config)
    report = _train_one(config, args.pipeline, run_dir, args.checkpoint,
                        args.student_checkpoint, args.target_checkpoint)
    print(",".join(report.row()))
    print(run_dir)
    return 0


def cmd_sweep(args) -> int:
    key, values = SWEEP_AXES[args.axis]
    base = _resolve_config(args)
    root = Path(args.out) if args.out else _out_root() / f"sweep-{args.axis}-{base.benchmark}-s{base.seed}"
    for v in values:
        config = base.replace(**{key: v})
        label = str(v).lower() if isinstance(v, bool) else str(v)
        run_dir = root / f"{args.axis}={label}"
        report = _train_one(config, args.pipeline, run_dir, args.checkpoint)
        print(f"{args.axis}={label}," + ",".join(report.row()))
    return 0


def _checkpoint_samples(path, config: TrainConfig, bench):
    ckpt = load_checkpoint(path)
    models = ckpt.meta.get("models", {})
    result = None
    if "student" in models:
        result = PipelineResult("eval", [], student=get_student(ckpt))
    else:
        for name in ("target", "source"):
            if name in models:
                result = PipelineResult("eval", [], teacher=get_denoiser(ckpt, name))
                break
    if result is None:
        raise CliError(f"{path}: checkpoint holds no student or teacher")
    return _final_report(result, config, bench)


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    bench = make_benchmark(config.benchmark)
    _, _, report = _checkpoint_samples(args.checkpoint, config, bench)
    text = ",".join(REPORT_COLUMNS) + "\n" + ",".join(report.row()) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_plot(args) -> int:
    config = _resolve_config(args)
    bench = make_benchmark(config.benchmark)
    ctx, samples, _ = _checkpoint_samples(args.checkpoint, config, bench)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".svg")
    emit_scatter_svg(samples, {"exemplars": ctx.exemplars, "centers": ctx.source_centers}, out)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unidad", description="Joint distillation and few-shot adaptation on 2-D toys.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help: str):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--benchmark", choices=("close", "distant"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("pretrain-source", help="train the source teacher")
    common(sp, "run directory (default: under $UDAD_OUT_ROOT)")
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("run", help="train one pipeline")
    common(sp, "run directory (default: under $UDAD_OUT_ROOT)")
    sp.add_argument("--pipeline", choices=PIPELINES, default="unidad")
    sp.add_argument("--checkpoint", help="source-teacher checkpoint (default: pretrain in-process)")
    sp.add_argument("--student-checkpoint", help="pre-distilled student for student_init")
    sp.add_argument("--target-checkpoint", help="pre-adapted target teacher for target_mode")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="one run per value of an ablation axis")
    common(sp, "parent directory of the per-value runs")
    sp.add_argument("--axis", choices=tuple(SWEEP_AXES), required=True)
    sp.add_argument("--pipeline", choices=PIPELINES, default="unidad")
    sp.add_argument("--checkpoint", help="source-teacher checkpoint shared by all runs")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("eval", help="metrics of a checkpoint's student (or teacher)")
    common(sp, "also write the CSV report here")
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("plot", help="SVG scatter of a checkpoint's generations")
    common(sp, "SVG path (default: next to the checkpoint)")
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(fn=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (CliError, ConfigError, CheckpointError, MissingCheckpointError, FileNotFoundError,
            ValueError) as err:
        print(f"unidad {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
