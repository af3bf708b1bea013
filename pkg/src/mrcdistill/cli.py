"""Command-line entry point: ``mrcdistill <command> ...``.

Every command exits 0 on success. Failures print exactly one line,
``error: <kind>: <message>``, to stderr and exit with status 1 (bad input or
config) or 2 (bad command-line usage).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .encoder import CheckpointError, InputError, load_checkpoint, save_checkpoint
from .evalcli import ExperimentConfig, ExperimentMatrix, emit_report, evaluate, experiment_matrix
from .numerics import ContractError
from .synthdata import DatasetParseError, DatasetSpec, RenderError, SpecError, generate_dataset, read_jsonl, write_jsonl
from .training import VARIANTS, ConfigError, TrainingError, run_variant, train_teacher

DEFAULT_OUT = "mrcdistill-out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one line instead of usage + message
        raise UsageError(message)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_gen_data(args) -> None:
    spec = DatasetSpec.from_json(args.spec)
    data = generate_dataset(spec)
    write_jsonl(data, args.out)
    _emit({"out": str(args.out), "n_examples": len(data)})


def cmd_train_teacher(args) -> None:
    cfg = ExperimentConfig.from_json(args.config)
    data, enc = cfg.task_data()
    seed = cfg.seeds[0]
    params, rec = train_teacher(data, enc, cfg.schedule, cfg.optimizer, seed, "teacher")
    out = _out_dir(cfg)
    ckpt = out / f"teacher_seed{seed}.ckpt"
    save_checkpoint(params, ckpt, {"seed": seed, "role": "teacher"})
    (out / f"teacher_seed{seed}.record.json").write_text(json.dumps(rec.to_dict(), indent=1, sort_keys=True) + "\n")
    _emit({"checkpoint": str(ckpt), "final_accuracy": rec.final_accuracy})


def cmd_distill(args) -> None:
    cfg = ExperimentConfig.from_json(args.config)
    if args.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {args.variant!r}; expected one of {', '.join(VARIANTS)}")
    data, enc = cfg.task_data()
    seed = cfg.seeds[0]
    if cfg.teacher_checkpoint:
        teacher, _ = load_checkpoint(cfg.teacher_checkpoint, requires_grad=False)
        if teacher.config != enc:
            raise ConfigError("teacher checkpoint does not match the encoder config")
    else:
        teacher, _ = train_teacher(data, enc, cfg.schedule, cfg.optimizer, seed, "teacher")
    dcfg = replace(cfg.distill, variant=args.variant, seed=seed)
    student, rec = run_variant(teacher, data, dcfg, cfg.optimizer)
    out = _out_dir(cfg)
    ckpt = out / f"student_{args.variant}_seed{seed}.ckpt"
    save_checkpoint(student, ckpt, {"seed": seed, "variant": args.variant})
    (out / f"student_{args.variant}_seed{seed}.record.json").write_text(
        json.dumps(rec.to_dict(), indent=1, sort_keys=True) + "\n"
    )
    _emit({"checkpoint": str(ckpt), "final_accuracy": rec.final_accuracy, "metrics": rec.metrics})


def cmd_eval(args) -> None:
    params, _ = load_checkpoint(args.checkpoint, requires_grad=False)
    data = read_jsonl(args.data)
    _emit(evaluate(params, data, args.view).to_dict())


def cmd_matrix(args) -> None:
    cfg = ExperimentConfig.from_json(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = (lambda msg: print(msg, file=sys.stderr, flush=True)) if args.verbose else None
    matrix = experiment_matrix(cfg, log=log, out_dir=out)
    matrix.save(out / "matrix.json")
    emit_report(matrix, "csv", out / "report.csv")
    emit_report(matrix, "markdown", out / "report.md")
    _emit({"matrix": str(out / "matrix.json"), "means": {r.label: r.mean for r in matrix.rows}})


def cmd_report(args) -> None:
    matrix = ExperimentMatrix.load(args.matrix)
    sys.stdout.write(emit_report(matrix, args.format))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrcdistill", description="Two-stage distillation for multiple-choice reading comprehension.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset as JSONL")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train-teacher", help="train the evidence-reading teacher")
    s.add_argument("--config", required=True)
    s.set_defaults(fn=cmd_train_teacher)

    s = sub.add_parser("distill", help="train one student variant")
    s.add_argument("--config", required=True)
    s.add_argument("--variant", required=True)
    s.set_defaults(fn=cmd_distill)

    s = sub.add_parser("eval", help="accuracy of a checkpoint on a JSONL dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--view", required=True, choices=("teacher", "student"))
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("matrix", help="run the full experiment matrix")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--verbose", action="store_true", help="log per-row progress to stderr")
    s.set_defaults(fn=cmd_matrix)

    s = sub.add_parser("report", help="render a saved matrix")
    s.add_argument("--matrix", required=True)
    s.add_argument("--format", required=True, choices=("csv", "markdown"))
    s.set_defaults(fn=cmd_report)
    return p


_KINDS = (
    (UsageError, "usage", 2),
    (SpecError, "spec", 1),
    (ConfigError, "config", 1),
    (DatasetParseError, "data", 1),
    (RenderError, "render", 1),
    (CheckpointError, "checkpoint", 1),
    (InputError, "input", 1),
    (ContractError, "contract", 1),
    (TrainingError, "training", 1),
    (FileNotFoundError, "io", 1),
    (OSError, "io", 1),
    (ValueError, "value", 1),
)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.fn(args)
    except Exception as exc:
        for cls, kind, code in _KINDS:
            if isinstance(exc, cls):
                break
        else:
            kind, code = "internal", 1
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
