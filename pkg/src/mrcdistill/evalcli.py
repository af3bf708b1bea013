"""Accuracy evaluation, the experiment matrix and report emission."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, ModelParams, save_checkpoint
from .synthdata import DatasetSpec, Example, generate_dataset, read_jsonl
from .training import (
    ConfigError,
    DistillConfig,
    OptimizerConfig,
    RenderedSet,
    RunRecord,
    TaskData,
    TeacherOutputs,
    TeacherSchedule,
    predict_scores,
    render_set,
    run_variant,
    train_teacher,
)

# (row label, how the row is produced)
ROWS = (
    ("teacher-with-evidence", "teacher"),
    ("teacher-without-evidence", "teacher-student-view"),
    ("student-ce-only", "ce_only"),
    ("lmskdts", "lmskdts"),
    ("single_stage", "single_stage"),
    ("two_stage", "two_stage"),
    ("distill_star", "distill_star"),
    ("probe_random", "probe_random"),
    ("probe_sum", "probe_sum"),
)
ROW_LABELS = tuple(label for label, _ in ROWS)
CSV_HEADER = ("row_label", "seed", "accuracy", "mean")


# --------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    n_examples: int
    confusion: tuple[tuple[int, ...], ...]  # confusion[gold][predicted]
    view: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = [list(r) for r in self.confusion]
        return d


def evaluate(params: ModelParams, dataset, view: str, max_len: int | None = None) -> EvalResult:
    """Argmax accuracy of the answer head; ties go to the lowest candidate index.

    ``dataset`` is a list of examples or an already rendered set.
    """
    if isinstance(dataset, RenderedSet):
        rs = dataset
        if rs.view != view:
            raise ConfigError(f"rendered set is for the {rs.view} view, not {view}")
    else:
        if not dataset:
            raise ConfigError("cannot evaluate an empty dataset")
        rs = render_set(dataset, view, max_len or params.config.max_len)
    if not len(rs):
        raise ConfigError("cannot evaluate an empty dataset")
    pred = np.argmax(predict_scores(params, rs), axis=1)
    k = params.config.n_candidates
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (rs.labels, pred), 1)
    n = len(rs)
    return EvalResult(
        accuracy=float(np.trace(conf)) / n,
        n_examples=n,
        confusion=tuple(tuple(int(c) for c in r) for r in conf),
        view=view,
    )


# ------------------------------------------------------------------ configs


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; mirrors the JSON config file.

    ``data`` holds either ``{"spec": {...}, "n_train": int, "n_test": int}``
    (train is examples ``[0, n_train)``, test the next ``n_test``) or
    ``{"train_path": ..., "test_path": ...}`` pointing at JSONL files.
    """

    data: dict = field(default_factory=lambda: {"spec": {}, "n_train": 5000, "n_test": 1000})
    encoder: dict = field(default_factory=dict)
    optimizer: OptimizerConfig = OptimizerConfig()
    schedule: TeacherSchedule = TeacherSchedule()
    distill: DistillConfig = DistillConfig()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str | None = None
    teacher_checkpoint: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"data", "encoder", "optimizer", "schedule", "distill", "seeds", "output_dir", "teacher_checkpoint"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown experiment keys: {sorted(extra)}")
        seeds = tuple(int(s) for s in d.get("seeds", (0, 1, 2, 3, 4)))
        if not seeds:
            raise ConfigError("seed list is empty")
        return cls(
            data=dict(d.get("data", {"spec": {}, "n_train": 5000, "n_test": 1000})),
            encoder=dict(d.get("encoder", {})),
            optimizer=OptimizerConfig.from_dict(d.get("optimizer", {})),
            schedule=TeacherSchedule.from_dict(d.get("schedule", {})),
            distill=DistillConfig.from_dict(d.get("distill", {})),
            seeds=seeds,
            output_dir=d.get("output_dir"),
            teacher_checkpoint=d.get("teacher_checkpoint"),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "encoder": self.encoder,
            "optimizer": asdict(self.optimizer),
            "schedule": asdict(self.schedule),
            "distill": self.distill.to_dict(resolve=False),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "teacher_checkpoint": self.teacher_checkpoint,
        }

    def load_examples(self) -> tuple[list[Example], list[Example], int]:
        """(train, test, vocab_size)."""
        d = self.data
        if "train_path" in d:
            train = read_jsonl(d["train_path"])
            test = read_jsonl(d["test_path"]) if d.get("test_path") else []
            spec = DatasetSpec.from_dict(d.get("spec", {}))
            return train, test, spec.vocab.size
        extra = set(d) - {"spec", "n_train", "n_test"}
        if extra:
            raise ConfigError(f"unknown data keys: {sorted(extra)}")
        n_train, n_test = int(d.get("n_train", 5000)), int(d.get("n_test", 1000))
        spec = DatasetSpec.from_dict({**d.get("spec", {}), "n_examples": n_train + n_test})
        examples = generate_dataset(spec)
        return examples[:n_train], examples[n_train:], spec.vocab.size

    def task_data(self) -> tuple[TaskData, EncoderConfig]:
        train, test, vocab = self.load_examples()
        enc = EncoderConfig.from_dict({"vocab_size": vocab, **self.encoder})
        return TaskData(train, test, enc.max_len), enc


# ------------------------------------------------------------------- matrix


@dataclass
class MatrixRow:
    label: str
    variant: str
    seeds: list[int]
    accuracies: list[float]
    config: dict = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    metrics: list[dict] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean"] = self.mean
        return d


@dataclass
class ExperimentMatrix:
    rows: list[MatrixRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    records: dict[str, list[dict]] = field(default_factory=dict)

    def row(self, label: str) -> MatrixRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": [r.to_dict() for r in self.rows], "records": self.records}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentMatrix":
        rows = []
        for r in d.get("rows", []):
            r = dict(r)
            r.pop("mean", None)
            rows.append(MatrixRow(**r))
        return cls(rows=rows, config=d.get("config", {}), records=d.get("records", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentMatrix":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError, KeyError, AttributeError) as exc:
            raise ConfigError(f"{path}: not a matrix file ({exc})") from None


def _row_config(kind: str, cfg: ExperimentConfig) -> dict:
    if kind.startswith("teacher"):
        view = "teacher" if kind == "teacher" else "student"
        return {"view": view, "schedule": asdict(cfg.schedule), "optimizer": asdict(cfg.optimizer)}
    return {"distill": replace(cfg.distill, variant=kind).to_dict(), "optimizer": asdict(cfg.optimizer)}


def experiment_matrix(cfg: ExperimentConfig, log=None, out_dir: str | Path | None = None) -> ExperimentMatrix:
    """Run all nine rows for every seed.

    A failing row records its error for that seed (accuracy NaN) and the
    matrix is still assembled. With ``out_dir`` each seed's teacher is saved.
    """
    data, enc = cfg.task_data()
    rows = {label: MatrixRow(label, kind, [], [], _row_config(kind, cfg)) for label, kind in ROWS}
    records: dict[str, list[dict]] = {label: [] for label in ROW_LABELS}

    def put(label: str, seed: int, fn):
        row = rows[label]
        row.seeds.append(seed)
        t0 = time.perf_counter()
        try:
            rec = fn()
        except Exception as exc:  # a broken row must not sink the matrix
            row.accuracies.append(float("nan"))
            row.errors[str(seed)] = f"{type(exc).__name__}: {exc}"
            row.metrics.append({})
            rec = None
        else:
            row.accuracies.append(rec.final_accuracy)
            row.metrics.append(dict(rec.metrics))
            records[label].append(rec.to_dict())
        if log:
            acc = row.accuracies[-1]
            log(f"seed {seed} {label}: accuracy {acc:.4f} ({time.perf_counter() - t0:.1f}s)")
        return rec

    for seed in cfg.seeds:
        teacher_box: dict = {}

        def teach():
            params, rec = train_teacher(data, enc, cfg.schedule, cfg.optimizer, seed, "teacher")
            teacher_box["params"] = params
            rec.metrics["param_digest"] = params.digest()
            if out_dir is not None:
                save_checkpoint(params, Path(out_dir) / f"teacher_seed{seed}.ckpt", {"seed": seed})
            return rec

        put("teacher-with-evidence", seed, teach)
        put(
            "teacher-without-evidence",
            seed,
            lambda: train_teacher(data, enc, cfg.schedule, cfg.optimizer, seed, "student")[1],
        )
        teacher = teacher_box.get("params")
        outputs = None
        if teacher is not None:
            outputs = TeacherOutputs(teacher, data.rendered("train", "teacher"), cfg.distill.cache_teacher)
        memo: dict = {}
        for label, kind in ROWS[2:]:
            dcfg = replace(cfg.distill, variant=kind, seed=seed)

            def job(dcfg=dcfg):
                if teacher is None:
                    raise RuntimeError("teacher training failed for this seed")
                return run_variant(teacher, data, dcfg, cfg.optimizer, outputs, memo)[1]

            put(label, seed, job)

        if teacher is not None:
            # the teacher must come out of every distillation run untouched
            rows["teacher-with-evidence"].metrics[-1]["param_digest_after_distill"] = teacher.digest()

    return ExperimentMatrix([rows[label] for label in ROW_LABELS], cfg.to_dict(), records)


# ------------------------------------------------------------------ reports


def _fmt(x: float) -> str:
    return "nan" if x is None or not math.isfinite(x) else f"{x:.6f}"


def emit_report(matrix: ExperimentMatrix, fmt: str, path: str | Path | None = None) -> str:
    """Render the matrix as CSV (one line per row and seed) or a markdown table.

    Values are formatted with exactly six decimals; the text is returned and,
    with ``path``, also written there.
    """
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in matrix.rows:
            mean = _fmt(row.mean)
            for seed, acc in zip(row.seeds, row.accuracies):
                w.writerow((row.label, seed, _fmt(acc), mean))
        text = buf.getvalue()
    elif fmt == "markdown":
        seeds: list[int] = []
        for row in matrix.rows:
            for s in row.seeds:
                if s not in seeds:
                    seeds.append(s)
        head = ["Model"] + [f"seed {s}" for s in seeds] + ["Mean"]
        lines = ["| " + " | ".join(head) + " |", "|" + "|".join(["---"] + ["---:"] * (len(head) - 1)) + "|"]
        for row in matrix.rows:
            by_seed = dict(zip(row.seeds, row.accuracies))
            cells = [row.label] + [_fmt(by_seed[s]) if s in by_seed else "" for s in seeds] + [_fmt(row.mean)]
            lines.append("| " + " | ".join(cells) + " |")
        text = "\n".join(lines) + "\n"
    else:
        raise ConfigError(f"unknown report format {fmt!r}; expected csv or markdown")
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_csv_report(text: str) -> dict[str, dict]:
    """Inverse of the CSV report: label -> {"seeds", "accuracies", "mean"}."""
    out: dict[str, dict] = {}
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ConfigError("not a matrix CSV report")
    for label, seed, acc, mean in reader:
        entry = out.setdefault(label, {"seeds": [], "accuracies": [], "mean": float(mean)})
        entry["seeds"].append(int(seed))
        entry["accuracies"].append(float(acc))
    return out


def records_of(matrix: ExperimentMatrix, label: str) -> list[RunRecord]:
    return [RunRecord.from_dict(r) for r in matrix.records.get(label, [])]
