"""Teacher training, the two distillation stages and their ablation variants.

All trainers share one minibatch loop (:func:`_fit`): the epoch order is a
permutation drawn from a generator seeded by the run seed, so identical
(config, seed, data) produce bit-identical parameters and records.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .encoder import (
    HEAD_KEYS,
    EncoderConfig,
    ModelParams,
    candidate_logits,
    extract_alignment_reps,
    forward,
    init_params,
    linear_head_scores,
    random_head,
    resolve_layers,
    sum_head_scores,
)
from .losses import (
    SINGLE_STAGE_WEIGHTS,
    LossWeights,
    cross_entropy,
    kl_divergence,
    mse_alignment,
    one_hot,
    single_stage_loss,
    soft_label_loss_from_logits,
)
from .numerics import ContractError, Tensor
from .synthdata import (
    ROLE_CANDIDATE,
    ROLE_DOCUMENT,
    ROLE_QSTART,
    ROLE_QUESTION,
    Example,
    SentinelLayout,
    render_input,
)

VARIANTS = ("two_stage", "single_stage", "lmskdts", "distill_star", "probe_random", "probe_sum", "ce_only")
DEFAULT_ROLES = (ROLE_QUESTION, ROLE_DOCUMENT, ROLE_QSTART)
EVAL_BATCH = 64


class ConfigError(ValueError):
    """An experiment configuration is malformed or names an unknown variant."""


class TrainingError(RuntimeError):
    """Training diverged."""


def derive_seed(seed: int, tag: str) -> int:
    """A 64-bit seed for one named purpose (teacher init, student init, ...)."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


def _from_dict(cls, d: dict, what: str):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown {what} keys: {sorted(extra)}")
    return cls(**d)


# ------------------------------------------------------------------ configs


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW with decoupled weight decay."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid moment coefficients")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return _from_dict(cls, d, "optimizer")


@dataclass(frozen=True)
class TeacherSchedule:
    base_lr: float = 8e-5
    epochs: int = 10
    halve_epoch: int = 3
    quarter_epoch: int = 6

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 1 <= self.halve_epoch < self.quarter_epoch:
            raise ConfigError("need 1 <= halve_epoch < quarter_epoch")
        if self.epochs and self.quarter_epoch > self.epochs:
            raise ConfigError("quarter_epoch must not exceed epochs")

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherSchedule":
        return _from_dict(cls, d, "schedule")


def lr_schedule(schedule: TeacherSchedule, epoch: int) -> float:
    """Piecewise-constant rate: full, then half from ``halve_epoch``, then a quarter."""
    if not 1 <= epoch <= schedule.epochs:
        raise ContractError(f"epoch {epoch} outside 1..{schedule.epochs}")
    if epoch < schedule.halve_epoch:
        return schedule.base_lr
    if epoch < schedule.quarter_epoch:
        return schedule.base_lr / 2
    return schedule.base_lr / 4


@dataclass(frozen=True)
class DistillConfig:
    """One student run. ``None`` roles/layers pick the variant's defaults."""

    variant: str = "two_stage"
    stage1_epochs: int = 4
    stage2_epochs: int = 6
    lr: float = 8e-5
    weights: LossWeights = LossWeights()
    single_stage_weights: LossWeights = SINGLE_STAGE_WEIGHTS
    alignment_roles: tuple[str, ...] | None = None
    alignment_layers: tuple | None = None
    seed: int = 0
    probe_seed: int | None = None
    cache_teacher: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("stage epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")

    @property
    def roles(self) -> tuple[str, ...]:
        if self.alignment_roles is not None:
            return tuple(self.alignment_roles)
        return (ROLE_CANDIDATE,) if self.variant == "lmskdts" else DEFAULT_ROLES

    @property
    def layers(self) -> tuple:
        if self.alignment_layers is not None:
            return tuple(self.alignment_layers)
        return ("mid", "last") if self.variant == "distill_star" else ("last",)

    @property
    def student_seed(self) -> int:
        return derive_seed(self.seed, "student")

    @property
    def head_seed(self) -> int:
        return derive_seed(self.seed, "probe") if self.probe_seed is None else self.probe_seed

    def to_dict(self, resolve: bool = True) -> dict:
        """Plain-data form; ``resolve`` fills in the variant's default roles and layers."""
        d = asdict(self)
        if resolve:
            d["alignment_roles"] = list(self.roles)
            d["alignment_layers"] = list(self.layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        d = dict(d)
        for key in ("weights", "single_stage_weights"):
            if isinstance(d.get(key), dict):
                d[key] = LossWeights(**d[key])
        for key in ("alignment_roles", "alignment_layers"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return _from_dict(cls, d, "distill")


# ------------------------------------------------------------------ records


@dataclass
class RunRecord:
    """Loss curves per phase, per-epoch test accuracy and the final accuracy."""

    name: str
    seed: int
    losses: dict[str, list[float]] = field(default_factory=dict)
    test_accuracy: list[float] = field(default_factory=list)
    final_accuracy: float = float("nan")
    initial_loss: float = float("nan")
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


# --------------------------------------------------------------- data prep


@dataclass
class RenderedSet:
    """A dataset rendered once for one view, padded to a common width.

    A fixed width keeps every example's activations independent of which
    batch it lands in, so cached and recomputed teacher outputs agree bitwise.
    """

    view: str
    ids: np.ndarray
    mask: np.ndarray
    layouts: list[SentinelLayout]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.layouts)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, list[SentinelLayout]]:
        return self.ids[idx], self.mask[idx], [self.layouts[i] for i in idx]


def render_set(examples: Sequence[Example], view: str, max_len: int) -> RenderedSet:
    rows = [render_input(ex, view, max_len) for ex in examples]
    width = max((len(r[0]) for r in rows), default=0)
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=np.int8)
    for i, (t, m, _) in enumerate(rows):
        ids[i, : len(t)] = t
        mask[i, : len(m)] = m
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return RenderedSet(view, ids, mask, [r[2] for r in rows], labels)


@dataclass
class TaskData:
    """Train/test examples plus lazily rendered views."""

    train: list[Example]
    test: list[Example]
    max_len: int = 128
    _cache: dict = field(default_factory=dict, repr=False)

    def rendered(self, split: str, view: str) -> RenderedSet:
        key = (split, view)
        if key not in self._cache:
            examples = self.train if split == "train" else self.test
            self._cache[key] = render_set(examples, view, self.max_len)
        return self._cache[key]


# ---------------------------------------------------------------- optimizer


class AdamW:
    """Adam moments with weight decay applied directly to the weights.

    The update order matches the common reference implementation: decay
    ``p *= 1 - lr*wd`` first, then the bias-corrected Adam step.
    Parameters whose ``grad`` is ``None`` are skipped entirely.
    """

    def __init__(self, params: Sequence[Tensor], config: OptimizerConfig = OptimizerConfig()):
        self.params = list(params)
        self.config = config
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            p.data *= 1.0 - lr * c.weight_decay
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            denom = np.sqrt(v) / math.sqrt(bc2) + c.eps
            p.data -= (lr / bc1) * (m / denom)


# ------------------------------------------------------------- evaluation


def predict_scores(params: ModelParams, rs: RenderedSet, head: str | tuple = "linear") -> np.ndarray:
    """Candidate scores (n, n_candidates) with ``head`` = "linear", "sum" or a (w, b) pair."""
    out = []
    for start in range(0, len(rs), EVAL_BATCH):
        idx = np.arange(start, min(start + EVAL_BATCH, len(rs)))
        trace = forward(params, *rs.batch(idx))
        if head == "linear":
            s = candidate_logits(trace, params)
        elif head == "sum":
            s = sum_head_scores(trace)
        else:
            s = linear_head_scores(trace, *head)
        out.append(s.data)
    return np.concatenate(out) if out else np.zeros((0, params.config.n_candidates))


def accuracy(params: ModelParams, rs: RenderedSet, head: str | tuple = "linear") -> float:
    if not len(rs):
        raise ContractError("cannot score an empty dataset")
    pred = np.argmax(predict_scores(params, rs, head), axis=1)  # first max wins ties
    return float(np.mean(pred == rs.labels))


# ------------------------------------------------------------ teacher cache


class TeacherOutputs:
    """Frozen-teacher answer logits and alignment states for one rendered set.

    With ``cached=True`` everything is computed once up front; otherwise each
    request runs the teacher on just the requested rows.
    """

    def __init__(self, teacher: ModelParams, rs: RenderedSet, cached: bool = True):
        self.teacher = teacher
        self.rs = rs
        self.cached = cached
        self._logits: np.ndarray | None = None
        self._reps: dict = {}

    def _run(self, idx, roles, layers):
        trace = forward(self.teacher, *self.rs.batch(idx))
        logits = candidate_logits(trace, self.teacher).data
        reps = None if roles is None else extract_alignment_reps(trace, roles, layers).data
        return logits, reps

    def _fill(self, roles=None, layers=None):
        chunks_l, chunks_r = [], []
        for start in range(0, len(self.rs), EVAL_BATCH):
            idx = np.arange(start, min(start + EVAL_BATCH, len(self.rs)))
            lg, rp = self._run(idx, roles, layers)
            chunks_l.append(lg)
            chunks_r.append(rp)
        self._logits = np.concatenate(chunks_l)
        if roles is not None:
            self._reps[(tuple(roles), tuple(layers))] = np.concatenate(chunks_r)

    def logits(self, idx) -> np.ndarray:
        if not self.cached:
            return self._run(idx, None, None)[0]
        if self._logits is None:
            self._fill()
        return self._logits[idx]

    def reps(self, idx, roles, layers) -> np.ndarray:
        key = (tuple(roles), tuple(layers))
        if not self.cached:
            return self._run(idx, key[0], key[1])[1]
        if key not in self._reps:
            self._fill(*key)
        return self._reps[key][idx]


def _frozen(teacher: ModelParams) -> ModelParams:
    # a private no-grad view so distillation can never write teacher grads
    return ModelParams(teacher.config, {k: Tensor(t.data) for k, t in teacher.tensors.items()})


# ------------------------------------------------------------------- loop


def _fit(
    trainable: Sequence[Tensor],
    n: int,
    batch_loss: Callable[[np.ndarray], Tensor],
    lrs: Sequence[float],
    opt: OptimizerConfig,
    rng: np.random.Generator,
    record: RunRecord,
    phase: str,
    on_epoch: Callable[[], None] | None = None,
    optimizer: AdamW | None = None,
) -> AdamW:
    optimizer = optimizer or AdamW(trainable, opt)
    curve = record.losses.setdefault(phase, [])
    for epoch, lr in enumerate(lrs, start=1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for step, start in enumerate(range(0, n, opt.batch_size), start=1):
            idx = np.sort(order[start : start + opt.batch_size])
            nx.zero_grad(trainable)
            loss = batch_loss(idx)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"{phase}: loss is {value} at epoch {epoch} step {step}")
            if math.isnan(record.initial_loss):
                record.initial_loss = value
            nx.backward(loss)
            optimizer.step(lr)
            total += value * len(idx)
            count += len(idx)
        curve.append(total / count)
        if on_epoch is not None:
            on_epoch()
    nx.zero_grad(trainable)
    return optimizer


def _ce_batch_loss(params: ModelParams, rs: RenderedSet) -> Callable[[np.ndarray], Tensor]:
    n_cand = params.config.n_candidates

    def loss(idx):
        trace = forward(params, *rs.batch(idx))
        probs = nx.softmax_rows(candidate_logits(trace, params))
        return cross_entropy(one_hot(rs.labels[idx], n_cand), probs)

    return loss


def _evaluator(params: ModelParams, data: TaskData | None, view: str, record: RunRecord, head="linear"):
    if data is None or not data.test:
        return None
    rs = data.rendered("test", view)
    return lambda: record.test_accuracy.append(accuracy(params, rs, head))


def _finish(record: RunRecord, params: ModelParams, data: TaskData | None, view: str, t0: float, head="linear"):
    if data is not None and data.test:
        if record.test_accuracy:
            record.final_accuracy = record.test_accuracy[-1]
        else:
            record.final_accuracy = accuracy(params, data.rendered("test", view), head)
    record.wall_seconds = time.perf_counter() - t0


# ---------------------------------------------------------------- trainers


def train_ce(
    params: ModelParams,
    data: TaskData,
    view: str,
    lrs: Sequence[float],
    opt: OptimizerConfig,
    seed: int,
    name: str = "ce",
    record: RunRecord | None = None,
    shuffle_tag: str | None = None,
) -> tuple[ModelParams, RunRecord]:
    """Cross-entropy training of every parameter on ``view`` inputs, in place.

    The batch order is seeded by ``(seed, shuffle_tag or name)``.
    """
    t0 = time.perf_counter()
    record = record or RunRecord(name=name, seed=seed)
    rs = data.rendered("train", view)
    if not len(rs):
        raise ContractError("training set is empty")
    rng = np.random.default_rng(derive_seed(seed, "shuffle:" + (shuffle_tag or name)))
    _fit(
        params.all(), len(rs), _ce_batch_loss(params, rs), lrs, opt, rng, record, "ce",
        _evaluator(params, data, view, record),
    )
    _finish(record, params, data, view, t0)
    return params, record


def train_teacher(
    data: TaskData,
    config: EncoderConfig,
    schedule: TeacherSchedule = TeacherSchedule(),
    opt: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    view: str = "teacher",
) -> tuple[ModelParams, RunRecord]:
    """Minimise answer cross-entropy on evidence-augmented inputs.

    Returns the parameters after the last epoch whatever their test accuracy.
    ``view="student"`` trains the same recipe without evidence.
    """
    params = init_params(config, derive_seed(seed, "teacher"))
    lrs = [lr_schedule(schedule, e) for e in range(1, schedule.epochs + 1)]
    record = RunRecord(
        name=f"teacher[{view}]",
        seed=seed,
        config={"encoder": asdict(config), "schedule": asdict(schedule), "optimizer": asdict(opt), "view": view},
    )
    return train_ce(params, data, view, lrs, opt, seed, name=f"teacher-{view}", record=record)


def distill_stage1(
    teacher: ModelParams,
    student: ModelParams,
    data: TaskData,
    config: DistillConfig,
    opt: OptimizerConfig = OptimizerConfig(),
    outputs: TeacherOutputs | None = None,
    record: RunRecord | None = None,
) -> tuple[ModelParams, RunRecord]:
    """Align student sentinel states to the teacher's; the head is untouched.

    Only encoder tensors are handed to the optimizer, so the head receives
    neither a gradient step nor weight decay.
    """
    t0 = time.perf_counter()
    record = record or RunRecord(name=f"stage1[{config.variant}]", seed=config.seed, config=config.to_dict())
    roles = config.roles
    layers = tuple(resolve_layers(config.layers, student.config.n_layers))
    t_out = outputs or TeacherOutputs(_frozen(teacher), data.rendered("train", "teacher"), config.cache_teacher)
    rs = data.rendered("train", "student")

    def loss(idx):
        trace = forward(student, *rs.batch(idx))
        s_reps = extract_alignment_reps(trace, roles, layers)
        return mse_alignment(t_out.reps(idx, roles, layers), s_reps)

    rng = np.random.default_rng(derive_seed(config.seed, "shuffle:stage1"))
    lrs = [config.lr] * config.stage1_epochs
    _fit(
        student.encoder(), len(rs), loss, lrs, opt, rng, record, "stage1",
        _evaluator(student, data, "student", record),
    )
    _finish(record, student, data, "student", t0)
    return student, record


def distill_stage2(
    teacher: ModelParams,
    student: ModelParams,
    data: TaskData,
    config: DistillConfig,
    opt: OptimizerConfig = OptimizerConfig(),
    outputs: TeacherOutputs | None = None,
    record: RunRecord | None = None,
) -> tuple[ModelParams, RunRecord]:
    """Match the teacher's answer distribution plus hard-label cross-entropy."""
    t0 = time.perf_counter()
    record = record or RunRecord(name=f"stage2[{config.variant}]", seed=config.seed, config=config.to_dict())
    t_out = outputs or TeacherOutputs(_frozen(teacher), data.rendered("train", "teacher"), config.cache_teacher)
    rs = data.rendered("train", "student")
    w = config.weights

    def loss(idx):
        trace = forward(student, *rs.batch(idx))
        logits = candidate_logits(trace, student)
        if w.alpha == 0.0:
            probs = nx.softmax_rows(logits)
            return nx.scale(cross_entropy(one_hot(rs.labels[idx], logits.shape[1]), probs), w.beta)
        return soft_label_loss_from_logits(t_out.logits(idx), logits, rs.labels[idx], w)

    rng = np.random.default_rng(derive_seed(config.seed, "shuffle:stage2"))
    lrs = [config.lr] * config.stage2_epochs
    _fit(
        student.all(), len(rs), loss, lrs, opt, rng, record, "stage2",
        _evaluator(student, data, "student", record),
    )
    _finish(record, student, data, "student", t0)
    return student, record


def run_single_stage(
    teacher: ModelParams,
    student: ModelParams,
    data: TaskData,
    config: DistillConfig,
    opt: OptimizerConfig = OptimizerConfig(),
    outputs: TeacherOutputs | None = None,
    record: RunRecord | None = None,
) -> tuple[ModelParams, RunRecord]:
    """Jointly minimise ``a*CE + b*KL + g*MSE`` every step for both stages' epochs."""
    t0 = time.perf_counter()
    record = record or RunRecord(name="single_stage", seed=config.seed, config=config.to_dict())
    roles = config.roles
    layers = tuple(resolve_layers(config.layers, student.config.n_layers))
    t_out = outputs or TeacherOutputs(_frozen(teacher), data.rendered("train", "teacher"), config.cache_teacher)
    rs = data.rendered("train", "student")
    w = config.single_stage_weights
    tau = config.weights.temperature

    def loss(idx):
        trace = forward(student, *rs.batch(idx))
        logits = candidate_logits(trace, student)
        p = nx.softmax_rows(logits)
        ce = cross_entropy(one_hot(rs.labels[idx], logits.shape[1]), p)
        t_probs = nx.kernels.softmax_fwd(np.ascontiguousarray(t_out.logits(idx) / tau))
        s_probs = p if tau == 1.0 else nx.softmax_rows(nx.scale(logits, 1.0 / tau))
        kl = kl_divergence(t_probs, s_probs)
        mse = mse_alignment(t_out.reps(idx, roles, layers), extract_alignment_reps(trace, roles, layers))
        return single_stage_loss(ce, kl, mse, w)

    rng = np.random.default_rng(derive_seed(config.seed, "shuffle:single"))
    lrs = [config.lr] * (config.stage1_epochs + config.stage2_epochs)
    _fit(
        student.all(), len(rs), loss, lrs, opt, rng, record, "single_stage",
        _evaluator(student, data, "student", record),
    )
    _finish(record, student, data, "student", t0)
    return student, record


def stage1_key(config: DistillConfig, opt: OptimizerConfig) -> tuple:
    """Everything a Stage-1 result depends on besides the teacher and data."""
    return (config.seed, config.roles, config.layers, config.stage1_epochs, config.lr, opt)


def probe_accuracies(student: ModelParams, data: TaskData, config: DistillConfig) -> dict[str, float]:
    rs = data.rendered("test", "student")
    return {
        "probe_random": accuracy(student, rs, random_head(student.config, config.head_seed)),
        "probe_sum": accuracy(student, rs, "sum"),
    }


def run_variant(
    teacher: ModelParams,
    data: TaskData,
    config: DistillConfig,
    opt: OptimizerConfig = OptimizerConfig(),
    outputs: TeacherOutputs | None = None,
    stage1_memo: dict | None = None,
) -> tuple[ModelParams, RunRecord]:
    """Run one student variant from a fresh student initialisation.

    ``stage1_memo`` lets several variants that share a Stage-1 configuration
    (two_stage and the probes) reuse one Stage-1 result; reuse is exact since
    Stage 1 is deterministic in its key.
    """
    if config.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {config.variant!r}")
    t0 = time.perf_counter()
    teacher = _frozen(teacher)
    cfg = teacher.config
    outputs = outputs or TeacherOutputs(teacher, data.rendered("train", "teacher"), config.cache_teacher)
    record = RunRecord(name=config.variant, seed=config.seed, config=config.to_dict())
    student = init_params(cfg, config.student_seed)

    if config.variant == "ce_only":
        lrs = [config.lr] * (config.stage1_epochs + config.stage2_epochs)
        student, record = train_ce(student, data, "student", lrs, opt, config.seed, "ce_only", record)
        return student, record

    if config.variant == "single_stage":
        student, record = run_single_stage(teacher, student, data, config, opt, outputs, record)
        return student, record

    key = stage1_key(config, opt)
    if stage1_memo is not None and key in stage1_memo:
        snap, losses, accs, initial, head_kept = stage1_memo[key]
        student = ModelParams(cfg, {k: Tensor(v.copy(), True) for k, v in snap.items()})
        record.losses["stage1"] = list(losses)
        record.test_accuracy = list(accs)
        record.initial_loss = initial
    else:
        head0 = {k: student[k].data.copy() for k in HEAD_KEYS}
        distill_stage1(teacher, student, data, config, opt, outputs, record)
        head_kept = student.identical_to(head0, HEAD_KEYS)
        if stage1_memo is not None:
            stage1_memo[key] = (student.snapshot(), list(record.losses["stage1"]),
                                list(record.test_accuracy), record.initial_loss, head_kept)
    record.metrics["stage1_head_unchanged"] = float(head_kept)

    if data.test:
        record.metrics.update({f"stage1_{k}": v for k, v in probe_accuracies(student, data, config).items()})
        record.metrics["stage1_accuracy"] = accuracy(student, data.rendered("test", "student"))

    if config.variant in ("probe_random", "probe_sum"):
        if data.test:
            record.final_accuracy = record.metrics[f"stage1_{config.variant}"]
        record.wall_seconds = time.perf_counter() - t0
        return student, record

    distill_stage2(teacher, student, data, config, opt, outputs, record)
    record.wall_seconds = time.perf_counter() - t0
    return student, record


def with_variant(config: DistillConfig, variant: str) -> DistillConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return replace(config, variant=variant)
