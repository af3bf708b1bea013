"""Miniature pre-norm transformer encoder shared by teacher and student.

Block: ``x + Attn(LN(x))`` then ``h + FFN(LN(h))`` with exact GELU, learned
absolute positions and no final norm. The answer head scores each ``<1>``
sentinel with one affine map; the probes in :func:`sum_head_scores` and
:func:`random_head_scores` replace that head at evaluation time.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .numerics import ContractError, Tensor
from .synthdata import (
    ALL_ROLES,
    ROLE_CANDIDATE,
    ROLE_EVIDENCE,
    SentinelLayout,
)

HEAD_KEYS = ("head.w", "head.b")
CHECKPOINT_MAGIC = b"MRCDISTILL-CKPT 1\n"


class InputError(ValueError):
    """Token ids outside the vocabulary."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 2
    d_ff: int = 64
    max_len: int = 128
    n_candidates: int = 3
    init_std: float = 0.02
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len", "n_candidates"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.n_layers < 2:
            raise ValueError("n_layers must be >= 2 so a mid layer differs from the last")
        if self.init_std <= 0 or self.ln_eps <= 0:
            raise ValueError("init_std and ln_eps must be positive")

    @property
    def mid_layer(self) -> int:
        return math.ceil(self.n_layers / 2)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def param_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = [("tok_emb", (cfg.vocab_size, d)), ("pos_emb", (cfg.max_len, d))]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes += [
            (p + "ln1.gamma", (d,)),
            (p + "ln1.beta", (d,)),
            (p + "attn.w_qkv", (d, 3 * d)),
            (p + "attn.b_qkv", (3 * d,)),
            (p + "attn.w_o", (d, d)),
            (p + "attn.b_o", (d,)),
            (p + "ln2.gamma", (d,)),
            (p + "ln2.beta", (d,)),
            (p + "ff.w1", (d, f)),
            (p + "ff.b1", (f,)),
            (p + "ff.w2", (f, d)),
            (p + "ff.b2", (d,)),
        ]
    shapes += [("head.w", (d,)), ("head.b", (1,))]
    return shapes


class ModelParams:
    """Named parameter tensors for one encoder + answer head."""

    def __init__(self, config: EncoderConfig, tensors: dict[str, Tensor]):
        expected = param_shapes(config)
        if [k for k, _ in expected] != list(tensors):
            raise ContractError("parameter names do not match the config")
        for name, shape in expected:
            if tensors[name].shape != shape:
                raise ContractError(f"{name}: shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def all(self) -> list[Tensor]:
        return list(self.tensors.values())

    def head(self) -> list[Tensor]:
        return [self.tensors[k] for k in HEAD_KEYS]

    def encoder(self) -> list[Tensor]:
        return [t for k, t in self.tensors.items() if k not in HEAD_KEYS]

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for t in self.tensors.values():
            t.requires_grad = flag
            if not flag:
                t.grad = None
        return self

    def copy(self, requires_grad: bool | None = None) -> "ModelParams":
        return ModelParams(
            self.config,
            {
                k: Tensor(t.data.copy(), t.requires_grad if requires_grad is None else requires_grad)
                for k, t in self.tensors.items()
            },
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def digest(self) -> str:
        """SHA-256 over every tensor's name, shape and bytes, in order."""
        h = hashlib.sha256()
        for k, t in self.tensors.items():
            h.update(f"{k}{t.data.shape}".encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def identical_to(self, other: "ModelParams | dict[str, np.ndarray]", names: Iterable[str] | None = None) -> bool:
        """Bitwise equality of the named tensors (all by default)."""
        theirs = other.snapshot() if isinstance(other, ModelParams) else other
        keys = list(self.tensors) if names is None else list(names)
        return all(
            self.tensors[k].data.shape == theirs[k].shape
            and self.tensors[k].data.tobytes() == theirs[k].tobytes()
            for k in keys
        )


def init_params(config: EncoderConfig, seed: int) -> ModelParams:
    """Normal(0, init_std) weights, unit layer-norm gains, zero biases."""
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    tensors = {}
    for name, shape in param_shapes(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            arr = np.ones(shape)
        elif leaf == "beta" or leaf.startswith("b"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, config.init_std, size=shape)
        tensors[name] = Tensor(arr, requires_grad=True)
    return ModelParams(config, tensors)


# ------------------------------------------------------------------ forward


@dataclass
class ForwardTrace:
    """Hidden states ``hidden[layer]`` of shape (batch, length, d_model).

    Layer 0 is the embedding output; layer ``n_layers`` is the last block.
    """

    hidden: list[Tensor]
    layouts: list[SentinelLayout]
    mask: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.hidden) - 1

    @property
    def batch_size(self) -> int:
        return self.hidden[0].shape[0]

    def state(self, layer: int, position: int, row: int = 0) -> np.ndarray:
        return self.hidden[layer].data[row, position]

    def positions(self, role: str) -> np.ndarray:
        rows = [lay.positions(role) for lay in self.layouts]
        if len({len(r) for r in rows}) > 1:
            raise ContractError(f"rows disagree on the number of {role} sentinels")
        return np.asarray(rows, dtype=np.int64).reshape(len(rows), -1)


def _as_batch(token_ids, mask, layouts):
    ids = np.asarray(token_ids)
    m = np.asarray(mask)
    if ids.ndim == 1:
        ids, m = ids[None, :], m[None, :]
    if isinstance(layouts, SentinelLayout):
        layouts = [layouts]
    return ids, m, list(layouts)


def _check_inputs(config: EncoderConfig, ids, mask, layouts) -> None:
    if ids.shape != mask.shape:
        raise ContractError(f"token_ids {ids.shape} and mask {mask.shape} differ")
    if ids.shape[1] > config.max_len:
        raise ContractError(f"sequence length {ids.shape[1]} exceeds max_len {config.max_len}")
    if len(layouts) != ids.shape[0]:
        raise ContractError(f"{len(layouts)} layouts for a batch of {ids.shape[0]}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        bad = ids[(ids < 0) | (ids >= config.vocab_size)][0]
        raise InputError(f"token id {int(bad)} outside vocabulary of size {config.vocab_size}")
    for row, lay in enumerate(layouts):
        if len(lay.candidate_marks) != config.n_candidates:
            raise ContractError(
                f"layout has {len(lay.candidate_marks)} candidate marks, expected {config.n_candidates}"
            )
        marks = list(lay.candidate_marks) + [p for p, _ in lay.segment_marks] + [lay.question_start]
        real = int(mask[row].sum())
        if max(marks) >= real or min(marks) < 0:
            raise ContractError(f"layout positions {marks} fall outside the {real} real tokens")


def _block(x: Tensor, params: ModelParams, i: int, mask_add: np.ndarray, cfg: EncoderConfig) -> Tensor:
    p = f"layers.{i}."
    h = nx.layer_norm(x, params[p + "ln1.gamma"], params[p + "ln1.beta"], cfg.ln_eps)
    qkv = nx.linear(h, params[p + "attn.w_qkv"], params[p + "attn.b_qkv"])
    ctx = nx.attention(qkv, cfg.n_heads, mask_add)
    x = nx.add(x, nx.linear(ctx, params[p + "attn.w_o"], params[p + "attn.b_o"]))
    h = nx.layer_norm(x, params[p + "ln2.gamma"], params[p + "ln2.beta"], cfg.ln_eps)
    h = nx.gelu(nx.linear(h, params[p + "ff.w1"], params[p + "ff.b1"]))
    return nx.add(x, nx.linear(h, params[p + "ff.w2"], params[p + "ff.b2"]))


def forward(params: ModelParams, token_ids, mask, layout) -> ForwardTrace:
    """Run the encoder on one sequence or a (batch, length) array of them.

    ``layout`` is a :class:`SentinelLayout` or one per batch row. Padding
    (``mask == 0``) keys get zero attention weight from every query.
    """
    cfg = params.config
    ids, m, layouts = _as_batch(token_ids, mask, layout)
    _check_inputs(cfg, ids, m, layouts)
    L = ids.shape[1]
    mask_add = np.where(m.astype(bool), 0.0, nx.MASK_FILL)[:, None, None, :]
    x = nx.add(nx.embedding(params["tok_emb"], ids), nx.index(params["pos_emb"], slice(0, L)))
    hidden = [x]
    for i in range(cfg.n_layers):
        x = _block(x, params, i, mask_add, cfg)
        hidden.append(x)
    return ForwardTrace(hidden, layouts, m)


# -------------------------------------------------------------------- heads


def _candidate_reps(trace: ForwardTrace) -> Tensor:
    return nx.gather_rows(trace.hidden[-1], trace.positions(ROLE_CANDIDATE))


def linear_head_scores(trace: ForwardTrace, w: Tensor, b: Tensor) -> Tensor:
    """``w . h_j + b`` over the last-layer ``<1>`` states; shape (batch, n_candidates)."""
    return nx.add(nx.dot_last(_candidate_reps(trace), w), b)


def candidate_logits(trace: ForwardTrace, params: ModelParams) -> Tensor:
    return linear_head_scores(trace, params["head.w"], params["head.b"])


def sum_head_scores(trace: ForwardTrace) -> Tensor:
    """Sum of the components of each last-layer ``<1>`` state."""
    return nx.sum_last(_candidate_reps(trace))


def random_head(config: EncoderConfig, seed: int) -> tuple[Tensor, Tensor]:
    """A freshly initialised, never trained answer head."""
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    return Tensor(rng.normal(0.0, config.init_std, size=config.d_model)), Tensor(np.zeros(1))


# ---------------------------------------------------------------- alignment


def resolve_layers(layers: Iterable, n_layers: int) -> list[int]:
    """Map ``"mid"``/``"last"`` (or ints) to sorted distinct layer indices."""
    out = set()
    for layer in layers:
        if layer == "last":
            out.add(n_layers)
        elif layer == "mid":
            out.add(math.ceil(n_layers / 2))
        else:
            idx = int(layer)
            if not 0 <= idx <= n_layers:
                raise ContractError(f"layer {idx} outside 0..{n_layers}")
            out.add(idx)
    return sorted(out)


def alignment_positions(layouts: Sequence[SentinelLayout], roles: Iterable[str]) -> np.ndarray:
    """Positions (batch, n) of the requested sentinel roles, ascending per row."""
    roles = set(roles)
    unknown = roles - set(ALL_ROLES)
    if unknown:
        raise ContractError(f"unknown sentinel roles {sorted(unknown)}")
    rows = []
    for lay in layouts:
        if ROLE_EVIDENCE in roles and not lay.has_role(ROLE_EVIDENCE):
            raise ContractError("evidence-segment role requested from a view without evidence")
        rows.append(sorted(p for r in roles for p in lay.positions(r)))
    if len({len(r) for r in rows}) > 1:
        raise ContractError("batch rows disagree on the number of alignment positions")
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), -1)


def extract_alignment_reps(trace: ForwardTrace, roles: Iterable[str], layers: Iterable) -> Tensor:
    """Sentinel states ordered by (layer, position); shape (batch, n_vectors, d_model).

    The evidence ``<2>`` is only reachable by asking for its role explicitly,
    so teacher and student extractions with shared roles line up one to one.
    """
    pos = alignment_positions(trace.layouts, roles)
    idx = resolve_layers(layers, trace.n_layers)
    parts = [nx.gather_rows(trace.hidden[l], pos) for l in idx]
    if len(parts) == 1:
        return parts[0]
    B, n, d = parts[0].shape
    stacked = nx.stack(parts, axis=1)  # (B, n_layers_sel, n, d)
    return nx.reshape(stacked, (B, len(parts) * n, d))


# --------------------------------------------------------------- checkpoint


def save_checkpoint(params: ModelParams, path: str | Path, meta: dict | None = None) -> None:
    """Write config + tensors: magic line, JSON header line, raw little-endian float64."""
    header = {
        "config": asdict(params.config),
        "meta": meta or {},
        "tensors": [[k, list(t.shape)] for k, t in params.tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for t in params.tensors.values():
            fh.write(t.data.astype("<f8", copy=False).tobytes())


def load_checkpoint(path: str | Path, requires_grad: bool = True) -> tuple[ModelParams, dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    rest = blob[len(CHECKPOINT_MAGIC) :]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    body = memoryview(rest)[nl + 1 :]
    config = EncoderConfig.from_dict(header["config"])
    tensors, off = {}, 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) * 8
        if off + n > len(body):
            raise CheckpointError(f"{path}: truncated at tensor {name}")
        arr = np.frombuffer(body[off : off + n], dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = Tensor(arr.copy(), requires_grad=requires_grad)
        off += n
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes")
    return ModelParams(config, tensors), header["meta"]
