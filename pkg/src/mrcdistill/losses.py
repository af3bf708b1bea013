"""Distillation objectives as differentiable scalars.

Teacher-side arguments are always treated as constants: they may be passed
as arrays or tensors, and no gradient is ever propagated into them.

Weight naming follows the two combined objectives:

* soft-label loss: ``alpha * KL(T || S) + beta * CE(y, p)``
* single-stage loss: ``alpha * CE + beta * KL + gamma * MSE``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import ContractError, Tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.temperature)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("loss weights must be finite")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


SINGLE_STAGE_WEIGHTS = LossWeights(alpha=0.25, beta=0.25, gamma=0.5)


def _const(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _batched(t: Tensor) -> Tensor:
    return nx.reshape(t, (1,) + t.shape) if t.ndim == 1 else t


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(y, p: Tensor) -> Tensor:
    """``-sum_i y_i log p_i`` averaged over the batch; ``p`` is clamped at 1e-12."""
    p = _batched(p)
    y = np.atleast_2d(_const(y))
    if y.shape != p.shape:
        raise ContractError(f"labels {y.shape} and probabilities {p.shape} differ")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ContractError("y must be one-hot")
    logp = nx.log(p, floor=PROB_FLOOR)
    return nx.scale(nx.sum_all(nx.mul(Tensor(y), logp)), -1.0 / p.shape[0])


def kl_divergence(t, s: Tensor) -> Tensor:
    """``sum_i T_i (log T_i - log S_i)`` averaged over the batch, with ``0 log 0 = 0``."""
    s = _batched(s)
    t = np.atleast_2d(_const(t))
    if t.shape != s.shape:
        raise ContractError(f"distributions {t.shape} and {s.shape} differ")
    pos = t > 0
    entropy_term = float(np.where(pos, t * np.log(np.where(pos, t, 1.0)), 0.0).sum())
    cross = nx.sum_all(nx.mul(Tensor(t), nx.log(s, floor=PROB_FLOOR)))
    n = s.shape[0]
    return nx.add(nx.scale(cross, -1.0 / n), Tensor(np.array(entropy_term / n)))


def mse_alignment(t, s) -> Tensor:
    """Mean over every scalar element of ``(T - S)^2``.

    ``t`` and ``s`` are equal-shaped arrays/tensors or equal-length lists of
    vectors; only ``s`` carries gradient.
    """
    if isinstance(s, (list, tuple)):
        if not isinstance(t, (list, tuple)) or len(t) != len(s):
            raise ContractError("teacher and student lists differ in length")
        if not s:
            raise ContractError("empty alignment lists")
        s = nx.stack([x if isinstance(x, Tensor) else Tensor(x) for x in s])
        t = np.stack([_const(x) for x in t])
    elif not isinstance(s, Tensor):
        s = Tensor(s)
    t = _const(t)
    if t.shape != s.shape:
        raise ContractError(f"teacher reps {t.shape} and student reps {s.shape} differ")
    diff = nx.sub(s, Tensor(t))
    return nx.mean_all(nx.mul(diff, diff))


def soft_label_loss(t_probs, s_probs: Tensor, y, p: Tensor, w: LossWeights) -> Tensor:
    """``alpha * KL(T || S) + beta * CE(y, p)``."""
    kl = kl_divergence(t_probs, s_probs)
    ce = cross_entropy(y, p)
    return nx.add(nx.scale(kl, w.alpha), nx.scale(ce, w.beta))


def soft_label_loss_from_logits(teacher_logits, student_logits: Tensor, labels, w: LossWeights) -> Tensor:
    """Soft-label loss where the temperature softens only the KL term."""
    tau = w.temperature
    tl = np.atleast_2d(_const(teacher_logits))
    t_probs = nx.kernels.softmax_fwd(np.ascontiguousarray(tl / tau))
    p = nx.softmax_rows(student_logits)
    s_probs = p if tau == 1.0 else nx.softmax_rows(nx.scale(student_logits, 1.0 / tau))
    y = one_hot(labels, tl.shape[-1])
    return soft_label_loss(t_probs, s_probs, y, p, w)


def single_stage_loss(ce, kl, mse, w: LossWeights = SINGLE_STAGE_WEIGHTS):
    """``alpha * ce + beta * kl + gamma * mse`` over tensors or plain floats."""
    if not any(isinstance(v, Tensor) for v in (ce, kl, mse)):
        vals = [float(v) for v in (ce, kl, mse)]
        if not all(math.isfinite(v) for v in vals):
            raise ContractError("single-stage components must be finite")
        return w.alpha * vals[0] + w.beta * vals[1] + w.gamma * vals[2]
    terms = [
        nx.scale(v if isinstance(v, Tensor) else Tensor(np.array(float(v))), c)
        for v, c in ((ce, w.alpha), (kl, w.beta), (mse, w.gamma))
    ]
    return nx.add(nx.add(terms[0], terms[1]), terms[2])


def batch_mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else float("nan")
