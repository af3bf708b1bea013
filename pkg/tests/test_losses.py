import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrcdistill import numerics as nx
from mrcdistill.losses import (
    SINGLE_STAGE_WEIGHTS,
    LossWeights,
    cross_entropy,
    kl_divergence,
    mse_alignment,
    one_hot,
    single_stage_loss,
    soft_label_loss,
    soft_label_loss_from_logits,
)
from mrcdistill.numerics import ContractError, Tensor

LN2, LN3 = math.log(2), math.log(3)


def P(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), grad)


def kl_oracle(t, s):
    return sum(ti * (math.log(ti) - math.log(si)) for ti, si in zip(t, s) if ti > 0)


# ------------------------------------------------------------------- values


def test_cross_entropy_examples():
    assert cross_entropy([1, 0, 0], P([1.0, 0, 0])).item() == 0.0
    assert abs(cross_entropy([1, 0, 0], P([1 / 3] * 3)).item() - LN3) < 1e-12
    assert abs(LN3 - 1.098612) < 1e-6
    v = cross_entropy([0, 1, 0], P([0.1, 0.7, 0.2])).item()
    assert abs(v + math.log(0.7)) < 1e-12 and abs(v - 0.356675) < 1e-6


def test_cross_entropy_batch_mean_and_clamp():
    v = cross_entropy([[1, 0, 0], [0, 0, 1]], P([[0.5, 0.25, 0.25], [0.2, 0.3, 0.5]])).item()
    assert abs(v - 0.5 * (-math.log(0.5) - math.log(0.5))) < 1e-12
    assert abs(cross_entropy([0, 1, 0], P([1.0, 0, 0])).item() + math.log(1e-12)) < 1e-9


def test_cross_entropy_rejects_soft_labels():
    with pytest.raises(ContractError):
        cross_entropy([0.5, 0.5, 0], P([1 / 3] * 3))


def test_mse_examples():
    assert mse_alignment([[1.0, 2.0]], [[1.0, 2.0]]).item() == 0.0
    assert mse_alignment([[1.0, 2.0]], [[0.0, 0.0]]).item() == 2.5
    rng = np.random.default_rng(0)
    t, s = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    base = mse_alignment(t, s).item()
    assert abs(mse_alignment(3 * t, 3 * s).item() - 9 * base) < 1e-12


def test_mse_shape_errors():
    with pytest.raises(ContractError):
        mse_alignment([np.ones(2)], [np.ones(2), np.ones(2)])
    with pytest.raises(ContractError):
        mse_alignment(np.ones((1, 3)), np.ones((1, 2)))


def test_kl_examples():
    assert kl_divergence([0.2, 0.8], P([0.2, 0.8])).item() == 0.0
    assert abs(kl_divergence([1.0, 0.0], P([0.5, 0.5])).item() - LN2) < 1e-12
    v = kl_divergence([0.5, 0.5], P([0.25, 0.75])).item()
    assert abs(v - (0.5 * LN2 + 0.5 * math.log(2 / 3))) < 1e-12
    assert abs(v - 0.143841) < 1e-6
    assert abs(v - kl_oracle([0.5, 0.5], [0.25, 0.75])) < 1e-12


def test_soft_label_examples():
    t, s = [0.5, 0.5, 0.0], P([0.25, 0.75, 0.0])
    y, p = [0, 1, 0], P([0.1, 0.7, 0.2])
    ce = cross_entropy(y, p).item()
    assert soft_label_loss(t, s, y, p, LossWeights(0.0, 0.7)).item() == pytest.approx(0.7 * ce, abs=1e-12)
    assert soft_label_loss(t, P(t), y, p, LossWeights(1.0, 0.0)).item() == 0.0
    v = soft_label_loss([0.5, 0.5], P([0.25, 0.75]), y, p, LossWeights(0.5, 0.5)).item()
    assert abs(v - 0.5 * (0.143841 + 0.356675)) < 1e-6
    assert abs(v - 0.250258) < 1e-6


def test_soft_label_temperature_only_touches_kl():
    rng = np.random.default_rng(4)
    tl, sl = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    labels = [0, 2]
    tau = 2.0
    got = soft_label_loss_from_logits(tl, P(sl), labels, LossWeights(0.5, 0.5, temperature=tau)).item()
    soft = lambda z: np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    kl = np.mean([kl_oracle(a, b) for a, b in zip(soft(tl / tau), soft(sl / tau))])
    ce = np.mean([-math.log(soft(sl)[i, labels[i]]) for i in range(2)])
    assert abs(got - (0.5 * kl + 0.5 * ce)) < 1e-12


def test_single_stage_examples():
    w = SINGLE_STAGE_WEIGHTS
    assert (w.alpha, w.beta, w.gamma) == (0.25, 0.25, 0.5)
    assert single_stage_loss(1, 1, 1, w) == 1.0
    assert single_stage_loss(0, 0, 0, w) == 0.0
    v = single_stage_loss(LN3, LN2, 2.5, w)
    assert abs(v - (0.25 * LN3 + 0.25 * LN2 + 0.5 * 2.5)) < 1e-12
    assert abs(v - 1.697940) < 1e-6
    tv = single_stage_loss(P(LN3), P(LN2), P(2.5), w)
    assert abs(tv.item() - v) < 1e-15


def test_loss_weights_validation():
    for kw in ({"alpha": -1}, {"temperature": 0}, {"gamma": float("nan")}):
        with pytest.raises(ValueError):
            LossWeights(**kw)
    with pytest.raises(ContractError):
        single_stage_loss(float("inf"), 0, 0)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("which", ["ce", "kl", "mse", "soft_label", "single_stage"])
def test_loss_gradients_through_softmax(which):
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng(50 + i)
        z = P(rng.normal(size=(2, 3)), True)
        reps = P(rng.normal(size=(2, 3, 4)), True)
        t = rng.dirichlet(np.ones(3), size=2)
        t_reps = rng.normal(size=(2, 3, 4))
        y = one_hot(rng.integers(0, 3, size=2), 3)

        def f():
            p = nx.softmax_rows(z)
            if which == "ce":
                return cross_entropy(y, p)
            if which == "kl":
                return kl_divergence(t, p)
            if which == "mse":
                return mse_alignment(t_reps, reps)
            if which == "soft_label":
                return soft_label_loss(t, p, y, p, LossWeights(0.3, 0.7))
            return single_stage_loss(cross_entropy(y, p), kl_divergence(t, p), mse_alignment(t_reps, reps))

        params = [reps] if which == "mse" else [z, reps] if which == "single_stage" else [z]
        rep = nx.grad_check(f, params, h=1e-5, tol=1e-4)
        worst = max(worst, rep.max_rel_error)
    assert worst < 1e-4


def test_no_gradient_reaches_teacher_tensors():
    rng = np.random.default_rng(1)
    t_probs = P(rng.dirichlet(np.ones(3), size=2), True)
    t_reps = P(rng.normal(size=(2, 4)), True)
    s = P(rng.normal(size=(2, 3)), True)
    reps = P(rng.normal(size=(2, 4)), True)
    p = nx.softmax_rows(s)
    loss = nx.add(kl_divergence(t_probs, p), mse_alignment(t_reps, reps))
    nx.backward(loss)
    assert t_probs.grad is None and t_reps.grad is None
    assert s.grad is not None and reps.grad is not None


# --------------------------------------------------------------- properties

simplex = st.integers(2, 6).flatmap(
    lambda n: st.lists(st.floats(0, 1), min_size=n, max_size=n).filter(lambda v: sum(v) > 1e-3)
)


def test_kl_nonnegative_on_1000_pairs():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        t, s = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        assert kl_divergence(t, P(s)).item() >= -1e-15
        assert abs(kl_divergence(t, P(t)).item()) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(simplex, simplex)
def test_kl_zero_iff_equal(a, b):
    if len(a) != len(b):
        b = (b * len(a))[: len(a)]
        if sum(b) <= 1e-3:
            return
    t = np.array(a) / sum(a)
    s = np.array(b) / sum(b)
    v = kl_divergence(t, P(s)).item()
    # clamping S at 1e-12 can leave a rounding-sized negative value
    assert v >= -1e-12
    if np.allclose(t, s, atol=1e-9, rtol=0):
        assert abs(v) <= 1e-12
    elif np.max(np.abs(t - s)) > 1e-3:
        assert v > 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n - 1))), st.floats(1e-6, 1 - 1e-6))
def test_ce_zero_only_at_gold_mass(nk, mass):
    n, k = nk
    y = one_hot([k], n)
    hard = np.zeros(n)
    hard[k] = 1.0
    assert cross_entropy(y, P(hard)).item() == 0.0
    soft = np.full(n, (1 - mass) / (n - 1))
    soft[k] = mass
    assert cross_entropy(y, P(soft)).item() > 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mse_nonnegative_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(2, 3))
    assert mse_alignment(t, t.copy()).item() == 0.0
    s = t.copy()
    s[rng.integers(2), rng.integers(3)] += 1e-5
    assert mse_alignment(t, s).item() > 0.0
