"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each fused kernel on encoder-sized inputs, then one full
forward/backward training step, under both backends. Also reports the
largest absolute difference between the two backends' outputs.
"""

import argparse
import time

import numpy as np

from mrcdistill import numerics as nx
from mrcdistill.encoder import EncoderConfig, candidate_logits, forward, init_params
from mrcdistill.losses import cross_entropy, one_hot
from mrcdistill.synthdata import DatasetSpec, generate_dataset
from mrcdistill.training import render_set

K = nx.kernels


def kernel_cases(rng):
    B, H, L, d, ff = 16, 2, 39, 32, 64
    scores = rng.normal(size=(B, H, L, L))
    x = rng.normal(size=(B, L, d))
    gamma, beta = rng.normal(size=d), rng.normal(size=d)
    h = rng.normal(size=(B, L, ff))
    g_ff = rng.normal(size=h.shape)
    p = K.softmax_fwd(scores)
    _, xhat, rstd = K.layer_norm_fwd(x, gamma, beta, 1e-5)
    _, cdf = K.gelu_fwd(h)
    return {
        "softmax_fwd": lambda: K.softmax_fwd(scores),
        "softmax_bwd": lambda: K.softmax_bwd(p, scores),
        "layer_norm_fwd": lambda: K.layer_norm_fwd(x, gamma, beta, 1e-5),
        "layer_norm_bwd": lambda: K.layer_norm_bwd(x, xhat, rstd, gamma),
        "gelu_fwd": lambda: K.gelu_fwd(h),
        "gelu_bwd": lambda: K.gelu_bwd(h, cdf, g_ff),
    }


def bench(fn, repeat):
    fn()  # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out])
    return np.ravel(out)


def train_step_case():
    spec = DatasetSpec(seed=0, n_examples=16)
    rs = render_set(generate_dataset(spec), "teacher", 128)
    params = init_params(EncoderConfig(vocab_size=spec.vocab.size), 0)
    idx = np.arange(16)

    def step():
        nx.zero_grad(params.all())
        trace = forward(params, *rs.batch(idx))
        loss = cross_entropy(one_hot(rs.labels, 3), nx.softmax_rows(candidate_logits(trace, params)))
        nx.backward(loss)
        return loss.item()

    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    backends = K.available_backends()
    start = K.backend
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    step = train_step_case()

    times = {b: {} for b in backends}
    outputs = {b: {} for b in backends}
    for b in backends:
        K.use_backend(b)
        for name, fn in cases.items():
            times[b][name] = bench(fn, args.repeat)
            outputs[b][name] = _flat(fn())
        times[b]["train_step"] = bench(step, max(3, args.repeat // 5))
        outputs[b]["train_step"] = np.array([step()])
    K.use_backend(start)

    cols = list(backends)
    print(f"{'case':<16}" + "".join(f"{c + ' (us)':>14}" for c in cols) + f"{'speedup':>10}{'max|diff|':>12}")
    for name in list(cases) + ["train_step"]:
        row = f"{name:<16}" + "".join(f"{times[c][name] * 1e6:>14.1f}" for c in cols)
        if len(cols) == 2:
            row += f"{times['numpy'][name] / times['numba'][name]:>10.2f}"
            row += f"{np.max(np.abs(outputs['numpy'][name] - outputs['numba'][name])):>12.1e}"
        print(row)


if __name__ == "__main__":
    main()
