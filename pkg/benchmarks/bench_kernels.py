"""Compiled extension vs numpy fallback on the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--threads N]

Prints one ``key=value`` line per measurement. Each kernel is run on both
backends with identical inputs and the outputs are compared before timing
is reported.
"""
import argparse
import time

import numpy as np

from parspeech import kernels
from parspeech.acoustic import GaussianMixtureModel, ModelBank
from parspeech.decoder import decode
from parspeech.synth import sample_utterance, word_loop_network


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gmm(impls, repeats, threads, rng):
    bank = ModelBank([
        GaussianMixtureModel(rng.dirichlet(np.ones(8)), rng.normal(size=(8, 39)), rng.uniform(0.5, 2, (8, 39)))
        for _ in range(1024)
    ])
    ids = np.arange(1024)
    x = rng.normal(size=39)
    outs, times = {}, {}
    for name, impl in impls.items():
        out = np.empty(ids.size)

        def run():
            impl.gmm_batch_loglik(bank.means, bank.inv_variances, bank.log_consts, ids, x, out, threads)

        times[name] = best_of(run, repeats)
        outs[name] = out.copy()
    return times, outs


def bench_viterbi(impls, repeats, rng):
    cost = rng.uniform(0, 10, (60000, 8))
    outs, times = {}, {}
    for name, impl in impls.items():
        times[name] = best_of(lambda: impl.min_duration_viterbi(cost, 250), repeats)
        outs[name] = impl.min_duration_viterbi(cost, 250)[0]
    return times, outs


def bench_decode(impls, repeats, threads):
    net = word_loop_network(seed=0)
    feats, _ = sample_utterance(net, 300, seed=0)
    names = ("gmm_batch_loglik", "component_logpdf", "traverse_emitting", "epsilon_closure", "min_duration_viterbi")
    saved = {n: getattr(kernels, n) for n in names}
    outs, times = {}, {}
    try:
        for name, impl in impls.items():
            for n in names:
                setattr(kernels, n, getattr(impl, n))
            times[name] = best_of(lambda: decode(net, feats, workers=threads), repeats)
            outs[name] = decode(net, feats, workers=threads).word_sequence
    finally:
        for n, fn in saved.items():
            setattr(kernels, n, fn)
    return times, outs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    impls = kernels.available_backends()
    if "compiled" not in impls:
        print("compiled=unavailable")
    rng = np.random.default_rng(0)
    for label, (times, outs) in (
        ("gmm_batch_1024x8x39", bench_gmm(impls, args.repeats, args.threads, rng)),
        ("min_duration_viterbi_60000x8", bench_viterbi(impls, max(1, args.repeats // 2), rng)),
        ("decode_300_frames", bench_decode(impls, max(1, args.repeats // 2), args.threads)),
    ):
        values = list(outs.values())
        if isinstance(values[0], np.ndarray) and values[0].dtype.kind == "f":
            agree = all(np.allclose(values[0], v, rtol=1e-12) for v in values)
        else:
            agree = all(np.array_equal(values[0], v) for v in values)
        for name, t in times.items():
            print(f"{label}.{name}_s={t:.6f}")
        if "compiled" in times:
            print(f"{label}.speedup={times['python'] / times['compiled']:.2f}")
        print(f"{label}.outputs_agree={agree}")


if __name__ == "__main__":
    main()
