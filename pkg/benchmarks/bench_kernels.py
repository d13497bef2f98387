"""Timing comparison of the compiled and NumPy kernel backends.

Per-kernel micro-benchmarks on the shapes the trainer actually hits
(mixed batches of 16, a 950-class index head, the 950x50 pseudo-label
distance matrix), plus an end-to-end training-iteration timing per
backend.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from spue import kernels  # noqa: E402
from spue.data import SynthSpec, generate_synthetic, one_shot_split  # noqa: E402
from spue.encoder import EncoderDims, EncoderModel  # noqa: E402
from spue.selfpaced import SelectionState  # noqa: E402
from spue.train import TrainConfig, train_iteration  # noqa: E402


def timeit(fn, repeats, warmup=3):
    for _ in range(warmup):
        fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    x16 = rng.standard_normal((16, 64))
    w_h = rng.standard_normal((128, 64))
    b_h = rng.standard_normal(128)
    z16 = rng.standard_normal((16, 128))
    dz16 = rng.standard_normal((16, 128))
    mu16 = rng.standard_normal((16, 32))
    w_ix = rng.standard_normal((950, 32))
    b_ix = np.zeros(950)
    logits = rng.standard_normal((16, 950))
    targets = rng.integers(0, 950, 16)
    emb_u = rng.standard_normal((950, 32))
    emb_l = rng.standard_normal((50, 32))
    p = rng.standard_normal((128, 64))
    g = rng.standard_normal((128, 64))
    v = np.zeros((128, 64))
    return [
        ("affine_forward 16x64->128", lambda: kernels.affine_forward(x16, w_h, b_h)),
        ("affine_backward 16x64->128", lambda: kernels.affine_backward(x16, w_h, dz16)),
        ("affine_forward 16x32->950", lambda: kernels.affine_forward(mu16, w_ix, b_ix)),
        ("tanh_forward 16x128", lambda: kernels.tanh_forward(z16)),
        ("tanh_backward 16x128", lambda: kernels.tanh_backward(np.tanh(z16), dz16)),
        ("softmax_xent 16x950", lambda: kernels.softmax_xent(logits, targets)),
        ("pairwise_sqdist 950x50x32", lambda: kernels.pairwise_sqdist(emb_u, emb_l)),
        ("sgd_update 128x64", lambda: kernels.sgd_update(p, g, v, 0.02, 0.5, 5e-4)),
    ]


def end_to_end():
    ds = one_shot_split(generate_synthetic(SynthSpec(
        n_identities=20, samples_per_identity=10, d_in=64,
        cluster_spread=0.1, overlap=1.0, seed=0)))
    dims = EncoderDims(d_in=64, hidden=128, d_latent=32, n_identities=ds.n, m_cap=ds.m)
    model = EncoderModel.initialize(dims, np.random.default_rng(0))
    state = SelectionState.initial(ds, er=1.0, alpha=0.3)
    cfg = TrainConfig(er=1.0, epochs_per_iter=5, lr_initial=0.02, lr_after_drop=0.002, seed=0)
    t0 = time.perf_counter()
    train_iteration(model, ds, state, cfg, np.random.default_rng(1))
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    backends = kernels.available_backends()
    if "c" not in backends:
        print("compiled kernels not built; benchmarking the NumPy backend only")

    rng = np.random.default_rng(42)
    rows = {}
    e2e_name = "train_iteration 200 samples x5 epochs"
    for backend in backends:
        kernels.set_backend(backend)
        for name, fn in kernel_cases(rng):
            rows.setdefault(name, {})[backend] = timeit(fn, args.repeats)
        rows.setdefault(e2e_name, {})[backend] = end_to_end()
    if "c" in backends:
        kernels.set_backend("auto")  # mixed: compiled only where it measured faster
        rows[e2e_name]["mixed"] = end_to_end()

    width = max(len(n) for n in rows) + 2
    header = f"{'kernel':<{width}}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'c speedup':>14}"
    print(header)
    print("-" * len(header))
    for name, times in rows.items():
        line = f"{name:<{width}}"
        for b in backends:
            line += f"{times[b] * 1e6:>12.1f}us"
        if len(backends) == 2:
            line += f"{times['python'] / times['c']:>13.2f}x"
        print(line)
    if "mixed" in rows[e2e_name]:
        print(f"\nmixed backend (auto default) end-to-end: "
              f"{rows[e2e_name]['mixed'] * 1e3:.1f}ms "
              f"(python {rows[e2e_name]['python'] * 1e3:.1f}ms, "
              f"c {rows[e2e_name]['c'] * 1e3:.1f}ms)")


if __name__ == "__main__":
    main()
