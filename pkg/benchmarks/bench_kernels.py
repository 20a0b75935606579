"""Compiled kernels vs pure-Python fallbacks.

    python3 benchmarks/bench_kernels.py [--n 266610] [--repeat 3]

Times the density rate loss with its gradient, and range encoding plus
decoding, at LeNet300-100 scale on both backends. Checks that the two
backends agree before printing timings.
"""
import argparse
import time

import numpy as np

from eprc import autodiff as ad
from eprc import coder, kernels
from eprc.density import DensityModel, extract_pmf_table, nll_noisy


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def density_step(model, x):
    with ad.precision("float32"):
        v = ad.Tensor(x, requires_grad=True)
        bits = nll_noisy(model, v)
        grads = ad.grad(bits, [v, *model.parameters()])
    return float(bits.data), grads[0]


def coder_roundtrip(symbols, table):
    stream = coder.encode(symbols, table)
    out = coder.decode(stream, table, symbols.size)
    return stream, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=266_610)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not kernels.compiled_available():
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .`")

    rng = np.random.default_rng(0)
    latents = np.round(rng.laplace(0, 2.0, (args.n, 1))).astype(np.float32)
    noisy = latents + rng.uniform(-0.5, 0.5, latents.shape).astype(np.float32)
    model = DensityModel(1, seed=0, dtype=np.float32)
    table = extract_pmf_table(model, 0, latents[:, 0].astype(np.int64))
    symbols = latents[:, 0].astype(np.int64)

    rows = []
    results = {}
    for name, flag in (("compiled", True), ("python", False)):
        kernels.use_compiled(flag)
        t_d, (bits, gx) = best_of(lambda: density_step(model, noisy), args.repeat)
        t_c, (stream, out) = best_of(lambda: coder_roundtrip(symbols, table), args.repeat)
        assert np.array_equal(out, symbols)
        results[name] = (bits, gx, stream.data)
        rows.append((name, t_d, t_c))
    kernels.use_compiled(True)

    (b1, g1, s1), (b2, g2, s2) = results["compiled"], results["python"]
    assert s1 == s2, "coder backends disagree"
    rel = abs(b1 - b2) / abs(b2)
    grel = np.abs(g1 - g2).max() / np.abs(g2).max()

    print(f"n = {args.n} latents, best of {args.repeat}")
    print(f"{'backend':<10} {'rate+grad (ms)':>15} {'encode+decode (ms)':>19}")
    for name, t_d, t_c in rows:
        print(f"{name:<10} {1e3 * t_d:>15.1f} {1e3 * t_c:>19.1f}")
    (_, d0, c0), (_, d1, c1) = rows
    print(f"speedup    {d1 / d0:>14.1f}x {c1 / c0:>18.1f}x")
    print(f"agreement: rate rel {rel:.1e}, gradient rel {grel:.1e}, coder bytes identical")


if __name__ == "__main__":
    main()
