"""Compiled kernels versus the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Each kernel is timed on shapes taken from a 256x256 quarter-width network,
then a full forward/backward training step is timed with each backend
swapped in.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from dcnet import _pykernels, kernels

NAMES = ("im2col", "col2im", "band_sum", "maxpool_forward", "maxpool_backward")


def use(impl):
    for name in NAMES:
        setattr(kernels, name, getattr(impl, name))


def kernel_cases(rng):
    xp = rng.standard_normal((2, 130, 130, 16))
    cols = rng.standard_normal((2 * 128 * 128, 9 * 16))
    a = rng.standard_normal((128, 128, 32))
    x = rng.standard_normal((2, 128, 128, 16))
    out, arg = _pykernels.maxpool_forward(x, 2)
    g = rng.standard_normal(out.shape)
    return {
        "im2col 3x3 (2,128,128,16)": lambda k: k.im2col(xp, 3, 3, 1, 1, 128, 128),
        "col2im 3x3 (2,128,128,16)": lambda k: k.col2im(cols, xp.shape, 3, 3, 1, 1, 128, 128),
        "band_sum tau=2 (128,128,32)": lambda k: k.band_sum(a, 2),
        "maxpool_forward k=2 (2,128,128,16)": lambda k: k.maxpool_forward(x, 2),
        "maxpool_backward k=2 (2,128,128,16)": lambda k: k.maxpool_backward(g, arg, 2, x.shape),
    }


def train_step_case(extent=64, width=0.25, batch=2):
    from dcnet.autodiff import backward
    from dcnet.losses import total_loss
    from dcnet.network import DCNet, NetworkConfig

    net = DCNet(NetworkConfig(extent=extent, width=width))
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(batch, extent, extent, 1))
    y = (rng.uniform(size=x.shape) > 0.7).astype(np.float64)

    def step(_k):
        tr = net(x)
        loss = total_loss(tr.s_f, tr.s_b, tr.y_hat, y)[0]
        backward(loss)
        for p in net.parameters():
            p.grad = None
    return f"train step {extent}x{extent} w={width} batch={batch}", step


def best_of(fn, impl, repeat):
    fn(impl)  # warm-up
    return min(timeit.repeat(lambda: fn(impl), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)

    try:
        from dcnet import _ckernels
    except ImportError:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    label, step = train_step_case()
    rows = []
    for name, fn in cases.items():
        rows.append((name, best_of(fn, _ckernels, args.repeat), best_of(fn, _pykernels, args.repeat)))
    original = {n: getattr(kernels, n) for n in NAMES}
    try:
        times = []
        for impl in (_ckernels, _pykernels):
            use(impl)
            times.append(best_of(step, impl, max(3, args.repeat // 5)))
        rows.append((label, *times))
    finally:
        for n, f in original.items():
            setattr(kernels, n, f)

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'cython ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for name, c, p in rows:
        print(f"{name:<{width}}  {c * 1e3:10.3f}  {p * 1e3:10.3f}  {p / c:7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{"case": n, "cython_s": c, "numpy_s": p} for n, c, p in rows], fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
