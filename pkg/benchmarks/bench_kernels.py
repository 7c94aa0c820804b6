"""Time the compiled and numpy kernel backends on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is timed on the same arrays under both backends; the table
shows the best-of-N wall time and the speed-up of the compiled backend.
A full model forward/backward pass is timed too, since that is where the
kernels actually spend their time during training.
"""

import argparse
import timeit

import numpy as np

from lulcseg import kernels
from lulcseg.autodiff.tensor import Tensor, softmax_cross_entropy
from lulcseg.segnet import ModelConfig, build_model, forward


def cases(rng):
    x = rng.standard_normal((8, 32, 64, 64)).astype(np.float32)
    geom = (3, 3, 1, 1, 2, 2, 2, 2, 64, 64)
    cols = kernels.get_backend("python").im2col(x, *geom)
    pool_in = rng.standard_normal((8, 64, 56, 56)).astype(np.float32)
    pool_geom = (2, 2, 1, 1, 0, 0, 2, 2, 56, 56)
    _, idx = kernels.get_backend("python").maxpool_forward(pool_in, *pool_geom)
    grad = rng.standard_normal(pool_in.shape).astype(np.float32)
    truth = rng.integers(0, 17, size=224 * 224 * 8)
    pred = rng.integers(0, 17, size=truth.size)
    plane = rng.integers(0, 65536, size=1_000_000).astype(np.uint16)
    labels = rng.integers(0, 17, size=(224, 224))

    def votes(k):
        v = np.zeros((17, 448, 448), np.int32)
        for r in (0, 112, 224):
            for c in (0, 112, 224):
                k.vote_accumulate(v, labels, r, c)

    return {
        "im2col 8x32x64x64 k3 d2": lambda k: k.im2col(x, *geom),
        "col2im 8x32x64x64 k3 d2": lambda k: k.col2im(cols, 8, 32, 64, 64, *geom),
        "maxpool fwd 8x64x56x56 d2": lambda k: k.maxpool_forward(pool_in, *pool_geom),
        "maxpool bwd 8x64x56x56": lambda k: k.maxpool_backward(grad, idx, 56, 56),
        "confusion 401k px C=17": lambda k: k.confusion_counts(truth, pred, 17),
        "histogram 1M u16": lambda k: k.histogram(plane, 65536, None),
        "stitch votes 9 tiles": votes,
    }


def model_step(backend_name, rng):
    model = build_model(ModelConfig(17, 4, output_stride=4, tile_size=64), seed=0)
    x = Tensor(rng.random((4, 4, 64, 64)).astype(np.float32))
    t = rng.integers(0, 17, size=(4, 64, 64))

    def run():
        kernels._impl = kernels.get_backend(backend_name)
        loss = softmax_cross_entropy(forward(model, x), t)
        loss.backward()

    return run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    names = sorted(kernels.BACKENDS)
    print(f"backends available: {', '.join(names)} (active: {kernels.BACKEND})")
    header = f"{'kernel':28s}" + "".join(f"{n + ' ms':>12s}" for n in names)
    if len(names) == 2:
        header += f"{'speed-up':>10s}"
    print(header)
    rows = list(cases(rng).items())
    rows.append(("model fwd+bwd 4x4x64x64", None))
    active = kernels._impl
    try:
        for label, fn in rows:
            times = {}
            for n in names:
                call = model_step(n, rng) if fn is None else (lambda fn=fn, k=kernels.get_backend(n): fn(k))
                call()
                times[n] = min(timeit.repeat(call, number=1, repeat=args.repeat)) * 1e3
            line = f"{label:28s}" + "".join(f"{times[n]:12.2f}" for n in names)
            if len(names) == 2:
                line += f"{times['python'] / times['cython']:9.1f}x"
            print(line)
    finally:
        kernels._impl = active


if __name__ == "__main__":
    main()
