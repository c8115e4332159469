"""Compare the numba and pure-numpy convolution backends.

The backend is fixed at import time, so each one is timed in its own
subprocess with ``SPECSR_DISABLE_NUMBA`` set accordingly::

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best(fn, repeats):
    fn()  # warm-up (includes jit compilation)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def measure(repeats):
    from specsr import _kernels, autodiff as ad, spectral as sp
    from specsr.losses import LossConfig, batch_loss
    from specsr.network import HsrnetConfig, hsrnet_graph, init_params

    rng = np.random.default_rng(0)
    x = rng.standard_normal((64, 64, 64)).astype(np.float32)
    cols = _kernels.im2col(x, 3)
    kernel = ad.Tensor(rng.standard_normal((64, 64, 3, 3)).astype(np.float32) * 0.05, requires_grad=True)
    bias = ad.Tensor(np.zeros(64, np.float32), requires_grad=True)

    def conv_fb():
        out = ad.conv2d(ad.Tensor(x, requires_grad=True), kernel, bias)
        ad.backward(ad.sum_all(out))

    wl = np.linspace(400, 700, 16)
    phi = sp.build_phi(sp.cave_like_srf(), wl)
    cfg = HsrnetConfig(16, 3, sp.group_bands(phi), stages=3)
    params = init_params(cfg)
    hsi = [rng.uniform(size=(16, 32, 32)).astype(np.float32) for _ in range(8)]
    msi = [sp.apply_degradation(phi, sp.SpectralCube(h)).data for h in hsi]

    def train_step():
        params.zero_grad()
        outs = [hsrnet_graph(m, cfg, params) for m in msi]
        ad.backward(batch_loss(outs, hsi, LossConfig()), params.tensors())

    return {
        "backend": _kernels.BACKEND,
        "im2col 64x64x64 k3": best(lambda: _kernels.im2col(x, 3), repeats),
        "col2im 64x64x64 k3": best(lambda: _kernels.col2im(cols, 64, 64, 64, 3), repeats),
        "conv fwd+bwd 64->64": best(conv_fb, repeats),
        "train step K=3 8x32x32x16": best(train_step, max(1, repeats // 2)),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--worker", choices=["numba", "numpy"], help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.worker:
        print(json.dumps(measure(args.repeats)))
        return
    rows = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, SPECSR_DISABLE_NUMBA="1" if backend == "numpy" else "0")
        out = subprocess.run([sys.executable, __file__, "--worker", backend, "--repeats", str(args.repeats)],
                             env=env, capture_output=True, text=True, check=True)
        rows[backend] = json.loads(out.stdout.strip().splitlines()[-1])
    if rows["numba"]["backend"] != "numba":
        print("numba unavailable; both columns use numpy")
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'ratio':>8}")
    for key in rows["numba"]:
        if key == "backend":
            continue
        a, b = rows["numba"][key] * 1e3, rows["numpy"][key] * 1e3
        print(f"{key:<28}{a:>10.2f}{b:>10.2f}{b / a:>8.2f}")


if __name__ == "__main__":
    main()
