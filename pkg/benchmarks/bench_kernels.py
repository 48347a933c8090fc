"""Timing comparison of the numba and pure-numpy kernel backends.

Runs each hot kernel through both implementations on identical inputs,
checks the outputs agree, and reports best-of-N wall times plus the
speedup. A full desk-scale model forward is timed per backend in a
subprocess, since the backend is chosen at import time via
CRACKSEG_BACKEND.

Usage: python3 benchmarks/bench_kernels.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from crackseg import _kernels_numpy  # noqa: E402

try:
    from crackseg import _kernels_numba
except ImportError:
    _kernels_numba = None

FORWARD_SNIPPET = """\
import time, warnings
warnings.simplefilter("ignore")
import numpy as np
from crackseg.autodiff import Tensor
from crackseg.backend import backend_name
from crackseg.model import ModelConfig, build_model, model_forward

params, _ = build_model(ModelConfig(), seed=0)
x = Tensor(np.random.default_rng(0).random((1, 3, 64, 64)))
model_forward(x, params, training=False)  # warm-up / jit compile
best = float("inf")
for _ in range({reps}):
    t0 = time.perf_counter()
    model_forward(x, params, training=False)
    best = min(best, time.perf_counter() - t0)
print(f"{{backend_name()}} {{best:.4f}}")
"""


def _time(fn, args, reps: int) -> float:
    fn(*args)  # warm-up; also triggers jit compilation
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    x = rng.random((1, 32, 64, 64))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _kernels_numpy.im2col(xp, 3, 3, 1, 1, 64, 64)
    feat = rng.random((1, 32, 64, 64))
    pts = rng.random((1, 4096, 2)) * 63.0
    g = rng.random((1, 4096, 32))
    return [
        ("im2col 3x3 @64x64x32",
         lambda k: (k.im2col, (xp, 3, 3, 1, 1, 64, 64))),
        ("col2im 3x3 @64x64x32",
         lambda k: (k.col2im, (cols, 1, 32, 66, 66, 3, 3, 1, 1, 64, 64))),
        ("bilinear_fwd 4096 pts",
         lambda k: (k.bilinear_fwd, (feat, pts))),
        ("bilinear_bwd 4096 pts",
         lambda k: (k.bilinear_bwd, (feat, pts, g))),
    ]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true",
                    help="fewer repetitions")
    args = ap.parse_args()
    reps = 3 if args.quick else 10

    if _kernels_numba is None:
        print("numba backend unavailable; nothing to compare")
        return 1

    rng = np.random.default_rng(42)
    rows = []
    for name, case in kernel_cases(rng):
        np_fn, np_args = case(_kernels_numpy)
        nb_fn, nb_args = case(_kernels_numba)
        np_out = np_fn(*np_args)
        nb_out = nb_fn(*nb_args)
        np_outs = np_out if isinstance(np_out, tuple) else (np_out,)
        nb_outs = nb_out if isinstance(nb_out, tuple) else (nb_out,)
        for a, b in zip(np_outs, nb_outs):
            assert np.allclose(a, b, atol=1e-12), f"{name}: backends differ"
        t_np = _time(np_fn, np_args, reps)
        t_nb = _time(nb_fn, nb_args, reps)
        rows.append((name, t_np, t_nb, t_np / t_nb))

    print(f"{'kernel':<24}{'numpy':>10}{'numba':>10}{'speedup':>9}")
    for name, t_np, t_nb, s in rows:
        print(f"{name:<24}{t_np * 1e3:>8.2f}ms{t_nb * 1e3:>8.2f}ms"
              f"{s:>8.1f}x")

    print()
    print("full forward (toy config, 64x64):")
    for backend in ("numpy", "numba"):
        env = dict(os.environ, CRACKSEG_BACKEND=backend,
                   PYTHONPATH=os.pathsep.join(sys.path))
        out = subprocess.run(
            [sys.executable, "-c", FORWARD_SNIPPET.format(reps=reps)],
            capture_output=True, text=True, env=env)
        if out.returncode != 0:
            print(f"  {backend}: failed\n{out.stderr}")
            return 1
        name, seconds = out.stdout.split()
        assert name == backend, f"expected {backend} backend, got {name}"
        print(f"  {backend:<7} {float(seconds) * 1e3:.1f}ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
