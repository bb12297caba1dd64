"""Time the numba and pure-numpy paths of the resampling and SSIM kernels.

    python3 benchmarks/bench_kernels.py [--size 512] [--repeat 5]

The backend is chosen per call from RSRLAB_DISABLE_NUMBA, so both paths are
timed in one process.  The first numba call (JIT compile or cache load) is
excluded by a warm-up run.
"""

import argparse
import os
import timeit

import numpy as np

from rsrlab import _kernels
from rsrlab.dataio import bicubic_downsample
from rsrlab.metrics import ssim


def _timed(fn, repeat: int) -> float:
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(size: int, repeat: int) -> list[tuple[str, float, float, float]]:
    rng = np.random.default_rng(0)
    img = rng.random((size, size, 3))
    other = np.clip(img + rng.normal(0, 0.05, img.shape), 0, 1)
    cases = {
        f"bicubic x4 {size}px": lambda: bicubic_downsample(img, 4),
        f"ssim {size}px": lambda: ssim(img, other),
    }
    rows = []
    for name, fn in cases.items():
        times = {}
        values = {}
        for backend, flag in (("numba", "0"), ("numpy", "1")):
            os.environ["RSRLAB_DISABLE_NUMBA"] = flag
            times[backend] = _timed(fn, repeat)
            values[backend] = fn()
        os.environ.pop("RSRLAB_DISABLE_NUMBA", None)
        err = float(np.max(np.abs(np.asarray(values["numba"]) - np.asarray(values["numpy"]))))
        rows.append((name, times["numba"], times["numpy"], err))
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=512)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _kernels.numba_enabled():
        print("numba unavailable; only the numpy path can run")
    print(f"{'kernel':<22} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max diff':>10}")
    for name, t_nb, t_np, err in run(args.size, args.repeat):
        print(f"{name:<22} {t_nb * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_nb:8.2f} {err:10.1e}")


if __name__ == "__main__":
    main()
