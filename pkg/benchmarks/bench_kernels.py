"""Time the Cython kernels against the numpy fallback on scene-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from geoman import _kernels
from geoman.scenegen import CameraPath, build_scene, human_proxy_spec


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size):
    scene = build_scene(human_proxy_spec(0))
    cam = CameraPath(width=size, height=size, focal=100.0 * size / 64).camera(0, 1)
    kinds, params = scene.primitives(0.0)
    rays = (cam.pixel_rays() @ cam.R).reshape(-1, 3)  # world-space directions
    origin = cam.center
    rng = np.random.default_rng(0)
    img = rng.normal(size=(size, size, 3))
    xs = rng.uniform(-1, size, (size, size))
    ys = rng.uniform(-1, size, (size, size))
    mask = rng.random((size, size)) < 0.8
    return {
        "raycast": lambda b: _kernels.raycast(origin, rays, kinds, params, backend=b),
        "bilinear_sample": lambda b: _kernels.bilinear_sample(img, xs, ys, mask, backend=b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    args = ap.parse_args()
    try:
        from geoman._kernels import _ckernels  # noqa: F401
    except ImportError:
        print("Cython extension not built; only the numpy fallback is available")
        return
    print(f"{'kernel':<16} {'size':>5} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for size in args.sizes:
        for name, fn in cases(size).items():
            tp = _best(lambda: fn("python"), args.repeat)
            tc = _best(lambda: fn("cython"), args.repeat)
            print(f"{name:<16} {size:>5} {1e3 * tp:>10.2f} {1e3 * tc:>10.2f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
