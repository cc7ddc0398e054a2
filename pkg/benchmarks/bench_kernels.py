"""Compare the numba and numpy per-face kernels.

Usage::

    python benchmarks/bench_kernels.py [--faces 2000 20000 200000] [--repeat 5]

Times face geometry extraction, the metric and normal terms with gradients,
and the gradient pull-back, for synthetic meshes of increasing size.
"""

import argparse
import time

import numpy as np

from elastic_bodies.kernels import _numpy
from elastic_bodies.synth import Generator, SynthSpec


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def workload(faces):
    segments = 32
    rings = max(5, faces // (2 * segments) + 1)
    gen = Generator(SynthSpec(rings=rings, segments=segments, shape_factors=[[1.0, 1.0], [1.2, 0.9]]))
    a, b = gen.body(0, 0.0), gen.body(1, 40.0)
    topo = gen.topology
    return topo, a.positions, b.positions


def run(mod, topo, pa, pb, repeat):
    fr = topo._kernel_frames()
    geo_a = mod.face_geometry(pa, topo.faces, *fr)
    geo_b = mod.face_geometry(pb, topo.faces, *fr)
    dg = np.ones_like(geo_a[2])
    dn = np.ones_like(geo_a[3])
    return {
        "geometry": best_of(lambda: mod.face_geometry(pa, topo.faces, *fr), repeat),
        "metric": best_of(lambda: mod.metric_terms(geo_a[2], geo_b[2], 0.5, True), repeat),
        "normal": best_of(lambda: mod.normal_terms(geo_a[3], geo_b[3], True), repeat),
        "backprop": best_of(lambda: mod.backprop(pa, topo.faces, *fr, geo_a[0], geo_a[1], geo_a[3], geo_a[4], dg, dn),
                            repeat),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--faces", type=int, nargs="+", default=[2_000, 20_000, 200_000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        from elastic_bodies.kernels import _numba
    except ImportError:
        _numba = None
        print("numba is not installed; timing the numpy kernels only")
    print(f"{'faces':>8} {'kernel':<9} {'numpy ms':>10} {'numba ms':>10} {'speed-up':>9}")
    for nf in args.faces:
        topo, pa, pb = workload(nf)
        t_np = run(_numpy, topo, pa, pb, args.repeat)
        t_nb = None
        if _numba is not None:
            run(_numba, topo, pa, pb, 1)  # compile / load from cache
            t_nb = run(_numba, topo, pa, pb, args.repeat)
        for k, v in t_np.items():
            nb = f"{1e3 * t_nb[k]:10.3f} {v / t_nb[k]:8.1f}x" if t_nb else ""
            print(f"{topo.face_count:>8} {k:<9} {1e3 * v:10.3f} {nb}")


if __name__ == "__main__":
    main()
