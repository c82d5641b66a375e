"""Compare the compiled and pure-Python kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 200]

Times the backward/forward sweep on both bundled feeders plus a 200-bus
random chain, and the box soft-threshold on a 10^5 vector.  Results from the
two backends are also checked for bitwise agreement.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from voltvar import _pykernels
from voltvar.network import Bus, Line, build_network, load_fixture

try:
    from voltvar import _ckernels
except ImportError:
    _ckernels = None


def chain(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    buses = [Bus(0, None, "substation")]
    buses += [Bus(i, i - 1, "load", p_c=rng.uniform(0.0, 2e-3), q_c=rng.uniform(0.0, 1e-3))
              for i in range(1, n + 1)]
    lines = [Line(i, 1e-4, 2e-4) for i in range(1, n + 1)]
    return build_network(buses, lines, v0=1.0404)


def sweep_args(net):
    q = -net.nominal_qc()
    return (net.parent, net.order, net.r, net.x, net.nominal_p(), q, net.v0, 1e-10, 500)


def bench(fn, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)) * 1e6


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(1)
    n = 100_000
    thr = (rng.normal(size=n), rng.uniform(0, 0.3, n), -rng.uniform(0.05, 1, n),
           rng.uniform(0.05, 1, n))
    cases = [(f"sweep {name}", "sweep", sweep_args(load_fixture(name)))
             for name in ("feeder6", "feeder15")]
    cases.append(("sweep chain200", "sweep", sweep_args(chain(200))))
    cases.append(("threshold 1e5", "soft_threshold_box", thr))

    print(f"{'kernel':<18}{'python us':>12}{'cython us':>12}{'speedup':>10}  identical")
    for label, name, a in cases:
        py_fn, c_fn = getattr(_pykernels, name), getattr(_ckernels, name)
        out_py, out_c = py_fn(*a), c_fn(*a)
        if name == "soft_threshold_box":
            out_py, out_c = (out_py,), (out_c,)
        same = all(np.array_equal(u, w) for u, w in zip(out_py, out_c))
        reps = max(3, args.repeat // 20) if "1e5" in label or "200" in label else args.repeat
        t_py, t_c = bench(py_fn, a, reps), bench(c_fn, a, reps)
        print(f"{label:<18}{t_py:>12.1f}{t_c:>12.1f}{t_py / t_c:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
