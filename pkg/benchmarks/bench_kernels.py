"""Time the compiled CRC/checksum kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--sizes 18 122 1500] [--repeat 5]

Reports the best of ``--repeat`` runs, in microseconds per call and MB/s.
"""

import argparse
import random
import timeit

from phasorlab import _fallback, kernels

try:
    from phasorlab import _kernels
except ImportError:
    _kernels = None


def bench(fn, data, repeat):
    number = max(1, 200_000 // max(len(data), 1))
    best = min(timeit.repeat(lambda: fn(data), number=number, repeat=repeat)) / number
    return best * 1e6, len(data) / best / 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    # command frame, a 4-PMU data frame, and a full Ethernet payload
    ap.add_argument("--sizes", type=int, nargs="+", default=[18, 122, 1500])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = random.Random(0)
    backends = [("python", _fallback)]
    if _kernels is not None:
        backends.insert(0, ("cython", _kernels))
    print(f"selected backend at import: {kernels.BACKEND}")
    print(f"{'kernel':<20}{'bytes':>7}" + "".join(f"{name + ' us':>14}{'MB/s':>10}" for name, _ in backends)
          + ("  speedup" if len(backends) == 2 else ""))
    for kernel in ("crc16_ccitt", "ones_complement_sum"):
        for size in args.sizes:
            data = bytes(rng.getrandbits(8) for _ in range(size))
            results = [bench(getattr(mod, kernel), data, args.repeat) for _, mod in backends]
            line = f"{kernel:<20}{size:>7}" + "".join(f"{us:>14.3f}{mbs:>10.1f}" for us, mbs in results)
            if len(results) == 2:
                line += f"  {results[1][0] / results[0][0]:>6.1f}x"
            print(line)


if __name__ == "__main__":
    main()
