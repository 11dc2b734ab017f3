"""Single-threaded reconstruction timings at N=64 for TV, FT and DCAN decode.

Usage: python3 scripts/timing_table.py [--side 64] [--repeats 5]

DCAN decode time does not depend on the weights, so untrained networks of the
right shape are timed; no checkpoints are needed.
"""

import argparse

import numpy as np

from spikit import dcan
from spikit.dataset import synth_phantoms
from spikit.imaging import MeasurementVector
from spikit.methods import make_method, pattern_count
from spikit.metrics import time_reconstruction


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--alphas", default="0.0625,0.25,0.5,1.0")
    args = ap.parse_args()
    N = args.side
    x = synth_phantoms(1, N, seed=0)[0]
    print("method,alpha,median_ms,iqr_ms")
    for alpha in (float(a) for a in args.alphas.split(",")):
        for name in ("tv-b", "ft"):
            m = make_method(name, alpha, N)
            t = time_reconstruction(m.reconstruct, [m.measure(x)], repeats=args.repeats)
            print(f"{name},{alpha:g},{t.median_ms:.3f},{t.iqr_ms:.3f}", flush=True)
        cfg = dcan.DcanConfig(side=N, pattern_count=pattern_count(alpha, N))
        model = dcan.TrainedDcan(dcan.build(cfg), cfg)
        ys = [MeasurementVector(np.random.default_rng(i).standard_normal(cfg.pattern_count)) for i in range(3)]
        t = time_reconstruction(lambda y: dcan.decode(model, y), ys, repeats=max(args.repeats, 10))
        print(f"dcan-decode,{alpha:g},{t.median_ms:.3f},{t.iqr_ms:.3f}", flush=True)


if __name__ == "__main__":
    main()
