"""Compare the simulated reflected Brownian motion mean with sigma^2 / (2 |a|) across step sizes.

    python3 scripts/rbm_check.py [--paths 200] [--horizon 200]
"""
import argparse

import numpy as np

from htsched.markov_env import build_generator, sample_path, stream
from htsched.rdrs import RdrsSpec, simulate_rdrs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--horizon", type=float, default=200.0)
    ap.add_argument("--drift", type=float, default=-1.0)
    ap.add_argument("--variance", type=float, default=1.0)
    args = ap.parse_args()
    gen = build_generator([1.0], [[0.0]])
    env = sample_path(gen, args.horizon)
    target = args.variance / (2 * abs(args.drift))
    for dt in (4e-3, 1e-3, 2.5e-4):
        spec = RdrsSpec(gen, [[args.drift]], [[args.variance]], [[0.0]], [1.0], dt, args.horizon)
        avgs = np.array([simulate_rdrs(spec, env, stream(8, "rdrs", k)).time_average() for k in range(args.paths)])
        m, se = avgs.mean(), avgs.std(ddof=1) / np.sqrt(args.paths)
        print(f"dt={dt:<8g} mean W {m:.4f} +- {se:.4f}  target {target:.4f}  relative error {abs(m - target) / target:.2%}")


if __name__ == "__main__":
    main()
