"""Trace MAC boundary points over a priority grid and check them against the polymatroid facets.

    python3 scripts/trace_boundary.py [--points 21] [--antennas 2] [--seed 0]
"""
import argparse

import numpy as np

from htsched.mimo import mac_boundary_point, mac_state_region, priority_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=21)
    ap.add_argument("--antennas", type=int, default=2, help="transmit antennas per user")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    M = args.antennas
    H = (rng.standard_normal((2, 1, M)) + 1j * rng.standard_normal((2, 1, M))) / np.sqrt(2)
    powers = [1.0, 1.0]
    R = mac_state_region(H, powers)
    print("nu_1,nu_2,c_1,c_2,max_g,min_abs_g,iterations")
    for nu in priority_grid(args.points):
        bp = mac_boundary_point(H, 0, nu, powers=powers)
        g = R.values(bp.rates)
        print(f"{nu[0]:.3f},{nu[1]:.3f},{bp.rates[0]:.6f},{bp.rates[1]:.6f},{g.max():.1e},{np.abs(g).min():.1e},{bp.iterations}")


if __name__ == "__main__":
    main()
