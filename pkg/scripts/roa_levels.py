"""Falsification-based sublevel-set search for every built-in certificate.

For each preset this prints the largest level with no decrease
counterexample, the implied ball radius, and the quoted radius. For presets
with a quoted level it also checks that level directly.
"""

import argparse

import numpy as np

from epilab.passivity import (
    CertificateError, ClosedLoop, RoaOptions, check_level, estimate_roa_level, roa_radius,
)
from epilab.presets import PRESETS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=2 ** 17)
    ap.add_argument("--restarts", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    opts = RoaOptions(n_samples=args.samples, n_restarts=args.restarts, seed=args.seed)

    for pre in PRESETS.values():
        system = ClosedLoop.at(pre.u_star, pre.k, pre.c)
        print(f"[{pre.name}] u* = {pre.u_star}, k = {pre.k}, scale = {pre.scale}")
        try:
            if pre.rho is not None:
                at = check_level(pre.P, system, pre.rho, options=opts, scale=pre.scale)
                print(f"  quoted level {pre.rho:g}: {at.status}, radius "
                      f"{roa_radius(pre.P, pre.rho, pre.scale):.4f}")
                if at.counterexample is not None:
                    x = at.counterexample
                    print(f"  counterexample |x~| = {np.linalg.norm(x):.4f}, "
                          f"V = {pre.scale * x @ pre.P @ x:.4g}")
            est = estimate_roa_level(pre.P, system, options=opts, scale=pre.scale)
            print(f"  largest falsification-free level {est.rho:.6g} -> radius "
                  f"{est.radius:.4f} (quoted {pre.radius})")
        except CertificateError as exc:
            print(f"  rejected: {exc}")


if __name__ == "__main__":
    main()
