"""Search for oscillations that coexist with the stabilized equilibrium.

Integrates the nominal closed loop from seeded starts in a box around the
physiological range and classifies each run as converged, oscillating
(episodes in the second half and no convergence) or failed.
"""

import argparse
from collections import Counter

import numpy as np

from epilab import analysis, dynamics
from epilab.model import C_STANDARD, FeedbackLaw

TAU0 = 2857.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=float, default=1.0, help="box half-width multiplier")
    args = ap.parse_args()

    eq = analysis.operating_equilibrium(-0.8)
    law = FeedbackLaw(-0.8, 1.0, float(C_STANDARD @ eq.x_star))
    center = np.array([-0.5, -6.5, -0.75, 1.0, 0.0, 3.5])
    half = args.scale * np.array([1.5, 8.5, 1.25, 1.0, 0.3, 1.5])
    rng = np.random.default_rng(args.seed)
    tally = Counter()
    for x0 in rng.uniform(center - half, center + half, (args.n, 6)):
        try:
            tr = dynamics.integrate(x0, (0.0, 10 * TAU0), law, C_STANDARD)
        except dynamics.IntegrationError as exc:
            tally[f"failed ({type(exc).__name__})"] += 1
            continue
        late = dynamics.detect_cycles(tr, t_min=5 * TAU0)
        dist = np.linalg.norm(tr.final_state - eq.x_star)
        if late.n_seizures >= 2 and dist > 1e-3:
            tally["oscillating"] += 1
            print("oscillating start:", np.array2string(x0, precision=3))
        elif dist <= 1e-6:
            tally["converged"] += 1
        else:
            tally["other"] += 1
    for k, v in sorted(tally.items()):
        print(f"{k}: {v}")


if __name__ == "__main__":
    main()
