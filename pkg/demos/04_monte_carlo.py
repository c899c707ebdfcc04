"""Small Monte Carlo: test size, date accuracy and interval coverage.

Uses 200 replications per experiment so it finishes in a few minutes; the
acceptance suite runs the same experiments at full size.

Run: python3 demos/04_monte_carlo.py
"""

from __future__ import annotations

import math

from panelbreaks.simlab import DgpSpec, ToolboxConfig, run_experiment


def main() -> None:
    reps = 200
    null = DgpSpec(n_units=100, n_periods=50, p_w=2, n_factors=2, seed=1)
    for test in ("supF", "seqF"):
        cfg = ToolboxConfig(test=test, k=0 if test == "seqF" else 1)
        rep = run_experiment("size", null, cfg, reps=reps)
        print(f"size of {test:<5} at 5%: {rep.rate:.3f} (MC se {rep.se:.3f})")

    step = math.sqrt(2.0)
    for n in (50, 200):
        spec = DgpSpec(n_units=n, n_periods=20, p_w=2, n_factors=2, breaks=(10,),
                       deltas=((1.0, 1.0), (1.0 + step, 1.0 + step)), seed=2)
        rep = run_experiment("hit_rate", spec, reps=reps)
        print(f"exact date hit rate, N={n:<4}: {rep.rate:.3f}")

    small = 0.15 / math.sqrt(2.0)
    spec = DgpSpec(n_units=200, n_periods=50, p_w=2, n_factors=2, breaks=(25,),
                   deltas=((1.0, 1.0), (1.0 + small, 1.0 + small)), seed=3)
    rep = run_experiment("coverage", spec, reps=reps)
    print(f"95% interval coverage: {rep.rate:.3f}, mean width {rep.extra['mean_width']:.1f} periods")


if __name__ == "__main__":
    main()
