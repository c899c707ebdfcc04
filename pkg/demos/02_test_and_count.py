"""Test for breaks at unknown dates and count them sequentially.

Compares a panel with no break against one with a single break, using the
critical values shipped with the package.

Run: python3 demos/02_test_and_count.py
"""

from __future__ import annotations

from panelbreaks.inference.breaktests import estimate_num_breaks, seq_f, sup_f, wdmax_f
from panelbreaks.simlab import DgpSpec, generate


def describe(name: str, data) -> None:
    print(f"== {name}")
    for rep in (sup_f(data, 1), wdmax_f(data, 3), seq_f(data, 1)):
        cv = rep.critical_values[rep.level]
        verdict = "reject" if rep.decision else "accept"
        print(f"  {rep.kind:<10} {rep.statistic:9.3f}   5% critical value {cv:7.3f}   {verdict}")
    count = estimate_num_breaks(data, alpha=0.05)
    print(f"  sequential count: k_hat={count.k_hat}, dates {count.breaks.dates}")
    for step in count.log:
        print(f"    F({step['k'] + 1}|{step['k']}) = {step['statistic']:.3f} "
              f"vs {step['critical_value']:.3f}")
    print()


def main() -> None:
    stable = DgpSpec(n_units=150, n_periods=40, p_w=2, n_factors=2, seed=21)
    shifted = DgpSpec(n_units=150, n_periods=40, p_w=2, n_factors=2, breaks=(20,),
                      deltas=((1.0, 1.0), (1.5, 1.5)), seed=21)
    describe("no break", generate(stable)[0])
    describe("one break at period 20", generate(shifted)[0])


if __name__ == "__main__":
    main()
