"""Print the noise schedule and visual-condition curves as CSV.

Columns: t, alpha_bar(t), f(t), alpha_bar(f(t)), W(t).
"""

import argparse
import csv
import sys

from mvcond.vcond import ScheduleParams, alpha_bar, f_of_t, w_of_t


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--step", type=int, default=50, help="timestep stride")
    parser.add_argument("--beta-f", type=float, default=0.2)
    args = parser.parse_args()
    sched = ScheduleParams(beta_f=args.beta_f)
    out = csv.writer(sys.stdout)
    out.writerow(["t", "alpha_bar", "t_prime", "alpha_bar_t_prime", "w_t"])
    ts = list(range(0, sched.T + 1, args.step))
    if ts[-1] != sched.T:
        ts.append(sched.T)
    for t in ts:
        tp = f_of_t(t, sched)
        out.writerow([t, f"{alpha_bar(t, sched):.8f}", tp, f"{alpha_bar(tp, sched):.8f}", f"{w_of_t(t, sched):.6f}"])


if __name__ == "__main__":
    main()
