"""Manufactured-solution refinement study for the Newtonian Navier-slip flow.

    python scripts/mms_convergence.py --sizes 16 32 64 128
"""

import argparse

from granflow.scenarios import mms_convergence_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    args = ap.parse_args()
    errors, orders = mms_convergence_study(tuple(args.sizes))
    print(f"{'n':>5} {'L2 error':>12} {'order':>7}")
    for i, (n, e) in enumerate(zip(args.sizes, errors)):
        order = f"{orders[i - 1]:7.3f}" if i else " " * 7
        print(f"{n:5d} {e:12.4e} {order}")


if __name__ == "__main__":
    main()
