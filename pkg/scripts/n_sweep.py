"""Implicit bulk residual of the regularised plastic stress against n.

Prints the worst residual/(tau/n) and the worst ratio residual(2n)/residual(n)
over frozen random samples, then the same for the lemma families.
"""

import numpy as np

from granflow.analysis import lemma_families, lemma_harness
from granflow.verification import N_VALUES, frozen_samples, residual_decay


def main():
    D, tau = frozen_samples(m=1000)
    res = residual_decay(D, tau)
    print(f"{'n':>5} {'max res/(tau/n)':>16} {'max ratio to n/2':>17}")
    for k, nk in enumerate(N_VALUES):
        frac = np.max(res[k] * nk / tau)
        ratio = f"{np.max(res[k] / res[k - 1]):17.4f}" if k else " " * 17
        print(f"{nk:5d} {frac:16.6f} {ratio}")
    print()
    for fam in lemma_families():
        rep = lemma_harness(fam, N_VALUES)
        c1 = " ".join(f"{v:.2e}" for v in rep.residual_c1)
        c3 = " ".join(f"{v:.2e}" for v in rep.residual_c3)
        print(f"{fam.name:>10}  c1: {c1}\n{'':>10}  c3: {c3}")


if __name__ == "__main__":
    main()
