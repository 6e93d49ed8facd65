"""Convergence orders of the fixed-step baselines.

Halving the step four times on a scalar RC circuit shows the expected
slopes in a log-log fit: trapezoidal error falls like h^2, backward
Euler like h. The reference is a trapezoidal run at a step a hundred
times finer than the finest step in the table.

Run from the repository root:  python3 demos/fixed_step_orders.py
"""

import numpy as np

import expsim as es
from expsim import stepper

NETLIST = """* one pole driven by a clipped ramp
I1 0 1 PWL(0 0 0.1 1 10 1)
R1 1 0 1
C1 1 0 1
.TRAN 0 2
.END
"""


def main():
    system = es.build_system(NETLIST)
    ref = stepper.solve_transient(
        system, stepper.SolverConfig(method="tr", h=1.25e-5)
    )
    final_exact = ref.states[-1, 0]

    hs = np.array([0.02, 0.01, 0.005, 0.0025, 0.00125])
    print("        h      tr |err|      be |err|")
    errs = {"tr": [], "be": []}
    for h in hs:
        row = [f"{h:9.5f}"]
        for method in ("tr", "be"):
            run = stepper.solve_transient(
                system, stepper.SolverConfig(method=method, h=float(h))
            )
            err = abs(run.states[-1, 0] - final_exact)
            errs[method].append(err)
            row.append(f"{err:12.3e}")
        print(" ".join(row))

    for method in ("tr", "be"):
        slope = np.polyfit(np.log(hs), np.log(errs[method]), 1)[0]
        print(f"{method}: fitted slope {slope:.3f}")


if __name__ == "__main__":
    main()
