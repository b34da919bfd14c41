"""Solve one random market with each algorithm and compare the outcomes.

Run with ``python demos/compare_solvers.py [n] [m] [distribution]``.
"""

import sys
import time

from chores_ce import (
    DcaConfig,
    GeneratorConfig,
    SgrConfig,
    epsilon_prime,
    generate_instance,
    solve_dca,
    solve_rounded_dca,
    solve_sgr,
    verify_eps_ce,
)

n = int(sys.argv[1]) if len(sys.argv) > 1 else 50
m = int(sys.argv[2]) if len(sys.argv) > 2 else 50
dist = sys.argv[3] if len(sys.argv) > 3 else "lognormal"
eps = 0.01

inst = generate_instance(GeneratorConfig(dist, n, m, seed=0))
print(f"{dist} market with {n} agents and {m} chores, eps = {eps}")

runs = {
    "dca": lambda: solve_dca(inst, DcaConfig(eps=eps)),
    "rounded dca": lambda: solve_rounded_dca(inst, DcaConfig(eps=eps)),
    "sgr": lambda: solve_sgr(inst, SgrConfig(eps=eps)),
}
for name, run in runs.items():
    t0 = time.perf_counter()
    res = run()
    dt = time.perf_counter() - t0
    rep = verify_eps_ce(inst, res.candidate, eps)
    line = (f"{name:>12}: {res.status:<10} {res.iterations:5d} iterations {dt:7.3f}s  "
            f"largest violation {rep.max_residual:.2e}  verifier {'pass' if rep.passes else 'FAIL'}")
    if "delta" in res.config:
        # post hoc certificate: the smoothed iterate is an eps'-CE with eps' below
        line += f"  eps'/eps {epsilon_prime(inst, res.mu, res.config['delta']) / eps:.2f}"
    print(line)
