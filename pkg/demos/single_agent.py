"""One agent, three chores: the equilibrium is known in closed form.

The agent must earn B and dislikes chore j at rate d_j. In equilibrium the
agent does every chore, so each price is proportional to its disutility:
p_j = B * d_j / sum(d). Both solvers should land there.
"""

import numpy as np

from chores_ce import DcaConfig, MarketInstance, SgrConfig, solve_dca, solve_sgr, verify_eps_ce

inst = MarketInstance(np.array([[1.0, 2.0, 5.0]]), np.array([16.0]))
exact = inst.B[0] * inst.d[0] / inst.d[0].sum()
print("closed form prices:", exact)

for name, res in [
    ("dca", solve_dca(inst, DcaConfig(eps=1e-8))),
    ("sgr", solve_sgr(inst, SgrConfig(eps=1e-3))),
]:
    report = verify_eps_ce(inst, res.candidate, 1e-3)
    err = np.max(np.abs(res.candidate.p - exact) / exact)
    print(f"{name}: {res.iterations:4d} iterations, prices {np.round(res.candidate.p, 6)}, "
          f"max rel err {err:.1e}, verifier {'pass' if report.passes else 'FAIL'}")
