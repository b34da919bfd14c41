"""Watch DCA converge: distance to the final iterate and an estimated rate.

With exact inner solves DCA often identifies the optimal support after a
few steps and then lands on the limit at once, so the tail of the trace can
be too short for a rate fit. The script reports that case instead of a rate.
"""

import numpy as np

from chores_ce import DcaConfig, GeneratorConfig, fit_linear_rate, generate_instance, solve_dca
from chores_ce.dca import InsufficientTrace

inst = generate_instance(GeneratorConfig("uniform", 20, 20, seed=3))
res = solve_dca(inst, DcaConfig(eps=1e-9, inner_tol=1e-10, keep_iterates=True))
its = np.asarray(res.trace.iterates)
dist = np.linalg.norm(its - its[-1], axis=1)
print(f"{res.iterations} outer iterations, status {res.status}")
for k in range(0, len(dist), max(1, len(dist) // 15)):
    print(f"  k={k:4d}  |mu_k - mu_final| = {dist[k]:.3e}   F = {res.trace.column('F')[min(k, len(res.trace) - 1)]:.10f}")
try:
    rho, r2 = fit_linear_rate(res.trace)
    print(f"fitted rate rho = {rho:.3f} (r^2 = {r2:.3f})")
except InsufficientTrace as exc:
    print(f"no rate fit: {exc}")
