"""Two springs, one interface: every quantity of the dual method by hand.

Subdomain 1 is a single spring clamped on the left with unit stiffness, its
free end carrying dof u1. Subdomain 2 is a free-floating spring with dofs
(u2a, u2b) and a unit load pulling on u2b. Gluing u1 = u2a and solving gives
u = (1, 2) globally, interface force -1, and a single rigid translation mode
on the floating side. Small enough to check every matrix entry by eye.
"""

import numpy as np

from ddlab import solve_bdd, solve_feti, spring2, spring2_solution
from ddlab.feti import DualSystem, estimate_interface_forces
from ddlab.linalg import CondensedSubdomain
from ddlab.splitting import make_split

problem = spring2()
facts = spring2_solution()

print("two-spring problem")
print(f"  global dofs     {problem.n_global}")
print(f"  multipliers     {problem.n_multipliers}")
print(f"  local matrices  {[s.K.shape for s in problem.systems]}")

condensed = [CondensedSubdomain(s) for s in problem.systems]
forces = make_split(problem, "none", condensed=condensed)
dual = DualSystem(problem.systems, problem.jump, condensed, forces)

print("\ndual interface objects (computed vs closed form)")
print(f"  flexibility F   {dual.dense_flexibility()[0, 0]:+.6f}"
      f"   expected {facts['flexibility'][0][0]:+.6f}")
print(f"  gap d           {dual.gap[0]:+.6f}   expected {facts['gap'][0]:+.6f}")
print(f"  mode jump G     {dual.mode_jump[0, 0]:+.6f}"
      f"   expected {facts['mode_jump'][0][0]:+.6f}")
print(f"  mode force e    {dual.mode_force[0]:+.6f}"
      f"   expected {facts['mode_force'][0]:+.6f}")

est = estimate_interface_forces(problem.systems, problem.jump, condensed, forces)
print(f"  force estimate  {est[0]:+.6f}   expected {facts['force_estimate'][0]:+.6f}")

res = solve_feti(problem, tol=1e-12)
print("\ndual solve")
print(f"  iterations      {res.iterations} (the start is already exact here)")
print(f"  multiplier      {res.multipliers[0]:+.6f}"
      f"   expected {facts['multiplier'][0]:+.6f}")
print(f"  amplitude       {res.amplitudes[0]:+.6f}"
      f"   expected {facts['amplitude'][0]:+.6f}")
print(f"  u global        {np.round(res.u_global, 12)}   expected "
      f"{facts['u_global']}")

prim = solve_bdd(problem, tol=1e-12)
print("\nprimal solve")
print(f"  iterations      {prim.iterations}")
print(f"  u global        {np.round(prim.u_global, 12)}")

err = np.max(np.abs(res.u_global - np.asarray(facts["u_global"])))
print(f"\nmax deviation from closed form: {err:.2e}")
